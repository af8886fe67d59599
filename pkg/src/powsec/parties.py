from enum import Enum

HON, RAT, ADV = "hon", "rat", "adv"
PARTIES = (HON, RAT, ADV)


class Outcome(Enum):
    NOT_ATTEMPTED = "NotAttempted"
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"
