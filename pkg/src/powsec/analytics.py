"""Closed-form security bounds and the brute-force oracles that check them."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

EPS = 1e-12


class DegenerateBetaHon(ValueError):
    pass


class TailNotConverged(ValueError):
    pass


class ZeroPartyFraction(ValueError):
    pass


class NMinersTooSmall(ValueError):
    pass


class BothZero(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


def _frac(name, x):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


def _log_base(x, base):
    return math.log(x) / math.log(base)


# ------------------------------------------------------------ difficulty altering

def daa_beta_lower(tau_min: float) -> float:
    """Smallest adversarial share that wins the two-epoch timestamp race.

    This is the smaller root of beta^2 - (3 + tau) beta + (1 + tau).
    """
    if not 0.0 <= tau_min <= 1.0:
        raise ValueError("tau_min must lie in [0, 1]")
    b = 3.0 + tau_min
    return (b - math.sqrt(b * b - 4.0 * (tau_min + 1.0))) / 2.0


def daa_tau_pair(r1: float, alpha: float, beta_a: float, tau_min: float):
    """Difficulty factors of the adversary's fork and of the honest chain."""
    _frac("r1", r1)
    if not 0.0 < beta_a < 1.0:
        raise ValueError("beta_a must lie in (0, 1)")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    tau_adv = max(1.0 / (r1 + alpha * (1.0 - r1) / beta_a), tau_min)
    tau_hon = max(1.0 / (r1 + (1.0 - r1) / (1.0 - beta_a)), tau_min)
    return tau_adv, tau_hon


def daa_feasible(beta_a: float, tau_min: float, r1: float = 0.0, r2: float = 1.0,
                 alpha: Optional[float] = None) -> bool:
    """Whether the fork finishes its two epochs strictly before the honest chain.

    Times are in units of one on-schedule epoch.
    """
    if not 0.0 < beta_a < 1.0:
        return False
    if alpha is None:
        alpha = beta_a / tau_min
    tau_adv, tau_hon = daa_tau_pair(r1, alpha, beta_a, tau_min)
    honest = (tau_hon * r2 + (1.0 - r1)) / (1.0 - beta_a)
    adversary = ((1.0 - r1) + r2 * tau_adv) / beta_a
    return honest > adversary + EPS


def daa_race_moments(beta_a: float, tau_min: float, lam: int, r1: float = 0.0, r2: float = 1.0,
                     alpha: Optional[float] = None):
    """Mean and standard deviation of (honest time - adversary time) / epoch.

    Block inter-arrival times are taken as exponential, so each side's time
    is a sum of two gamma variables. A positive mean favors the adversary.
    """
    if alpha is None:
        alpha = beta_a / tau_min
    tau_adv, tau_hon = daa_tau_pair(r1, alpha, beta_a, tau_min)
    h, a = 1.0 - beta_a, beta_a
    n1, n2 = (1.0 - r1) * lam, r2 * lam
    mean = (n1 + n2 * tau_hon) / h - (n1 + n2 * tau_adv) / a
    var = (n1 + n2 * tau_hon ** 2) / h ** 2 + (n1 + n2 * tau_adv ** 2) / a ** 2
    return mean / lam, math.sqrt(var) / lam


@dataclass
class DaaAnalysis:
    beta_lower: float
    tau_adv: float
    tau_hon: float
    feasible: bool
    concentration: tuple  # (Theta, epsilon, exp(-Theta * epsilon**2 / 3))
    margin_mean: float
    margin_sd: float


def daa_analyze(beta_a: float, tau_min: float, *, r1: float = 0.0, r2: float = 1.0,
                alpha: Optional[float] = None, lam: int = 200, target_block_interval: int = 60,
                n: int = 100, q: int = 1, epsilon: float = 0.1) -> DaaAnalysis:
    if alpha is None:
        alpha = beta_a / tau_min
    tau_adv, tau_hon = daa_tau_pair(r1, alpha, beta_a, tau_min)
    theta = target_block_interval * n * q
    mean, sd = daa_race_moments(beta_a, tau_min, lam, r1, r2, alpha)
    return DaaAnalysis(
        beta_lower=daa_beta_lower(tau_min),
        tau_adv=tau_adv,
        tau_hon=tau_hon,
        feasible=daa_feasible(beta_a, tau_min, r1, r2, alpha),
        concentration=(theta, epsilon, math.exp(-theta * epsilon ** 2 / 3.0)),
        margin_mean=mean,
        margin_sd=sd,
    )


# ------------------------------------------------------------ quick fork

def gamblers_ruin_closed_form(phi: float, rho: int, k: int) -> float:
    """Probability a fork ``k`` behind catches up before falling ``rho`` behind.

    ``phi`` is the honest-to-fork power ratio.
    """
    if not 0 <= k <= rho:
        raise ValueError("need 0 <= k <= rho")
    if phi <= 0:
        return 1.0
    if abs(phi - 1.0) < 1e-12:
        return (rho - k) / rho
    return (1.0 - phi ** (rho - k)) / (1.0 - phi ** rho)


def gamblers_ruin_oracle(phi: float, rho: int, k: int, tol: float = 1e-15,
                         max_sweeps: int = 10 ** 6) -> float:
    """Same absorption probability by Gauss-Seidel sweeps over the lead states."""
    if not 0 <= k <= rho:
        raise ValueError("need 0 <= k <= rho")
    if phi < 0:
        raise ValueError("phi must be non-negative")
    up = phi / (1.0 + phi)  # honest extends its lead
    down = 1.0 - up
    p = [1.0] + [0.5] * (rho - 1) + [0.0]
    for _ in range(max_sweeps):
        worst = 0.0
        for i in range(1, rho):
            new = down * p[i - 1] + up * p[i + 1]
            worst = max(worst, abs(new - p[i]))
            p[i] = new
        if worst < tol:
            break
    return p[k]


def gamblers_ruin_mc(phi: float, rho: int, k: int, trials: int, rng) -> float:
    """Monte Carlo estimate of the same probability (vectorized random walk)."""
    up = phi / (1.0 + phi)
    lead = np.full(trials, k, dtype=np.int64)
    alive = (lead > 0) & (lead < rho)
    while alive.any():
        idx = np.flatnonzero(alive)
        steps = np.where(rng.random(idx.size) < up, 1, -1)
        lead[idx] += steps
        alive[idx] = (lead[idx] > 0) & (lead[idx] < rho)
    return float(np.mean(lead == 0))


def qf_varpi(phi: float, rho: int, n: int) -> float:
    return _log_base((1.0 + (n - 1) * phi ** rho) / n, phi)


def qf_m_min(k: int, beta_hon: float) -> Optional[int]:
    """Smallest overtake extension for which the fork can win; None when beta_hon >= 1/2."""
    if beta_hon >= 0.5:
        return None
    return math.ceil(k * beta_hon / (1.0 - 2.0 * beta_hon) - 1e-9)


def qf_eta_bound(n: int, beta_hon: float, vartheta: float = 1.0) -> float:
    """Reward/cost ratio above which joining the fork pays for a rational miner."""
    if n * beta_hon <= 1.0:
        return math.inf
    denom = (n * beta_hon - 1.0) * (1.0 - (2.0 - vartheta) * beta_hon)
    if denom <= 0:
        return math.inf
    return (1.0 - beta_hon) * (n - beta_hon * n - 1.0) / denom


def qf_eta_bound_flat(n: int, beta_hon: float) -> float:
    """The constant-reward specialization of :func:`qf_eta_bound`."""
    if n * beta_hon <= 1.0:
        return math.inf
    return (n - beta_hon * n - 1.0) / (n * beta_hon - 1.0)


@dataclass
class QfAnalysis:
    eta: float
    eta_bound: float
    phi: float
    varpi: float
    k_limit: int
    m_min: Optional[int]
    success_prob: float
    eta_bound_flat: float = math.nan
    target: float = math.nan  # (n-1)/n


def qf_analyze(n: int, beta_hon: float, beta_rat: float, beta_adv: float, eta: float,
               vartheta: float, rho: int, k: int) -> QfAnalysis:
    if not 0 < beta_hon < 0.5:
        raise DegenerateBetaHon("the fork race needs 0 < beta_hon < 1/2")
    if n < 2:
        raise NMinersTooSmall("need at least two miners")
    if beta_rat + beta_adv <= 0:
        raise ValueError("fork side has no mining power")
    phi = beta_hon / (beta_rat + beta_adv)
    target = (n - 1) / n
    if abs(phi - 1.0) < 1e-12:
        varpi = math.nan
        k_limit = math.floor(rho / n + 1e-12)
    else:
        varpi = qf_varpi(phi, rho, n)
        k_limit = math.floor(rho - varpi)
    # guard the floor against rounding right at an integer
    while k_limit + 1 <= rho and gamblers_ruin_closed_form(phi, rho, k_limit + 1) >= target - EPS:
        k_limit += 1
    while k_limit >= 0 and gamblers_ruin_closed_form(phi, rho, k_limit) < target - EPS:
        k_limit -= 1
    success = gamblers_ruin_closed_form(phi, rho, min(max(k, 0), rho))
    return QfAnalysis(eta=eta, eta_bound=qf_eta_bound(n, beta_hon, vartheta), phi=phi,
                      varpi=varpi, k_limit=k_limit, m_min=qf_m_min(k, beta_hon),
                      success_prob=success, eta_bound_flat=qf_eta_bound_flat(n, beta_hon),
                      target=target)


def qf_deviation_payoff(n: int, beta_hon: float, beta_rat: float, beta_adv: float, eta: float,
                        vartheta: float, k: int, m: int, *, chi1: float = 1.0,
                        beta_par: Optional[float] = None, theta_deviate: float = 1.0,
                        r_block: Optional[float] = None):
    """Expected payoff of a rational miner that joins the fork versus one that stays.

    ``theta_deviate`` scales the fork rewards by the conversion rate the
    deviator expects to be paid at; 1 reproduces the unprotected protocol.
    Passing ``r_block`` overrides ``eta * chi1`` (useful when ``chi1`` is 0).
    Returns ``(v_deviate, v_follow)``.
    """
    if beta_hon <= 0:
        raise DegenerateBetaHon("beta_hon must be positive for the fork race")
    if beta_rat + beta_adv <= 0:
        raise ValueError("fork side has no mining power")
    if beta_par is None:
        beta_par = beta_rat
    r = eta * chi1 if r_block is None else r_block
    reward = r * (k + m * vartheta)
    cost = chi1 * (k + m)
    v_dev = ((n - 1) / n) * (beta_par / (beta_rat + beta_adv)) * (theta_deviate * reward - cost) \
        - k * beta_par * chi1
    v_follow = beta_par * (reward - cost)
    return v_dev, v_follow


def qf_reward_condition(beta_hon: float, chi: float, r_block: float) -> bool:
    """The ``beta_hon > chi / r_block`` side condition, reported but never enforced."""
    return beta_hon > chi / r_block


# ------------------------------------------------------------ selfish mining with bribes

def smb_gamma(beta_h: float, beta_r: float) -> float:
    """Share of non-adversarial power that extends the adversary's block in a tie."""
    if beta_h + beta_r <= 0:
        return 1.0
    return (beta_h / 2.0 + beta_r) / (beta_h + beta_r)


def selfish_threshold(gamma: float) -> float:
    return (1.0 - gamma) / (3.0 - 2.0 * gamma)


def smb_beta_lower(beta_h: float, beta_r: float) -> float:
    _frac("beta_h", beta_h)
    _frac("beta_r", beta_r)
    if beta_h == 0 and beta_r == 0:
        raise BothZero("no non-adversarial power")
    if beta_h + beta_r > 1.0 + EPS:
        raise ValueError("beta_h + beta_r exceeds 1")
    if beta_h == 0:
        return 0.0
    bound = beta_h / (2.0 * beta_r + 4.0 * beta_h)
    check = selfish_threshold(smb_gamma(beta_h, beta_r))
    assert abs(bound - check) < 1e-12, (bound, check)
    return bound


def selfish_revenue_closed_form(alpha: float, gamma: float) -> float:
    """Long-run revenue share of a selfish pool with power ``alpha``."""
    _frac("alpha", alpha)
    _frac("gamma", gamma)
    if alpha >= 0.5:
        raise DegenerateInput("the stationary revenue formula needs alpha < 1/2")
    a = alpha
    num = a * (1 - a) ** 2 * (4 * a + gamma * (1 - 2 * a)) - a ** 3
    den = 1 - a * (1 + (2 - a) * a)
    return num / den


def selfish_revenue_mc(alpha: float, gamma: float, events: int, rng) -> float:
    """Relative revenue of a selfish pool from a direct walk of its state machine.

    An independent re-implementation used as a cross-check for the block-level
    simulator; it tracks only the private lead and the tie state.
    """
    pool = others = 0
    lead = 0
    tie = False
    draws = rng.random(events)
    gdraws = rng.random(events)
    for u, g in zip(draws, gdraws):
        if u < alpha:
            if tie:
                pool += 2
                tie = False
            else:
                lead += 1
            continue
        if tie:
            if g < gamma:
                pool += 1
                others += 1
            else:
                others += 2
            tie = False
        elif lead == 0:
            others += 1
        elif lead == 1:
            tie = True
            lead = 0
        elif lead == 2:
            pool += 2
            lead = 0
        else:
            pool += 1
            lead -= 1
    total = pool + others
    return pool / total if total else 0.0


# ------------------------------------------------------------ transaction withholding

def tw_discount_sum(delta: float, p_su: float, n: int, horizon: Optional[int] = None,
                    tol: float = 1e-12):
    """Truncated sum of delta^t p (1-p)^(n t), t = 1..horizon, and its tail bound."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    if not 0.0 < p_su <= 1.0:
        raise ValueError("p_su must lie in (0, 1]")
    x = delta * (1.0 - p_su) ** n
    if x >= 1.0:
        raise TailNotConverged("discounted survival does not decay")
    if horizon is None:
        horizon = 1
        while p_su * x ** (horizon + 1) / (1.0 - x) >= tol:
            horizon += 1
    t = np.arange(1, horizon + 1, dtype=float)
    total = float(np.sum(p_su * x ** t))
    tail = p_su * x ** (horizon + 1) / (1.0 - x) if x > 0 else 0.0
    if tail >= tol:
        raise TailNotConverged(f"tail {tail:.3g} exceeds {tol:g} at horizon {horizon}")
    return total, tail


def tw_discount_closed_form(delta: float, p_su: float, n: int) -> float:
    x = delta * (1.0 - p_su) ** n
    return p_su * x / (1.0 - x)


def tw_utilities(fees: Sequence[float], own_index: int, delta: float, p_su: float, n: int,
                 horizon: Optional[int] = None):
    """Fee income of gossiping versus keeping one's own transactions private.

    Returns ``(u_follow, u_withhold)``.
    """
    if any(f < 0 for f in fees):
        raise ValueError("fees must be non-negative")
    s, _ = tw_discount_sum(delta, p_su, n, horizon)
    total = float(sum(fees))
    own = float(fees[own_index])
    return total * s, (total - own) * s + own / p_su


# ------------------------------------------------------------ reward horizons

def _floor_log_ratio(x: float, vartheta: float) -> int:
    """Smallest a >= 1 with vartheta**a < x, i.e. 1 + floor(log x / log vartheta)."""
    a = 1 + math.floor(math.log(x) / math.log(vartheta))
    a = max(a, 1)
    while vartheta ** a >= x:
        a += 1
    while a > 1 and vartheta ** (a - 1) < x:
        a -= 1
    return a


def alpha_th(p_fr: float, vartheta: float) -> int:
    if not 0.0 < p_fr < 1.0 or not 0.0 < vartheta < 1.0:
        raise DegenerateInput("need p_fr and vartheta in (0, 1)")
    return _floor_log_ratio(1.0 - p_fr, vartheta)


def alpha_opt(p_fr: float, delta_adv: float, vartheta: float) -> int:
    if not 0.0 < p_fr < 1.0 or not 0.0 < vartheta < 1.0 or delta_adv <= 0:
        raise DegenerateInput("need p_fr, vartheta in (0, 1) and delta_adv > 0")
    return _floor_log_ratio(delta_adv / (p_fr + delta_adv), vartheta)


def deflationary_payoff_gap(p_fr: float, delta_adv: float, vartheta: float, capital_lambda: int,
                            r_block: float, theta: float, alpha_2: int) -> float:
    """Lower bound on attack payoff minus front-running payoff, worst case horizon."""
    v = vartheta ** alpha_2
    return capital_lambda * theta * r_block * (
        (1.0 - v) / (1.0 - vartheta) * delta_adv - v * p_fr / (1.0 - vartheta))


def ahp_check(theta: float, r_block: float, p_h: float, chi: float) -> bool:
    """All-honest profitability: expected fiat per query beats its cost."""
    return theta * r_block * p_h > chi


def goldfinger_value(theta_init: float, theta_now: float, c1: float, coin_payoff: float) -> float:
    """Fiat value of coin holdings plus a short position of size ``c1``."""
    return theta_now * coin_payoff + (theta_init - theta_now) * c1


@dataclass
class UtilityReport:
    u_d: Optional[float]
    u_a: Optional[float]
    omitted: tuple = ()

    def __iter__(self):
        yield self.u_d
        yield self.u_a


def utility_aggregate(per_party_payoff: dict, beta_hon: float, beta_rat: float,
                      beta_adv: float) -> UtilityReport:
    """Per-capita difference utility of defenders and attacker.

    Terms whose population share is zero are left undefined and listed in
    ``omitted``.
    """
    v_h = per_party_payoff.get("hon", 0.0)
    v_r = per_party_payoff.get("rat", 0.0)
    v_a = per_party_payoff.get("adv", 0.0)
    omitted = []
    u_a = v_a / beta_adv if beta_adv > 0 else None
    if u_a is None:
        omitted.append("adv")
    defenders = beta_hon + beta_rat
    if defenders <= 0:
        omitted.append("defenders")
        u_d = None
    else:
        u_d = (v_h + v_r) / defenders - (u_a or 0.0)
    return UtilityReport(u_d, u_a, tuple(omitted))


def bounds_report(*, tau_min: float = 0.25, beta_adv: float = 0.46, lam: int = 200,
                  n: int = 10, beta_hon: float = 0.4, beta_rat: float = 0.3, eta: float = 5.0,
                  vartheta: float = 1.0, rho: int = 5, k: int = 1) -> dict:
    """Every headline quantity as a flat mapping, for logging and the CLI."""
    out = {
        "daa_beta_lower": daa_beta_lower(tau_min),
        "daa_beta_lower_tau_half": daa_beta_lower(0.5),
    }
    daa = daa_analyze(beta_adv, tau_min, lam=lam)
    out.update({f"daa_{k_}": v for k_, v in asdict(daa).items()
                if k_ not in ("beta_lower", "concentration")})
    out["daa_theta_scale"], out["daa_epsilon"], out["daa_chernoff"] = daa.concentration
    qf = qf_analyze(n, beta_hon, beta_rat, 1.0 - beta_hon - beta_rat, eta, vartheta, rho, k)
    out.update({f"qf_{k_}": v for k_, v in asdict(qf).items()})
    out["smb_gamma"] = smb_gamma(beta_hon, beta_rat)
    out["smb_beta_lower"] = smb_beta_lower(beta_hon, beta_rat)
    out["smb_beta_lower_no_rational"] = smb_beta_lower(1.0 - beta_adv, 0.0)
    return out
