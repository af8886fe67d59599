"""Built-in scenarios shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .config import ScenarioSpec, parse_text


def _dir():
    return resources.files("powsec.harness") / "scenarios"


def list_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in _dir().iterdir() if p.name.endswith(".toml"))


def scenario_text(name: str) -> str:
    f = _dir() / f"{name}.toml"
    if not f.is_file():
        raise KeyError(f"no built-in scenario {name!r}; have {', '.join(list_scenarios())}")
    return f.read_text(encoding="utf-8")


def load_scenario(name: str) -> ScenarioSpec:
    return parse_text(scenario_text(name), f"<catalog:{name}>")


def resolve(config: str) -> ScenarioSpec:
    """A file path, or failing that a catalog name."""
    from .config import parse_config
    if Path(config).exists() or config.endswith(".toml"):
        return parse_config(config)
    return load_scenario(config)
