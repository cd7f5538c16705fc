"""Built-in scenario files shipped with the package."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..errors import ConfigurationError

BUILTIN = ("fig3_2ap4sta_lan", "sec72_3ap6sta_lan", "sec73_mixed_lan_wan", "sec74_mobility",
           "sec81_shortlived", "sec82_ping", "table2_sweep", "table3_table4_sweep")


def builtin_text(name: str) -> str:
    if name not in BUILTIN:
        raise ConfigurationError(f"no built-in scenario {name!r}")
    return resources.files(__package__).joinpath("scenarios", f"{name}.toml").read_text()


def scan_file_text(ref) -> str:
    """Text of a scan datagram file given a path or a built-in scenario name."""
    p = Path(ref)
    if p.is_file():
        return p.read_text()
    name = p.name[:-5] if p.name.endswith(".scan") else str(ref)
    f = resources.files(__package__).joinpath("scenarios", f"{name}.scan")
    if name in BUILTIN and f.is_file():
        return f.read_text()
    raise ConfigurationError(f"scan file {ref!r} not found")


def read_scenario_text(ref) -> str:
    """Text of a scenario given a path or a built-in name."""
    p = Path(ref)
    if p.is_file():
        return p.read_text()
    name = p.name[:-5] if p.name.endswith(".toml") else str(ref)
    if name in BUILTIN:
        return builtin_text(name)
    raise ConfigurationError(f"scenario {ref!r} is neither a file nor a built-in name")
