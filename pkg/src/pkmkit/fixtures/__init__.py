"""Mechanism description files shipped with the package."""

from pathlib import Path

FIXTURE_DIR = Path(__file__).parent
NAMES = ("five_bar", "rr_2rrr", "parallelogram_4bar", "serial_2r")


def path(name: str) -> Path:
    p = FIXTURE_DIR / f"{name}.json"
    if not p.exists():
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(NAMES)}")
    return p


def load(name: str):
    from ..mechanism import load_mechanism

    return load_mechanism(path(name))
