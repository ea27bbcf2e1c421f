"""Topological lower bound on the kernel dimension and minimality verdicts.

The bound depends only on the dimension and the spin-bordism invariants:

    |A-hat|  if n = 0 mod 4
    1        if n = 1 mod 8 and alpha != 0
    2        if n = 2 mod 8 and alpha != 0
    0        otherwise

A-hat and alpha are inputs here; nothing is computed from a manifold.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

FIXTURE_SCHEMA_VERSION = 1
SURGERY_SUFFIX = " [after surgery]"


class FixtureError(RuntimeError):
    pass


@dataclass(frozen=True)
class TopologicalData:
    n: int
    a_hat: int = 0
    alpha_nonzero: bool = False
    label: str = ""

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.n}")
        if int(self.a_hat) != self.a_hat:
            raise ValueError(f"a_hat must be an integer, got {self.a_hat}")


def as_lower_bound(t: TopologicalData) -> int:
    if t.n % 4 == 0:
        return abs(int(t.a_hat))
    if t.n % 8 == 1 and t.alpha_nonzero:
        return 1
    if t.n % 8 == 2 and t.alpha_nonzero:
        return 2
    return 0


def is_d_minimal(kernel_dim: int, t: TopologicalData) -> str:
    """Verdict "minimal", "non-minimal" or "inconsistent" (kernel below the bound).

    An inconsistent verdict can only come from an undercounted numerical
    kernel, since the bound always holds.
    """
    if kernel_dim < 0:
        raise ValueError(f"kernel dimension must be nonnegative, got {kernel_dim}")
    bound = as_lower_bound(t)
    if kernel_dim == bound:
        return "minimal"
    if kernel_dim > bound:
        return "non-minimal"
    return "inconsistent"


def surgery_bound_transfer(t: TopologicalData) -> TopologicalData:
    """Invariants after a surgery of codimension >= 2.

    Such surgeries preserve the spin-bordism class, so A-hat and alpha are
    unchanged and so is the bound.  Only the label is marked; applying this
    twice is the same as applying it once.
    """
    label = t.label if t.label.endswith(SURGERY_SUFFIX) else t.label + SURGERY_SUFFIX
    return dataclasses.replace(t, label=label)


def fixture_path() -> Path:
    return Path(str(resources.files("spindirac") / "data" / "fixtures.json"))


def load_fixtures(path: str | Path | None = None) -> list[dict]:
    """Read the fixture catalog; raises FixtureError if missing or malformed."""
    path = Path(path) if path is not None else fixture_path()
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise FixtureError(f"fixture file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FixtureError(f"fixture file {path} is not valid JSON: {exc}") from exc
    if doc.get("schema_version") != FIXTURE_SCHEMA_VERSION:
        raise FixtureError(f"unsupported fixture schema version {doc.get('schema_version')!r}")
    fixtures = doc.get("fixtures")
    if not isinstance(fixtures, list) or not fixtures:
        raise FixtureError("fixture catalog is empty")
    for fx in fixtures:
        if not {"id", "kind", "label", "provenance"} <= fx.keys():
            raise FixtureError(f"fixture entry missing required keys: {fx}")
    return fixtures


def fixture_by_id(fixture_id: str, path=None) -> dict:
    for fx in load_fixtures(path):
        if fx["id"] == fixture_id:
            return fx
    raise KeyError(fixture_id)


def topology_of(fx: dict) -> TopologicalData:
    if fx["kind"] != "topology":
        raise ValueError(f"fixture {fx['id']} carries no topological data")
    return TopologicalData(fx["n"], fx.get("a_hat", 0), fx.get("alpha_nonzero", False), fx["label"])
