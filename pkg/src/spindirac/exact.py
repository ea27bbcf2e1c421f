"""Closed-form Dirac spectra: circles, flat tori, round spheres, products.

These are the ground-truth tables every discretization is checked against.
Each enumeration covers the requested cutoff plus one extra shell, so nothing
below the cutoff can be missed.
"""

from __future__ import annotations

import enum
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MERGE_ATOL = 1e-9


class SpinStructure(str, enum.Enum):
    BOUNDING = "bounding"            # antiperiodic spinors
    NON_BOUNDING = "non_bounding"    # periodic spinors

    @property
    def shift(self) -> float:
        """Half-integer offset of the Fourier modes (0 or 1/2)."""
        return 0.5 if self is SpinStructure.BOUNDING else 0.0

    @property
    def sign(self) -> int:
        """Boundary phase across the seam."""
        return -1 if self is SpinStructure.BOUNDING else 1


@dataclass(frozen=True)
class SpinCircle:
    length: float
    structure: SpinStructure = SpinStructure.NON_BOUNDING

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"circle length must be positive, got {self.length}")
        object.__setattr__(self, "structure", SpinStructure(self.structure))


@dataclass(frozen=True)
class FlatTorus:
    """R^n / lattice; rows of ``basis`` are the lattice generators.

    ``spin[i]`` is 0 for the periodic (non-bounding) and 1 for the
    antiperiodic (bounding) structure along generator i.
    """

    basis: np.ndarray
    spin: tuple = None

    def __post_init__(self):
        basis = np.atleast_2d(np.array(self.basis, dtype=float))
        n = basis.shape[0]
        if basis.shape != (n, n) or not 1 <= n <= 3:
            raise ValueError(f"basis must be n x n with n in 1..3, got {basis.shape}")
        if abs(np.linalg.det(basis)) <= 1e-12:
            raise ValueError("lattice basis is singular")
        spin = tuple(int(s) for s in (self.spin if self.spin is not None else (0,) * n))
        if len(spin) != n or any(s not in (0, 1) for s in spin):
            raise ValueError(f"spin must be a 0/1 vector of length {n}, got {spin}")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "spin", spin)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dual_basis(self) -> np.ndarray:
        # rows b_j with a_i . b_j = delta_ij
        return np.linalg.inv(self.basis).T


@dataclass
class SpectrumTable:
    entries: list
    cutoff: float
    symmetric: bool
    description: str = ""

    def __post_init__(self):
        self.entries = [(float(v) + 0.0, int(m)) for v, m in self.entries]
        if any(m < 1 for _, m in self.entries):
            raise ValueError("multiplicities must be positive")
        if any(b[0] < a[0] for a, b in zip(self.entries, self.entries[1:])):
            raise ValueError("entries must be sorted ascending")

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.entries])

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([m for _, m in self.entries], dtype=int)

    def expanded(self) -> np.ndarray:
        """Eigenvalues repeated according to multiplicity."""
        return np.repeat(self.values, self.multiplicities)

    def total_count(self) -> int:
        return int(self.multiplicities.sum())

    def multiplicity_of(self, value: float, atol: float = MERGE_ATOL) -> int:
        return sum(m for v, m in self.entries if abs(v - value) <= atol)

    def kernel_dim(self) -> int:
        return self.multiplicity_of(0.0)

    def min_abs(self) -> float:
        if not self.entries:
            raise ValueError("empty spectrum table")
        return float(np.abs(self.values).min())

    def min_value(self) -> float:
        if not self.entries:
            raise ValueError("empty spectrum table")
        return self.entries[0][0]

    def is_mirror_closed(self, atol: float = MERGE_ATOL) -> bool:
        mirrored = sorted((-v, m) for v, m in self.entries)
        return len(mirrored) == len(self.entries) and all(
            abs(a[0] - b[0]) <= atol and a[1] == b[1] for a, b in zip(mirrored, self.entries)
        )

    def to_csv(self, extra_header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.description}; cutoff={_fmt(self.cutoff)}; symmetric={str(self.symmetric).lower()}\n")
        for line in extra_header:
            buf.write(f"# {line}\n")
        buf.write("eigenvalue,multiplicity\n")
        for v, m in self.entries:
            buf.write(f"{_fmt(v)},{m}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SpectrumTable":
        header, rows = "", []
        for line in text.splitlines():
            if line.startswith("#"):
                header = header or line[1:].strip()
            elif line and not line.startswith("eigenvalue"):
                v, m = line.split(",")
                rows.append((float(v), int(m)))
        fields = dict(part.strip().split("=", 1) for part in header.split(";")[1:])
        return cls(rows, float(fields["cutoff"]), fields["symmetric"] == "true",
                   header.split(";")[0].strip())

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def _fmt(x: float) -> str:
    # shortest round-trip form, integers without a trailing ".0"
    text = repr(float(x) + 0.0)
    return text[:-2] if text.endswith(".0") else text


def merge_values(values: Iterable[float], mults: Iterable[int], atol: float = MERGE_ATOL) -> list:
    """Sort and merge (value, multiplicity) pairs whose values agree to atol."""
    pairs = sorted(zip(values, mults))
    merged: list = []
    for v, m in pairs:
        if merged and abs(v - merged[-1][0]) <= atol:
            merged[-1][1] += int(m)
        else:
            merged.append([float(v), int(m)])
    # snap exact zeros and round-off to the canonical value
    return [(0.0 if abs(v) <= atol else v, m) for v, m in merged]


def circle_spectrum(c: SpinCircle, cutoff: float) -> SpectrumTable:
    """Eigenvalues (2 pi / L)(k + s/2), k in Z, each simple."""
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    scale = 2 * math.pi / c.length
    kmax = int(math.ceil(cutoff / scale)) + 1
    k = np.arange(-kmax - 1, kmax + 2)
    vals = scale * (k + c.structure.shift)
    vals = vals[np.abs(vals) <= cutoff + MERGE_ATOL]
    return SpectrumTable(
        merge_values(vals, np.ones(len(vals), dtype=int)),
        cutoff, True, f"circle length={_fmt(c.length)} structure={c.structure.value}",
    )


def circle_kernel_dim(c: SpinCircle) -> int:
    return 1 if c.structure is SpinStructure.NON_BOUNDING else 0


def spinor_rank(n: int) -> int:
    return 2 ** (n // 2)


def flat_torus_spectrum(t: FlatTorus, cutoff: float) -> SpectrumTable:
    """Eigenvalues +-2 pi |xi| over the shifted dual lattice.

    For n >= 2 each xi != 0 contributes both signs with multiplicity
    2^(floor(n/2) - 1); for n = 1 the eigenvalue is the signed 2 pi xi.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    n = t.dim
    dual = t.dual_basis
    shift = 0.5 * np.array(t.spin)
    radius = cutoff / (2 * math.pi)
    # |k_i + s_i/2| = |a_i . xi| <= |a_i| radius, plus one safety shell
    bounds = [int(math.ceil(np.linalg.norm(a) * radius)) + 1 for a in t.basis]
    ranges = [range(-b - 1, b + 2) for b in bounds]
    ks = np.array(list(itertools.product(*ranges)), dtype=float)
    xi = (ks + shift) @ dual
    if n == 1:
        vals = 2 * math.pi * xi[:, 0]
        mults = np.ones(len(vals), dtype=int)
    else:
        norms = 2 * math.pi * np.linalg.norm(xi, axis=1)
        zero = norms <= MERGE_ATOL
        half = spinor_rank(n) // 2
        vals = np.concatenate([norms[~zero], -norms[~zero], norms[zero]])
        mults = np.concatenate([
            np.full((~zero).sum(), half), np.full((~zero).sum(), half),
            np.full(zero.sum(), spinor_rank(n)),
        ])
    keep = np.abs(vals) <= cutoff + MERGE_ATOL
    return SpectrumTable(
        merge_values(vals[keep], mults[keep]), cutoff, True,
        f"flat torus n={n} spin={''.join(map(str, t.spin))}",
    )


def torus_kernel_dim(t: FlatTorus) -> int:
    return spinor_rank(t.dim) if not any(t.spin) else 0


def sphere_spectrum(l: int, cutoff: float) -> SpectrumTable:
    """Round unit S^l: +-(l/2 + k) with multiplicity 2^floor(l/2) C(k+l-1, k)."""
    if int(l) != l or l < 1:
        raise ValueError(f"sphere dimension must be a positive integer, got {l}")
    if l == 1:
        table = circle_spectrum(SpinCircle(2 * math.pi, SpinStructure.BOUNDING), cutoff)
        table.description = "round sphere l=1"
        return table
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    vals, mults = [], []
    k = 0
    while l / 2 + k <= cutoff + MERGE_ATOL:
        m = spinor_rank(l) * math.comb(k + l - 1, k)
        vals += [l / 2 + k, -(l / 2 + k)]
        mults += [m, m]
        k += 1
    return SpectrumTable(merge_values(vals, mults), cutoff, True, f"round sphere l={l}")


def squared(a: SpectrumTable) -> list:
    return merge_values([v * v for v, _ in a.entries], [m for _, m in a.entries])


def product_square_spectrum(a: SpectrumTable, b: SpectrumTable, cutoff: float) -> SpectrumTable:
    """Spectrum of D_a^2 (x) 1 + 1 (x) D_b^2 on the tensor product of spinor modules.

    ``cutoff`` bounds the squared values.  Both factors must be complete far
    enough that no pair with lambda^2 + mu^2 <= cutoff is missing; otherwise
    this raises instead of truncating.  When both factors are odd-dimensional
    the true product spinor bundle carries an extra factor 2 in every
    multiplicity, which this table does not include.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    if not a.entries or not b.entries:
        raise ValueError("empty spectrum table")
    a2, b2 = squared(a), squared(b)
    if a.cutoff**2 + b2[0][0] < cutoff - MERGE_ATOL:
        raise ValueError(
            f"first factor complete only to {a.cutoff}; need lambda^2 up to {cutoff - b2[0][0]}")
    if b.cutoff**2 + a2[0][0] < cutoff - MERGE_ATOL:
        raise ValueError(
            f"second factor complete only to {b.cutoff}; need mu^2 up to {cutoff - a2[0][0]}")
    vals, mults = [], []
    for x, mx in a2:
        for y, my in b2:
            if x + y <= cutoff + MERGE_ATOL:
                vals.append(x + y)
                mults.append(mx * my)
    return SpectrumTable(merge_values(vals, mults), cutoff, False,
                         f"squared product ({a.description}) x ({b.description})")


@dataclass(frozen=True)
class ProductBoundCheck:
    passed: bool
    margin: float


def check_product_bound(m: SpectrumTable, l: int) -> ProductBoundCheck:
    """The squared spectrum on M x S^l stays above l^2/4."""
    if not m.entries:
        raise ValueError("empty spectrum table")
    margin = m.min_value() - l * l / 4
    return ProductBoundCheck(margin >= -1e-9, margin)


def point_spectrum(multiplicity: int = 1, cutoff: float = 1.0) -> SpectrumTable:
    """Zero-dimensional factor: spectrum {0}."""
    return SpectrumTable([(0.0, multiplicity)], cutoff, True, "point")


__all__ = [
    "SpinStructure", "SpinCircle", "FlatTorus", "SpectrumTable", "merge_values",
    "circle_spectrum", "circle_kernel_dim", "flat_torus_spectrum", "torus_kernel_dim",
    "sphere_spectrum", "product_square_spectrum", "check_product_bound",
    "ProductBoundCheck", "point_spectrum", "spinor_rank",
]
