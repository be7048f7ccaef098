"""Pair-interaction energies, analytic gradients, and load functionals.

The potential is the p-harmonic model phi(xi, z) = c(xi) |z|^p applied to
the deviation of each deformed bond length from its equilibrium.  The
equilibrium of a bond is |H xi| for minus-species bonds and lambda |H xi|
for plus-species bonds (dislocated lattices store their per-class
reference lengths at construction).  Bonds are summed once each, in index
order, so results are bit-reproducible; an optional chunked reduction
keeps that guarantee for a fixed chunk size.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .lattice import Lattice, SPECIES_PLUS, StructureMatrix


@dataclass(frozen=True)
class EnergyModel:
    """Parameters of the bond energy: exponent, coefficients, mismatch, H."""

    p: float = 2.0
    c1: float = 1.0
    c2: float = 1.0
    mismatch: float = 1.0
    h: np.ndarray = field(default_factory=lambda: np.eye(2))
    surface_prefactor: float = 1.0

    def __post_init__(self):
        if self.p <= 1:
            raise ValueError("exponent p must exceed 1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("bond coefficients must be positive")
        if not (0.0 < self.mismatch <= 1.0):
            raise ValueError("mismatch must lie in (0, 1]")
        hm = self.h.entries if isinstance(self.h, StructureMatrix) else np.asarray(self.h, dtype=float)
        if np.linalg.det(hm) <= 0:
            raise ValueError("structure matrix must have positive determinant")
        object.__setattr__(self, "h", hm)

    def with_mismatch(self, lam: float) -> "EnergyModel":
        return replace(self, mismatch=lam)

    def bond_coefficients(self, lattice: Lattice) -> np.ndarray:
        return np.where(lattice.bond_class == 1, self.c1, self.c2)

    def bond_equilibria(self, lattice: Lattice) -> np.ndarray:
        scale = np.where(lattice.bond_species == SPECIES_PLUS, self.mismatch, 1.0)
        return lattice.bond_eq * scale


def _bond_geometry(lattice: Lattice, u: np.ndarray):
    u = np.asarray(u, dtype=float)
    if u.shape != (lattice.n_nodes, lattice.dim):
        raise ValueError("deformation must supply one position per node")
    d = u[lattice.bond_j] - u[lattice.bond_i]
    r = np.linalg.norm(d, axis=1)
    return d, r


def bond_energies(lattice: Lattice, u: np.ndarray, model: EnergyModel) -> np.ndarray:
    """Per-bond energies c(xi) | |du| - eq |^p (no surface prefactor)."""
    _, r = _bond_geometry(lattice, u)
    dev = np.abs(r - model.bond_equilibria(lattice))
    return model.bond_coefficients(lattice) * dev ** model.p


def total_energy(lattice: Lattice, u: np.ndarray, model: EnergyModel,
                 bond_mask: np.ndarray | None = None,
                 chunk_size: int | None = None) -> float:
    """Total lattice energy; bond_mask restricts the sum to chosen bonds."""
    e = bond_energies(lattice, u, model)
    if bond_mask is not None:
        e = e[bond_mask]
    if chunk_size:
        parts = [e[i:i + chunk_size].sum() for i in range(0, len(e), chunk_size)]
        s = float(np.sum(parts))
    else:
        s = float(e.sum())
    return model.surface_prefactor * s


def energy_gradient(lattice: Lattice, u: np.ndarray, model: EnergyModel,
                    bond_mask: np.ndarray | None = None) -> np.ndarray:
    """Exact gradient of total_energy with respect to node positions.

    A bond of zero deformed length gets direction zero (the deterministic
    subgradient choice); a bond exactly at equilibrium contributes zero for
    p > 1.
    """
    d, r = _bond_geometry(lattice, u)
    s = r - model.bond_equilibria(lattice)
    c = model.bond_coefficients(lattice)
    mag = c * model.p * np.abs(s) ** (model.p - 1.0) * np.sign(s)
    safe = np.where(r > 0, r, 1.0)
    coef = np.where(r > 0, mag / safe, 0.0)
    if bond_mask is not None:
        coef = np.where(bond_mask, coef, 0.0)
    flow = coef[:, None] * d
    grad = np.zeros_like(u, dtype=float)
    for axis in range(lattice.dim):
        grad[:, axis] += np.bincount(lattice.bond_j, weights=flow[:, axis],
                                     minlength=lattice.n_nodes)
        grad[:, axis] -= np.bincount(lattice.bond_i, weights=flow[:, axis],
                                     minlength=lattice.n_nodes)
    return model.surface_prefactor * grad


def cell_energy(f: np.ndarray, simplex_vertices: np.ndarray, model: EnergyModel) -> float:
    """Energy of one simplex under the affine map x -> F x.

    Sums c(..) = 1 bond terms over all vertex pairs of the simplex; used by
    the rigidity probes, which compare against well distances.
    """
    f = np.asarray(f, dtype=float)
    verts = np.asarray(simplex_vertices, dtype=float)
    total = 0.0
    for a in range(len(verts)):
        for b in range(a + 1, len(verts)):
            edge = verts[a] - verts[b]
            dev = np.linalg.norm(f @ edge) - np.linalg.norm(model.h @ edge)
            total += abs(dev) ** model.p
    return total


def pair_cell_energy(positions: np.ndarray, vertices: np.ndarray,
                     model: EnergyModel) -> float:
    """All-pair bond energy of a deformed vertex cloudlet (two simplices).

    vertices are the reference points of S u T (shared facet listed once);
    positions are their deformed images.  Every unordered pair contributes
    once, matching the two-simplex cell energy used by the inversion cost.
    """
    verts = np.asarray(vertices, dtype=float)
    pos = np.asarray(positions, dtype=float)
    total = 0.0
    for a in range(len(verts)):
        for b in range(a + 1, len(verts)):
            eq = np.linalg.norm(model.h @ (verts[a] - verts[b]))
            dev = np.linalg.norm(pos[a] - pos[b]) - eq
            total += abs(dev) ** model.p
    return total


# --------------------------------------------------------------------------
# External loads on strip lattices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadSpec:
    """Tangential force F1 plus radial fields F_i(x1) for the lateral faces."""

    tangential: np.ndarray
    radial: Sequence[Callable[[float], np.ndarray]] = ()

    def __post_init__(self):
        object.__setattr__(self, "tangential", np.asarray(self.tangential, dtype=float))


def _axis_pairs(lattice: Lattice, axis: int, lo: float, hi: float):
    """Index pairs (node at hi, node at lo) matched on the other coordinates."""
    coords = lattice.coords
    low = {}
    high = {}
    for idx in range(lattice.n_nodes):
        c = coords[idx]
        rest = tuple(np.round(np.delete(c, axis), 9))
        if abs(c[axis] - lo) < 1e-9:
            low[rest] = idx
        elif abs(c[axis] - hi) < 1e-9:
            high[rest] = idx
    pairs = [(high[r], low[r]) for r in sorted(high) if r in low]
    return pairs


def load_value(lattice: Lattice, u: np.ndarray, loads: LoadSpec) -> float:
    """Discrete work of the tangential and radial forces on a strip."""
    if lattice.kind not in ("strip", "dislocated"):
        raise ValueError("loads are defined on strip lattices only")
    u = np.asarray(u, dtype=float)
    x1 = lattice.coords[:, 0]
    total = 0.0
    for hi_idx, lo_idx in _axis_pairs(lattice, 0, x1.min(), x1.max()):
        total += float(loads.tangential @ (u[hi_idx] - u[lo_idx]))
    for ax in range(1, lattice.dim):
        if ax - 1 >= len(loads.radial) or loads.radial[ax - 1] is None:
            continue
        fld = loads.radial[ax - 1]
        xa = lattice.coords[:, ax]
        for hi_idx, lo_idx in _axis_pairs(lattice, ax, xa.min(), xa.max()):
            f = np.asarray(fld(float(lattice.coords[hi_idx, 0])), dtype=float)
            total += float(f @ (u[hi_idx] - u[lo_idx]))
    return total


def load_gradient(lattice: Lattice, loads: LoadSpec) -> np.ndarray:
    """Gradient of load_value (independent of u; the load is linear)."""
    grad = np.zeros((lattice.n_nodes, lattice.dim), dtype=float)
    x1 = lattice.coords[:, 0]
    for hi_idx, lo_idx in _axis_pairs(lattice, 0, x1.min(), x1.max()):
        grad[hi_idx] += loads.tangential
        grad[lo_idx] -= loads.tangential
    for ax in range(1, lattice.dim):
        if ax - 1 >= len(loads.radial) or loads.radial[ax - 1] is None:
            continue
        fld = loads.radial[ax - 1]
        xa = lattice.coords[:, ax]
        for hi_idx, lo_idx in _axis_pairs(lattice, ax, xa.min(), xa.max()):
            f = np.asarray(fld(float(lattice.coords[hi_idx, 0])), dtype=float)
            grad[hi_idx] += f
            grad[lo_idx] -= f
    return grad
