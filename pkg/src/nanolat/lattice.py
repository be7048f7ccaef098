"""Lattice construction: Kuhn triangulations, bond sets, and finite domains.

The reference lattice is Z^N triangulated by the Kuhn decomposition (the
N! simplices of the unit cube, extended periodically).  Two bond families
are derived from it:

* B1 -- offsets joining vertices that share a simplex (nearest neighbours),
* B2 -- offsets joining the opposite vertices of two simplices that share
  a facet (next-to-nearest neighbours).

A structure matrix H with det H > 0 carries Z^N onto the physical Bravais
lattice (square, hexagonal, FCC, BCC, ...).  Finite domains come in three
flavours: strip lattices for nanowires, box lattices for Dirichlet cell
problems, and two-dimensional dislocated strips in which the right
sublattice is rescaled by rho and the interfacial bonds are read off a
Delaunay triangulation.

Node indexing is row-major over the reference coordinates (lexicographic
on (x1, ..., xN)), fixed so that exports are reproducible bit for bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


class LatticeConstructionError(Exception):
    """Raised when a finite lattice cannot be built as requested."""


# --------------------------------------------------------------------------
# Structure matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureMatrix:
    """Invertible map H carrying Z^N onto the modeled Bravais lattice."""

    entries: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.entries, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("structure matrix must be square")
        if h.shape[0] < 2:
            raise ValueError("dimension must be >= 2")
        if np.linalg.det(h) <= 0:
            raise ValueError("structure matrix must have positive determinant")
        object.__setattr__(self, "entries", h)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, n: int) -> "StructureMatrix":
        return cls(np.eye(n))

    @classmethod
    def hexagonal(cls) -> "StructureMatrix":
        """Equilateral triangular lattice: He1=(1,0), H(e1+e2)=(1/2, sqrt3/2)."""
        return cls(np.array([[1.0, -0.5], [0.0, math.sqrt(3.0) / 2.0]]))

    @classmethod
    def fcc(cls) -> "StructureMatrix":
        """Face-centred cubic: He1=v1, H(e1+e2)=v2, H(e1+e2+e3)=v3."""
        return cls(0.5 * np.array([[0.0, 1.0, 0.0],
                                   [1.0, -1.0, 1.0],
                                   [1.0, 0.0, -1.0]]))

    @classmethod
    def bcc(cls) -> "StructureMatrix":
        """Body-centred cubic."""
        return cls(0.5 * np.array([[-1.0, 1.0, 1.0],
                                   [1.0, -1.0, 1.0],
                                   [1.0, 1.0, -1.0]]))

    @classmethod
    def from_kind(cls, kind: str, n: int) -> "StructureMatrix":
        if kind == "hexagonal":
            if n != 2:
                raise ValueError("hexagonal lattice requires N=2")
            return cls.hexagonal()
        if kind == "fcc":
            if n != 3:
                raise ValueError("fcc lattice requires N=3")
            return cls.fcc()
        if kind == "bcc":
            if n != 3:
                raise ValueError("bcc lattice requires N=3")
            return cls.bcc()
        return cls.identity(n)


# --------------------------------------------------------------------------
# Kuhn decomposition and bond sets
# --------------------------------------------------------------------------

def kuhn_simplices(n: int) -> np.ndarray:
    """Vertex tuples of the N! Kuhn simplices of the unit cube.

    Returns an integer array of shape (N!, N+1, N); row k lists the
    vertices 0, e_{i1}, e_{i1}+e_{i2}, ... for the k-th permutation in
    lexicographic order.  Each simplex has reference volume 1/N!.
    """
    if n < 2:
        raise ValueError("kuhn_simplices requires N >= 2")
    sims = []
    for perm in itertools.permutations(range(n)):
        verts = np.zeros((n + 1, n), dtype=np.int64)
        for j, axis in enumerate(perm):
            verts[j + 1] = verts[j]
            verts[j + 1, axis] += 1
        sims.append(verts)
    return np.array(sims, dtype=np.int64)


def _periodic_patch(n: int) -> np.ndarray:
    """All simplices of the cubes with corners in {-1,0,1}^N."""
    base = kuhn_simplices(n)
    shifts = np.array(list(itertools.product((-1, 0, 1), repeat=n)), dtype=np.int64)
    return (base[None, :, :, :] + shifts[:, None, None, :]).reshape(-1, n + 1, n)


def bond_sets(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate the nearest (B1) and next-to-nearest (B2) offset sets.

    B1 collects all differences of vertices sharing a simplex.  B2 is found
    by a facet-sharing scan over a 3^N periodic patch: whenever two
    simplices share N vertices, the difference of the two remaining
    (opposite) vertices is a B2 offset.  Both sets are symmetric under
    negation and mutually disjoint.
    """
    if n < 2:
        raise ValueError("bond_sets requires N >= 2")
    base = kuhn_simplices(n)

    b1 = set()
    for verts in base:
        for a, b in itertools.combinations(range(n + 1), 2):
            xi = tuple(verts[b] - verts[a])
            b1.add(xi)
            b1.add(tuple(-v for v in xi))

    patch = _periodic_patch(n)
    facets = {}
    for verts in patch:
        vset = [tuple(v) for v in verts]
        for drop in range(n + 1):
            facet = frozenset(vset[:drop] + vset[drop + 1:])
            facets.setdefault(facet, []).append(vset[drop])
    b2 = set()
    for opposite in facets.values():
        for xa, xb in itertools.combinations(opposite, 2):
            if xa == xb:
                continue
            xi = tuple(np.array(xb) - np.array(xa))
            if xi in b1:
                continue
            b2.add(xi)
            b2.add(tuple(-v for v in xi))

    order = lambda s: np.array(sorted(s), dtype=np.int64)
    return order(b1), order(b2)


def max_bond_reach(n: int) -> float:
    """r = sup |xi| over B1 u B2, the interaction range in reference units."""
    b1, b2 = bond_sets(n)
    return float(max(np.linalg.norm(b1, axis=1).max(),
                     np.linalg.norm(b2, axis=1).max()))


def _canonical_offsets(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Lexicographically positive half of B1 u B2 with class labels 1/2."""
    b1, b2 = bond_sets(n)

    def positive(rows):
        keep = []
        for xi in rows:
            nz = xi[xi != 0]
            if len(nz) and nz[0] > 0:
                keep.append(xi)
        return np.array(keep, dtype=np.int64)

    p1, p2 = positive(b1), positive(b2)
    offsets = np.vstack([p1, p2])
    classes = np.concatenate([np.ones(len(p1), dtype=np.uint8),
                              np.full(len(p2), 2, dtype=np.uint8)])
    return offsets, classes


# --------------------------------------------------------------------------
# Interface normals
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InterfaceNormal:
    """Rank-one connected pair (H, R_nu) across the hyperplane normal to nu.

    R_nu = QH with Q the reflection across the plane orthogonal to the
    normalized H^{-T} nu, so that H - R_nu = a (x) nu.  The jump map
    u0 equals Hx on <x,nu> >= 0 and R_nu x below, continuous across the
    interface plane.
    """

    nu: np.ndarray
    reflection: np.ndarray
    a: np.ndarray

    def jump_map(self, coords: np.ndarray, h: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        upper = coords @ self.nu >= 0
        out = coords @ self.reflection.T
        out[upper] = coords[upper] @ np.asarray(h, dtype=float).T
        return out


def rank_one_reflection(h: StructureMatrix | np.ndarray, nu: np.ndarray) -> InterfaceNormal:
    """Reflected well R_nu in (O(N)\\SO(N))H with H - R_nu = a (x) nu."""
    hm = h.entries if isinstance(h, StructureMatrix) else np.asarray(h, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-9:
        raise ValueError("nu must be a unit vector")
    nprime = np.linalg.solve(hm.T, nu)
    scale = np.linalg.norm(nprime)
    nhat = nprime / scale
    q = np.eye(len(nu)) - 2.0 * np.outer(nhat, nhat)
    r_nu = q @ hm
    a = 2.0 * nhat / scale
    return InterfaceNormal(nu=nu, reflection=r_nu, a=a)


# --------------------------------------------------------------------------
# Finite lattices
# --------------------------------------------------------------------------

SPECIES_MINUS = 0
SPECIES_PLUS = 1


@dataclass
class Lattice:
    """Immutable finite lattice: nodes, classified bonds, simplices.

    coords holds reference coordinates (unit spacing; the dislocated right
    sublattice uses rho-multiples).  Bonds are undirected, stored once,
    attributed to the species of the lexicographically smaller endpoint;
    bond_eq is the reference equilibrium length |H xi| before any species
    mismatch factor.  simplices indexes nodes of each realized Kuhn cell
    (empty for dislocated strips, where the triangulation is irregular).
    """

    dim: int
    coords: np.ndarray          # (n_nodes, N) float
    species: np.ndarray         # (n_nodes,) uint8
    bond_i: np.ndarray          # (n_bonds,) int32
    bond_j: np.ndarray          # (n_bonds,) int32
    bond_class: np.ndarray      # (n_bonds,) uint8, 1=nearest 2=next-to-nearest
    bond_eq: np.ndarray         # (n_bonds,) float, reference length
    bond_species: np.ndarray    # (n_bonds,) uint8
    simplices: np.ndarray       # (n_simplices, N+1) int32
    h: np.ndarray               # structure matrix actually used
    kind: str = "strip"
    k: int = 0
    half_length: float = 0.0
    mismatch: float = 1.0
    rho: float = 1.0
    clamp_layer: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_bonds(self) -> int:
        return len(self.bond_i)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(deg, self.bond_i, 1)
        np.add.at(deg, self.bond_j, 1)
        return deg

    def bonds_touching(self, node_mask: np.ndarray) -> np.ndarray:
        """Mask of bonds with at least one endpoint in node_mask."""
        return node_mask[self.bond_i] | node_mask[self.bond_j]

    def export_text(self) -> str:
        """Plain-text export: header, node lines, bond lines."""
        lines = ["%d %d %.12g %.12g %.12g %s" % (
            self.dim, self.k, self.half_length, self.mismatch, self.rho, self.kind)]
        names = {SPECIES_MINUS: "minus", SPECIES_PLUS: "plus"}
        for idx in range(self.n_nodes):
            cs = " ".join("%.12g" % c for c in self.coords[idx])
            lines.append("%d %s %s" % (idx, cs, names[int(self.species[idx])]))
        for b in range(self.n_bonds):
            lines.append("%d %d %d" % (self.bond_i[b], self.bond_j[b], self.bond_class[b]))
        return "\n".join(lines) + "\n"


def _node_key(x, ndigits=9):
    return tuple(round(float(c), ndigits) for c in x)


def _finalize_bonds(raw):
    """Dedupe (i, j, class, eq, species) tuples, first writer wins."""
    seen = {}
    for i, j, cls, eq, spec in raw:
        a, b = (i, j) if i < j else (j, i)
        if (a, b) not in seen:
            seen[(a, b)] = (cls, eq, spec)
    items = sorted(seen.items())
    bi = np.array([a for (a, _), _ in items], dtype=np.int32)
    bj = np.array([b for (_, b), _ in items], dtype=np.int32)
    bc = np.array([v[0] for _, v in items], dtype=np.uint8)
    be = np.array([v[1] for _, v in items], dtype=float)
    bs = np.array([v[2] for _, v in items], dtype=np.uint8)
    return bi, bj, bc, be, bs


def _integer_lattice(dim, lo, hi, h, kind, k, half_length, mismatch,
                     clamp_dist=None):
    """Shared integer-box builder for strip and box lattices."""
    hm = h.entries if isinstance(h, StructureMatrix) else np.asarray(h, dtype=float)
    axes = [np.arange(lo[d], hi[d] + 1) for d in range(dim)]
    pts = np.array(list(itertools.product(*axes)), dtype=np.int64)
    # itertools.product over sorted axes is already lexicographic
    index = {tuple(p): i for i, p in enumerate(pts)}
    species = np.where(pts[:, 0] < 0, SPECIES_MINUS, SPECIES_PLUS).astype(np.uint8)

    offsets, classes = _canonical_offsets(dim)
    eq_len = np.linalg.norm(offsets @ hm.T, axis=1)
    raw = []
    for i, p in enumerate(pts):
        for o in range(len(offsets)):
            q = tuple(p + offsets[o])
            jdx = index.get(q)
            if jdx is not None:
                raw.append((i, jdx, int(classes[o]), float(eq_len[o]),
                            int(species[i])))
    bi, bj, bc, be, bs = _finalize_bonds(raw)

    base = kuhn_simplices(dim)
    cells = [np.arange(lo[d], hi[d]) for d in range(dim)]
    sims = []
    for corner in itertools.product(*cells):
        corner = np.array(corner, dtype=np.int64)
        for verts in base:
            sims.append([index[tuple(corner + v)] for v in verts])
    simplices = (np.array(sims, dtype=np.int32) if sims
                 else np.zeros((0, dim + 1), dtype=np.int32))

    clamp = None
    if clamp_dist is not None:
        # distance from a node to the hull of the occupied cells, per axis
        d = np.minimum(pts - np.array(lo), np.array(hi) - pts) + 0.5
        clamp = d.min(axis=1) <= clamp_dist

    return Lattice(dim=dim, coords=pts.astype(float), species=species,
                   bond_i=bi, bond_j=bj, bond_class=bc, bond_eq=be,
                   bond_species=bs, simplices=simplices, h=hm, kind=kind,
                   k=k, half_length=half_length, mismatch=mismatch,
                   clamp_layer=clamp)


def build_strip_lattice(n: int, k: int, half_length: int, mismatch: float = 1.0,
                        h: StructureMatrix | np.ndarray | None = None) -> Lattice:
    """Nanowire strip Z^N cap ([-L, L] x [-k, k]^{N-1}).

    Species is minus for x1 < 0 and plus for x1 >= 0; a bond crossing the
    interface takes the equilibrium of its lexicographically smaller
    (minus) endpoint.
    """
    if k < 1 or half_length < 1:
        raise LatticeConstructionError("strip lattice requires k >= 1 and L >= 1")
    if not (0.0 < mismatch <= 1.0):
        raise LatticeConstructionError("mismatch must lie in (0, 1]")
    if h is None:
        h = StructureMatrix.identity(n)
    lo = [-half_length] + [-k] * (n - 1)
    hi = [half_length] + [k] * (n - 1)
    return _integer_lattice(n, lo, hi, h, "strip", k, float(half_length), mismatch)


def build_box_lattice(n: int, sides, boundary_layer: float,
                      h: StructureMatrix | np.ndarray | None = None,
                      centered: bool = True) -> Lattice:
    """Box lattice for Dirichlet cell problems, with a clamp-eligible layer.

    sides counts nodes per axis.  A node is flagged clamp-eligible when its
    distance to the box hull is <= boundary_layer; at least one node must
    remain unflagged.
    """
    sides = [int(s) for s in (sides if np.iterable(sides) else [sides] * n)]
    if len(sides) != n or min(sides) < 2:
        raise LatticeConstructionError("box needs >= 2 nodes per axis")
    if h is None:
        h = StructureMatrix.identity(n)
    lo, hi = [], []
    for s in sides:
        off = (s - 1) // 2 if centered else 0
        lo.append(-off)
        hi.append(s - 1 - off)
    lat = _integer_lattice(n, lo, hi, h, "kuhn-box", 0, float(max(sides) - 1) / 2,
                           1.0, clamp_dist=boundary_layer)
    if lat.clamp_layer.all():
        raise LatticeConstructionError(
            "box of sides %s too small for clamp layer %.3g (no free nodes)"
            % (sides, boundary_layer))
    return lat


# --------------------------------------------------------------------------
# Dislocated strips (N = 2)
# --------------------------------------------------------------------------

_STRIP_HALF_WIDTH = 2.0   # interface zone |x1| <= 2 bonded via Delaunay
_DELAUNAY_MARGIN = 2.0    # extra columns so interior stars are exact
_MAX_BOND_LEN = 2.0       # H-space cap: drops window-hull sliver edges

_HEX_NN_LEN = 1.0
_HEX_NNN_LEN = math.sqrt(3.0)


def build_dislocated_lattice(rho: float, k: int, half_length: float,
                             mismatch: float | None = None) -> Lattice:
    """Two-dimensional hexagonal strip with a rho-rescaled right sublattice.

    Left of the interface the nodes are Z^2, right of it rho Z^2; away from
    the zone |x1| <= 2 the bonds are the standard B1/B2 offsets (scaled by
    rho on the right), while inside the zone nearest-neighbour bonds are
    the edges of a Delaunay triangulation in H-coordinates and
    next-to-nearest bonds join opposite vertices of edge-sharing triangle
    pairs.  To keep the coordination number bounded (<= 12), the
    next-to-nearest rule only fires when both triangles are standard cells
    of a common sublattice scale; the mismatch region itself is bonded by
    nearest neighbours only.
    """
    from scipy.spatial import Delaunay, QhullError

    if not (0.0 < rho <= 1.0):
        raise LatticeConstructionError("rho must lie in (0, 1]")
    if k < 1 or half_length < 1:
        raise LatticeConstructionError("dislocated strip requires k >= 1 and L >= 1")
    lam = rho if mismatch is None else mismatch
    hm = StructureMatrix.hexagonal().entries

    left_cols = np.arange(-int(math.floor(half_length)), 0)
    left_rows = np.arange(-k, k + 1)
    left = np.array([(c, r) for c in left_cols for r in left_rows], dtype=float)

    m_col = int(math.floor(half_length / rho + 1e-9))
    m_row = int(math.floor(k / rho + 1e-9))
    right_cols = rho * np.arange(0, m_col + 1)
    right_rows = rho * np.arange(-m_row, m_row + 1)
    right = np.array([(c, r) for c in right_cols for r in right_rows], dtype=float)

    pts = np.vstack([left, right])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    index = {_node_key(p): i for i, p in enumerate(pts)}
    species = np.where(pts[:, 0] < 0, SPECIES_MINUS, SPECIES_PLUS).astype(np.uint8)

    offsets, classes = _canonical_offsets(2)
    eq_by_class = {1: _HEX_NN_LEN, 2: _HEX_NNN_LEN}
    raw = []
    for i, p in enumerate(pts):
        if p[0] <= -_STRIP_HALF_WIDTH:
            scale = 1.0
        elif p[0] >= _STRIP_HALF_WIDTH:
            scale = rho
        else:
            continue
        for o in range(len(offsets)):
            q = p + scale * offsets[o]
            jdx = index.get(_node_key(q))
            if jdx is not None:
                raw.append((i, jdx, int(classes[o]),
                            eq_by_class[int(classes[o])], int(species[i])))

    window = np.abs(pts[:, 0]) <= _STRIP_HALF_WIDTH + _DELAUNAY_MARGIN
    win_idx = np.nonzero(window)[0]
    if len(win_idx) >= 3:
        hpts = pts[win_idx] @ hm.T
        try:
            tri = Delaunay(hpts)
        except QhullError as exc:
            raise LatticeConstructionError(
                "degenerate Delaunay input in the interface strip") from exc
        core = np.abs(pts[:, 0]) < _STRIP_HALF_WIDTH

        def standard_scale(simplex):
            """1, rho, or None if the H-space cell is not a standard cell."""
            a, b, c = hpts[simplex]
            sides = sorted((np.linalg.norm(a - b), np.linalg.norm(b - c),
                            np.linalg.norm(c - a)))
            for s in (1.0, rho):
                if all(abs(x - s) < 1e-6 for x in sides):
                    return s
            return None

        scales = [standard_scale(s) for s in tri.simplices]
        edge_owners = {}
        for t, simplex in enumerate(tri.simplices):
            g = sorted(win_idx[v] for v in simplex)
            for a, b in itertools.combinations(range(3), 2):
                v1, v2 = sorted((win_idx[simplex[a]], win_idx[simplex[b]]))
                opp = [x for x in g if x not in (v1, v2)][0]
                edge_owners.setdefault((v1, v2), []).append((t, opp))
                if core[v1] or core[v2]:
                    if np.linalg.norm(hm @ (pts[v2] - pts[v1])) > _MAX_BOND_LEN:
                        continue
                    spec = int(species[min(v1, v2)])
                    raw.append((v1, v2, 1, _HEX_NN_LEN, spec))
        for (v1, v2), owners in edge_owners.items():
            if len(owners) != 2:
                continue
            (t1, o1), (t2, o2) = owners
            s1, s2 = scales[t1], scales[t2]
            if s1 is None or s2 is None or abs(s1 - s2) > 1e-9:
                continue
            if not (core[o1] or core[o2]):
                continue
            a, b = (o1, o2) if o1 < o2 else (o2, o1)
            raw.append((a, b, 2, _HEX_NNN_LEN, int(species[a])))

    bi, bj, bc, be, bs = _finalize_bonds(raw)
    return Lattice(dim=2, coords=pts, species=species, bond_i=bi, bond_j=bj,
                   bond_class=bc, bond_eq=be, bond_species=bs,
                   simplices=np.zeros((0, 3), dtype=np.int32), h=hm,
                   kind="dislocated", k=k, half_length=float(half_length),
                   mismatch=lam, rho=rho)
