"""Well classification of deformations and empirical rigidity constants.

Provides the polar projection onto the energy wells O(N)H (and their
mismatch-scaled copies), per-slab orientation profiles of strip
deformations, the two-simplex inversion cost forced by an orientation
change, and a sampled estimate of the constant comparing well distance to
cell energy.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel, pair_cell_energy, cell_energy
from .lattice import Lattice, StructureMatrix, kuhn_simplices, _periodic_patch
from .optimize import OptimizeOptions, lbfgs

_DET_TOL = 1e-12


# --------------------------------------------------------------------------
# Polar projection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WellProjection:
    nearest: np.ndarray
    distance: float
    orientation: int


def _nearest_orthogonal(g: np.ndarray, branch: int) -> np.ndarray:
    """Nearest orthogonal matrix to g with det sign given by branch (+-1)."""
    u, _, vt = np.linalg.svd(g)
    d = np.linalg.det(u @ vt)
    flip = np.ones(len(g))
    if (d > 0) != (branch > 0):
        flip[-1] = -1.0
    return (u * flip) @ vt


def polar_project(f: np.ndarray, h: np.ndarray, lam_scale: float = 1.0) -> WellProjection:
    """Project F onto the well O(N) (lam_scale H), matching the det sign of
    G = F (lam_scale H)^{-1}.

    For det G = 0 the two branches are distance-tied; the rotation-side
    candidate is returned with orientation 0.
    """
    f = np.asarray(f, dtype=float)
    hm = h.entries if isinstance(h, StructureMatrix) else np.asarray(h, dtype=float)
    well = lam_scale * hm
    g = f @ np.linalg.inv(well)
    detg = np.linalg.det(g)
    orientation = 0 if abs(detg) < _DET_TOL else (1 if detg > 0 else -1)
    branch = 1 if orientation >= 0 else -1
    nearest = _nearest_orthogonal(g, branch) @ well
    return WellProjection(nearest=nearest, distance=float(np.linalg.norm(f - nearest)),
                          orientation=orientation)


def well_distance(f: np.ndarray, h: np.ndarray, branch: int, lam_scale: float = 1.0) -> float:
    """Distance to the rotation (branch=+1) or reflection (-1) well."""
    f = np.asarray(f, dtype=float)
    hm = h.entries if isinstance(h, StructureMatrix) else np.asarray(h, dtype=float)
    well = lam_scale * hm
    g = f @ np.linalg.inv(well)
    nearest = _nearest_orthogonal(g, branch) @ well
    return float(np.linalg.norm(f - nearest))


# --------------------------------------------------------------------------
# Orientation profiles along a strip
# --------------------------------------------------------------------------

def simplex_gradients(lattice: Lattice, u: np.ndarray) -> np.ndarray:
    """Per-simplex gradients of the piecewise affine interpolation."""
    verts = lattice.simplices
    if len(verts) == 0:
        return np.zeros((0, lattice.dim, lattice.dim))
    u = np.asarray(u, dtype=float)
    e_ref = lattice.coords[verts[:, 1:]] - lattice.coords[verts[:, :1]]
    e_def = u[verts[:, 1:]] - u[verts[:, :1]]
    # rows of e_* are edge vectors; F solves F e_ref^T = e_def^T
    ft = np.linalg.solve(e_ref, e_def)
    return np.transpose(ft, (0, 2, 1))


@dataclass(frozen=True)
class SlabLabel:
    start: float
    end: float
    label: str                 # rot | refl | either
    mean_dist_rot: float
    mean_dist_refl: float


@dataclass(frozen=True)
class OrientationProfile:
    slabs: tuple[SlabLabel, ...]

    def intervals(self) -> list[tuple[float, float, str]]:
        """Maximal intervals of constant label, in order."""
        out: list[tuple[float, float, str]] = []
        for s in self.slabs:
            if out and out[-1][2] == s.label and abs(out[-1][1] - s.start) < 1e-9:
                out[-1] = (out[-1][0], s.end, s.label)
            else:
                out.append((s.start, s.end, s.label))
        return out

    def csv_rows(self) -> list[str]:
        return ["%.12g,%.12g,%s,%.12g,%.12g" % (s.start, s.end, s.label,
                                                s.mean_dist_rot, s.mean_dist_refl)
                for s in self.slabs]


def orientation_profile(lattice: Lattice, u: np.ndarray, model: EnergyModel,
                        hull_tol: float = 0.3) -> OrientationProfile:
    """Classify each unit slab of a strip as rotation- or reflection-sided.

    A slab is 'rot' when every simplex gradient in it has nonnegative
    determinant, 'refl' when every determinant is nonpositive, and
    'either' when the signs mix, all determinants vanish, or the mean
    distances to both wells drop below hull_tol simultaneously.
    """
    if lattice.kind not in ("strip",):
        raise ValueError("orientation profiles require a strip lattice")
    grads = simplex_gradients(lattice, u)
    dets = np.linalg.det(grads)
    corner_x1 = lattice.coords[lattice.simplices].min(axis=1)[:, 0]
    slabs = []
    for a in range(-int(lattice.half_length), int(lattice.half_length)):
        sel = np.abs(corner_x1 - a) < 1e-9
        if not sel.any():
            continue
        scale = 1.0 if a < 0 else model.mismatch
        d_rot = float(np.mean([well_distance(f, model.h, 1, scale) for f in grads[sel]]))
        d_refl = float(np.mean([well_distance(f, model.h, -1, scale) for f in grads[sel]]))
        ds = dets[sel]
        has_pos = bool((ds > _DET_TOL).any())
        has_neg = bool((ds < -_DET_TOL).any())
        if has_pos == has_neg:           # mixed signs, or all degenerate
            label = "either"
        elif d_rot < hull_tol and d_refl < hull_tol:
            label = "either"
        else:
            label = "rot" if has_pos else "refl"
        slabs.append(SlabLabel(float(a), float(a + 1), label, d_rot, d_refl))
    return OrientationProfile(slabs=tuple(slabs))


# --------------------------------------------------------------------------
# Inversion cost: minimal two-simplex energy across an orientation change
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimplexPair:
    """Facet-sharing simplices T, S as one cloudlet of N+2 reference points."""

    vertices: np.ndarray        # (N+2, N), rows 0..N are T, row N+1 is S's tip
    t_local: tuple[int, ...]
    s_local: tuple[int, ...]
    facet_local: tuple[int, ...]
    same_cube: bool


def facet_sharing_pairs(n: int) -> list[SimplexPair]:
    """All pairs (T, S) with T in the base cube sharing a facet (both the
    same-cube and the cross-cube cases)."""
    base = kuhn_simplices(n)
    patch = _periodic_patch(n)
    patch_sets = [frozenset(map(tuple, s)) for s in patch]
    pairs = []
    for t_verts in base:
        t_set = [tuple(v) for v in t_verts]
        for drop in range(n + 1):
            facet = frozenset(t_set[:drop] + t_set[drop + 1:])
            for s_set, s_verts in zip(patch_sets, patch):
                if frozenset(t_set) == s_set or not facet <= s_set:
                    continue
                tip = next(tuple(v) for v in s_verts if tuple(v) not in facet)
                cloud = np.array(t_set + [tip], dtype=np.int64)
                facet_local = tuple(i for i in range(n + 1) if i != drop)
                same_cube = all(0 <= c <= 1 for c in tip)
                pairs.append(SimplexPair(vertices=cloud,
                                         t_local=tuple(range(n + 1)),
                                         s_local=facet_local + (n + 1,),
                                         facet_local=facet_local,
                                         same_cube=same_cube))
    return pairs


def _pair_terms(pair: SimplexPair, hm: np.ndarray):
    """Bond pair indices/equilibria and reference edge determinants for T, S."""
    m = len(pair.vertices)
    a_idx, b_idx, eq = [], [], []
    for a in range(m):
        for b in range(a + 1, m):
            a_idx.append(a)
            b_idx.append(b)
            eq.append(np.linalg.norm(hm @ (pair.vertices[a] - pair.vertices[b])))
    refs = {}
    for name, local in (("t", pair.t_local), ("s", pair.s_local)):
        d = (pair.vertices[list(local[1:])] - pair.vertices[local[0]]).T.astype(float)
        refs[name] = (local, np.linalg.det(d))
    return np.array(a_idx), np.array(b_idx), np.array(eq), refs


def _det_cof(u: np.ndarray):
    """Determinant and cofactor matrix of a 2x2 or 3x3 matrix, handcoded:
    this sits in the inner loop of the penalty solver."""
    if u.shape[0] == 2:
        det = u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
        cof = np.array([[u[1, 1], -u[1, 0]], [-u[0, 1], u[0, 0]]])
        return det, cof
    cof = np.empty((3, 3))
    rows = ((1, 2), (0, 2), (0, 1))
    for i in range(3):
        r0, r1 = rows[i]
        for j in range(3):
            c0, c1 = rows[j]
            cof[i, j] = ((-1) ** (i + j)) * (u[r0, c0] * u[r1, c1] - u[r0, c1] * u[r1, c0])
    det = u[0, 0] * cof[0, 0] + u[0, 1] * cof[0, 1] + u[0, 2] * cof[0, 2]
    return det, cof


def _edge_matrix(pos: np.ndarray, local) -> np.ndarray:
    return (pos[list(local[1:])] - pos[local[0]]).T


def _det_only(u: np.ndarray) -> float:
    if u.shape[0] == 2:
        return u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
    return (u[0, 0] * (u[1, 1] * u[2, 2] - u[1, 2] * u[2, 1])
            - u[0, 1] * (u[1, 0] * u[2, 2] - u[1, 2] * u[2, 0])
            + u[0, 2] * (u[1, 0] * u[2, 1] - u[1, 1] * u[2, 0]))


def _det_and_grad(pos: np.ndarray, local, d_det: float):
    """Determinant of the simplex gradient and its derivative w.r.t. pos."""
    det_u, cof = _det_cof(_edge_matrix(pos, local))
    cof = cof / d_det
    grad = np.zeros_like(pos)
    for c, vi in enumerate(local[1:]):
        grad[vi] += cof[:, c]
        grad[local[0]] -= cof[:, c]
    return det_u / d_det, grad


def _facet_mirror(points: np.ndarray, facet: np.ndarray):
    """Orthogonal projection and reflection of points across the affine
    hyperplane spanned by the facet."""
    base = facet[0]
    dirs = facet[1:] - base
    _, _, vt = np.linalg.svd(dirs)
    normal = vt[-1]
    t = (points - base) @ normal
    return points - np.outer(t, normal), points - 2.0 * np.outer(t, normal)


@dataclass
class InversionReport:
    value: float
    per_pair: list[float]
    feasible_runs: int
    total_runs: int
    h: np.ndarray
    p: float
    seed: int


def inversion_cost(h: np.ndarray | StructureMatrix, p: float = 2.0,
                   restarts: int = 4, seed: int = 0,
                   pairs: list[SimplexPair] | None = None,
                   max_iters: int = 400) -> InversionReport:
    """Estimate the minimal two-simplex energy forced by opposite orientations.

    For every facet-sharing Kuhn pair, the all-pair bond energy of the
    N+2 deformed vertices is minimized subject to
    det(grad u|_T) det(grad u|_S) <= 0, enforced by a quadratic penalty
    whose weight grows tenfold over five stages; runs are kept only if the
    final determinant product is <= 1e-8.  Seeds: the tip vertex collapsed
    onto / reflected across the shared facet (for both tips), plus a coarse
    grid over reflected-tip positions and seeded random clouds.
    """
    hm = h.entries if isinstance(h, StructureMatrix) else np.asarray(h, dtype=float)
    n = hm.shape[0]
    if n not in (2, 3):
        raise ValueError("inversion_cost supports N in {2, 3}")
    model = EnergyModel(p=p, h=hm, mismatch=1.0)
    if pairs is None:
        pairs = facet_sharing_pairs(n)
    rng = np.random.default_rng(seed)
    weights = [1.0, 10.0, 100.0, 1e3, 1e4]
    stage_opts = [OptimizeOptions(tol=1e-6, max_iters=max_iters // 3)] * 4 + \
                 [OptimizeOptions(tol=1e-9, max_iters=max_iters)]

    best_overall = math.inf
    per_pair = []
    feasible_runs = 0
    total_runs = 0
    for pair in pairs:
        a_idx, b_idx, eq, refs = _pair_terms(pair, hm)
        ref_pos = pair.vertices @ hm.T

        def bond_energy(pos):
            d = pos[a_idx] - pos[b_idx]
            r = np.sqrt(np.einsum("ij,ij->i", d, d))
            s = r - eq
            return float(s @ s) if p == 2.0 else float(np.sum(np.abs(s) ** p))

        def bond_energy_grad(pos):
            d = pos[a_idx] - pos[b_idx]
            r = np.sqrt(np.einsum("ij,ij->i", d, d))
            s = r - eq
            if p == 2.0:
                e = float(s @ s)
                mag = 2.0 * s
            else:
                e = float(np.sum(np.abs(s) ** p))
                mag = p * np.abs(s) ** (p - 1.0) * np.sign(s)
            coef = np.where(r > 0, mag / np.where(r > 0, r, 1.0), 0.0)
            flow = coef[:, None] * d
            g = np.zeros_like(pos)
            np.add.at(g, a_idx, flow)
            np.add.at(g, b_idx, -flow)
            return e, g

        def det_product(pos):
            dt = _det_only(_edge_matrix(pos, refs["t"][0])) / refs["t"][1]
            ds = _det_only(_edge_matrix(pos, refs["s"][0])) / refs["s"][1]
            return dt * ds

        def make_objective(w):
            def fun(x):
                pos = x.reshape(-1, n)
                viol = max(det_product(pos), 0.0)
                return bond_energy(pos) + w * viol * viol

            def grad(x):
                pos = x.reshape(-1, n)
                _, ge = bond_energy_grad(pos)
                dt, gt = _det_and_grad(pos, *refs["t"])
                ds, gs = _det_and_grad(pos, *refs["s"])
                prod = dt * ds
                if prod > 0.0:
                    ge = ge + 2.0 * w * prod * (ds * gt + dt * gs)
                return ge.ravel()
            return fun, grad

        def project_feasible(pos):
            """Zero the smaller determinant exactly by moving one tip;
            each simplex determinant is affine in its own tip vertex."""
            dt, gt = _det_and_grad(pos, *refs["t"])
            ds, gs = _det_and_grad(pos, *refs["s"])
            if dt * ds <= 0.0:
                return pos
            if abs(dt) <= abs(ds):
                det, gloc, vi = dt, gt, t_tip
            else:
                det, gloc, vi = ds, gs, n + 1
            gv = gloc[vi]
            nrm2 = float(gv @ gv)
            if nrm2 <= 0.0:
                return pos
            out = pos.copy()
            out[vi] = pos[vi] - det / nrm2 * gv
            return out

        facet_pts = ref_pos[list(pair.facet_local)]
        t_tip = next(i for i in pair.t_local if i not in pair.facet_local)
        seeds = []
        for tip_local in (t_tip, n + 1):
            proj, refl = _facet_mirror(ref_pos[[tip_local]], facet_pts)
            for moved in (proj, refl):
                s = ref_pos.copy()
                s[tip_local] = moved[0]
                seeds.append(s)
        # coarse grid over the moved tip of S, identity elsewhere
        grid = np.arange(-1.5, 2.5 + 1e-9, 0.25)
        tip = n + 1
        cand = []
        for offset in itertools.product(grid, repeat=n):
            s = ref_pos.copy()
            s[tip] = ref_pos[pair.facet_local[0]] + np.array(offset)
            dt, _ = _det_cof((s[list(pair.t_local[1:])] - s[pair.t_local[0]]).T)
            ds, _ = _det_cof((s[list(pair.s_local[1:])] - s[pair.s_local[0]]).T)
            if dt * ds <= 1e-12:
                e, _ = bond_energy_grad(s)
                cand.append((e, s))
        cand.sort(key=lambda t: t[0])
        seeds.extend(s for _, s in cand[:2])
        for _ in range(restarts):
            seeds.append(ref_pos + 0.35 * rng.standard_normal(ref_pos.shape))

        best_pair = math.inf
        for s0 in seeds:
            x = s0.ravel().copy()
            total_runs += 1
            for w, opts in zip(weights, stage_opts):
                fun, grad = make_objective(w)
                x, _, _, _, _ = lbfgs(fun, grad, x, opts)
            pos = project_feasible(x.reshape(-1, n))
            if det_product(pos) <= 1e-8:
                feasible_runs += 1
                best_pair = min(best_pair, bond_energy(pos))
        per_pair.append(best_pair)
        best_overall = min(best_overall, best_pair)

    if not math.isfinite(best_overall):
        raise RuntimeError("all inversion-cost restarts were infeasible")
    return InversionReport(value=float(best_overall), per_pair=per_pair,
                           feasible_runs=feasible_runs, total_runs=total_runs,
                           h=hm, p=p, seed=seed)


def near_isometric_energies(h: np.ndarray, p: float, tau: float = 0.05,
                            samples_per_pair: int = 20, seed: int = 0) -> np.ndarray:
    """Two-simplex energies when grad u|_T is within tau of the identity and
    grad u|_S within tau of the facet reflection (the near-rigid regime)."""
    hm = np.asarray(h, dtype=float)
    n = hm.shape[0]
    rng = np.random.default_rng(seed)
    energies = []
    model = EnergyModel(p=p, h=hm, mismatch=1.0)
    for pair in facet_sharing_pairs(n):
        ref_pos = pair.vertices @ hm.T
        facet_pts = ref_pos[list(pair.facet_local)]
        base = facet_pts[0]
        dirs = facet_pts[1:] - base
        _, _, vt = np.linalg.svd(dirs)
        normal = vt[-1]
        q = np.eye(n) - 2.0 * np.outer(normal, normal)
        tip = n + 1
        for _ in range(samples_per_pair):
            at = rng.standard_normal((n, n))
            at *= tau * rng.uniform(0, 1) / max(np.linalg.norm(at), 1e-12)
            bs = rng.standard_normal((n, n))
            bs *= tau * rng.uniform(0, 1) / max(np.linalg.norm(bs), 1e-12)
            ft = np.eye(n) + at
            fs = q + bs
            pos = ref_pos @ ft.T
            pos[tip] = pos[pair.facet_local[0]] + fs @ (ref_pos[tip] - facet_pts[0])
            energies.append(pair_cell_energy(pos, pair.vertices, model))
    return np.array(energies)


# --------------------------------------------------------------------------
# Rigidity comparison constant
# --------------------------------------------------------------------------

def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@dataclass
class RigidityReport:
    c_hat: float
    argmax_f: np.ndarray
    samples: int
    skipped: int


def rigidity_probe(h: np.ndarray | StructureMatrix, p: float = 2.0,
                   sample_count: int = 1000, seed: int = 0) -> RigidityReport:
    """Empirical constant C with dist^p(F, well(F)) <= C E_cell(u_F; T).

    Samples near-well, far-field, and fully random gradients of both
    orientations and returns the largest observed ratio over all Kuhn
    simplices (0/0 well samples are skipped).
    """
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    hm = h.entries if isinstance(h, StructureMatrix) else np.asarray(h, dtype=float)
    n = hm.shape[0]
    rng = np.random.default_rng(seed)
    model = EnergyModel(p=p, h=hm, mismatch=1.0)
    sims = kuhn_simplices(n)

    samples = []
    while len(samples) < sample_count:
        mode = len(samples) % 3
        r = random_rotation(n, rng)
        if rng.uniform() < 0.5:
            r = r.copy()
            r[0] = -r[0]   # reflection branch
        if mode == 0:
            delta = rng.choice([0.01, 0.05, 0.2])
            g = rng.standard_normal((n, n))
            samples.append(r @ hm + delta * g / np.linalg.norm(g))
        elif mode == 1:
            samples.append(rng.choice([3.0, 10.0]) * rng.standard_normal((n, n)))
        else:
            samples.append(rng.standard_normal((n, n)))

    c_hat = 0.0
    argmax_f = samples[0]
    skipped = 0
    for f in samples:
        detf = np.linalg.det(f)
        branch = 1 if detf >= 0 else -1
        num = well_distance(f, hm, branch) ** p
        for t in sims:
            den = cell_energy(f, t, model)
            if num < 1e-20 and den < 1e-20:
                skipped += 1
                continue
            ratio = num / den
            if ratio > c_hat:
                c_hat = ratio
                argmax_f = f
    return RigidityReport(c_hat=float(c_hat), argmax_f=np.asarray(argmax_f),
                          samples=sample_count, skipped=skipped)
