"""Energy minimization over deformations with clamped affine boundaries.

The solver is a limited-memory quasi-Newton descent (two-loop recursion)
with Armijo backtracking (shrink 0.5 from unit step) that falls back to
steepest descent whenever the curvature pairs break down.  Clamped degrees
of freedom are eliminated from the optimization vector, never penalized,
so boundary values are satisfied exactly.  Everything is deterministic:
randomness enters only through seeded initializers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel, LoadSpec, energy_gradient, load_gradient, load_value, total_energy
from .lattice import Lattice


@dataclass(frozen=True)
class OptimizeOptions:
    tol: float = 1e-8            # gradient inf-norm <= tol * max(1, |energy|)
    max_iters: int = 10000
    history: int = 10
    armijo: float = 1e-4
    shrink: float = 0.5
    initial_step: float = 1.0
    restarts: int = 3            # random perturbations added by gamma multistarts
    perturb_amplitude: float = 0.1
    seed: int = 0


def lbfgs(fun, grad, x0: np.ndarray, opts: OptimizeOptions = OptimizeOptions(),
          trace: list | None = None):
    """Limited-memory BFGS with Armijo backtracking on a flat vector.

    Returns (x, f, grad_inf_norm, iterations, converged).  Accepted steps
    never increase fun; on curvature breakdown the memory is dropped and
    the step restarts from steepest descent.  If trace is a list, the
    objective value of every accepted iterate is appended to it.
    """
    x = np.array(x0, dtype=float, copy=True)
    f = float(fun(x))
    if not np.isfinite(f):
        raise ValueError("non-finite objective at the initial point")
    if trace is not None:
        trace.append(f)
    g = np.asarray(grad(x), dtype=float)

    def done(fval, gvec):
        return np.max(np.abs(gvec), initial=0.0) <= opts.tol * max(1.0, abs(fval))

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    iters = 0
    converged = done(f, g)

    while not converged and iters < opts.max_iters:
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            y_last = y_hist[-1]
            q *= (s_hist[-1] @ y_last) / (y_last @ y_last)
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            q += (a - rho * (y @ q)) * s
        d = -q
        if d @ g >= 0:
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            d = -g

        if s_hist:
            step = opts.initial_step
        else:
            # steepest-descent mode: scale the first trial to the gradient
            step = min(opts.initial_step, opts.initial_step / max(1.0, np.linalg.norm(d)))
        gd = g @ d
        accepted = False
        while step > 1e-16:
            x_new = x + step * d
            f_new = float(fun(x_new))
            if f_new <= f + opts.armijo * step * gd:
                accepted = True
                break
            step *= opts.shrink
        if not accepted:
            if s_hist:
                s_hist.clear(); y_hist.clear(); rho_hist.clear()
                continue
            break  # stuck even along -g; report the unconverged state

        g_new = np.asarray(grad(x_new), dtype=float)
        s_vec = x_new - x
        y_vec = g_new - g
        sy = s_vec @ y_vec
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_hist.append(s_vec); y_hist.append(y_vec); rho_hist.append(1.0 / sy)
            if len(s_hist) > opts.history:
                s_hist.pop(0); y_hist.pop(0); rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        if trace is not None:
            trace.append(f)
        iters += 1
        converged = done(f, g)

    return x, f, float(np.max(np.abs(g), initial=0.0)), iters, bool(converged)


# --------------------------------------------------------------------------
# Boundary conditions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClampRegion:
    """Nodes held at the affine map x -> A x + b."""

    indices: np.ndarray
    matrix: np.ndarray
    offset: np.ndarray | None = None

    def positions(self, lattice: Lattice) -> np.ndarray:
        a = np.asarray(self.matrix, dtype=float)
        b = np.zeros(lattice.dim) if self.offset is None else np.asarray(self.offset, dtype=float)
        return lattice.coords[self.indices] @ a.T + b


@dataclass(frozen=True)
class BoundaryCondition:
    """Disjoint clamp regions; everything else is free."""

    regions: tuple[ClampRegion, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        seen = set()
        for reg in self.regions:
            idx = set(np.asarray(reg.indices, dtype=int).tolist())
            if idx & seen:
                raise ValueError("clamp regions must be disjoint")
            seen |= idx

    def clamp_mask(self, lattice: Lattice) -> np.ndarray:
        mask = np.zeros(lattice.n_nodes, dtype=bool)
        for reg in self.regions:
            mask[np.asarray(reg.indices, dtype=int)] = True
        return mask

    def apply(self, lattice: Lattice, u: np.ndarray) -> np.ndarray:
        """Copy of u with clamped nodes overwritten by their affine values."""
        out = np.array(u, dtype=float, copy=True)
        for reg in self.regions:
            out[np.asarray(reg.indices, dtype=int)] = reg.positions(lattice)
        return out


def slab_clamp(lattice: Lattice, side: str, cut: float, matrix: np.ndarray,
               offset: np.ndarray | None = None) -> ClampRegion:
    """Clamp all nodes with x1 <= -cut (side='left') or x1 >= cut ('right')."""
    x1 = lattice.coords[:, 0]
    if side == "left":
        idx = np.nonzero(x1 <= -cut)[0]
    elif side == "right":
        idx = np.nonzero(x1 >= cut)[0]
    else:
        raise ValueError("side must be 'left' or 'right'")
    return ClampRegion(indices=idx, matrix=matrix, offset=offset)


@dataclass
class MinimizeResult:
    u: np.ndarray
    energy: float
    gradient_inf_norm: float
    iterations: int
    converged: bool
    restarts_used: int = 1


def minimize(lattice: Lattice, model: EnergyModel, bc: BoundaryCondition,
             init: np.ndarray, opts: OptimizeOptions = OptimizeOptions(),
             bond_mask: np.ndarray | None = None,
             loads: LoadSpec | None = None,
             trace: list | None = None) -> MinimizeResult:
    """Descend the (optionally loaded) energy from init; clamps stay exact.

    Minimizes G = total_energy - load_value over the free nodes; the
    reported energy is the restricted sum when bond_mask is given.  Runs
    that exhaust the iteration budget come back with converged=False
    rather than raising.
    """
    free = ~bc.clamp_mask(lattice)
    u = bc.apply(lattice, init)
    if not np.allclose(u[free], np.asarray(init, dtype=float)[free]):
        raise ValueError("init does not cover all nodes consistently")
    lgrad = load_gradient(lattice, loads) if loads is not None else None

    def insert(x):
        u_full = u.copy()
        u_full[free] = x.reshape(-1, lattice.dim)
        return u_full

    def fun(x):
        u_full = insert(x)
        e = total_energy(lattice, u_full, model, bond_mask=bond_mask)
        if loads is not None:
            e -= load_value(lattice, u_full, loads)
        return e

    def grad(x):
        g = energy_gradient(lattice, insert(x), model, bond_mask=bond_mask)
        if lgrad is not None:
            g = g - lgrad
        return g[free].ravel()

    x, f, ginf, iters, converged = lbfgs(fun, grad, u[free].ravel(), opts, trace=trace)
    return MinimizeResult(u=insert(x), energy=float(f), gradient_inf_norm=ginf,
                          iterations=iters, converged=converged)


def minimize_multistart(lattice: Lattice, model: EnergyModel, bc: BoundaryCondition,
                        inits, opts: OptimizeOptions = OptimizeOptions(),
                        bond_mask: np.ndarray | None = None,
                        loads: LoadSpec | None = None) -> MinimizeResult:
    """Best minimize() result over a list of initial deformations."""
    inits = list(inits)
    best = None
    for init in inits:
        res = minimize(lattice, model, bc, init, opts, bond_mask=bond_mask, loads=loads)
        if best is None or res.energy < best.energy:
            best = res
    best.restarts_used = len(inits)
    return best


# --------------------------------------------------------------------------
# Initializers
# --------------------------------------------------------------------------

def _fold_reflection(p1h: np.ndarray) -> np.ndarray:
    """Reflection fixing the image of the {x1 = 0} plane under x -> P1 H x."""
    n = np.linalg.solve(p1h.T, np.eye(len(p1h))[:, 0])
    n /= np.linalg.norm(n)
    return np.eye(len(p1h)) - 2.0 * np.outer(n, n)


def make_initializer(lattice: Lattice, model: EnergyModel, kind: str,
                     p1: np.ndarray, p2: np.ndarray,
                     transition_width: float | None = None,
                     seed: int = 0, amplitude: float = 0.1,
                     base: np.ndarray | None = None) -> np.ndarray:
    """Deformations bridging the wells P1 H (left) and P2 H (right).

    sharp          piecewise affine switch at x1 = 0
    linear-blend   convex interpolation of the two affine maps over the width
    folded         sharp plus one orientation reversal in a middle band
    random-perturb seeded uniform noise of the given amplitude on top of base
    """
    coords = lattice.coords
    h = model.h
    p1h = np.asarray(p1, dtype=float) @ h
    p2h = np.asarray(p2, dtype=float) @ h
    x1 = coords[:, 0]
    width = float(transition_width) if transition_width else max(1.0, float(lattice.k))

    if kind == "sharp":
        u = coords @ p1h.T
        right = x1 >= 0
        u[right] = coords[right] @ p2h.T
        return u
    if kind == "linear-blend":
        t = np.clip(x1 / width + 0.5, 0.0, 1.0)
        return (1 - t)[:, None] * (coords @ p1h.T) + t[:, None] * (coords @ p2h.T)
    if kind == "folded":
        refl = _fold_reflection(p1h)
        u = coords @ p1h.T
        mid = (x1 >= 0) & (x1 < width)
        u[mid] = coords[mid] @ (refl @ p1h).T
        right = x1 >= width
        anchor = np.zeros(lattice.dim)
        anchor[0] = width
        b = refl @ p1h @ anchor - p2h @ anchor
        u[right] = coords[right] @ p2h.T + b
        return u
    if kind == "random-perturb":
        if base is None:
            base = make_initializer(lattice, model, "sharp", p1, p2,
                                    transition_width, seed)
        rng = np.random.default_rng(seed)
        return base + amplitude * rng.uniform(-1.0, 1.0, size=base.shape)
    raise ValueError("unknown initializer kind %r" % kind)


# --------------------------------------------------------------------------
# Finite-difference gradient verification
# --------------------------------------------------------------------------

def fd_check(lattice: Lattice, model: EnergyModel, u: np.ndarray,
             step: float = 1e-6, floor: float = 1e-8) -> float:
    """Worst relative mismatch between analytic and central-difference gradients.

    Components whose magnitudes both fall below the floor are compared
    absolutely (the ground-state case, where both sides vanish to O(step^2)).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    u = np.asarray(u, dtype=float)
    analytic = energy_gradient(lattice, u, model)
    worst = 0.0
    for idx in range(lattice.n_nodes):
        for ax in range(lattice.dim):
            up = u.copy(); up[idx, ax] += step
            dn = u.copy(); dn[idx, ax] -= step
            fd = (total_energy(lattice, up, model) - total_energy(lattice, dn, model)) / (2 * step)
            ga = analytic[idx, ax]
            scale = max(abs(ga), abs(fd))
            err = abs(ga - fd) if scale < floor else abs(ga - fd) / scale
            worst = max(worst, err)
    return worst
