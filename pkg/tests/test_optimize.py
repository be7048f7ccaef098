"""Optimizer contracts: descent, clamp preservation, determinism,
initializers, and the finite-difference check."""

import numpy as np
import pytest

from nanolat.energy import EnergyModel, total_energy
from nanolat.lattice import build_strip_lattice
from nanolat.optimize import (BoundaryCondition, OptimizeOptions, fd_check,
                              make_initializer, minimize, minimize_multistart,
                              slab_clamp)

J = np.diag([-1.0, 1.0])


def reflection_problem(k=1, half=6, cut=4):
    s = build_strip_lattice(2, k, half)
    m = EnergyModel(h=np.eye(2))
    bc = BoundaryCondition((slab_clamp(s, "left", cut, np.eye(2)),
                            slab_clamp(s, "right", cut, J)))
    return s, m, bc


def test_already_optimal_returns_immediately():
    s = build_strip_lattice(2, 1, 4)
    m = EnergyModel(h=np.eye(2))
    bc = BoundaryCondition((slab_clamp(s, "left", 3, np.eye(2)),
                            slab_clamp(s, "right", 3, np.eye(2))))
    res = minimize(s, m, bc, s.coords.copy())
    assert res.energy == 0.0
    assert res.iterations == 0
    assert res.converged


def test_reflection_transition_positive_energy():
    s, m, bc = reflection_problem()
    init = make_initializer(s, m, "sharp", np.eye(2), J)
    res = minimize(s, m, bc, init)
    assert res.converged
    assert res.energy > 0.1


def test_descent_monotone_per_iteration():
    s, m, bc = reflection_problem()
    init = make_initializer(s, m, "random-perturb", np.eye(2), J, seed=3, amplitude=0.3)
    trace = []
    res = minimize(s, m, bc, bc.apply(s, init), trace=trace)
    assert len(trace) == res.iterations + 1
    diffs = np.diff(np.array(trace))
    assert (diffs <= 1e-12).all()
    assert res.energy <= trace[0]


def test_clamped_nodes_bitwise_preserved():
    s, m, bc = reflection_problem()
    init = bc.apply(s, make_initializer(s, m, "linear-blend", np.eye(2), J))
    res = minimize(s, m, bc, init)
    mask = bc.clamp_mask(s)
    assert (res.u[mask] == init[mask]).all()


def test_determinism_identical_results():
    s, m, bc = reflection_problem()
    init = bc.apply(s, make_initializer(s, m, "random-perturb", np.eye(2), J, seed=5))
    r1 = minimize(s, m, bc, init.copy())
    r2 = minimize(s, m, bc, init.copy())
    assert r1.energy == r2.energy
    assert r1.iterations == r2.iterations
    assert (r1.u == r2.u).all()


def test_multistart_dominates_each_restart():
    s, m, bc = reflection_problem()
    inits = [bc.apply(s, make_initializer(s, m, kind, np.eye(2), J))
             for kind in ("sharp", "linear-blend", "folded")]
    singles = [minimize(s, m, bc, u) for u in inits]
    best = minimize_multistart(s, m, bc, inits)
    assert best.restarts_used == 3
    assert best.energy <= min(r.energy for r in singles) + 1e-15


def test_budget_exhaustion_flags_not_raises():
    s, m, bc = reflection_problem()
    init = bc.apply(s, make_initializer(s, m, "random-perturb", np.eye(2), J,
                                        seed=1, amplitude=0.5))
    res = minimize(s, m, bc, init, OptimizeOptions(max_iters=3))
    assert not res.converged
    assert res.iterations == 3


def test_non_finite_init_raises():
    s, m, bc = reflection_problem()
    init = bc.apply(s, make_initializer(s, m, "sharp", np.eye(2), J))
    free = ~bc.clamp_mask(s)
    init[np.nonzero(free)[0][0]] = np.nan
    with pytest.raises(ValueError):
        minimize(s, m, bc, init)


def test_clamp_regions_must_be_disjoint():
    s, _, _ = reflection_problem()
    with pytest.raises(ValueError):
        BoundaryCondition((slab_clamp(s, "left", 0, np.eye(2)),
                           slab_clamp(s, "right", 0, J)))


# --------------------------------------------------------------------------
# Initializers
# --------------------------------------------------------------------------

def test_sharp_identity_is_identity():
    s = build_strip_lattice(2, 1, 3)
    m = EnergyModel(h=np.eye(2))
    u = make_initializer(s, m, "sharp", np.eye(2), np.eye(2))
    assert np.allclose(u, s.coords)


def test_blend_interpolates_gradient():
    s = build_strip_lattice(2, 1, 6)
    m = EnergyModel(h=np.eye(2))
    lam = 0.6
    u = make_initializer(s, m, "linear-blend", np.eye(2), lam * np.eye(2),
                         transition_width=4.0)
    idx = {tuple(c): i for i, c in enumerate(s.coords.astype(int))}
    du_left = u[idx[(-5, 0)]] - u[idx[(-6, 0)]]
    du_right = u[idx[(6, 0)]] - u[idx[(5, 0)]]
    assert np.allclose(du_left, [1.0, 0.0], atol=1e-12)
    assert np.allclose(du_right, [lam, 0.0], atol=1e-12)
    # at the interface the map is the average of the two affine maps
    assert np.allclose(u[idx[(0, 1)]], [0.0, (1 + lam) / 2], atol=1e-12)


def test_folded_contains_one_reversal():
    from nanolat.analysis import simplex_gradients
    s = build_strip_lattice(2, 1, 6)
    m = EnergyModel(h=np.eye(2))
    u = make_initializer(s, m, "folded", np.eye(2), np.eye(2), transition_width=3.0)
    dets = np.linalg.det(simplex_gradients(s, u))
    assert (dets > 0).any() and (dets < 0).any()


def test_random_perturb_deterministic():
    s = build_strip_lattice(2, 1, 3)
    m = EnergyModel(h=np.eye(2))
    u1 = make_initializer(s, m, "random-perturb", np.eye(2), J, seed=11)
    u2 = make_initializer(s, m, "random-perturb", np.eye(2), J, seed=11)
    u3 = make_initializer(s, m, "random-perturb", np.eye(2), J, seed=12)
    assert (u1 == u2).all()
    assert not (u1 == u3).all()


def test_unknown_initializer_kind():
    s = build_strip_lattice(2, 1, 2)
    m = EnergyModel(h=np.eye(2))
    with pytest.raises(ValueError):
        make_initializer(s, m, "annealed", np.eye(2), J)


# --------------------------------------------------------------------------
# fd_check
# --------------------------------------------------------------------------

def test_fd_check_ground_state_absolute_floor():
    s = build_strip_lattice(2, 1, 2)
    m = EnergyModel(h=np.eye(2))
    assert fd_check(s, m, s.coords.copy(), step=1e-6) < 1e-8


@pytest.mark.parametrize("p,tol", [(2.0, 1e-6), (4.0, 1e-5)])
def test_fd_check_random_states(p, tol):
    rng = np.random.default_rng(int(p))
    s = build_strip_lattice(2, 2, 3)
    m = EnergyModel(p=p, h=np.eye(2))
    u = s.coords + 0.3 * rng.standard_normal(s.coords.shape)
    assert fd_check(s, m, u, step=1e-6) < tol


def test_fd_check_rejects_nonpositive_step():
    s = build_strip_lattice(2, 1, 2)
    m = EnergyModel(h=np.eye(2))
    with pytest.raises(ValueError):
        fd_check(s, m, s.coords.copy(), step=0.0)
