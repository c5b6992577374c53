from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import joints
from fastpid.dist import build_joint, measures
from fastpid.oracle import DofError, exact_solve, feasible_basis, long_horizon_solve, objective_bits
from fastpid.solver import cond_entropy_bits, solve
from fastpid.synth import GaussianSpec, gen_gate, gen_gaussian, random_joint
from test_solver import DIRICHLET_7_ATOMS, dirichlet_7

AND_I_X1_Y = 0.31127812445913283  # exact redundancy of AND, see derive_frozen.py


def product_2x2x2():
    rng = np.random.default_rng(11)
    a, b, c = rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2))
    return build_joint(np.einsum("i,j,k->ijk", a, b, c))


@pytest.mark.parametrize("dims,count", [((2, 2, 2), 2), ((3, 3, 2), 8)])
def test_feasible_basis_size(dims, count):
    assert len(feasible_basis(random_joint(dims, 0))) == count


def test_feasible_basis_preserves_marginals():
    for b in feasible_basis(random_joint((3, 4, 2), 1)):
        assert np.abs(b.sum(0)).max() == 0 and np.abs(b.sum(1)).max() == 0


def test_exact_xor():
    assert exact_solve(gen_gate("xor")).pid.s == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("gate", ["and", "or"])
def test_exact_and_or_redundancy(gate):
    res = exact_solve(gen_gate(gate)).pid
    assert res.r == pytest.approx(AND_I_X1_Y, abs=1e-4)
    assert res.s == pytest.approx(0.5, abs=1e-4)


def test_exact_product_distribution():
    # any coupling of P(x1), P(x2) times P(y) is optimal here, so only the value is pinned
    p = product_2x2x2()
    res = exact_solve(p)
    assert res.objective_value == pytest.approx(measures(p).h_y, abs=1e-9)
    assert res.pid.s <= 1e-9


def test_long_horizon_product_distribution_returns_p():
    p = product_2x2x2()
    res = long_horizon_solve(p)
    assert np.abs(res.pid.q_star.probs - p.probs).max() <= 1e-9
    assert res.pid.s <= 1e-9


def test_exact_is_deterministic():
    p = random_joint((2, 2, 3), 4)
    a, b = exact_solve(p), exact_solve(p)
    assert np.array_equal(a.pid.q_star.probs, b.pid.q_star.probs)
    assert a.objective_value == b.objective_value


def test_exact_rejects_large_instances():
    with pytest.raises(DofError):
        exact_solve(random_joint((4, 4, 3), 0))


@pytest.mark.parametrize("gate", ["xor", "and", "or"])
def test_long_horizon_agrees_with_exact_on_gates(gate):
    p = gen_gate(gate)
    assert np.abs(long_horizon_solve(p).pid.atoms() - exact_solve(p).pid.atoms()).max() <= 1e-6


def test_long_horizon_agrees_with_exact_on_small_random():
    for seed in range(3):
        p = random_joint((2, 2, 4), seed)
        assert np.abs(long_horizon_solve(p).pid.atoms() - exact_solve(p).pid.atoms()).max() <= 1e-6


def test_long_horizon_matches_independent_optimizer():
    assert np.abs(long_horizon_solve(dirichlet_7()).pid.atoms() - DIRICHLET_7_ATOMS).max() <= 1e-6


def test_fastpid_close_to_oracle_on_gaussian_8():
    p = gen_gaussian(GaussianSpec(bins_x=8, bins_y=8))
    assert np.abs(solve(p).atoms() - long_horizon_solve(p).pid.atoms()).mean() <= 1e-2


def test_constant_label_has_no_information():
    p = build_joint(np.random.default_rng(2).random((3, 4, 1)))
    assert np.all(long_horizon_solve(p).pid.atoms() == 0)


@settings(max_examples=25)
@given(joints(max_dim=4))
def test_oracle_objective_dominates_fastpid(p):
    ref = long_horizon_solve(p)
    assert ref.objective_value >= cond_entropy_bits(solve(p).q_star) - 1e-6


@settings(max_examples=25)
@given(joints(max_dim=4))
def test_long_horizon_consistency(p):
    res, m = long_horizon_solve(p).pid, measures(p)
    assert res.r + res.u1 == pytest.approx(m.i_x1_y, abs=1e-9)
    assert res.r + res.u2 == pytest.approx(m.i_x2_y, abs=1e-9)
    assert res.r + res.u1 + res.u2 + res.s == pytest.approx(m.i_joint, abs=1e-9)


@settings(max_examples=15)
@given(joints(max_dim=2))
def test_exact_consistency(p):
    res, m = exact_solve(p).pid, measures(p)
    assert res.r + res.u1 + res.u2 + res.s == pytest.approx(m.i_joint, abs=1e-9)
    assert res.r + res.u1 == pytest.approx(m.i_x1_y, abs=1e-9)


def test_objective_bits_matches_solver_helper():
    p = random_joint((3, 3, 2), 9)
    assert objective_bits(p) == pytest.approx(cond_entropy_bits(p), abs=1e-12)
