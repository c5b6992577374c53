from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fastpid import ecs
from fastpid.ecs import (
    EcsSnapshot,
    ScenarioConfig,
    SparseSpec,
    ToyNet,
    check_trigger,
    class_signal,
    classify_outcome,
    gen_sparse,
    init_nets,
    measure_ecs,
    mi_proxy_check,
    smoothed_relu,
    smoothed_relu_grad,
    test_error as heldout_error,
    train,
)

SIGNAL_DOUBLING_FACTOR_Q3 = 8.0  # 2^(q/(q-2)) at q = 3, see derive_frozen.py
SMALL = SparseSpec(K=4, d1=8, d2=8, m=4, n=256)


def snap(lam) -> EcsSnapshot:
    lam = np.asarray(lam, dtype=float)
    return EcsSnapshot(lam, np.ones_like(lam), np.ones_like(lam))


# ---------------------------------------------------------------- data


def test_sparse_spec_rejects_small_input_dimension():
    with pytest.raises(ValueError):
        SparseSpec(K=8, d1=4)


@pytest.mark.parametrize("kw", [{"q": 2}, {"beta": 0.0}, {"z_weak": 40.0}, {"frac_sufficient": (1.5, 0.5)}])
def test_sparse_spec_validation(kw):
    with pytest.raises(ValueError):
        SparseSpec(**kw)


def test_noiseless_sufficient_data_is_exact_dictionary_atoms():
    spec = replace(SMALL, noise_sigma=0.0, frac_sufficient=(1.0, 1.0))
    data = gen_sparse(spec)
    for r in (0, 1):
        m = data.dictionaries[r]
        assert np.allclose(data.x[r], spec.z_strong * m[:, data.y].T, atol=1e-12)
        assert np.allclose(np.einsum("nd,dn->n", data.x[r], m[:, data.y]), spec.z_strong, atol=1e-12)


def test_no_sufficient_samples_means_no_signal():
    spec = replace(SMALL, frac_sufficient=(0.9, 0.0))
    assert np.all(class_signal(spec, gen_sparse(spec))[:, 1] == 0)


def test_data_is_seeded():
    a, b = gen_sparse(SMALL), gen_sparse(SMALL)
    assert all(np.array_equal(u, v) for u, v in zip(a.x, b.x)) and np.array_equal(a.y, b.y)


def test_dictionaries_are_orthonormal():
    for m in gen_sparse(SMALL).dictionaries:
        assert np.allclose(m.T @ m, np.eye(SMALL.K), atol=1e-12)


def test_doubling_strong_code_scales_signal():
    spec = replace(SMALL, frac_sufficient=(1.0, 1.0))
    big = replace(spec, z_strong=2 * spec.z_strong)
    ratio = class_signal(big, gen_sparse(big)) / class_signal(spec, gen_sparse(spec))
    assert np.allclose(ratio, SIGNAL_DOUBLING_FACTOR_Q3, rtol=1e-12)


# ---------------------------------------------------------------- activation


def test_smoothed_relu_knots():
    beta, q = 0.2, 3
    assert smoothed_relu(0.0, beta, q) == 0.0
    assert smoothed_relu(-1.0, beta, q) == 0.0
    assert smoothed_relu(beta, beta, q) == pytest.approx(beta / q, abs=1e-15)
    assert smoothed_relu(1.0, beta, q) == pytest.approx(1.0 - beta * (1 - 1 / q), abs=1e-15)


@pytest.mark.parametrize("q", [3, 4, 5])
def test_smoothed_relu_one_sided_slopes_at_knot(q):
    beta = 0.2
    h = 1e-3 * beta

    def f(z):
        return smoothed_relu(z, beta, q)

    # backward stencils exact for polynomials up to degree 5, forward difference exact for lines
    left = (137 * f(beta) - 300 * f(beta - h) + 300 * f(beta - 2 * h) - 200 * f(beta - 3 * h)
            + 75 * f(beta - 4 * h) - 12 * f(beta - 5 * h)) / (60 * h)
    right = (f(beta + h) - f(beta)) / h
    assert abs(left - 1.0) <= 1e-10
    assert abs(right - 1.0) <= 1e-10
    assert smoothed_relu_grad(beta, beta, q) == 1.0


def test_smoothed_relu_monotone_and_c1_on_grid():
    beta, q = 0.2, 3
    z = np.linspace(-1.0, 1.0, 1000)
    v, g = smoothed_relu(z, beta, q), smoothed_relu_grad(z, beta, q)
    assert np.all(np.diff(v) >= 0)
    assert np.all(g >= 0)
    step = z[1] - z[0]
    assert np.abs(np.diff(g)).max() <= (q - 1) / beta * step + 1e-12
    mid = (z[1:] + z[:-1]) / 2
    assert np.allclose(np.diff(v) / step, smoothed_relu_grad(mid, beta, q), atol=(q - 1) / beta * step)


# ---------------------------------------------------------------- ECS


def test_unit_alignment_and_unit_signal_give_unit_strength():
    data = gen_sparse(SMALL)
    nets = tuple(ToyNet(np.zeros((SMALL.K, SMALL.m, 8)), data.dictionaries[r]) for r in (0, 1))
    nets[0].weights[:, 0, :] = data.dictionaries[0].T
    s = measure_ecs(nets, data, SMALL, signal=np.ones((SMALL.K, 2)))
    assert np.allclose(s.lam[:, 0], 1.0, atol=1e-12)
    assert np.all(s.lam[:, 1] == 0)


def test_orthogonal_weights_have_zero_strength():
    data = gen_sparse(SMALL)
    nets = init_nets(SMALL, data)
    for net in nets:
        proj = net.dictionary @ net.dictionary.T
        net.weights = net.weights - net.weights @ proj
    assert np.allclose(measure_ecs(nets, data, SMALL).lam, 0.0, atol=1e-12)


def test_snapshot_is_alignment_times_signal():
    data = gen_sparse(SMALL)
    nets = init_nets(SMALL, data)
    s = measure_ecs(nets, data, SMALL)
    assert np.array_equal(s.lam, s.alignment * s.signal)
    assert np.all(s.lam >= 0)


def test_trigger_examples():
    assert check_trigger(snap([[1.0, 1.2]]), 0.1) == ["r1_suppressed"]
    assert check_trigger(snap([[1.05, 1.0]]), 0.1) == ["balanced"]
    assert check_trigger(snap([[0.7, 0.7]]), 0.01) == ["balanced"]
    assert check_trigger(snap([[0.0, 0.0]]), 0.1) == ["balanced_degenerate"]


@given(
    st.lists(st.tuples(st.floats(0.01, 10), st.floats(0.01, 10)), min_size=1, max_size=8),
    st.sampled_from([0.5, 2.0, 4.0, 0.25]),
    st.floats(0.01, 1.0),
)
def test_trigger_is_scale_free(lam, c, beta):
    lam = np.array(lam)
    assert check_trigger(snap(lam), beta) == check_trigger(snap(lam * c), beta)


@given(
    st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=8),
    st.integers(0, 2**31 - 1),
)
def test_classify_outcome_one_label_per_class(before, seed):
    before = np.array(before)
    after = before * np.random.default_rng(seed).uniform(0.2, 5.0, before.shape)
    labels = classify_outcome(snap(before), snap(after), 0.2)
    assert len(labels) == len(before)
    assert all(lab in ecs.OUTCOMES for lab in labels)
    assert labels == classify_outcome(snap(before), snap(after), 0.2)


def test_modal_label_ties_prefer_earlier_outcome():
    assert ecs.modal_label(["breaking", "amplified"]) == "amplified"
    assert ecs.modal_label(["reversed", "reversed", "persistent"]) == "reversed"


# ---------------------------------------------------------------- training


def test_zero_step_size_changes_nothing():
    data = gen_sparse(SMALL)
    nets = init_nets(SMALL, data)
    out, traj = train(nets, data, SMALL, "joint", 3, eta=0.0)
    assert np.array_equal(out[0].weights, nets[0].weights)
    assert all(np.array_equal(s.lam, traj.snapshots[0].lam) for s in traj.snapshots)


def test_unimodal_training_leaves_other_encoder_untouched():
    data = gen_sparse(SMALL)
    nets = init_nets(SMALL, data)
    out, traj = train(nets, data, SMALL, "unimodal-1", 5, eta=0.002)
    assert np.array_equal(out[1].weights, nets[1].weights)
    assert all(np.array_equal(s.lam[:, 1], traj.snapshots[0].lam[:, 1]) for s in traj.snapshots)
    assert not np.array_equal(out[0].weights, nets[0].weights)


def test_weaker_modality_alignment_grows_monotonically():
    spec = SparseSpec(K=4)
    data = gen_sparse(spec)
    nets = init_nets(spec, data)
    before = measure_ecs(nets, data, spec)
    lose = 3 - ecs.initial_winner(before)
    _, traj = train(nets, data, spec, f"unimodal-{lose}", 30, 0.002)
    series = np.array([s.alignment[:, lose - 1].sum() for s in traj.snapshots])
    assert np.all(np.diff(series) > 0)


def test_unknown_mode():
    data = gen_sparse(SMALL)
    with pytest.raises(ValueError):
        train(init_nets(SMALL, data), data, SMALL, "fusion", 1, 0.01)


def test_non_finite_loss_aborts_with_partial_trajectory():
    data = gen_sparse(SMALL)
    x1 = data.x[0].copy()
    x1[0, 0] = np.inf
    bad = replace(data, x=(x1, data.x[1]))
    with np.errstate(all="ignore"), pytest.raises(ecs.DivergenceError) as info:
        train(init_nets(SMALL, data), bad, SMALL, "joint", 5, eta=0.002)
    assert info.value.epoch == 1
    assert info.value.trajectory.aborted and len(info.value.trajectory.snapshots) == 1


def test_untrained_nets_are_at_chance_on_average():
    spec = SparseSpec(K=8)
    errs = []
    for seed in range(8):
        s = replace(spec, seed=seed)
        data = gen_sparse(s)
        held = gen_sparse(s, data.dictionaries, sample_seed=1, n=8192)
        errs.append(heldout_error(init_nets(s, data), "joint", held, s))
    assert abs(np.mean(errs) - (1 - 1 / 8)) <= 0.05


def test_easy_regime_is_learned():
    spec = SparseSpec(K=8, noise_sigma=0.0, frac_sufficient=(1.0, 1.0))
    data = gen_sparse(spec)
    nets, _ = train(init_nets(spec, data), data, spec, "joint", 50, 0.002)
    held = gen_sparse(spec, data.dictionaries, sample_seed=1)
    assert heldout_error(nets, "joint", held, spec) <= 0.01


# ---------------------------------------------------------------- scenarios and MI proxy


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_scripted_scenarios_at_four_classes(seed):
    res = ecs.run_suite(SparseSpec(K=4, seed=seed))
    assert {name: r.label for name, r in res.items()} == {o: o for o in ecs.OUTCOMES}


def test_run_scenario_rejects_unknown_name():
    with pytest.raises(ValueError):
        ecs.run_scenario("collapsed", SMALL)


def proxy_rho(seed: int, r: int = 1) -> float:
    spec = SparseSpec(K=4, seed=seed)
    data = gen_sparse(spec)
    _, traj = train(init_nets(spec, data), data, spec, f"unimodal-{r}", 27, 0.002, keep_nets=True)
    idx = range(0, 28, 3)
    res = mi_proxy_check([traj.snapshots[i] for i in idx], [traj.nets[i] for i in idx], data, spec, r=r)
    assert not res.degenerate and len(res.mi) == 10
    return res.rho


def test_mi_tracks_ecs_power_at_four_classes():
    assert proxy_rho(0) >= 0.8


def test_mi_proxy_is_stable_across_seeds():
    assert abs(proxy_rho(0) - proxy_rho(1)) <= 0.15


def test_constant_trajectory_is_degenerate():
    data = gen_sparse(SMALL)
    _, traj = train(init_nets(SMALL, data), data, SMALL, "unimodal-1", 5, 0.0, keep_nets=True)
    assert mi_proxy_check(traj.snapshots, traj.nets, data, SMALL).degenerate


def test_stage_two_error_is_a_rate():
    err = ecs.stage_two_error(SMALL, balanced=False, cfg=ScenarioConfig(joint_epochs=2))
    assert 0.0 <= err <= 1.0
