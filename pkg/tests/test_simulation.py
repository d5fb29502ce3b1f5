import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prenet.model import Family, sample_covariance
from prenet.simulation import (
    Estimator,
    align_loadings,
    format_table,
    illustrative_loadings,
    make_model,
    replicate_seed,
    run_study,
    sample_mvn,
    sim_metrics,
)

from conftest import all_column_transforms


def test_model_a_and_b_entries():
    a = make_model("A")
    assert a.lambda_true[0, 0] == 0.95
    assert a.lambda_true.shape == (6, 2)
    np.testing.assert_allclose(a.psi_true, 1 - np.sum(a.lambda_true**2, axis=1))
    np.testing.assert_array_equal(illustrative_loadings()[:, 0], [0.9, 0.8, 0.7, 0.2, 0.2, 0.2])


def test_model_c_blocks():
    c = make_model("C")
    assert c.lambda_true.shape == (100, 4)
    np.testing.assert_array_equal(np.count_nonzero(c.lambda_true, axis=0), [25] * 4)
    np.testing.assert_array_equal(c.lambda_true.max(axis=0), [0.8, 0.75, 0.7, 0.65])


@pytest.mark.parametrize("seed", range(20))
def test_model_d_communalities(seed):
    d = make_model("D", seed)
    comm = np.sum(d.lambda_true**2, axis=1)
    assert np.all(comm < 1.0)
    assert np.all(d.psi_true > 0)
    assert np.count_nonzero(d.lambda_true) == 200
    # replay the draw: rows whose raw communality exceeded one now sit at 0.95
    block = make_model("C").lambda_true
    rng = np.random.default_rng(seed)
    flat = block.ravel()
    chosen = rng.choice(np.flatnonzero(flat == 0), size=100, replace=False)
    flat[chosen] = rng.uniform(0.4, 0.6, size=100)
    raw = flat.reshape(100, 4)
    over = np.sum(raw**2, axis=1) > 1
    np.testing.assert_allclose(comm[over], 0.95, atol=1e-12)
    np.testing.assert_array_equal(d.lambda_true[~over], raw[~over])


def test_model_d_depends_on_seed():
    assert not np.array_equal(make_model("D", 1).lambda_true, make_model("D", 2).lambda_true)


def test_unknown_model():
    with pytest.raises(ValueError):
        make_model("E")


def test_sampler_covariance_converges():
    model = make_model("A")
    x = sample_mvn(model, 1_000_000, 5)
    np.testing.assert_allclose(sample_covariance(x).s, model.sigma, atol=0.01)


def test_sampler_shapes_and_determinism():
    model = make_model("A")
    assert sample_mvn(model, 1, 0).shape == (1, 6)
    np.testing.assert_array_equal(sample_mvn(model, 20, 3), sample_mvn(model, 20, 3))
    with pytest.raises(ValueError):
        sample_mvn(model, 0, 0)


def test_alignment_undoes_swaps_and_signs():
    truth = make_model("A").lambda_true
    np.testing.assert_array_equal(align_loadings(truth[:, ::-1], truth), truth)
    np.testing.assert_array_equal(align_loadings(-truth, truth), truth)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_alignment_is_optimal_over_all_transforms(seed, m):
    rng = np.random.default_rng(seed)
    est, truth = rng.standard_normal((6, m)), rng.standard_normal((6, m))
    aligned = np.linalg.norm(align_loadings(est, truth) - truth)
    brute = min(np.linalg.norm(est[:, list(perm)] * signs - truth) for perm, signs in all_column_transforms(m))
    assert aligned == pytest.approx(brute, rel=1e-12)
    assert aligned <= np.linalg.norm(est - truth) + 1e-12


def test_metrics_cases():
    truth = make_model("A").lambda_true
    m = sim_metrics(truth, truth)
    assert (m.mse, m.tpr, m.fpr) == (0.0, 1.0, 0.0)
    assert sim_metrics(np.zeros_like(truth), truth).tpr == 0.0
    assert sim_metrics(illustrative_loadings(), illustrative_loadings()).fpr is None
    est = truth.copy()
    est[0, 1] = 0.3
    m = sim_metrics(est, truth)
    assert m.mse == pytest.approx(0.09 / 12)
    assert m.fpr == pytest.approx(1 / 6)


def test_metrics_invariant_to_joint_column_permutation(rng):
    truth = make_model("A").lambda_true
    est = truth + 0.1 * rng.standard_normal(truth.shape)
    a, b = sim_metrics(est, truth), sim_metrics(est[:, ::-1], truth[:, ::-1])
    assert a.mse == pytest.approx(b.mse) and a.tpr == b.tpr and a.fpr == b.fpr


def test_estimator_parsing():
    assert Estimator.parse("prenet:0.01") == Estimator(Family.PRENET, 0.01)
    assert Estimator.parse("mc") == Estimator(Family.MC, 3.0)
    assert Estimator.parse("lasso").name == "lasso"
    assert Estimator.parse("prenet:1").name == "prenet_1"
    with pytest.raises(ValueError):
        Estimator.parse("ridge")


def test_replicate_seeds_are_counter_based():
    seeds = [replicate_seed(7, i) for i in range(5)]
    assert len(set(seeds)) == 5
    assert seeds[3] == replicate_seed(7, 3)


def test_study_is_reproducible_across_threads():
    est = (Estimator(Family.PRENET, 1.0), Estimator(Family.LASSO, 1.0))
    one = format_table(run_study("A", 60, 4, est, ("bic",), seed=2, threads=1, K=8))
    many = format_table(run_study("A", 60, 4, est, ("bic",), seed=2, threads=3, K=8))
    assert one == many
    rows = run_study("D", 60, 2, est[:1], ("aic",), seed=1, K=5, regenerate_model=False)
    assert rows[0].replicates + rows[0].failures == 2
