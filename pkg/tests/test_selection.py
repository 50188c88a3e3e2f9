"""Subset selection by threshold and top-K, and weight renormalization."""

import numpy as np
import pytest

from crnlearn.kinetics import EQUILIBRIUM, FeatureSubset, NetworkConfig, RateConstants, Schedule
from crnlearn.selection import (
    SigmoidSpec,
    renorm_deviation_bound,
    renormalize_selection,
    run_selection_threshold,
    run_selection_topk,
    sigmoid_f,
)

CFG = NetworkConfig()


# ---------------------------------------------------------------------------
# production sigmoid
# ---------------------------------------------------------------------------

def test_sigmoid_zero_at_threshold():
    assert sigmoid_f(1.0, SigmoidSpec(theta=1.0, rho=2.0, fmax=4.0)) == 0.0


def test_sigmoid_plateau_onset():
    assert sigmoid_f(3.0, SigmoidSpec(theta=1.0, rho=2.0, fmax=4.0)) == 4.0


def test_sigmoid_linear_midpoint():
    assert sigmoid_f(2.0, SigmoidSpec(theta=1.0, rho=2.0, fmax=4.0)) == pytest.approx(2.0)


def test_sigmoid_rejects_bad_spec():
    with pytest.raises(ValueError):
        SigmoidSpec(rho=0.0)
    with pytest.raises(ValueError):
        SigmoidSpec(fmax=-1.0)
    with pytest.raises(ValueError):
        sigmoid_f(-0.5, SigmoidSpec())


# ---------------------------------------------------------------------------
# threshold selection
# ---------------------------------------------------------------------------

def test_threshold_all_zero_samples_select_nothing():
    spec = SigmoidSpec(theta=0.5, rho=0.5, fmax=1.0)
    out = run_selection_threshold(np.zeros((3, 4)), 1, spec, CFG)
    assert out.subsets == ()
    assert out.w.shape == (0,)


def test_threshold_weight_is_integrated_sigmoid():
    # one sample at flux 2 with theta=1, rho=0.5: f saturates at fmax=1,
    # and one unit of exposure integrates to exactly 1
    spec = SigmoidSpec(theta=1.0, rho=0.5, fmax=1.0)
    samples = np.array([[2.0, 0.0, 0.0]])
    out = run_selection_threshold(samples, 1, spec, CFG, durations=1.0)
    assert out.subsets == (FeatureSubset((0,)),)
    assert out.w[0] == pytest.approx(1.0)
    assert out.total_duration == 1.0


def test_threshold_pairs_only_joint_activation():
    spec = SigmoidSpec(theta=1.0, rho=0.5, fmax=1.0)
    samples = np.array([[2.0, 2.0, 0.0]])
    out = run_selection_threshold(samples, 2, spec, CFG)
    assert out.subsets == (FeatureSubset((0, 1)),)


def test_threshold_is_strict():
    spec = SigmoidSpec(theta=1.0, rho=0.5, fmax=1.0)
    samples = np.array([[1.0, 0.0]])
    out = run_selection_threshold(samples, 1, spec, CFG)
    assert out.subsets == ()


def test_threshold_monotone_in_theta():
    rng = np.random.default_rng(2)
    for _ in range(20):
        samples = rng.uniform(0.0, 1.5, size=(4, 5))
        lo = run_selection_threshold(samples, 2, SigmoidSpec(theta=0.2, rho=0.3), CFG)
        hi = run_selection_threshold(samples, 2, SigmoidSpec(theta=0.7, rho=0.3), CFG)
        assert set(hi.subsets) <= set(lo.subsets)


def test_depth_out_of_range():
    with pytest.raises(ValueError):
        run_selection_threshold(np.ones((1, 3)), 4, SigmoidSpec(), CFG)


# ---------------------------------------------------------------------------
# top-K selection
# ---------------------------------------------------------------------------

def test_topk_keep_everything():
    samples = np.array([[0.5, 0.8, 0.1]])
    out = run_selection_topk(samples, 1, 3, CFG)
    assert out.subsets == (FeatureSubset((0,)), FeatureSubset((1,)), FeatureSubset((2,)))
    assert out.implied_theta == 0.0


def test_topk_ranks_by_peak_flux():
    samples = np.array([[5.0, 1.0, 3.0]])
    out = run_selection_topk(samples, 1, 2, CFG)
    assert out.subsets == (FeatureSubset((0,)), FeatureSubset((2,)))
    assert out.implied_theta == 1.0


def test_topk_lexicographic_tie_break():
    samples = np.full((2, 4), 0.7)
    out = run_selection_topk(samples, 2, 1, CFG)
    assert out.subsets == (FeatureSubset((0, 1)),)


def test_topk_fills_with_zero_flux_subsets():
    samples = np.array([[1.0, 0.0, 0.0]])
    out = run_selection_topk(samples, 1, 3, CFG)
    assert out.subsets == (FeatureSubset((0,)), FeatureSubset((1,)), FeatureSubset((2,)))


def test_topk_k_out_of_range():
    with pytest.raises(ValueError):
        run_selection_topk(np.ones((1, 3)), 1, 4, CFG)
    with pytest.raises(ValueError):
        run_selection_topk(np.ones((1, 3)), 1, 0, CFG)


def test_topk_threshold_equivalence():
    # with continuous random fluxes (no ties) the top-K cut is exactly the
    # threshold cut at the implied theta
    rng = np.random.default_rng(9)
    for _ in range(25):
        samples = rng.uniform(0.01, 1.0, size=(3, 5))
        depth = int(rng.integers(1, 3))
        n_cand = len(run_selection_topk(samples, depth, 1, CFG).subsets)
        total = {1: 5, 2: 10}[depth]
        k = int(rng.integers(1, total))
        top = run_selection_topk(samples, depth, k, CFG)
        by_threshold = run_selection_threshold(
            samples, depth, SigmoidSpec(theta=top.implied_theta, rho=0.1), CFG
        )
        assert set(by_threshold.subsets) == set(top.subsets)


# ---------------------------------------------------------------------------
# renormalization
# ---------------------------------------------------------------------------

def _outcome(w):
    samples = np.array([[1.0] * len(w)])
    out = run_selection_topk(samples, 1, len(w), CFG)
    return type(out)(
        subsets=out.subsets,
        w=np.asarray(w, dtype=float),
        depth=1,
        n_features=len(w),
        total_duration=1.0,
    )


def test_renormalize_equilibrium_exact():
    out = renormalize_selection(_outcome([0.0, 2.0, 5.5]), EQUILIBRIUM, CFG)
    assert np.all(out.w == 1.0)


def test_renormalize_finite_duration_closed_form():
    out = renormalize_selection(_outcome([0.0]), 3.0, CFG)
    assert out.w[0] == pytest.approx(0.950212931632136, abs=1e-12)


def test_renormalization_deviation_bound_and_slope():
    rng = np.random.default_rng(4)
    horizons = np.array([1.0, 2.0, 4.0, 8.0])
    for _ in range(20):
        rates = RateConstants(
            b1=float(rng.uniform(0.5, 1.5)),
            b2=float(rng.uniform(0.5, 1.5)),
            a0=float(rng.uniform(0.5, 1.5)),
        )
        cfg = NetworkConfig(rates=rates, schedule=Schedule())
        spec = SigmoidSpec(theta=0.1, rho=0.4, fmax=float(rng.uniform(0.5, 1.5)))
        samples = rng.uniform(0.05, 1.0, size=(3, 4))
        out = run_selection_threshold(samples, 1, spec, cfg)
        if not out.subsets:
            continue
        devs = []
        for t in horizons:
            w = renormalize_selection(out, float(t), cfg).w
            dev = np.abs(w - rates.w_ratio).max()
            assert dev <= renorm_deviation_bound(rates, spec.fmax, out.total_duration, float(t))
            devs.append(dev)
        slope = np.polyfit(horizons, np.log(devs), 1)[0]
        assert slope == pytest.approx(-rates.b2 * rates.a0, rel=1e-6)


def test_outcome_weight_lookup():
    out = _outcome([0.5, 1.5])
    assert out.weight(FeatureSubset((1,))) == 1.5
    with pytest.raises(KeyError):
        out.weight(FeatureSubset((7,)))
    assert out.weights_by_subset()[FeatureSubset((0,))] == 0.5
