"""Closed-form kinetics primitives against the RK4 oracle and hand values."""

import numpy as np
import pytest

from crnlearn.kinetics import (
    EQUILIBRIUM,
    DivergenceError,
    FeatureSubset,
    RateConstants,
    Schedule,
    flux,
    flux_matrix,
    integrate_numeric,
    is_equilibrium,
    mass_action_rhs,
    relax_linear,
    subsets_to_array,
)
from crnlearn.verify import closed_vs_numeric_instance


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

def test_feature_subset_canonical_form():
    s = FeatureSubset.of([4, 1, 2])
    assert s.indices == (1, 2, 4)
    assert len(s) == 3
    assert 2 in s and 3 not in s
    assert FeatureSubset((1, 2, 4)) == s
    assert sorted([FeatureSubset((2,)), FeatureSubset((0, 5)), FeatureSubset((0, 3))]) == [
        FeatureSubset((0, 3)),
        FeatureSubset((0, 5)),
        FeatureSubset((2,)),
    ]


def test_feature_subset_rejects_bad_indices():
    with pytest.raises(ValueError):
        FeatureSubset(())
    with pytest.raises(ValueError):
        FeatureSubset((2, 1))
    with pytest.raises(ValueError):
        FeatureSubset((1, 1))
    with pytest.raises(ValueError):
        FeatureSubset((-1, 2))


def test_rate_constants_positive():
    with pytest.raises(ValueError):
        RateConstants(a1=0.0)
    with pytest.raises(ValueError):
        RateConstants(s0=-1.0)
    rates = RateConstants(b1=2.0, b2=4.0)
    assert rates.w_ratio == 0.5
    assert rates.bounded_flux_margin(1.0) == pytest.approx(3.0 - 2.0 * 0.5)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(t_learn=0.0)
    with pytest.raises(ValueError):
        Schedule(t_renorm=-1.0)
    assert is_equilibrium(Schedule().t_renorm)


# ---------------------------------------------------------------------------
# flux
# ---------------------------------------------------------------------------

def test_flux_singleton_is_identity():
    assert flux(FeatureSubset((0,)), np.array([0.7])) == 0.7


def test_flux_two_factor_product():
    assert flux(FeatureSubset((1, 2)), np.array([9.0, 2.0, 3.0])) == 6.0


def test_flux_zero_factor_annihilates():
    assert flux(FeatureSubset((0, 1, 2)), np.array([0.5, 0.5, 0.0])) == 0.0


def test_flux_index_out_of_range():
    with pytest.raises(IndexError):
        flux(FeatureSubset((0, 3)), np.array([1.0, 2.0]))


def test_flux_multiplicative_over_disjoint_subsets():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.uniform(0.1, 2.0, size=8)
        a = FeatureSubset.of(rng.choice(4, size=2, replace=False))
        b = FeatureSubset.of(rng.choice(np.arange(4, 8), size=2, replace=False))
        union = FeatureSubset.of(list(a) + list(b))
        assert flux(a, x) * flux(b, x) == pytest.approx(flux(union, x), rel=1e-12)


def test_flux_matrix_matches_scalar_flux():
    rng = np.random.default_rng(3)
    X = rng.uniform(0.0, 1.0, size=(5, 6))
    subsets = [FeatureSubset((0, 2)), FeatureSubset((1, 5)), FeatureSubset((3, 4))]
    F = flux_matrix(X, subsets_to_array(subsets))
    for i in range(5):
        for j, s in enumerate(subsets):
            assert F[i, j] == pytest.approx(flux(s, X[i]))


# ---------------------------------------------------------------------------
# relax_linear
# ---------------------------------------------------------------------------

def test_relax_starts_at_fixed_point_stays():
    assert relax_linear(2.5, 5.0, 2.0, 17.3) == pytest.approx(2.5)


def test_relax_equilibrium_sentinel():
    assert relax_linear(0.0, 1.0, 1.0, EQUILIBRIUM) == 1.0


def test_relax_unit_step_matches_rk4_oracle():
    # oracle: RK4 on dy/dt = 1 - y from 0, step 1e-4, duration 1
    assert relax_linear(0.0, 1.0, 1.0, 1.0) == pytest.approx(0.6321205588285601, abs=1e-8)


def test_relax_rejects_nonpositive_decay():
    with pytest.raises(ValueError):
        relax_linear(1.0, 1.0, 0.0, 1.0)


def test_relax_monotone_toward_fixed_point():
    rng = np.random.default_rng(11)
    for _ in range(30):
        y0 = rng.uniform(-2.0, 4.0)
        p = rng.uniform(0.1, 3.0)
        d = rng.uniform(0.1, 3.0)
        times = np.linspace(0.0, 5.0, 40)
        dev = np.abs([relax_linear(y0, p, d, t) - p / d for t in times])
        assert np.all(np.diff(dev) <= 1e-12)


def test_relax_vectorized_over_initial_values():
    y0 = np.array([0.0, 1.0, 2.0])
    out = relax_linear(y0, 1.0, 1.0, EQUILIBRIUM)
    assert np.all(out == 1.0)


# ---------------------------------------------------------------------------
# mass-action right-hand side, hand-evaluated
# ---------------------------------------------------------------------------

def test_rhs_learn_renorm_pure_decay():
    rates = RateConstants()
    h = np.zeros((0, 1))
    dx = mass_action_rhs("learn-renorm", np.array([1.0]), np.zeros(2), rates, h_jk=h)
    assert dx[0] == -1.0


def test_rhs_learn_output_production():
    # one class, one subset with w*flux = 1 and output weight 0.5, a1 = 1
    rates = RateConstants()
    idx = np.array([[0]])
    state = np.concatenate([[0.0], [1.0]])  # x, h (single class is not allowed in
    # the learner API but the raw rhs accepts any class count >= 1)
    out = mass_action_rhs(
        "learn", state, np.array([1.0]), rates, true_class=0,
        subset_idx=idx, w_j=np.array([1.0]), w_out=np.array([[0.5]]),
        d_k=np.array([1.0]), c_k=np.array([1.0]),
    )
    assert out[0] == pytest.approx(0.5)


def test_rhs_learn_gain_growth_hand_value():
    # own-class gain species: rate d*(w*flux + s0)*h = 1*(1+3)*2 = 8
    rates = RateConstants(s0=3.0)
    idx = np.array([[0]])
    state = np.concatenate([[0.0, 0.0], [2.0, 2.0]])  # x (2 classes), h row (j=0)
    out = mass_action_rhs(
        "learn", state, np.array([1.0]), rates, true_class=0,
        subset_idx=idx, w_j=np.array([1.0]), w_out=np.full((1, 2), 0.5),
        d_k=np.array([1.0, 1.0]), c_k=np.array([1.0, 1.0]),
    )
    dh = out[2:].reshape(1, 2)
    assert dh[0, 0] == pytest.approx(8.0)
    # cross-class species grows at c*(s0 - w*flux)*h = 1*(3-1)*2 = 4
    assert dh[0, 1] == pytest.approx(4.0)


def test_rhs_rejects_unknown_phase_and_missing_context():
    rates = RateConstants()
    with pytest.raises(ValueError):
        mass_action_rhs("mystery", np.zeros(1), np.zeros(1), rates)
    with pytest.raises(ValueError):
        mass_action_rhs("learn", np.zeros(2), np.zeros(1), rates)  # no true_class


# ---------------------------------------------------------------------------
# numeric integrator
# ---------------------------------------------------------------------------

def test_integrate_zero_duration_is_identity():
    rates = RateConstants()
    state = np.array([0.3, 0.7])
    out = integrate_numeric("selection-renorm", state, np.zeros(1), rates, duration=0.0)
    assert np.array_equal(out, state)


def test_integrate_selection_renorm_matches_relax():
    rates = RateConstants()
    out = integrate_numeric(
        "selection-renorm", np.array([0.0]), np.zeros(1), rates, duration=2.0, step=1e-4
    )
    assert abs(out[0] - relax_linear(0.0, 1.0, 1.0, 2.0)) < 1e-8


def test_integrate_learn_output_grows_linearly():
    # constant inputs freeze the production rate, so x grows linearly at the
    # rate given by the forward-pass equation
    rates = RateConstants()
    idx = np.array([[0], [1]])
    w_j = np.array([1.0, 1.0])
    w_out = np.array([[0.5], [0.5]])
    inputs = np.array([1.0, 2.0])
    expected_slope = float((w_j * np.array([1.0, 2.0])) @ w_out[:, 0])
    times = np.linspace(0.1, 0.5, 5)
    xs = []
    for t in times:
        state = np.concatenate([[0.0], [1.0, 1.0]])
        out = integrate_numeric(
            "learn", state, inputs, rates, true_class=0, duration=float(t), step=1e-4,
            subset_idx=idx, w_j=w_j, w_out=w_out, d_k=np.array([0.1]), c_k=np.array([0.1]),
        )
        xs.append(out[0])
    fit = np.polyfit(times, xs, 1)
    assert fit[0] == pytest.approx(expected_slope, rel=1e-8)
    residual = np.abs(np.polyval(fit, times) - xs).max()
    assert residual < 1e-8


def test_integrate_flags_divergence():
    # a runaway positive-feedback exponent overflows at huge rates
    rates = RateConstants(s0=1e6)
    idx = np.array([[0]])
    state = np.concatenate([[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(DivergenceError), np.errstate(over="ignore", invalid="ignore"):
        integrate_numeric(
            "learn", state, np.array([1.0]), rates, true_class=0, duration=50.0, step=0.5,
            subset_idx=idx, w_j=np.array([1.0]), w_out=np.full((1, 2), 0.5),
            d_k=np.array([100.0, 100.0]), c_k=np.array([100.0, 100.0]),
        )


def test_closed_forms_match_rk4_on_random_instances():
    # full-pipeline agreement at desk scale; the acceptance suite runs the
    # larger sweep at step 1e-4
    for i in range(3):
        assert closed_vs_numeric_instance(100 + i, step=1e-3) < 1e-6


def test_nonnegativity_preserved():
    rng = np.random.default_rng(5)
    rates = RateConstants()
    for _ in range(10):
        w0 = rng.uniform(0.0, 2.0, size=4)
        out = relax_linear(w0, rates.b1 * rates.a0, rates.b2 * rates.a0, float(rng.uniform(0, 3)))
        assert np.all(np.asarray(out) >= 0.0)
