"""Numerical verification suites for the network's guarantees.

Each check builds randomized instances from a seeded stream, measures the
relevant quantity with the production code paths, and compares against either
an independent oracle (fixed-step RK4, the reference aggregation recursion,
exhaustive enumeration) or a closed-form bound.  The verify CLI command runs
all of them; the acceptance tests run the same helpers at their full sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import aggregation
from .aggregation import reference_ewa, regret, regret_bound
from .analysis import (
    asymptotic_weights,
    class_decomposition_exists,
    ewa_tracking_bound,
    is_optimal_family,
    network_complexity,
    training_accuracy_with_weights,
    vc_dimension_bruteforce,
)
from .dataio import rng_for, synth_binary_flux
from .kinetics import (
    EQUILIBRIUM,
    FeatureSubset,
    NetworkConfig,
    RateConstants,
    Schedule,
    flux_matrix,
    integrate_numeric,
)
from .learner import ewa_step, forward_pass, init_learner, renorm_and_decay, train
from .selection import (
    SigmoidSpec,
    renorm_deviation_bound,
    renormalize_selection,
    run_selection_threshold,
    sigmoid_f,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _rel_err(closed, numeric) -> float:
    closed = np.atleast_1d(np.asarray(closed, dtype=float))
    numeric = np.atleast_1d(np.asarray(numeric, dtype=float))
    denom = np.maximum(np.abs(numeric), 1e-9)
    return float(np.max(np.abs(closed - numeric) / denom))


# ---------------------------------------------------------------------------
# closed form vs numeric integration
# ---------------------------------------------------------------------------


def closed_vs_numeric_instance(seed: int, step: float = 1e-4) -> float:
    """Max relative error between the closed-form pipeline and RK4 on one
    random small instance (at most 6 features, depth 2, 3 classes).

    Both trajectories run independently from the same initial state through
    selection, selection renormalization, and several learning rounds with
    finite renormalization windows.
    """
    rng = rng_for(seed, 0xC3)
    u = lambda lo, hi: float(rng.uniform(lo, hi))
    n_features = int(rng.integers(2, 7))
    depth = int(rng.integers(1, min(2, n_features) + 1))
    n_classes = int(rng.integers(2, 4))
    rates = RateConstants(
        a1=u(0.5, 1.5), a2=u(0.5, 1.5), b1=u(0.5, 1.5), b2=u(0.5, 1.5),
        eta=u(0.05, 0.2), a0=u(0.5, 1.5), s0=3.5, h0=u(0.5, 1.5),
    )
    schedule = Schedule(t_sel=u(0.25, 0.5), t_renorm=u(0.25, 0.5), t_learn=u(0.25, 0.5))
    config = NetworkConfig(rates=rates, schedule=schedule)
    worst = 0.0

    # selection over two piecewise-constant windows, all candidate subsets
    cand = list(combinations(range(n_features), depth))
    idx = np.asarray(cand, dtype=np.intp)
    X_sel = rng.uniform(0.05, 0.9, size=(2, n_features))
    peak = flux_matrix(X_sel, idx).max()
    spec = SigmoidSpec(theta=0.3 * peak, rho=u(0.2, 0.6), fmax=u(0.5, 1.5))
    w_closed = sigmoid_f(flux_matrix(X_sel, idx), spec).T @ np.full(2, schedule.t_sel)
    w_numeric = np.zeros(len(cand))
    for window in range(2):
        w_numeric = integrate_numeric(
            "selection", w_numeric, X_sel[window], rates,
            duration=schedule.t_sel, step=step, subset_idx=idx, sigmoid=spec,
        )
    worst = max(worst, _rel_err(w_closed, w_numeric))

    outcome = run_selection_threshold(X_sel, depth, spec, config)
    selected = [cand.index(s.indices) for s in outcome.subsets]
    worst = max(worst, _rel_err(outcome.w, w_numeric[selected]))

    renormed = renormalize_selection(outcome, schedule.t_renorm, config)
    w_ren_numeric = integrate_numeric(
        "selection-renorm", w_numeric[selected], X_sel[0], rates,
        duration=schedule.t_renorm, step=step,
    )
    worst = max(worst, _rel_err(renormed.w, w_ren_numeric))

    # learning rounds with finite renormalization, trajectories kept separate
    labels = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, 2)])
    rng.shuffle(labels)
    X_learn = rng.uniform(0.05, 0.9, size=(len(labels), n_features))
    state = init_learner(renormed, labels, config)
    sel_idx = state.subset_idx
    x_num = np.zeros(n_classes)
    h_num = np.full((state.n_subsets, n_classes), rates.h0)
    w_num = np.full((state.n_subsets, n_classes), rates.w_ratio / state.n_subsets)
    for m, label in enumerate(labels):
        state.x_out += forward_pass(state, X_learn[m], config)
        ewa_step(state, X_learn[m], int(label), config)
        renorm_and_decay(state, schedule.t_renorm, config)

        y = integrate_numeric(
            "learn", np.concatenate([x_num, h_num.ravel()]), X_learn[m], rates,
            true_class=int(label), duration=schedule.t_learn, step=step,
            subset_idx=sel_idx, w_j=state.w_j, w_out=w_num,
            d_k=state.d_k, c_k=state.c_k,
        )
        x_num, h_num = y[:n_classes], y[n_classes:].reshape(h_num.shape)
        y = integrate_numeric(
            "learn-renorm", np.concatenate([x_num, w_num.ravel()]), X_learn[m], rates,
            duration=schedule.t_renorm, step=step, h_jk=h_num,
        )
        x_num, w_num = y[:n_classes], y[n_classes:].reshape(w_num.shape)

        worst = max(worst, _rel_err(state.x_out, x_num))
        worst = max(worst, _rel_err(np.exp(state.log_h), h_num))
        worst = max(worst, _rel_err(state.w_out, w_num))
    return worst


def check_closed_vs_numeric(
    n_instances: int, seed: int = 0, rel_tol: float = 1e-6, step: float = 1e-4
) -> CheckResult:
    worst = max(closed_vs_numeric_instance(seed + i, step=step) for i in range(n_instances))
    return CheckResult(
        "closed-form-vs-rk4",
        worst < rel_tol,
        f"max rel err {worst:.3e} over {n_instances} instances (tol {rel_tol:.0e})",
    )


# ---------------------------------------------------------------------------
# selection renormalization bound and decay slope
# ---------------------------------------------------------------------------


def check_selection_renorm(n_instances: int, seed: int = 0) -> CheckResult:
    horizons = np.array([1.0, 2.0, 4.0, 8.0])
    ok = True
    details = []
    for i in range(n_instances):
        rng = rng_for(seed + i, 0x5E1)
        u = lambda lo, hi: float(rng.uniform(lo, hi))
        rates = RateConstants(b1=u(0.5, 1.5), b2=u(0.5, 1.5), a0=u(0.5, 1.5))
        config = NetworkConfig(rates=rates, schedule=Schedule())
        n_features = int(rng.integers(2, 7))
        depth = int(rng.integers(1, min(2, n_features) + 1))
        X = rng.uniform(0.05, 1.0, size=(int(rng.integers(2, 5)), n_features))
        spec = SigmoidSpec(theta=0.2, rho=u(0.2, 0.8), fmax=u(0.5, 1.5))
        outcome = run_selection_threshold(X, depth, spec, config)
        if len(outcome.subsets) == 0:
            continue
        devs = []
        for t in horizons:
            w = renormalize_selection(outcome, float(t), config).w
            dev = float(np.abs(w - rates.w_ratio).max())
            bound = renorm_deviation_bound(rates, spec.fmax, outcome.total_duration, float(t))
            if dev > bound:
                ok = False
                details.append(f"instance {i}: dev {dev:.3e} > bound {bound:.3e} at t={t}")
            devs.append(dev)
        devs = np.array(devs)
        if np.all(devs > 0):
            slope = np.polyfit(horizons, np.log(devs), 1)[0]
            expected = -rates.b2 * rates.a0
            if abs(slope - expected) > 0.1 * abs(expected):
                ok = False
                details.append(f"instance {i}: decay slope {slope:.4f} vs {expected:.4f}")
    return CheckResult(
        "selection-renormalization-bound",
        ok,
        details[0] if details else f"{n_instances} instances, horizons {horizons.tolist()}",
    )


# ---------------------------------------------------------------------------
# aggregation tracking, oracle identity, regret
# ---------------------------------------------------------------------------


def _random_run(seed: int, t_renorm):
    """Small full-mode training run with gain records and weight snapshots."""
    rng = rng_for(seed, 0xE7A)
    n_features = int(rng.integers(2, 6))
    n_classes = int(rng.integers(2, 4))
    depth = 1
    n_subsets = int(rng.integers(2, min(4, n_features) + 1))
    rates = RateConstants(
        a1=float(rng.uniform(0.5, 1.5)), a2=float(rng.uniform(0.5, 1.5)),
        eta=float(rng.uniform(0.05, 0.3)), s0=3.0,
    )
    config = NetworkConfig(rates=rates, schedule=Schedule(t_renorm=t_renorm))
    subsets = tuple(FeatureSubset((j,)) for j in range(n_subsets))
    from .selection import SelectionOutcome

    outcome = SelectionOutcome(
        subsets=subsets,
        w=np.full(n_subsets, rates.w_ratio),
        depth=depth,
        n_features=n_features,
        total_duration=1.0,
    )
    n_rounds = int(rng.integers(8, 15))
    labels = np.concatenate(
        [np.arange(n_classes), rng.integers(0, n_classes, n_rounds - n_classes)]
    )
    rng.shuffle(labels)
    samples = rng.uniform(0.0, 1.0, size=(n_rounds, n_features))
    state = init_learner(outcome, labels, config)
    trace = train(state, samples, labels, "full", config, w_snapshot_stride=1)
    return config, state, trace, samples, labels


def check_ewa_tracking(n_instances: int, seed: int = 0) -> CheckResult:
    """Output weights track the reference aggregation within the decay bound;
    at equilibrium they match it to 1e-12 relative."""
    ok = True
    details = []
    for i in range(n_instances):
        for t in (1.0, 2.0, 4.0):
            config, state, trace, _, _ = _random_run(seed + i, t)
            gains = trace.gain_array()
            bound = ewa_tracking_bound(config, state.n_subsets, t)
            for k in range(state.n_classes):
                ref_k = reference_ewa(gains[:, :, k], config.rates.eta, config.rates.w_ratio)
                for m in range(1, len(trace.labels) + 1):
                    dev = float(np.abs(trace.w_snapshots[m][:, k] - ref_k[m]).max())
                    if dev > bound:
                        ok = False
                        details.append(
                            f"instance {i} t={t} class {k} round {m}: {dev:.3e} > {bound:.3e}"
                        )
        config, state, trace, _, _ = _random_run(seed + i, EQUILIBRIUM)
        gains = trace.gain_array()
        for k in range(state.n_classes):
            ref_k = reference_ewa(gains[:, :, k], config.rates.eta, config.rates.w_ratio)
            rel = float(
                np.abs(state.w_out[:, k] - ref_k[len(trace.labels)]).max()
            ) / config.rates.w_ratio
            if rel > 1e-12:
                ok = False
                details.append(f"instance {i} equilibrium class {k}: rel dev {rel:.3e}")
    return CheckResult(
        "ewa-tracking-bound",
        ok,
        details[0] if details else f"{n_instances} instances at t_renorm in {{1,2,4}} + equilibrium",
    )


def check_gain_oracle(n_instances: int, seed: int = 0, rel_tol: float = 1e-9) -> CheckResult:
    """Realized per-round gains match the standalone gain formula."""
    ok = True
    worst = 0.0
    for i in range(n_instances):
        config, state, trace, samples, labels = _random_run(seed + i, EQUILIBRIUM)
        gains = trace.gain_array()
        for m in range(len(labels)):
            for j, subset in enumerate(state.subsets):
                for k in range(state.n_classes):
                    expected = aggregation.crn_gain(
                        subset, k, samples[m], int(labels[m]),
                        float(state.w_j[j]), state.class_counts, config,
                    )
                    rel = abs(gains[m, j, k] - expected) / max(abs(expected), 1e-12)
                    worst = max(worst, rel)
                    if rel > rel_tol:
                        ok = False
    return CheckResult(
        "gain-oracle-identity", ok, f"max rel dev {worst:.3e} over {n_instances} runs"
    )


def check_regret_bound(n_matrices: int, seed: int = 0) -> CheckResult:
    violations = 0
    for i in range(n_matrices):
        rng = rng_for(seed + i, 0x4E6)
        n_rounds = int(rng.integers(2, 60))
        n_experts = int(rng.integers(2, 10))
        a = float(rng.uniform(-2.0, 1.0))
        b = a + float(rng.uniform(0.1, 3.0))
        gains = rng.uniform(a, b, size=(n_rounds, n_experts))
        eta = math.sqrt(8.0 * math.log(n_experts) / n_rounds) / (b - a)
        probs = reference_ewa(gains, eta, 1.0)[:-1]
        if regret(gains, probs) > regret_bound(a, b, n_rounds, n_experts):
            violations += 1
    return CheckResult(
        "ewa-regret-bound", violations == 0, f"{violations} violations in {n_matrices} matrices"
    )


# ---------------------------------------------------------------------------
# equivalence, VC dimension, complexity accounting
# ---------------------------------------------------------------------------


def _random_instance_shape(rng):
    depth = int(rng.integers(1, 3))
    n_classes = int(rng.integers(2, 4))
    subsets_per_class = int(rng.integers(1, 3))
    types_per_subset = int(rng.integers(1, 3))
    distractors = int(rng.integers(0, 2))
    decorations = int(rng.integers(1, 3))
    if types_per_subset > 2**decorations:
        decorations = 2
    n_features = depth * (n_classes * subsets_per_class + distractors) + decorations
    return dict(
        n_features=n_features,
        depth=depth,
        n_classes=n_classes,
        subsets_per_class=subsets_per_class,
        types_per_subset=types_per_subset,
        distractors=distractors,
        decoration_features=decorations,
    )


def check_decomposition_equivalence(n_instances: int, seed: int = 0) -> CheckResult:
    """Class decomposition holds iff the asymptotic weights are optimal;
    decomposable instances classify their whole universe correctly."""
    config = NetworkConfig()
    ok = True
    details = []
    for i in range(n_instances):
        rng = rng_for(seed + i, 0x7E6)
        shape = _random_instance_shape(rng)
        decomposable = i % 2 == 0
        inst = synth_binary_flux(seed=seed + i, decomposable=decomposable, **shape)
        claim, _ = class_decomposition_exists(inst)
        if claim != decomposable:
            ok = False
            details.append(f"instance {i}: generator promised {decomposable}, got {claim}")
            continue
        task = inst.to_task()
        limit = asymptotic_weights(task, config)
        optimal, witness = is_optimal_family(limit, task)
        if optimal != claim:
            ok = False
            details.append(
                f"instance {i}: decomposition={claim} but optimal-family={optimal} ({witness})"
            )
        if claim and training_accuracy_with_weights(limit, task) != 1.0:
            ok = False
            details.append(f"instance {i}: decomposable but training accuracy below 1")
    return CheckResult(
        "decomposition-optimality-equivalence",
        ok,
        details[0] if details else f"{n_instances} instances, half decomposable",
    )


def check_vc_dimension(n_instances: int, seed: int = 0, max_subsets: int = 6) -> CheckResult:
    """Brute-force VC dimension equals the number of selected subsets when the
    universe contains the indicator sample of every subset."""
    ok = True
    details = []
    for i in range(n_instances):
        rng = rng_for(seed + i, 0xCD1)
        n_features = int(rng.integers(3, 10))
        depth = int(rng.integers(1, 3))
        n_subsets = int(rng.integers(1, min(max_subsets, math.comb(n_features, depth)) + 1))
        all_cand = list(combinations(range(n_features), depth))
        pick = rng.choice(len(all_cand), size=n_subsets, replace=False)
        subsets = tuple(sorted(FeatureSubset(all_cand[j]) for j in pick))
        vc = vc_dimension_bruteforce(subsets, n_features)
        if vc != n_subsets:
            ok = False
            details.append(f"instance {i}: vc {vc} != {n_subsets}")
    return CheckResult(
        "vc-dimension-bruteforce", ok, details[0] if details else f"{n_instances} instances"
    )


def check_complexity_counts(n_tuples: int, seed: int = 0) -> CheckResult:
    """Counter formulas agree with an explicit enumeration of the network."""
    ok = True
    for i in range(n_tuples):
        rng = rng_for(seed + i, 0xC0)
        n_features = int(rng.integers(2, 65))
        n_classes = int(rng.integers(2, 11))
        n_selected = int(rng.integers(1, 50))
        got = network_complexity(n_features, n_selected, n_classes)
        reactions = 0
        species = {"renorm-catalyst", "gain-catalyst"}
        for i_feat in range(n_features):
            species.add(f"in{i_feat}")
        for k in range(n_classes):
            species.add(f"out{k}")
        for j in range(n_selected):
            species.add(f"w{j}")
            reactions += 1                         # weight production
            reactions += 2                         # weight renormalization pair
            for k in range(n_classes):
                species.add(f"w{j}->{k}")
                species.add(f"h{j}->{k}")
                reactions += 1                     # forward pass
                reactions += 2                     # flux- and catalyst-driven gain updates
        if got.reactions != reactions or got.species != len(species):
            ok = False
    return CheckResult("complexity-accounting", ok, f"{n_tuples} random shapes")


# ---------------------------------------------------------------------------
# suite driver
# ---------------------------------------------------------------------------

_LEVELS = {
    "quick": dict(numeric=4, renorm=10, tracking=4, gain=3, regret=200, equiv=40, vc=20, cx=20),
    "full": dict(numeric=20, renorm=30, tracking=8, gain=6, regret=1000, equiv=200, vc=40, cx=20),
}


def run_all(level: str = "quick", seed: int = 0) -> list[CheckResult]:
    if level not in _LEVELS:
        raise ValueError(f"unknown verification level {level!r}")
    n = _LEVELS[level]
    return [
        check_closed_vs_numeric(n["numeric"], seed),
        check_selection_renorm(n["renorm"], seed),
        check_ewa_tracking(n["tracking"], seed),
        check_gain_oracle(n["gain"], seed),
        check_regret_bound(n["regret"], seed),
        check_decomposition_equivalence(n["equiv"], seed),
        check_vc_dimension(n["vc"], seed),
        check_complexity_counts(n["cx"], seed),
    ]
