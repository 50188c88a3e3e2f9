"""Learning-phase orchestration: forward pass, gain updates, renormalization.

Each training round presents one sample for a fixed duration.  During the
window the output species grow linearly (their production rate is constant
because weights are frozen within the window) and the gain species grow
exponentially at class-dependent rates.  Between windows the output species
decay and the output weights relax toward the softmax of the gain species,
which is exactly an exponentially-weighted expert aggregation over feature
subsets.

Gain species are stored as natural logs: their concentrations grow like
exp(eta * cumulative gain) over hundreds of rounds and would overflow any
fixed-precision float, while everything that matters downstream (softmax
ratios and the relaxation exponent) is computable from the logs.

Two training modes exist.  Full mode renormalizes and decays after every
round, producing output concentrations usable for in-training performance
measures.  Simplified mode skips per-round output production and runs a single
renormalization after the last round, which yields the same final weights when
renormalization reaches equilibrium.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .aggregation import softmax_stable
from .kinetics import (
    Duration,
    FeatureSubset,
    NetworkConfig,
    flux_matrix,
    is_equilibrium,
    subsets_to_array,
)
from .selection import SelectionOutcome

# exp() underflows to zero below roughly -745; beyond this exponent the
# relaxation factor is indistinguishable from equilibrium, and clamping keeps
# results bit-reproducible instead of denormal-noisy
_RELAX_EXPONENT_CLAMP = 700.0


class BoundedFluxError(RuntimeError):
    """A driven flux exceeded the protection catalyst concentration s0."""


class BalanceError(ValueError):
    """A class has no training samples, so its rate multipliers are undefined."""


@dataclass
class RunTrace:
    """Per-round record of a training run.

    x_out rows are the output concentrations at the end of each presentation
    window (absent in simplified mode, which produces no outputs during
    training).  gains rows are the per-round gain matrices realized by the
    aggregation dynamics.  w_snapshots holds post-renormalization output
    weights keyed by 1-based round index when snapshotting was requested.
    """

    labels: list[int] = field(default_factory=list)
    x_out: list[np.ndarray] | None = None
    gains: list[np.ndarray] | None = None
    gain_round_range: list[tuple[float, float]] = field(default_factory=list)
    w_snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    gain_lo: float = math.inf
    gain_hi: float = -math.inf

    def x_matrix(self) -> np.ndarray:
        if self.x_out is None:
            raise ValueError("trace has no output records (simplified mode)")
        return np.asarray(self.x_out)

    def gain_array(self) -> np.ndarray:
        """Stacked (rounds, subsets, classes) gain tensor."""
        if self.gains is None:
            raise ValueError("trace has no gain records")
        return np.asarray(self.gains)

    @property
    def observed_gain_range(self) -> tuple[float, float]:
        return (self.gain_lo, self.gain_hi)


@dataclass
class LearnerState:
    """All mutable per-class state of the learning phase.

    w_j is frozen after selection.  log_h holds ln of the gain-species
    concentrations, w_out the output weights, x_out the output species.
    gain_totals accumulates the realized gains (the log increments divided by
    eta), whose softmax at equilibrium reproduces w_out.
    """

    subsets: tuple[FeatureSubset, ...]
    n_features: int
    w_j: np.ndarray            # (J,)
    log_h: np.ndarray          # (J, K)
    w_out: np.ndarray          # (J, K)
    x_out: np.ndarray          # (K,)
    class_counts: np.ndarray   # (K,) planned presentations per class
    d_k: np.ndarray            # (K,) own-class gain rate multipliers
    c_k: np.ndarray            # (K,) cross-class gain rate multipliers
    rounds_done: int = 0
    gain_totals: np.ndarray | None = None
    subset_idx: np.ndarray | None = None

    def __post_init__(self):
        if self.gain_totals is None:
            self.gain_totals = np.zeros_like(self.log_h)
        if self.subset_idx is None:
            self.subset_idx = subsets_to_array(self.subsets)

    @property
    def n_subsets(self) -> int:
        return len(self.subsets)

    @property
    def n_classes(self) -> int:
        return len(self.class_counts)


def init_learner(
    selection: SelectionOutcome,
    labels,
    config: NetworkConfig,
    n_classes: int | None = None,
    rate_multipliers: tuple | None = None,
) -> LearnerState:
    """Set up the learning phase after selection.

    Output weights start uniform at (b1/b2)/J, gain species at h0, outputs at
    zero.  The per-class rate multipliers default to d_k = eta*M/M_k and
    c_k = d_k/(K-1) computed from the label counts; rate_multipliers=(d, c)
    overrides them (scalars or length-K arrays), e.g. with the balanced-class
    constants eta*K and eta*K/(K-1).
    """
    labels = np.asarray(labels, dtype=np.intp)
    if len(selection.subsets) == 0:
        raise ValueError("cannot learn with an empty selection")
    if labels.size and labels.min() < 0:
        raise ValueError("labels must be nonnegative integers")
    K = int(n_classes) if n_classes is not None else int(labels.max()) + 1 if labels.size else 0
    if K < 2:
        raise ValueError("need at least two classes")
    counts = np.bincount(labels, minlength=K).astype(float)
    if len(counts) > K:
        raise ValueError(f"label {labels.max()} out of range for {K} classes")
    if rate_multipliers is None:
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0).tolist()
            raise BalanceError(f"classes {missing} have no training samples")
        d_k = config.rates.eta * counts.sum() / counts
        c_k = d_k / (K - 1)
    else:
        d, c = rate_multipliers
        d_k = np.broadcast_to(np.asarray(d, dtype=float), (K,)).copy()
        c_k = np.broadcast_to(np.asarray(c, dtype=float), (K,)).copy()
        if np.any(d_k <= 0) or np.any(c_k <= 0):
            raise ValueError("rate multipliers must be positive")
    J = len(selection.subsets)
    rates = config.rates
    return LearnerState(
        subsets=selection.subsets,
        n_features=selection.n_features,
        w_j=np.asarray(selection.w, dtype=float).copy(),
        log_h=np.full((J, K), math.log(rates.h0)),
        w_out=np.full((J, K), rates.w_ratio / J),
        x_out=np.zeros(K),
        class_counts=counts,
        d_k=d_k,
        c_k=c_k,
    )


def forward_pass(state: LearnerState, sample: np.ndarray, config: NetworkConfig) -> np.ndarray:
    """Output increments from one presentation window.

    The sample is constant over the window and the weights are frozen within
    it, so each output grows linearly:
    dx_k = a1 * t_learn * sum_j w_j * flux_j * w_out[j, k].
    The caller applies the increments; this does not mutate the state.
    """
    phi = flux_matrix(np.asarray(sample, dtype=float)[None, :], state.subset_idx)[0]
    drive = state.w_j * phi
    return config.rates.a1 * config.schedule.t_learn * (drive @ state.w_out)


def ewa_step(
    state: LearnerState, sample: np.ndarray, true_class: int, config: NetworkConfig
) -> np.ndarray:
    """Advance the gain species through one presentation window (in place).

    Exact log-domain update for a constant sample: the own-class column gains
    d[kc]*(w_j*flux_j + s0)*t_learn and every other column gains
    c[kc]*(s0 - w_j*flux_j)*t_learn, where kc is the presented class.  Returns
    the realized per-round gain matrix (the increments divided by eta), which
    is also accumulated into state.gain_totals.
    """
    rates = config.rates
    kc = int(true_class)
    if not (0 <= kc < state.n_classes):
        raise ValueError(f"class {kc} out of range")
    phi = flux_matrix(np.asarray(sample, dtype=float)[None, :], state.subset_idx)[0]
    drive = state.w_j * phi
    slack = rates.s0 - drive
    if np.any(slack < 0.0):
        worst = int(np.argmin(slack))
        raise BoundedFluxError(
            f"driven flux {drive[worst]:.6g} of subset {state.subsets[worst]} "
            f"exceeds s0={rates.s0:.6g}; bounded-flux assumption violated"
        )
    t = config.schedule.t_learn
    grow = state.d_k[kc] * (drive + rates.s0) * t
    shrink = state.c_k[kc] * slack * t
    state.log_h += shrink[:, None]
    state.log_h[:, kc] += grow - shrink
    gains = np.empty_like(state.log_h)
    gains[:] = shrink[:, None] / rates.eta
    gains[:, kc] = grow / rates.eta
    state.gain_totals += gains
    state.rounds_done += 1
    return gains


def renorm_and_decay(state: LearnerState, t_renorm: Duration, config: NetworkConfig) -> LearnerState:
    """Decay outputs and relax output weights toward the gain softmax (in place).

    For each class the weight family relaxes toward
    (b1/b2) * softmax_j(log_h[:, k]) with decay exponent
    b2 * t_renorm * sum_j h[j, k]; the exponent is evaluated in the log domain
    and clamped to exact equilibrium past the underflow boundary.
    """
    rates = config.rates
    target = rates.w_ratio * softmax_stable(state.log_h, axis=0)
    if is_equilibrium(t_renorm):
        state.x_out[:] = 0.0
        state.w_out[:] = target
        return state
    state.x_out *= math.exp(-rates.a2 * t_renorm)
    log_hsum = logsumexp(state.log_h, axis=0)            # (K,)
    log_exponent = math.log(rates.b2 * t_renorm) + log_hsum
    factor = np.zeros(state.n_classes)
    small = log_exponent <= math.log(_RELAX_EXPONENT_CLAMP)
    factor[small] = np.exp(-np.exp(log_exponent[small]))
    state.w_out[:] = target + (state.w_out - target) * factor[None, :]
    return state


def train(
    state: LearnerState,
    samples: np.ndarray,
    labels,
    mode: str,
    config: NetworkConfig,
    record_gains: bool = True,
    w_snapshot_stride: int = 0,
) -> RunTrace:
    """Run the learning phase over a sample sequence (state mutated in place).

    mode "full": every round does forward pass, gain update, then
    renormalization plus output decay.  mode "simplified": rounds do only the
    gain update and one renormalization runs after the last round; no output
    records are produced.
    """
    if mode not in ("full", "simplified"):
        raise ValueError(f"mode must be 'full' or 'simplified', got {mode!r}")
    samples = np.asarray(samples, dtype=float)
    labels = np.asarray(labels, dtype=np.intp)
    if samples.shape[0] != labels.shape[0]:
        raise ValueError("samples and labels length mismatch")
    t_renorm = config.schedule.t_renorm
    trace = RunTrace(
        x_out=[] if mode == "full" else None,
        gains=[] if record_gains else None,
    )
    for m in range(samples.shape[0]):
        sample, label = samples[m], int(labels[m])
        trace.labels.append(label)
        if mode == "full":
            state.x_out += forward_pass(state, sample, config)
            trace.x_out.append(state.x_out.copy())
        g = ewa_step(state, sample, label, config)
        if record_gains:
            trace.gains.append(g)
        lo, hi = float(g.min()), float(g.max())
        trace.gain_round_range.append((lo, hi))
        trace.gain_lo = min(trace.gain_lo, lo)
        trace.gain_hi = max(trace.gain_hi, hi)
        if mode == "full":
            renorm_and_decay(state, t_renorm, config)
        if w_snapshot_stride and (m + 1) % w_snapshot_stride == 0:
            if mode == "simplified":
                # snapshot what the weights would be after renormalizing now
                snap_state = state.w_out.copy()
                renorm_and_decay(state, t_renorm, config)
                trace.w_snapshots[m + 1] = state.w_out.copy()
                state.w_out[:] = snap_state
            else:
                trace.w_snapshots[m + 1] = state.w_out.copy()
    if mode == "simplified" and samples.shape[0] > 0:
        renorm_and_decay(state, t_renorm, config)
    return trace


@dataclass(frozen=True)
class TrainedModel:
    """Frozen inference-time view of a trained network."""

    depth: int
    n_features: int
    n_classes: int
    w_ratio: float
    subsets: tuple[FeatureSubset, ...]
    w_j: np.ndarray
    w_out: np.ndarray

    @property
    def subset_idx(self) -> np.ndarray:
        return subsets_to_array(self.subsets)


def to_model(state: LearnerState, config: NetworkConfig) -> TrainedModel:
    return TrainedModel(
        depth=len(state.subsets[0]),
        n_features=state.n_features,
        n_classes=state.n_classes,
        w_ratio=config.rates.w_ratio,
        subsets=state.subsets,
        w_j=state.w_j.copy(),
        w_out=state.w_out.copy(),
    )


def infer(model, sample: np.ndarray, config: NetworkConfig) -> tuple[int, np.ndarray]:
    """Classify one sample with frozen weights.

    Scores are the output concentrations after one presentation window started
    from zero; the predicted class is the argmax, ties resolved toward the
    smallest class id.
    """
    preds, scores = infer_batch(model, np.asarray(sample, dtype=float)[None, :], config)
    return int(preds[0]), scores[0]


def infer_batch(model, samples: np.ndarray, config: NetworkConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized inference over (N, I) samples -> (predictions, scores)."""
    samples = np.asarray(samples, dtype=float)
    phi = flux_matrix(samples, model.subset_idx)         # (N, J)
    scores = config.rates.a1 * config.schedule.t_learn * ((phi * model.w_j) @ model.w_out)
    return scores.argmax(axis=1), scores


_MODEL_FORMAT = "crn-classifier-model"


def save_model(model: TrainedModel, path: str) -> None:
    """Serialize a trained model to JSON, round-trippable bit-exactly."""
    doc = {
        "format": _MODEL_FORMAT,
        "version": 1,
        "depth": model.depth,
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "w_ratio": model.w_ratio,
        "subsets": [list(s.indices) for s in model.subsets],
        "w_j": [float(v) for v in model.w_j],
        "w_out": [[float(v) for v in row] for row in model.w_out],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _MODEL_FORMAT:
        raise ValueError(f"{path} is not a model file (format={doc.get('format')!r})")
    subsets = tuple(FeatureSubset(tuple(int(i) for i in s)) for s in doc["subsets"])
    w_j = np.asarray(doc["w_j"], dtype=float)
    w_out = np.asarray(doc["w_out"], dtype=float)
    if w_out.shape != (len(subsets), doc["n_classes"]):
        raise ValueError("weight matrix shape does not match subset/class counts")
    return TrainedModel(
        depth=int(doc["depth"]),
        n_features=int(doc["n_features"]),
        n_classes=int(doc["n_classes"]),
        w_ratio=float(doc["w_ratio"]),
        subsets=subsets,
        w_j=w_j,
        w_out=w_out,
    )
