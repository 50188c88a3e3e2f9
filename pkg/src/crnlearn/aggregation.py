"""Reference implementation of exponentially-weighted expert aggregation.

This is the abstract algorithm the reaction network realizes chemically:
experts accumulate gains, and the forecaster weights them proportionally to
exp(eta * cumulative gain).  The network's gain-species and output-weight
dynamics are tested against these functions, which therefore stay independent
of the kinetics code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinetics import FeatureSubset, NetworkConfig, flux


def softmax_stable(logits, axis: int = -1) -> np.ndarray:
    """Softmax with max subtraction; invariant to a constant shift."""
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0:
        raise ValueError("softmax of an empty expert set is undefined")
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax requires finite logits")
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class GainLedger:
    """Cumulative per-expert gains plus the gain range actually observed."""

    totals: np.ndarray
    rounds: int = 0
    lo: float = math.inf
    hi: float = -math.inf

    @classmethod
    def for_experts(cls, n_experts: int) -> "GainLedger":
        return cls(totals=np.zeros(n_experts))

    def record(self, gains) -> None:
        gains = np.asarray(gains, dtype=float)
        if gains.shape != self.totals.shape:
            raise ValueError(f"expected {self.totals.shape} gains, got {gains.shape}")
        if not np.all(np.isfinite(gains)):
            raise ValueError("gains must be finite")
        self.totals += gains
        self.rounds += 1
        self.lo = min(self.lo, float(gains.min()))
        self.hi = max(self.hi, float(gains.max()))

    @property
    def observed_range(self) -> tuple[float, float]:
        return (self.lo, self.hi)


def crn_gain(
    subset: FeatureSubset,
    class_id: int,
    sample: np.ndarray,
    true_class: int,
    w_j_value: float,
    class_counts: np.ndarray,
    config: NetworkConfig,
) -> float:
    """Gain a subset earns toward one class from a single presentation.

    Own-class presentations reward the subset proportionally to its integrated
    flux (plus the s0 floor that keeps all gains positive); presentations of
    any other class penalize the flux, scaled down by the number of competing
    classes.  Class-frequency reweighting uses the presented sample's class.
    """
    class_counts = np.asarray(class_counts, dtype=float)
    m_total = float(class_counts.sum())
    n_classes = len(class_counts)
    t_learn = config.schedule.t_learn
    integrated = w_j_value * flux(subset, sample) * t_learn
    floor = config.rates.s0 * t_learn
    scale = m_total / class_counts[true_class]
    if class_id == true_class:
        return (integrated + floor) * scale
    return (-integrated + floor) * scale / (n_classes - 1)


def reference_ewa(gains: np.ndarray, eta: float, scale: float = 1.0) -> np.ndarray:
    """Weight trajectory of EWA on a full gain history.

    gains has shape (M, E).  Row m of the result is the weight family used in
    round m+1: row 0 is uniform (scale/E each), and row m is
    scale * softmax(eta * cumulative gains after m rounds).  The trajectory
    has M+1 rows so the final row is the post-run weight family.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.ndim != 2:
        raise ValueError("gains must be (n_rounds, n_experts)")
    n_rounds, n_experts = gains.shape
    if n_experts == 0:
        raise ValueError("need at least one expert")
    out = np.empty((n_rounds + 1, n_experts))
    out[0] = scale / n_experts
    if n_rounds:
        cum = np.cumsum(gains, axis=0)
        out[1:] = scale * softmax_stable(eta * cum, axis=1)
    return out


def regret(gains: np.ndarray, probs: np.ndarray) -> float:
    """Best fixed expert's cumulative gain minus the forecaster's.

    The maximum over fixed distributions of a linear functional is attained at
    a vertex of the simplex, so it is an exact max over single experts.
    """
    gains = np.asarray(gains, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if gains.shape != probs.shape:
        raise ValueError(f"gain shape {gains.shape} != distribution shape {probs.shape}")
    best_fixed = gains.sum(axis=0).max()
    earned = float((gains * probs).sum())
    return float(best_fixed - earned)


def regret_bound(
    a: float, b: float, n_rounds: int, n_experts: float, time_dependent: bool = False
) -> float:
    """Worst-case EWA regret for gains in [a, b] over n_rounds.

    With the horizon-tuned learning rate eta = sqrt(8 ln(E) / M) / (b - a) the
    bound is (b-a) * sqrt(M/2 * ln E).  The time-dependent variant, usable
    without knowing M in advance, is (b-a) * (sqrt(2 M ln E) + sqrt(ln(E)/8)).
    """
    if not b > a:
        raise ValueError("need b > a")
    if n_rounds < 1:
        raise ValueError("need at least one round")
    if n_experts < 1:
        raise ValueError("need at least one expert")
    log_e = math.log(n_experts)
    if time_dependent:
        return (b - a) * (math.sqrt(2.0 * n_rounds * log_e) + math.sqrt(log_e / 8.0))
    return (b - a) * math.sqrt(0.5 * n_rounds * log_e)
