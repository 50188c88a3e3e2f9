"""Selection phase: subset selection by flux and weight renormalization.

Feature subsets of a fixed size are selected either by a flux threshold (a
subset is kept when its flux exceeds the threshold during at least one sample
window) or by keeping the K subsets with the largest peak flux, which defines
the same kind of cut implicitly.  Selected subsets get an input-weight species
whose concentration is afterwards renormalized toward b1/b2 by a catalytic
production/degradation pair.

Candidates are enumerated per sample over the support of that sample only, so
subsets whose flux is zero everywhere are never materialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Sequence

import numpy as np

from .kinetics import (
    EQUILIBRIUM,
    Duration,
    FeatureSubset,
    NetworkConfig,
    flux_matrix,
    is_equilibrium,
    relax_linear,
    subsets_to_array,
)


@dataclass(frozen=True)
class SigmoidSpec:
    """Piecewise-linear production sigmoid: 0 below theta, fmax above theta+rho."""

    theta: float = 0.0
    rho: float = 0.5
    fmax: float = 1.0

    def __post_init__(self):
        if self.theta < 0.0:
            raise ValueError("theta must be nonnegative")
        if not (self.rho > 0.0):
            raise ValueError("rho must be positive")
        if not (self.fmax > 0.0):
            raise ValueError("fmax must be positive")

    def __call__(self, phi):
        return sigmoid_f(phi, self)


def sigmoid_f(phi, spec: SigmoidSpec):
    """Production rate as a function of flux: linear ramp between the plateaus."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0.0):
        raise ValueError("flux must be nonnegative")
    out = np.clip((phi - spec.theta) / spec.rho, 0.0, 1.0) * spec.fmax
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SelectionOutcome:
    """Selected subsets with their input-weight concentrations.

    subsets are distinct and canonically (lexicographically) ordered; w is
    aligned with them.  implied_theta is reported by top-K selection: the
    largest peak flux among rejected subsets, i.e. the threshold that would
    have produced the same selection.
    """

    subsets: tuple[FeatureSubset, ...]
    w: np.ndarray
    depth: int
    n_features: int
    total_duration: float
    implied_theta: float | None = None

    def __post_init__(self):
        if len(self.subsets) != len(self.w):
            raise ValueError("weights misaligned with subsets")
        if any(a >= b for a, b in zip(self.subsets, self.subsets[1:])):
            raise ValueError("subsets must be in canonical order without duplicates")

    @property
    def subset_idx(self) -> np.ndarray:
        return subsets_to_array(self.subsets)

    def weight(self, subset: FeatureSubset) -> float:
        try:
            return float(self.w[self.subsets.index(subset)])
        except ValueError:
            raise KeyError(f"{subset} was not selected") from None

    def weights_by_subset(self) -> dict[FeatureSubset, float]:
        return {s: float(v) for s, v in zip(self.subsets, self.w)}


def _as_durations(samples: np.ndarray, durations, config: NetworkConfig | None) -> np.ndarray:
    if durations is None:
        durations = config.schedule.t_sel if config is not None else 1.0
    durations = np.broadcast_to(np.asarray(durations, dtype=float), (samples.shape[0],))
    if np.any(durations <= 0.0):
        raise ValueError("sample durations must be positive")
    return durations


def _materialized_candidates(samples: np.ndarray, depth: int) -> list[tuple[int, ...]]:
    """All size-depth subsets with positive flux in at least one sample."""
    cand: set[tuple[int, ...]] = set()
    for row in samples:
        support = np.flatnonzero(row > 0.0).tolist()
        cand.update(combinations(support, depth))
    return sorted(cand)


def _candidate_stats(samples, depth, config, durations):
    """Candidates in canonical order with per-candidate peak flux and flux matrix."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError("samples must be a (n_samples, n_features) array")
    if np.any(samples < 0.0):
        raise ValueError("concentrations must be nonnegative")
    n_features = samples.shape[1]
    if not (1 <= depth <= n_features):
        raise ValueError(f"depth {depth} out of range for {n_features} features")
    durations = _as_durations(samples, durations, config)
    cand = _materialized_candidates(samples, depth)
    idx = np.asarray(cand, dtype=np.intp).reshape(len(cand), depth)
    phi = flux_matrix(samples, idx)                      # (n_samples, n_cand)
    peak = phi.max(axis=0) if len(cand) else np.zeros(0)
    return samples, durations, n_features, cand, phi, peak


def run_selection_threshold(
    samples,
    depth: int,
    spec: SigmoidSpec,
    config: NetworkConfig | None = None,
    durations=None,
) -> SelectionOutcome:
    """Select every subset whose flux strictly exceeds spec.theta somewhere.

    The produced weight is the exact integral of the production sigmoid over
    the selection interval, which for piecewise-constant samples is the sum of
    sigmoid_f(flux) times the sample duration.
    """
    samples, durations, n_features, cand, phi, peak = _candidate_stats(
        samples, depth, config, durations
    )
    keep = np.flatnonzero(peak > spec.theta)
    subsets = tuple(FeatureSubset(cand[i]) for i in keep)
    w = sigmoid_f(phi[:, keep], spec).T @ durations if len(keep) else np.zeros(0)
    return SelectionOutcome(
        subsets=subsets,
        w=np.asarray(w, dtype=float).reshape(len(keep)),
        depth=depth,
        n_features=n_features,
        total_duration=float(durations.sum()),
    )


def run_selection_topk(
    samples,
    depth: int,
    k: int,
    config: NetworkConfig | None = None,
    durations=None,
) -> SelectionOutcome:
    """Keep the k subsets with the largest peak flux.

    Ranking ties are broken in canonical subset order.  When k exceeds the
    number of subsets with positive flux, the remainder is filled with
    zero-flux subsets in canonical order.  implied_theta is the peak flux of
    the best rejected subset (0 when nothing with positive flux is rejected),
    so that a threshold run at implied_theta selects the same subsets as long
    as no tie straddles the cut.

    Pre-renormalization weights are reported as zero: top-K selection models
    only the selection decision, and renormalization erases the produced
    amounts exponentially anyway.
    """
    samples, durations, n_features, cand, phi, peak = _candidate_stats(
        samples, depth, config, durations
    )
    total = math.comb(n_features, depth)
    if not (1 <= k <= total):
        raise ValueError(f"k={k} out of range [1, {total}]")
    order = np.argsort(-peak, kind="stable")             # stable sort = canonical ties
    chosen = [cand[i] for i in order[:k]]
    if k < len(cand):
        implied = float(peak[order[k]])
    else:
        implied = 0.0
        if k > len(cand):
            chosen_set = set(chosen)
            fill = k - len(cand)
            for combo in combinations(range(n_features), depth):
                if combo not in chosen_set:
                    chosen.append(combo)
                    fill -= 1
                    if fill == 0:
                        break
    subsets = tuple(FeatureSubset(c) for c in sorted(chosen))
    return SelectionOutcome(
        subsets=subsets,
        w=np.zeros(len(subsets)),
        depth=depth,
        n_features=n_features,
        total_duration=float(durations.sum()),
        implied_theta=implied,
    )


def renormalize_selection(
    outcome: SelectionOutcome, t_renorm: Duration, config: NetworkConfig
) -> SelectionOutcome:
    """Relax every input weight toward b1/b2 under the catalytic pair.

    The weight obeys dw/dt = b1*a0 - b2*a0*w, so the deviation from b1/b2
    shrinks by exp(-b2*a0*t_renorm).  At EQUILIBRIUM the exact ratio b1/b2 is
    assigned (not (b1*a0)/(b2*a0), which could differ in the last ulp).
    """
    rates = config.rates
    if is_equilibrium(t_renorm):
        w = np.full(len(outcome.subsets), rates.w_ratio)
    else:
        w = relax_linear(outcome.w, rates.b1 * rates.a0, rates.b2 * rates.a0, t_renorm)
        w = np.asarray(w, dtype=float).reshape(len(outcome.subsets))
    return replace(outcome, w=w)


def renorm_deviation_bound(
    rates, fmax: float, total_selection_duration: float, t_renorm: Duration
) -> float:
    """Worst-case |w - b1/b2| after renormalizing for t_renorm.

    The produced weight lies in [0, fmax*T_sel], so the initial deviation is
    at most max(b1/b2, fmax*T_sel) and decays at rate b2*a0.
    """
    if is_equilibrium(t_renorm):
        return 0.0
    c1 = max(rates.w_ratio, fmax * total_selection_duration)
    return c1 * math.exp(-rates.b2 * rates.a0 * t_renorm)
