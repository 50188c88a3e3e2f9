"""Exact interval evolution for the reaction network under mass-action kinetics.

Every dynamical regime of the network (weight production during selection,
catalytic renormalization, catalytic output production plus gain growth during
learning, and output decay plus output-weight renormalization afterwards) has a
closed-form solution when the input concentrations are constant on the
interval.  This module provides those closed forms, the raw mass-action
right-hand sides, and a fixed-step RK4 integrator that exists only so tests can
certify the closed forms against a generic ODE solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np


class _Equilibrium:
    """Sentinel duration: evaluate a relaxation at its exact fixed point."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EQUILIBRIUM"


EQUILIBRIUM = _Equilibrium()

Duration = Union[float, _Equilibrium]

#: Reaction phases with distinct active subsystems.
PHASES = ("selection", "selection-renorm", "learn", "learn-renorm")


def is_equilibrium(duration: Duration) -> bool:
    return isinstance(duration, _Equilibrium)


class DivergenceError(RuntimeError):
    """Numeric integration produced a non-finite concentration."""


@dataclass(frozen=True, order=True)
class FeatureSubset:
    """A set of input-feature indices, kept in strictly increasing order.

    The index tuple is the canonical form: two subsets are equal iff their
    tuples are equal, and the dataclass ordering (lexicographic on the tuple)
    is the canonical ordering used everywhere for determinism.
    """

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = self.indices
        if not isinstance(idx, tuple):
            object.__setattr__(self, "indices", tuple(int(i) for i in idx))
            idx = self.indices
        if len(idx) == 0:
            raise ValueError("feature subset must be nonempty")
        for i in idx:
            if not isinstance(i, (int, np.integer)) or i < 0:
                raise ValueError(f"feature index must be a nonnegative integer, got {i!r}")
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise ValueError(f"feature indices must be strictly increasing, got {idx}")

    @classmethod
    def of(cls, ids: Iterable[int]) -> "FeatureSubset":
        """Build from any iterable of distinct indices (sorted here)."""
        ids = sorted(int(i) for i in ids)
        return cls(tuple(ids))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i) -> bool:
        return i in self.indices


def subsets_to_array(subsets: Sequence[FeatureSubset]) -> np.ndarray:
    """Stack subsets of a common size into a (J, n) index array."""
    if not subsets:
        return np.zeros((0, 0), dtype=np.intp)
    sizes = {len(s) for s in subsets}
    if len(sizes) != 1:
        raise ValueError(f"subsets have mixed sizes {sorted(sizes)}")
    return np.asarray([s.indices for s in subsets], dtype=np.intp)


@dataclass(frozen=True)
class RateConstants:
    """Rate constants and catalyst/initial concentrations of the network.

    a1 -- output-production (forward pass) rate
    a2 -- output decay rate
    b1 -- weight production rate of both renormalization subsystems
    b2 -- weight degradation rate of both renormalization subsystems
    eta -- learning rate of the expert-aggregation update
    a0 -- constant concentration of the renormalization catalyst
    s0 -- constant concentration of the gain-protection catalyst
    h0 -- shared initial concentration of the gain species
    """

    a1: float = 1.0
    a2: float = 1.0
    b1: float = 1.0
    b2: float = 1.0
    eta: float = 1.0
    a0: float = 1.0
    s0: float = 3.0
    h0: float = 1.0

    def __post_init__(self):
        for name in ("a1", "a2", "b1", "b2", "eta", "a0", "s0", "h0"):
            v = getattr(self, name)
            if not (v > 0.0) or not math.isfinite(v):
                raise ValueError(f"rate constant {name} must be positive and finite, got {v}")

    @property
    def w_ratio(self) -> float:
        """Equilibrium value b1/b2 of a renormalized weight total."""
        return self.b1 / self.b2

    def bounded_flux_margin(self, flux_bound: float) -> float:
        """Margin s0 - 2*(b1/b2)*flux_bound keeping gain rates positive.

        Must be strictly positive for the learning phase to be well behaved
        (the cross-class gain rate is s0 - w*flux and w stays below 2*b1/b2
        after renormalization).
        """
        return self.s0 - 2.0 * self.w_ratio * flux_bound


@dataclass(frozen=True)
class Schedule:
    """Interval durations of one run.

    t_sel is the exposure duration of a single selection sample (the total
    selection time is t_sel times the number of selection samples), t_learn
    the presentation duration of one training sample, and t_renorm the
    duration of every renormalization interval.  t_renorm may be EQUILIBRIUM,
    in which case renormalizations are evaluated at their exact fixed point.
    """

    t_sel: float = 1.0
    t_renorm: Duration = EQUILIBRIUM
    t_learn: float = 1.0

    def __post_init__(self):
        if not (self.t_sel > 0.0):
            raise ValueError("t_sel must be positive")
        if not (self.t_learn > 0.0):
            raise ValueError("t_learn must be positive")
        if not is_equilibrium(self.t_renorm) and not (self.t_renorm > 0.0):
            raise ValueError("t_renorm must be positive or EQUILIBRIUM")


@dataclass(frozen=True)
class NetworkConfig:
    """Rate constants plus schedule: everything a run needs besides data."""

    rates: RateConstants = RateConstants()
    schedule: Schedule = Schedule()


def flux(subset: FeatureSubset, x: np.ndarray) -> float:
    """Product of the concentrations of the subset's features.

    This is the total propensity of a reaction catalysed by all features in
    the subset simultaneously.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d concentration vector, got shape {x.shape}")
    idx = np.asarray(subset.indices, dtype=np.intp)
    if idx.max() >= x.shape[0]:
        raise IndexError(
            f"feature index {int(idx.max())} out of range for {x.shape[0]} concentrations"
        )
    return float(np.prod(x[idx]))


def flux_matrix(X: np.ndarray, subset_idx: np.ndarray) -> np.ndarray:
    """Fluxes of J subsets for N samples at once: (N, I) x (J, n) -> (N, J)."""
    X = np.asarray(X, dtype=float)
    subset_idx = np.asarray(subset_idx, dtype=np.intp)
    if subset_idx.size == 0:
        return np.zeros((X.shape[0], subset_idx.shape[0]))
    return np.prod(X[:, subset_idx], axis=2)


def relax_linear(y0, production, decay, duration: Duration):
    """Solve dy/dt = production - decay*y over the duration.

    Returns production/decay + (y0 - production/decay)*exp(-decay*duration);
    with duration EQUILIBRIUM the fixed point production/decay is returned
    exactly.  Accepts scalars or arrays broadcast against each other.
    """
    decay_arr = np.asarray(decay, dtype=float)
    if np.any(decay_arr <= 0.0):
        raise ValueError("decay rate must be strictly positive")
    target = np.asarray(production, dtype=float) / decay_arr
    if is_equilibrium(duration):
        out = np.broadcast_arrays(target, np.asarray(y0, dtype=float))[0].copy()
        return float(out) if out.ndim == 0 else out
    if duration < 0.0:
        raise ValueError("duration must be nonnegative")
    out = target + (np.asarray(y0, dtype=float) - target) * np.exp(-decay_arr * duration)
    return float(out) if out.ndim == 0 else out


def _learn_split(state: np.ndarray, n_classes: int, n_subsets: int):
    x = state[:n_classes]
    rest = state[n_classes:].reshape(n_subsets, n_classes)
    return x, rest


def mass_action_rhs(
    phase: str,
    state: np.ndarray,
    inputs: np.ndarray,
    rates: RateConstants,
    true_class: int | None = None,
    *,
    subset_idx: np.ndarray | None = None,
    sigmoid: Callable[[np.ndarray], np.ndarray] | None = None,
    w_j: np.ndarray | None = None,
    w_out: np.ndarray | None = None,
    h_jk: np.ndarray | None = None,
    d_k: np.ndarray | None = None,
    c_k: np.ndarray | None = None,
    n_classes: int | None = None,
) -> np.ndarray:
    """Right-hand side of the active reaction subsystem.

    State layouts (all flat float vectors):
      selection        -- w[j], input weights being produced
      selection-renorm -- w[j]
      learn            -- [x[k], h[j, k] row-major], with w_j/w_out constant
      learn-renorm     -- [x[k], w[j, k] row-major], with h_jk constant

    The learn phase needs true_class plus the per-class rate multiplier
    arrays d_k (own class) and c_k (other classes).
    """
    state = np.asarray(state, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}; expected one of {PHASES}")

    if phase == "selection":
        if subset_idx is None or sigmoid is None:
            raise ValueError("selection phase needs subset_idx and sigmoid")
        phi = flux_matrix(inputs[None, :], subset_idx)[0]
        return np.asarray(sigmoid(phi), dtype=float)

    if phase == "selection-renorm":
        return rates.b1 * rates.a0 - rates.b2 * rates.a0 * state

    if phase == "learn":
        if true_class is None:
            raise ValueError("learn phase needs true_class")
        if subset_idx is None or w_j is None or w_out is None or d_k is None or c_k is None:
            raise ValueError("learn phase needs subset_idx, w_j, w_out, d_k, c_k")
        K = len(d_k)
        J = subset_idx.shape[0]
        x, h = _learn_split(state, K, J)
        phi = flux_matrix(inputs[None, :], subset_idx)[0]
        xj = np.asarray(w_j, dtype=float) * phi              # catalytic drive per subset
        dx = rates.a1 * (xj @ np.asarray(w_out, dtype=float))
        dh = np.empty_like(h)
        # own-class gain species grow with s0 + drive, all others with s0 - drive,
        # both at the presented sample's class multiplier
        grow = d_k[true_class] * (xj + rates.s0)
        shrink = c_k[true_class] * (rates.s0 - xj)
        dh[:] = shrink[:, None] * h
        dh[:, true_class] = grow * h[:, true_class]
        return np.concatenate([dx, dh.ravel()])

    # learn-renorm
    if h_jk is None:
        raise ValueError("learn-renorm phase needs the constant gain matrix h_jk")
    h_jk = np.asarray(h_jk, dtype=float)
    J, K = h_jk.shape
    x, w = _learn_split(state, K, J)
    dx = -rates.a2 * x
    dw = rates.b1 * h_jk - rates.b2 * w * h_jk.sum(axis=0)[None, :]
    return np.concatenate([dx, dw.ravel()])


def integrate_numeric(
    phase: str,
    state: np.ndarray,
    inputs: np.ndarray,
    rates: RateConstants,
    true_class: int | None = None,
    duration: float = 0.0,
    step: float = 1e-4,
    **context,
) -> np.ndarray:
    """Classical fixed-step RK4 over mass_action_rhs.  Verification only.

    The production code never calls this; it certifies the closed-form
    evolution in tests.  Raises DivergenceError on non-finite state.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    if duration < 0.0:
        raise ValueError("duration must be nonnegative")
    y = np.array(state, dtype=float)
    if duration == 0.0:
        return y
    n_steps = int(round(duration / step))
    n_steps = max(n_steps, 1)
    h = duration / n_steps

    def f(v):
        return mass_action_rhs(phase, v, inputs, rates, true_class, **context)

    for i in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if i % 256 == 0 and not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite state after {i + 1} RK4 steps")
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite state at end of integration")
    return y
