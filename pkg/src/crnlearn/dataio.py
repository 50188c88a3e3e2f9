"""Dataset ingestion, concentration encoding, splits, and synthetic instances.

All randomness is counter-based: gaussian noise is generated from a Philox
stream keyed by the seed with the round index in the counter, and each draw is
converted by the inverse normal CDF so that the noise of feature i in round m
is a pure function of (seed, m, i).  Parallel and sequential encodings of the
same rounds therefore produce identical concentrations, and reruns are
bit-reproducible.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from itertools import combinations

import numpy as np
from scipy.special import ndtri

from .analysis import BinaryFluxInstance
from .kinetics import FeatureSubset, NetworkConfig

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *streams: int) -> int:
    """Derive an independent 64-bit sub-seed for a named stream.

    Successive splitmix-style finalizer rounds mix in each stream component,
    so (seed, phase, repetition) tuples map to well-separated sub-seeds on
    every platform.
    """
    z = (seed ^ 0xD1B54A32D192ED03) & _MASK64
    for s in streams:
        z ^= ((s & _MASK64) * 0x9E3779B97F4A7C15) & _MASK64
        z = (z + 0x9E3779B97F4A7C15) & _MASK64
        z ^= z >> 30
        z = (z * 0xBF58476D1CE4E5B9) & _MASK64
        z ^= z >> 27
        z = (z * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
    return z


def rng_for(seed: int, *streams: int) -> np.random.Generator:
    """Philox generator on a derived stream (used for shuffles, not noise)."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *streams)))


@dataclass(frozen=True)
class Dataset:
    """Feature vectors in [0, 1] with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.intp))
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (n_samples, n_features) aligned with labels")
        if self.features.shape[0] == 0:
            raise ValueError("dataset is empty")
        if np.any(self.features < 0.0) or np.any(self.features > 1.0):
            raise ValueError("feature values must lie in [0, 1]")
        if self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def take(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class EncodingSpec:
    """Gaussian noise variance and the stream seed for input encoding."""

    sigma2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma2 < 0.0:
            raise ValueError("noise variance must be nonnegative")


class DigitsFormatError(ValueError):
    """The digits CSV is malformed; the message carries the line number."""


_PIXEL_MAX = 16
_CANONICAL_ROWS = 1797


def builtin_digits_path() -> str:
    """Path of the vendored handwritten-digits CSV."""
    return str(resources.files("crnlearn").joinpath("data/digits.csv"))


def load_digits_csv(path: str) -> Dataset:
    """Load the digits CSV: header label,p0,...,p63 with pixels in [0, 16].

    Pixels are scaled by 1/16 into [0, 1].  A row count other than the
    canonical 1797 produces a warning, not an error.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DigitsFormatError(f"{path}: empty file") from None
        if not header or header[0] != "label":
            raise DigitsFormatError(f"{path} line 1: header must start with 'label'")
        n_pixels = len(header) - 1
        if n_pixels < 1 or header[1:] != [f"p{i}" for i in range(n_pixels)]:
            raise DigitsFormatError(f"{path} line 1: pixel columns must be p0..p{n_pixels - 1}")
        labels: list[int] = []
        rows: list[list[int]] = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_pixels + 1:
                raise DigitsFormatError(
                    f"{path} line {ln}: expected {n_pixels + 1} fields, got {len(row)}"
                )
            try:
                values = [int(v) for v in row]
            except ValueError as exc:
                raise DigitsFormatError(f"{path} line {ln}: {exc}") from None
            if values[0] < 0:
                raise DigitsFormatError(f"{path} line {ln}: negative label {values[0]}")
            for v in values[1:]:
                if not (0 <= v <= _PIXEL_MAX):
                    raise DigitsFormatError(
                        f"{path} line {ln}: pixel value {v} outside [0, {_PIXEL_MAX}]"
                    )
            labels.append(values[0])
            rows.append(values[1:])
    if not rows:
        raise DigitsFormatError(f"{path}: no data rows")
    if len(rows) != _CANONICAL_ROWS:
        warnings.warn(
            f"{path} has {len(rows)} rows; the canonical digits file has {_CANONICAL_ROWS}",
            stacklevel=2,
        )
    features = np.asarray(rows, dtype=float) / _PIXEL_MAX
    return Dataset(features=features, labels=np.asarray(labels))


def _gauss_block(seed: int, round_index: int, count: int) -> np.ndarray:
    """count standard normals as a pure function of (seed, round, position)."""
    bg = np.random.Philox(key=seed & _MASK64, counter=int(round_index) << 64)
    raw = bg.random_raw(count)
    # top 53 bits -> uniform on (0,1), then inverse normal CDF
    u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
    return ndtri(u)


def encode_sample(features: np.ndarray, spec: EncodingSpec, round_index: int) -> np.ndarray:
    """Concentrations presented in one round: positive part of features+noise."""
    features = np.asarray(features, dtype=float)
    if spec.sigma2 == 0.0:
        return features.copy()
    noise = math.sqrt(spec.sigma2) * _gauss_block(spec.seed, round_index, features.shape[-1])
    return np.maximum(features + noise, 0.0)


def encode_block(features: np.ndarray, spec: EncodingSpec, first_round: int = 0) -> np.ndarray:
    """Encode consecutive rounds: row i uses round index first_round + i."""
    features = np.asarray(features, dtype=float)
    if spec.sigma2 == 0.0:
        return features.copy()
    out = np.empty_like(features)
    for i in range(features.shape[0]):
        out[i] = encode_sample(features[i], spec, first_round + i)
    return out


def split(
    dataset: Dataset, fractions: tuple[int, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic (selection, learning, test) partition.

    fractions is (selection_count, train_fraction, test_fraction); the two
    fractions must sum to one.  The training block is the floor of
    train_fraction * n samples, the test block the remainder, and the first
    selection_count training samples form the selection set.  The canonical
    digits split (40, 0.8, 0.2) yields 40/1397/360.
    """
    selection_count, train_frac, test_frac = fractions
    if abs(train_frac + test_frac - 1.0) > 1e-9:
        raise ValueError("train and test fractions must sum to 1")
    if not (0.0 < train_frac < 1.0):
        raise ValueError("train fraction must be in (0, 1)")
    n = len(dataset)
    n_train = int(math.floor(n * train_frac))
    if not (0 < selection_count < n_train):
        raise ValueError(
            f"selection count {selection_count} incompatible with {n_train} training samples"
        )
    perm = rng_for(seed, 0x5BD1).permutation(n)
    train_idx = perm[:n_train]
    test_idx = perm[n_train:]
    return (
        dataset.take(train_idx[:selection_count]),
        dataset.take(train_idx[selection_count:]),
        dataset.take(test_idx),
    )


def synth_binary_flux(
    n_features: int,
    depth: int,
    n_classes: int,
    seed: int,
    *,
    subsets_per_class: int = 1,
    types_per_subset: int = 2,
    distractors: int = 0,
    decoration_features: int = 2,
    p: float = 1.0,
    decomposable: bool = True,
) -> BinaryFluxInstance:
    """Generate a binary-flux instance, decomposable or provably not.

    Each class gets subsets_per_class signature subsets on fresh features;
    every signature is activated by exactly types_per_subset types (its
    signature plus a distinct decoration pattern from a reserved feature
    pool), so classes are unions of activation sets by construction.
    Distractor subsets are planted on fresh features added to
    types_per_subset existing types spanning at least two classes: they keep
    all activation sets the same size but belong to no class.  In
    non-decomposable mode one extra featureless type is planted in class 0;
    it activates nothing, so no union of activation sets can cover its class.
    """
    if depth < 1 or n_classes < 2 or subsets_per_class < 1 or types_per_subset < 1:
        raise ValueError("invalid instance shape")
    n_signatures = n_classes * subsets_per_class
    needed = depth * (n_signatures + distractors) + decoration_features
    if needed > n_features:
        raise ValueError(
            f"instance needs {needed} features (signatures, distractors, decorations) "
            f"but only {n_features} are available"
        )
    if types_per_subset > 2**decoration_features:
        raise ValueError("not enough decoration patterns for distinct types")
    rng = rng_for(seed, 0xB1F)
    feature_pool = rng.permutation(n_features)
    pos = 0

    def fresh(count: int) -> list[int]:
        nonlocal pos
        out = feature_pool[pos : pos + count].tolist()
        pos += count
        return out

    decorations = fresh(decoration_features)
    deco_patterns: list[list[int]] = []
    for size in range(decoration_features + 1):
        deco_patterns.extend(list(c) for c in combinations(decorations, size))
        if len(deco_patterns) >= types_per_subset:
            break
    subset_features: list[list[int]] = []
    subset_class: list[int] = []
    type_bits: list[np.ndarray] = []
    type_labels: list[int] = []
    for k in range(n_classes):
        for _ in range(subsets_per_class):
            feats = fresh(depth)
            subset_features.append(feats)
            subset_class.append(k)
            for r in range(types_per_subset):
                bits = np.zeros(n_features, dtype=np.uint8)
                bits[feats] = 1
                bits[deco_patterns[r]] = 1
                type_bits.append(bits)
                type_labels.append(k)
    for _ in range(distractors):
        feats = fresh(depth)
        subset_features.append(feats)
        subset_class.append(-1)
        # adding fresh features to existing types keeps every activation-set
        # size at types_per_subset while letting this subset straddle classes
        anchors = rng.permutation(len(type_bits))[:types_per_subset]
        for t in anchors:
            type_bits[t][feats] = 1
    if not decomposable:
        bits = np.zeros(n_features, dtype=np.uint8)
        type_bits.append(bits)
        type_labels.append(0)
    subsets = tuple(sorted(FeatureSubset.of(f) for f in subset_features))
    return BinaryFluxInstance(
        n_features=n_features,
        subsets=subsets,
        types=np.asarray(type_bits),
        labels=np.asarray(type_labels),
        p=p,
        equal_activation_size=True,
    )


def presentation_sequence(
    instance: BinaryFluxInstance, repeats: int, config: NetworkConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Round-robin repetitive training sequence over the instance's types.

    Every type is presented exactly `repeats` times, cycling through the
    types in order, with concentrations sized so each active subset flux
    integrates to p over one presentation window.
    """
    conc = instance.type_concentrations(config.schedule.t_learn)
    n_types = conc.shape[0]
    order = np.tile(np.arange(n_types), repeats)
    return conc[order], instance.labels[order]
