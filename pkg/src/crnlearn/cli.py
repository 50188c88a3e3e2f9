"""Command-line front end: select / train / infer / sweep / verify.

Every command is deterministic given its configuration (seeds included);
rerunning writes byte-identical CSV and JSON.  Exit codes: 0 success, 1
configuration or validation error, 2 runtime or verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import verify as verify_mod
from .aggregation import softmax_stable
from .dataio import (
    Dataset,
    EncodingSpec,
    builtin_digits_path,
    derive_seed,
    encode_block,
    load_digits_csv,
    split,
)
from .kinetics import (
    EQUILIBRIUM,
    Duration,
    FeatureSubset,
    NetworkConfig,
    RateConstants,
    Schedule,
    flux_matrix,
    is_equilibrium,
)
from .learner import init_learner, infer_batch, save_model, load_model, to_model, train
from .selection import (
    SelectionOutcome,
    SigmoidSpec,
    renormalize_selection,
    run_selection_threshold,
    run_selection_topk,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

# noise-stream domains, mixed into the seed per phase and repetition
_STREAM_SPLIT = 1
_STREAM_SELECT = 2
_STREAM_LEARN = 3
_STREAM_TEST = 4

_ETA_DEFAULTS = {1: 5e-4, 2: 1e-4}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """One experiment: dataset, network shape, rates, schedule, seeds.

    Defaults are the canonical digits benchmark: unit rate constants,
    catalyst concentrations a0=1 and s0=3, noise variance 1e-5, simplified
    mode with renormalization at equilibrium, and the balanced-class gain
    multipliers d = eta*K and c = eta*K/(K-1).
    """

    dataset: str = "builtin:digits"
    depth: int = 1
    complexity: int | None = None
    theta: float | None = None
    sigmoid_rho: float = 0.5
    sigmoid_fmax: float = 1.0
    a1: float = 1.0
    a2: float = 1.0
    b1: float = 1.0
    b2: float = 1.0
    a0: float = 1.0
    s0: float = 3.0
    h0: float = 1.0
    eta: float | None = None
    t_sel: float = 1.0
    t_renorm: Duration = EQUILIBRIUM
    t_learn: float = 1.0
    sigma2: float = 1e-5
    selection_count: int = 40
    train_frac: float = 0.8
    test_frac: float = 0.2
    mode: str = "simplified"
    seed: int = 0
    repetitions: int = 10
    complexity_grid: tuple[int, ...] | None = None
    flux_bound: float = 1.1
    rate_multipliers: str = "balanced"
    out_dir: str = "out"

    def resolved_eta(self) -> float:
        if self.eta is not None:
            return self.eta
        if self.depth in _ETA_DEFAULTS:
            return _ETA_DEFAULTS[self.depth]
        raise ConfigError(f"no default learning rate for depth {self.depth}; set 'eta'")

    def network(self) -> NetworkConfig:
        rates = RateConstants(
            a1=self.a1, a2=self.a2, b1=self.b1, b2=self.b2,
            eta=self.resolved_eta(), a0=self.a0, s0=self.s0, h0=self.h0,
        )
        schedule = Schedule(t_sel=self.t_sel, t_renorm=self.t_renorm, t_learn=self.t_learn)
        return NetworkConfig(rates=rates, schedule=schedule)

    def multipliers_for(self, n_classes: int):
        """(d, c) override arrays, or None to use empirical class counts."""
        if self.rate_multipliers == "balanced":
            eta = self.resolved_eta()
            d = eta * n_classes
            return d, d / (n_classes - 1)
        if self.rate_multipliers == "empirical":
            return None
        raise ConfigError(f"unknown rate_multipliers mode {self.rate_multipliers!r}")

    def validate(self) -> None:
        try:
            net = self.network()
        except (ValueError, ConfigError) as exc:
            raise ConfigError(str(exc)) from None
        margin = net.rates.bounded_flux_margin(self.flux_bound)
        if margin <= 0.0:
            raise ConfigError(
                f"bounded-flux margin s0 - 2*(b1/b2)*flux_bound = {margin:.6g} must be "
                f"positive (s0={net.rates.s0}, b1/b2={net.rates.w_ratio}, "
                f"flux_bound={self.flux_bound})"
            )
        if self.mode not in ("full", "simplified"):
            raise ConfigError(f"mode must be 'full' or 'simplified', got {self.mode!r}")
        if self.depth < 1:
            raise ConfigError("depth must be at least 1")
        if self.complexity is not None and self.theta is not None:
            raise ConfigError("set either complexity (top-K) or theta (threshold), not both")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.sigma2 < 0:
            raise ConfigError("sigma2 must be nonnegative")


def _parse_duration(value) -> Duration:
    if isinstance(value, str):
        if value.lower() == "equilibrium":
            return EQUILIBRIUM
        raise ConfigError(f"duration must be a number or 'equilibrium', got {value!r}")
    return float(value)


def load_config(path: str | None) -> ExperimentConfig:
    """Build a configuration from a JSON file (all keys optional)."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known_groups = {"sigmoid", "rates", "schedule", "encoding", "split"}
    flat_keys = {
        "dataset", "depth", "complexity", "theta", "eta", "mode", "seed",
        "repetitions", "complexity_grid", "flux_bound", "rate_multipliers", "out_dir",
    }
    for key in doc:
        if key not in known_groups | flat_keys:
            raise ConfigError(f"unknown config key {key!r}")
    for key in flat_keys:
        if key in doc and doc[key] is not None:
            value = doc[key]
            if key == "complexity_grid":
                value = tuple(int(v) for v in value)
            setattr(cfg, key, value)
    sig = doc.get("sigmoid", {})
    cfg.sigmoid_rho = float(sig.get("rho", cfg.sigmoid_rho))
    cfg.sigmoid_fmax = float(sig.get("fmax", cfg.sigmoid_fmax))
    rates = doc.get("rates", {})
    for name in ("a1", "a2", "b1", "b2", "a0", "s0", "h0"):
        if name in rates:
            setattr(cfg, name, float(rates[name]))
    sched = doc.get("schedule", {})
    if "t_sel" in sched:
        cfg.t_sel = float(sched["t_sel"])
    if "t_renorm" in sched:
        cfg.t_renorm = _parse_duration(sched["t_renorm"])
    if "t_learn" in sched:
        cfg.t_learn = float(sched["t_learn"])
    enc = doc.get("encoding", {})
    if "sigma2" in enc:
        cfg.sigma2 = float(enc["sigma2"])
    spl = doc.get("split", {})
    if "selection" in spl:
        cfg.selection_count = int(spl["selection"])
    if "train_fraction" in spl:
        cfg.train_frac = float(spl["train_fraction"])
    if "test_fraction" in spl:
        cfg.test_frac = float(spl["test_fraction"])
    return cfg


def _load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "builtin:digits":
        return load_digits_csv(builtin_digits_path())
    return load_digits_csv(cfg.dataset)


def _split_for_rep(cfg: ExperimentConfig, data: Dataset, rep: int):
    return split(
        data,
        (cfg.selection_count, cfg.train_frac, cfg.test_frac),
        derive_seed(cfg.seed, _STREAM_SPLIT, rep),
    )


def _encode_phase(cfg: ExperimentConfig, features: np.ndarray, stream: int, rep: int):
    spec = EncodingSpec(sigma2=cfg.sigma2, seed=derive_seed(cfg.seed, stream, rep))
    return encode_block(features, spec)


def _select_for_rep(cfg: ExperimentConfig, sel_set: Dataset, net: NetworkConfig, rep: int, k=None):
    samples = _encode_phase(cfg, sel_set.features, _STREAM_SELECT, rep)
    if cfg.theta is not None:
        spec = SigmoidSpec(theta=cfg.theta, rho=cfg.sigmoid_rho, fmax=cfg.sigmoid_fmax)
        return run_selection_threshold(samples, cfg.depth, spec, net)
    k = k if k is not None else cfg.complexity
    if k is None:
        raise ConfigError("top-K selection needs 'complexity' (or set 'theta')")
    return run_selection_topk(samples, cfg.depth, int(k), net)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

_SELECTION_FORMAT = "crn-selection"


def save_selection(outcome: SelectionOutcome, path: str) -> None:
    doc = {
        "format": _SELECTION_FORMAT,
        "version": 1,
        "depth": outcome.depth,
        "n_features": outcome.n_features,
        "total_duration": outcome.total_duration,
        "implied_theta": outcome.implied_theta,
        "subsets": [list(s.indices) for s in outcome.subsets],
        "w": [float(v) for v in outcome.w],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_selection(path: str) -> SelectionOutcome:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _SELECTION_FORMAT:
        raise ValueError(f"{path} is not a selection artifact")
    return SelectionOutcome(
        subsets=tuple(FeatureSubset(tuple(int(i) for i in s)) for s in doc["subsets"]),
        w=np.asarray(doc["w"], dtype=float),
        depth=int(doc["depth"]),
        n_features=int(doc["n_features"]),
        total_duration=float(doc["total_duration"]),
        implied_theta=doc["implied_theta"],
    )


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_select(cfg: ExperimentConfig) -> str:
    """Run the selection phase and write the selection artifact."""
    cfg.validate()
    net = cfg.network()
    data = _load_dataset(cfg)
    sel_set, _, _ = _split_for_rep(cfg, data, rep=0)
    outcome = _select_for_rep(cfg, sel_set, net, rep=0)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "selection.json")
    save_selection(outcome, path)
    print(f"selected {len(outcome.subsets)} subsets of size {outcome.depth} -> {path}")
    return path


def cmd_train(cfg: ExperimentConfig, selection_path: str | None = None) -> str:
    """Train on the learning split and write model plus trace CSV."""
    cfg.validate()
    net = cfg.network()
    data = _load_dataset(cfg)
    _, learn_set, _ = _split_for_rep(cfg, data, rep=0)
    if selection_path is None:
        selection_path = os.path.join(cfg.out_dir, "selection.json")
    outcome = renormalize_selection(load_selection(selection_path), net.schedule.t_renorm, net)
    n_classes = int(data.labels.max()) + 1
    state = init_learner(
        outcome, learn_set.labels, net,
        n_classes=n_classes,
        rate_multipliers=cfg.multipliers_for(n_classes),
    )
    samples = _encode_phase(cfg, learn_set.features, _STREAM_LEARN, rep=0)
    trace = train(state, samples, learn_set.labels, cfg.mode, net, record_gains=False)
    os.makedirs(cfg.out_dir, exist_ok=True)
    model_path = os.path.join(cfg.out_dir, "model.json")
    save_model(to_model(state, net), model_path)
    trace_path = os.path.join(cfg.out_dir, "trace.csv")
    with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
        if cfg.mode == "full":
            head = ["m", "label"] + [f"x{k}" for k in range(n_classes)] + ["gain_min", "gain_max"]
        else:
            head = ["m", "label", "gain_min", "gain_max"]
        fh.write(",".join(head) + "\n")
        for m, label in enumerate(trace.labels, start=1):
            row = [str(m), str(label)]
            if cfg.mode == "full":
                row += [_fmt(v) for v in trace.x_out[m - 1]]
            lo, hi = trace.gain_round_range[m - 1]
            row += [_fmt(lo), _fmt(hi)]
            fh.write(",".join(row) + "\n")
    print(f"trained {len(trace.labels)} rounds -> {model_path}")
    return model_path


def cmd_infer(cfg: ExperimentConfig, model_path: str | None = None) -> float:
    """Classify the test split with a saved model; write predictions CSV."""
    cfg.validate()
    net = cfg.network()
    data = _load_dataset(cfg)
    _, _, test_set = _split_for_rep(cfg, data, rep=0)
    if len(test_set) == 0:
        raise ConfigError("test slice is empty; accuracy undefined")
    if model_path is None:
        model_path = os.path.join(cfg.out_dir, "model.json")
    model = load_model(model_path)
    samples = _encode_phase(cfg, test_set.features, _STREAM_TEST, rep=0)
    preds, scores = infer_batch(model, samples, net)
    accuracy = float((preds == test_set.labels).mean())
    os.makedirs(cfg.out_dir, exist_ok=True)
    pred_path = os.path.join(cfg.out_dir, "predictions.csv")
    with open(pred_path, "w", encoding="utf-8", newline="\n") as fh:
        head = ["index", "label", "prediction"] + [f"score{k}" for k in range(model.n_classes)]
        fh.write(",".join(head) + "\n")
        for i in range(len(test_set)):
            row = [str(i), str(int(test_set.labels[i])), str(int(preds[i]))]
            row += [_fmt(v) for v in scores[i]]
            fh.write(",".join(row) + "\n")
    summary_path = os.path.join(cfg.out_dir, "inference.json")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"samples": len(test_set), "accuracy": accuracy}, fh, indent=1)
        fh.write("\n")
    print(f"accuracy {accuracy:.4f} on {len(test_set)} samples -> {pred_path}")
    return accuracy


def _sweep_rep_fast(cfg: ExperimentConfig, rep: int) -> list[tuple[int, float]]:
    """All grid accuracies for one repetition with a single training pass.

    In simplified mode with equilibrium renormalization the gain dynamics of
    each subset are independent of which other subsets were selected, and all
    input weights equal b1/b2; training once on the largest candidate set and
    renormalizing each prefix separately is exactly equivalent to running
    each complexity on its own (covered by tests against the per-point path).
    """
    net = cfg.network()
    data = _load_dataset(cfg)
    grid = sorted(set(cfg.complexity_grid))
    k_max = max(grid)
    sel_set, learn_set, test_set = _split_for_rep(cfg, data, rep)
    sel_samples = _encode_phase(cfg, sel_set.features, _STREAM_SELECT, rep)
    superset = run_selection_topk(sel_samples, cfg.depth, k_max, net)
    superset = renormalize_selection(superset, EQUILIBRIUM, net)
    n_classes = int(data.labels.max()) + 1
    state = init_learner(
        superset, learn_set.labels, net,
        n_classes=n_classes, rate_multipliers=cfg.multipliers_for(n_classes),
    )
    learn_samples = _encode_phase(cfg, learn_set.features, _STREAM_LEARN, rep)
    train(state, learn_samples, learn_set.labels, "simplified", net, record_gains=False)
    test_samples = _encode_phase(cfg, test_set.features, _STREAM_TEST, rep)
    test_flux = flux_matrix(test_samples, superset.subset_idx)
    row_of = {s: i for i, s in enumerate(superset.subsets)}
    w_ratio = net.rates.w_ratio
    results = []
    for k in grid:
        chosen = run_selection_topk(sel_samples, cfg.depth, k, net).subsets
        rows = [row_of[s] for s in chosen]
        w_out = w_ratio * softmax_stable(state.log_h[rows], axis=0)
        scores = (test_flux[:, rows] * state.w_j[rows]) @ w_out
        acc = float((scores.argmax(axis=1) == test_set.labels).mean())
        results.append((k, acc))
    return results


def _sweep_rep_slow(cfg: ExperimentConfig, rep: int) -> list[tuple[int, float]]:
    """Grid accuracies for one repetition, one full pipeline per point."""
    net = cfg.network()
    data = _load_dataset(cfg)
    n_classes = int(data.labels.max()) + 1
    sel_set, learn_set, test_set = _split_for_rep(cfg, data, rep)
    sel_samples = _encode_phase(cfg, sel_set.features, _STREAM_SELECT, rep)
    learn_samples = _encode_phase(cfg, learn_set.features, _STREAM_LEARN, rep)
    test_samples = _encode_phase(cfg, test_set.features, _STREAM_TEST, rep)
    results = []
    for k in sorted(set(cfg.complexity_grid)):
        outcome = run_selection_topk(sel_samples, cfg.depth, k, net)
        outcome = renormalize_selection(outcome, net.schedule.t_renorm, net)
        state = init_learner(
            outcome, learn_set.labels, net,
            n_classes=n_classes, rate_multipliers=cfg.multipliers_for(n_classes),
        )
        train(state, learn_samples, learn_set.labels, cfg.mode, net, record_gains=False)
        preds, _ = infer_batch(to_model(state, net), test_samples, net)
        results.append((k, float((preds == test_set.labels).mean())))
    return results


def _sweep_one_rep(args) -> tuple[int, list[tuple[int, float]]]:
    cfg, rep, fast = args
    rows = _sweep_rep_fast(cfg, rep) if fast else _sweep_rep_slow(cfg, rep)
    return rep, rows


def _worker_count(reps: int) -> int:
    env = os.environ.get("CRN_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(os.cpu_count() or 1, reps))


def cmd_sweep(cfg: ExperimentConfig) -> str:
    """Accuracy versus complexity over seeded repetitions; writes curve CSV."""
    cfg.validate()
    if not cfg.complexity_grid:
        raise ConfigError("sweep needs a nonempty 'complexity_grid'")
    fast = cfg.mode == "simplified" and is_equilibrium(cfg.t_renorm)
    reps = cfg.repetitions
    tasks = [(cfg, rep, fast) for rep in range(reps)]
    workers = _worker_count(reps)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            by_rep = dict(pool.map(_sweep_one_rep, tasks))
    else:
        by_rep = dict(map(_sweep_one_rep, tasks))
    grid = sorted(set(cfg.complexity_grid))
    acc = np.zeros((len(grid), reps))
    for rep in range(reps):
        for i, (k, a) in enumerate(by_rep[rep]):
            acc[i, rep] = a
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "curve.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("complexity,mean_accuracy,q05,q95\n")
        for i, k in enumerate(grid):
            row = acc[i]
            fh.write(
                f"{k},{_fmt(row.mean())},{_fmt(np.quantile(row, 0.05))},"
                f"{_fmt(np.quantile(row, 0.95))}\n"
            )
    print(f"swept {len(grid)} complexities x {reps} repetitions -> {path}")
    return path


def cmd_verify(level: str, out_dir: str | None = None) -> bool:
    """Run the invariant suites and print a pass/fail table."""
    results = verify_mod.run_all(level)
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "pass" if r.passed else "FAIL"
        ok = ok and r.passed
        print(f"{r.name:<{width}}  {status}  {r.detail}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "verify.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(
                [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
                fh, indent=1,
            )
            fh.write("\n")
    print("verification " + ("passed" if ok else "FAILED"))
    return ok


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crn",
        description="Deterministic reaction-network classifier pipelines",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, hlp in (
        ("select", "run the selection phase and write the selection artifact"),
        ("train", "train on the learning split and write the model"),
        ("infer", "classify the test split with a saved model"),
        ("sweep", "accuracy vs complexity over repetitions"),
        ("verify", "run the invariant verification suites"),
    ):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
        p.add_argument("--reps", type=int, help="sweep repetitions (overrides config)")
        p.add_argument("--mode", choices=("full", "simplified"), help="training mode")
        if name == "train":
            p.add_argument("--selection", help="selection artifact (default <out>/selection.json)")
        if name == "infer":
            p.add_argument("--model", help="model file (default <out>/model.json)")
        if name == "verify":
            p.add_argument("--level", choices=("quick", "full"), default="quick")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.reps is not None:
            cfg.repetitions = args.reps
        if args.mode is not None:
            cfg.mode = args.mode
        if args.command == "select":
            cmd_select(cfg)
        elif args.command == "train":
            cmd_train(cfg, selection_path=args.selection)
        elif args.command == "infer":
            cmd_infer(cfg, model_path=args.model)
        elif args.command == "sweep":
            cmd_sweep(cfg)
        elif args.command == "verify":
            if not cmd_verify(args.level, out_dir=args.out):
                return EXIT_RUNTIME
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
