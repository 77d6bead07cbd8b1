"""Experiment harness: configuration, synthetic data, seeded runs, KL traces.

Every run derives its random streams from ``SeedSequence([base_seed, run_id])``
so results do not depend on run order or on the worker pool size.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expfam, gfvl, oracle
from . import graph as _graph
from .exceptions import ConfigError, GossipBayesError, NumericalError

__all__ = [
    "ExperimentConfig",
    "TraceRow",
    "TRACE_COLUMNS",
    "SUMMARY_COLUMNS",
    "COVER_COLUMNS",
    "parse_config",
    "load_config",
    "make_topology",
    "generate_data",
    "nearest_rank",
    "run_experiment",
    "run_unlearn_experiment",
    "run_sweep",
    "run_covertime",
    "summarize",
    "write_trace_csv",
    "write_summary_csv",
    "write_cover_csv",
]

TRACE_COLUMNS = ("run_id", "slot", "scheduled_agent", "event", "kl", "arm")
SUMMARY_COLUMNS = ("arm", "slot", "local_iterations", "median", "q_low", "q_high", "runs")
COVER_COLUMNS = ("quantity", "topology", "K", "trials", "mc_mean", "ci_low", "ci_high", "closed_form")

MODELS = {"beta-bernoulli": "bernoulli", "beta-exponential": "exponential"}
DEFAULT_THETA = {"beta-bernoulli": 0.7, "beta-exponential": 0.5}
BAND = (0.125, 0.875)


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "beta-bernoulli"
    path: str | None = None
    topology: str = "complete"
    K: int = 10
    n_per_agent: int = 100
    prior_a: float = 2.0
    prior_b: float = 2.0
    theta_star: float | None = None
    alpha: float = 1.0
    rho: float = 5e-3
    L: int = 1
    S: int = 30
    c: float = 0.0
    gradient: str = "reinforce"
    normalize_local_loss: bool = False
    max_slots: int | None = None
    budget: int = 2000
    sweep_L: tuple = (1, 2, 5, 10)
    runs: int = 50
    base_seed: int = 0
    unlearn_target: int | None = None
    train_slots: int | None = None
    unlearn_slots: int | None = None
    trials: int = 100_000
    grid_points: int = oracle.DEFAULT_GRID_POINTS
    workers: int = 1
    out: str = "gfvl.csv"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {sorted(MODELS)}, got {self.model!r}")
        if self.path is None:
            object.__setattr__(self, "path", "conjugate" if self.model == "beta-bernoulli" else "nonconjugate")
        if self.path not in gfvl.PATHS:
            raise ConfigError(f"path must be one of {gfvl.PATHS}, got {self.path!r}")
        if self.path == "conjugate" and self.model != "beta-bernoulli":
            raise ConfigError(f"{self.model} has no conjugate update")
        if self.theta_star is None:
            object.__setattr__(self, "theta_star", DEFAULT_THETA[self.model])
        if self.gradient not in gfvl.GRADIENTS:
            raise ConfigError(f"gradient must be one of {gfvl.GRADIENTS}")
        object.__setattr__(self, "sweep_L", tuple(int(v) for v in self.sweep_L))
        checks = [
            (self.K >= 1, "K must be >= 1"),
            (self.n_per_agent >= 0, "n_per_agent must be >= 0"),
            (self.prior_a > 0 and self.prior_b > 0, "prior shapes must be positive"),
            (self.alpha > 0, "alpha must be positive"),
            (self.rho > 0, "rho must be positive"),
            (self.L >= 1 and self.S >= 1, "L and S must be >= 1"),
            (self.max_slots is None or self.max_slots >= 1, "max_slots must be >= 1"),
            (self.budget >= 1, "budget must be >= 1"),
            (self.sweep_L and all(v >= 1 for v in self.sweep_L), "sweep_L entries must be >= 1"),
            (self.runs >= 1, "runs must be >= 1"),
            (self.base_seed >= 0, "base_seed must be non-negative"),
            (self.trials >= 1, "trials must be >= 1"),
            (self.grid_points >= 1001, "grid_points must be >= 1001"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.train_slots is None or self.train_slots >= 1, "train_slots must be >= 1"),
            (self.unlearn_slots is None or self.unlearn_slots >= 1, "unlearn_slots must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if self.model == "beta-bernoulli" and not 0.0 <= self.theta_star <= 1.0:
            raise ConfigError("theta_star must lie in [0, 1] for beta-bernoulli")
        if self.model == "beta-exponential" and not self.theta_star > 0.0:
            raise ConfigError("theta_star must be positive for beta-exponential")
        if self.unlearn_target is not None and self.unlearn_target < 0:
            raise ConfigError("unlearn_target must be a valid agent index")

    @property
    def likelihood(self):
        return MODELS[self.model]

    @property
    def prior_nat(self):
        return expfam.from_shape(self.prior_a, self.prior_b)

    def protocol(self, L=None, max_slots=None, stop_on_cover=True):
        L = self.L if L is None else L
        if max_slots is None:
            max_slots = self.max_slots
        if max_slots is None:
            max_slots = 10_000 if self.path == "conjugate" else max(self.budget // L, 1)
        return gfvl.ProtocolConfig(
            alpha=self.alpha,
            path=self.path,
            rho=self.rho,
            L=L,
            S=self.S,
            c=self.c,
            max_slots=max_slots,
            likelihood=self.likelihood,
            normalize_local_loss=self.normalize_local_loss,
            gradient=self.gradient,
            stop_on_cover=stop_on_cover,
        )


def _as_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(convert):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else convert(text)

    return parse


_CONVERTERS = {
    "K": int,
    "n_per_agent": int,
    "prior_a": float,
    "prior_b": float,
    "theta_star": _optional(float),
    "alpha": float,
    "rho": float,
    "L": int,
    "S": int,
    "c": float,
    "normalize_local_loss": _as_bool,
    "max_slots": _optional(int),
    "budget": int,
    "sweep_L": lambda s: tuple(int(v) for v in s.replace(",", " ").split()),
    "runs": int,
    "base_seed": int,
    "unlearn_target": _optional(int),
    "train_slots": _optional(int),
    "unlearn_slots": _optional(int),
    "trials": int,
    "grid_points": int,
    "workers": int,
    "path": _optional(str),
}


def parse_config(text, **overrides):
    """Parse ``key = value`` lines (``#`` comments) into an :class:`ExperimentConfig`."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CONVERTERS.get(key, str)(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, **overrides):
    text = Path(path).read_text() if path is not None else ""
    return parse_config(text, **overrides)


def make_topology(cfg):
    spec = cfg.topology
    try:
        if spec.startswith("file:"):
            topo = _graph.read_edge_list(spec[len("file:"):])
        else:
            topo = _graph.build(spec, cfg.K)
    except (GossipBayesError, ValueError, OSError) as exc:
        raise ConfigError(f"topology {spec!r}: {exc}") from None
    if cfg.unlearn_target is not None and cfg.unlearn_target >= topo.K:
        raise ConfigError(f"unlearn_target {cfg.unlearn_target} out of range for K={topo.K}")
    return topo


def generate_data(cfg, rng, K=None):
    """``n_per_agent`` i.i.d. draws per agent from the model at ``theta_star``."""
    model = expfam.get_likelihood(cfg.likelihood)
    K = cfg.K if K is None else K
    return [model.generate(cfg.theta_star, cfg.n_per_agent, rng) for _ in range(K)]


def _reference(cfg, datasets, exclude=None):
    """Closed-form posterior for conjugate models, otherwise the grid oracle."""
    if cfg.model == "beta-bernoulli":
        return oracle.exact_conjugate_posterior(
            cfg.prior_nat, datasets, exclude, cfg.likelihood, cfg.alpha, cfg.normalize_local_loss
        )
    return oracle.grid_generalized_posterior(
        cfg.prior_nat, datasets, cfg.alpha, cfg.likelihood, cfg.grid_points, exclude, cfg.normalize_local_loss
    )


@dataclass(frozen=True)
class TraceRow:
    run_id: int
    slot: int
    scheduled_agent: int
    event: str
    kl: float
    arm: str = ""


def _trace(run_id, record, reference, arm=""):
    return [
        TraceRow(run_id, i + 1, int(node), event, oracle.kl_variational_to_oracle(eta, reference), arm)
        for i, (node, event, eta) in enumerate(zip(record.nodes, record.events, record.global_nats))
    ]


def _streams(cfg, run_id, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence([cfg.base_seed, run_id]).spawn(n)]


def _with_context(fn, run_id, *args):
    try:
        return fn(run_id, *args)
    except NumericalError as exc:
        raise type(exc)(f"run {run_id}: {exc}") from exc


def _learn_run(run_id, cfg, topo, L, arm):
    data_rng, run_rng = _streams(cfg, run_id, 2)
    datasets = generate_data(cfg, data_rng, topo.K)
    reference = _reference(cfg, datasets)
    agents = gfvl.make_agents(datasets, cfg.likelihood)
    record = gfvl.run_learning(topo, agents, cfg.protocol(L=L), cfg.prior_nat, run_rng)
    return _trace(run_id, record, reference, arm)


def expected_cover_slots(cfg, topo):
    if topo.kind == "complete":
        return 1.0 + _graph.complete_cover_steps(topo.K)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.base_seed, 2**31]))
    return _graph.cover_time_mc(topo, 2000, rng).mean


def _train_slots(cfg, topo):
    if cfg.train_slots is not None:
        return cfg.train_slots
    return math.ceil(5 * expected_cover_slots(cfg, topo))


def _unlearn_run(run_id, cfg, topo, train_slots, unlearn_slots):
    target = cfg.unlearn_target
    data_rng, train_rng, unlearn_rng, retrain_rng = _streams(cfg, run_id, 4)
    datasets = generate_data(cfg, data_rng, topo.K)
    reference = _reference(cfg, datasets, exclude=target)
    agents = gfvl.make_agents(datasets, cfg.likelihood)
    trained = gfvl.run_learning(
        topo, agents, cfg.protocol(max_slots=train_slots, stop_on_cover=False), cfg.prior_nat, train_rng
    )
    unlearned = gfvl.run_unlearning(
        trained, topo, gfvl.UnlearnRequest(target), unlearn_rng, max_slots=unlearn_slots, stop_when_done=False
    )
    fresh = gfvl.make_agents(datasets, cfg.likelihood)
    fresh[target] = dataclasses.replace(fresh[target], deleted=True)
    retrained = gfvl.run_learning(topo, fresh, cfg.protocol(max_slots=unlearn_slots), cfg.prior_nat, retrain_rng)
    return _trace(run_id, unlearned, reference, "unlearn") + _trace(run_id, retrained, reference, "retrain")


def _fan_out(fn, cfg, *args):
    run_ids = range(cfg.runs)
    if cfg.workers == 1 or cfg.runs == 1:
        results = [_with_context(fn, r, cfg, *args) for r in run_ids]
    else:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.runs)) as pool:
            futures = [pool.submit(_with_context, fn, r, cfg, *args) for r in run_ids]
            results = [f.result() for f in futures]
    rows = [row for chunk in results for row in chunk]
    rows.sort(key=lambda r: (r.arm, r.run_id, r.slot))
    return rows


def run_experiment(cfg):
    """Independent learning runs; returns the per-slot trace rows."""
    return _fan_out(_learn_run, cfg, make_topology(cfg), cfg.L, "")


def run_sweep(cfg):
    """Learning runs for every ``L`` in ``cfg.sweep_L`` at a fixed local-iteration budget."""
    topo = make_topology(cfg)
    rows = []
    for L in cfg.sweep_L:
        sub = dataclasses.replace(cfg, max_slots=max(cfg.budget // L, 1))
        rows.extend(_fan_out(_learn_run, sub, topo, L, f"L={L}"))
    return rows


def run_unlearn_experiment(cfg):
    """Unlearning continuation versus retraining without the target, per seed."""
    if cfg.unlearn_target is None:
        raise ConfigError("unlearn_target must be set for the unlearn experiment")
    topo = make_topology(cfg)
    train_slots = _train_slots(cfg, topo)
    unlearn_slots = cfg.unlearn_slots or train_slots
    return _fan_out(_unlearn_run, cfg, topo, train_slots, unlearn_slots)


def nearest_rank(values, q):
    """Nearest-rank quantile: the ``ceil(q * n)``-th smallest value."""
    ordered = sorted(values)
    rank = max(math.ceil(q * len(ordered)), 1)
    return ordered[rank - 1]


def summarize(rows, L_of_arm=None):
    """Median and 75% band of KL per (arm, slot) across runs.

    Runs that stopped early (conjugate coverage) hold their last value.
    """
    by_arm = {}
    for row in rows:
        by_arm.setdefault(row.arm, {}).setdefault(row.run_id, []).append(row.kl)
    table = []
    for arm in sorted(by_arm):
        traces = by_arm[arm]
        horizon = max(len(t) for t in traces.values())
        L = (L_of_arm or {}).get(arm, 1)
        for slot in range(1, horizon + 1):
            values = [t[min(slot, len(t)) - 1] for _, t in sorted(traces.items())]
            table.append(
                (
                    arm,
                    slot,
                    slot * L,
                    nearest_rank(values, 0.5),
                    nearest_rank(values, BAND[0]),
                    nearest_rank(values, BAND[1]),
                    len(values),
                )
            )
    return table


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return "" if value is None else str(value)


def _write(path, columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def write_trace_csv(path, rows):
    _write(path, TRACE_COLUMNS, (dataclasses.astuple(r) for r in rows))


def write_summary_csv(path, table):
    _write(path, SUMMARY_COLUMNS, table)


def summary_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".summary" + (path.suffix or ".csv"))


def run_covertime(cfg):
    """MC cover, hitting and retrain-cover times with complete-graph closed forms."""
    topo = make_topology(cfg)
    target = topo.K - 1 if cfg.unlearn_target is None else cfg.unlearn_target
    cover_rng, hit_rng, retrain_rng = _streams(cfg, 0, 3)
    complete = topo.kind == "complete"
    K = topo.K

    cover = _graph.cover_time_mc(topo, cfg.trials, cover_rng)
    hit = _graph.hitting_time_mc(topo, target, cfg.trials, hit_rng)
    rows = [
        ("cover_steps", topo.kind, K, cfg.trials, cover.mean - 1, cover.ci[0] - 1, cover.ci[1] - 1,
         _graph.complete_cover_steps(K) if complete else None),
        ("hitting_slots", topo.kind, K, cfg.trials, hit.mean, hit.ci[0], hit.ci[1],
         _graph.complete_hitting_time(K) if complete else None),
    ]
    if K >= 3:
        retrain_topo, nodes = _without(topo, target)
        retrain = _graph.cover_time_mc(retrain_topo, cfg.trials, retrain_rng, nodes=nodes)
        rows.append(
            ("retrain_cover_steps", topo.kind, K, cfg.trials, retrain.mean - 1, retrain.ci[0] - 1,
             retrain.ci[1] - 1, _graph.complete_cover_steps(K - 1) if complete else None)
        )
    return rows


def _without(topo, target):
    """Graph for retraining without ``target``.

    The induced subgraph when it stays connected; otherwise the full graph
    with ``target`` acting as a data-less relay.
    """
    keep = [k for k in range(topo.K) if k != target]
    sub = topo.adjacency[np.ix_(keep, keep)]
    try:
        return _graph.Topology(sub, kind=topo.kind), None
    except GossipBayesError:
        return topo, keep


def write_cover_csv(path, rows):
    _write(path, COVER_COLUMNS, rows)
