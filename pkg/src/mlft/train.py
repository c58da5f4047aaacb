"""Training pipelines: single level, multi-level fine-tuning, and the
multi-level Monte Carlo sum of networks; error evaluation and the ratio sweep.
"""
from __future__ import annotations

import csv
import io
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net as nnet
from .budget import ratio_to_counts
from .errors import TrainingDivergenceError
from .levels import MultiLevelSet, generate_multilevel, generate_samples


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "momentum"
    hyper: tuple = (("lr", 10.0), ("mu", 0.975))

    def make(self) -> nnet.OptimizerState:
        return nnet.make_optimizer(self.kind, **dict(self.hyper))


@dataclass(frozen=True)
class TrainSpec:
    iters: int = 2000
    batch_size: int = 32
    log_every: int = 50


@dataclass(frozen=True)
class EvalData:
    """Test split (errors against the finest level) and validation split
    (per-level errors and level gaps), both on shared parameters."""

    test: MultiLevelSet
    validation: MultiLevelSet


def build_eval_data(hierarchy, n_test: int, n_val: int, seed: int, threads: int = 1) -> EvalData:
    return EvalData(
        generate_multilevel(hierarchy, n_test, seed, "test", threads),
        generate_multilevel(hierarchy, n_val, seed, "validation", threads),
    )


@dataclass
class RunReport:
    pipeline: str
    counts: tuple
    curves: list = field(default_factory=list)
    g_test: float = float("nan")
    g_train: float = float("nan")
    g: float = float("nan")
    e_L: float = float("nan")
    level_g: list = field(default_factory=list)
    level_gaps: list = field(default_factory=list)
    seed: int = 0
    wall_clock: float = 0.0
    coefficients: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    continuity: list = field(default_factory=list)
    networks: list = field(default_factory=list, repr=False)

    def metrics(self) -> dict:
        return {"g_test": self.g_test, "g_train": self.g_train, "g": self.g, "e_L": self.e_L}


def _vec2_mean(diff: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(diff.reshape(diff.shape[0], -1), axis=1)))


def evaluate(predict, test_v, test_u, train_v=None, train_u=None, notes: list | None = None):
    """``(g_test, g_train, g)`` with vec2 errors; ``g`` is clamped at zero."""
    test_v = np.asarray(test_v)
    if test_v.shape[0] == 0:
        raise ValueError("empty test set")
    g_test = _vec2_mean(np.asarray(test_u) - predict(test_v))
    if train_v is None or len(train_v) == 0:
        return g_test, float("nan"), g_test
    g_train = _vec2_mean(np.asarray(train_u) - predict(np.asarray(train_v)))
    g = g_test - g_train
    if g < 0:
        msg = f"training error {g_train:.4g} exceeds testing error {g_test:.4g}; g clamped to 0"
        warnings.warn(msg)
        if notes is not None:
            notes.append(msg)
        g = 0.0
    return g_test, g_train, g


def _seed(seed: int, *tags) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed)] + [int(t) for t in tags])


# stream tags for seeded components
_INIT, _SHUFFLE = 11, 12


def _net_predict(net):
    return lambda v: nnet.predict(net, v)


def _fit_level(net, opt, v, u, tspec, seed, level, ev: EvalData, monitor=None, log=None):
    try:
        return nnet.fit(net, opt, v, u, tspec.iters, tspec.batch_size, _seed(seed, _SHUFFLE, level),
                        tspec.log_every, ev.test.v, ev.test.u[-1], log=log, monitor=monitor)
    except TrainingDivergenceError as exc:
        raise TrainingDivergenceError(f"level {level}: {exc}", iteration=exc.iteration, level=level) from exc


def train_single_level(level, hierarchy, m: int, net_spec, opt_spec: OptimizerSpec, tspec: TrainSpec,
                       ev: EvalData, seed: int = 0, threads: int = 1, log=None) -> RunReport:
    """Train one network on ``m`` samples of one level; errors against the finest level."""
    if m < 1:
        raise ValueError("m must be >= 1")
    t0 = time.perf_counter()
    L = len(hierarchy)
    rep = RunReport("single", tuple(m if lv.index == level.index else 0 for lv in hierarchy), seed=seed)
    data = generate_samples(level, hierarchy, m, seed, "train", threads=threads)
    net = nnet.build_network(net_spec, _seed(seed, _INIT, 1))
    opt = opt_spec.make()
    rep.curves.append(_fit_level(net, opt, data.v, data.u, tspec, seed, level.index, ev, log=log))
    pred = _net_predict(net)
    if level.index == L:
        rep.g_test, rep.g_train, rep.g = evaluate(pred, ev.test.v, ev.test.u[-1], data.v, data.u, rep.warnings)
    else:
        rep.g_test, rep.g_train, rep.g = evaluate(pred, ev.test.v, ev.test.u[-1])
        rep.e_L = ev.test.distance_to_finest(level.index)
    rep.networks = [net]
    rep.wall_clock = time.perf_counter() - t0
    return rep


def _level_g(pred, ev: EvalData, level: int, target, train_v, train_u, notes):
    """Validation error of a level net; training error subtracted (clamped)."""
    return evaluate(pred, ev.validation.v, target, train_v, train_u, notes)[2]


def run_mlft(hierarchy, counts, net_spec, opt_spec: OptimizerSpec, tspec: TrainSpec, ev: EvalData,
             seed: int = 0, threads: int = 1, log=None) -> RunReport:
    """One network and one optimizer trained level by level, never reinitialized."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != len(hierarchy) or min(counts) < 1:
        raise ValueError("MLFT needs a positive count for every level")
    t0 = time.perf_counter()
    rep = RunReport("mlft", counts, seed=seed)
    net = nnet.build_network(net_spec, _seed(seed, _INIT, 1))
    opt = opt_spec.make()
    data = None
    for lv, m in zip(hierarchy, counts):
        data = generate_samples(lv, hierarchy, m, seed, "train", threads=threads)
        monitor = (data.v, data.u)
        curve = _fit_level(net, opt, data.v, data.u, tspec, seed, lv.index, ev, monitor=monitor, log=log)
        if rep.curves:
            prev = rep.curves[-1]
            rep.continuity.append(
                curve.start_digest == prev.end_digest and curve.start_opt_digest == prev.end_opt_digest
            )
        rep.curves.append(curve)
        rep.level_g.append(
            _level_g(_net_predict(net), ev, lv.index, ev.validation.u[lv.index - 1], data.v, data.u, rep.warnings)
        )
        if lv.index >= 2:
            rep.level_gaps.append(ev.validation.gap(lv.index))
    rep.g_test, rep.g_train, rep.g = evaluate(_net_predict(net), ev.test.v, ev.test.u[-1], data.v, data.u,
                                              rep.warnings)
    rep.networks = [net]
    rep.wall_clock = time.perf_counter() - t0
    return rep


def run_ml2mc(hierarchy, counts, net_spec, opt_spec: OptimizerSpec, tspec: TrainSpec, ev: EvalData,
              seed: int = 0, threads: int = 1, log=None) -> RunReport:
    """Independent networks for ``f_1`` and each difference ``f_l - f_{l-1}``; predictor is their sum."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != len(hierarchy) or min(counts) < 1:
        raise ValueError("ML2MC needs a positive count for every level")
    t0 = time.perf_counter()
    rep = RunReport("ml2mc", counts, seed=seed)
    nets = []

    def summed(upto):
        def pred(v):
            out = nnet.predict(nets[0], v)
            for other in nets[1:upto]:
                out = out + nnet.predict(other, v)
            return out
        return pred

    for lv, m in zip(hierarchy, counts):
        paired = lv.index >= 2
        data = generate_samples(lv, hierarchy, m, seed, "train", paired=paired, threads=threads)
        target = data.u - data.u_prev if paired else data.u
        net = nnet.build_network(net_spec, _seed(seed, _INIT, lv.index))
        opt = opt_spec.make()
        # residual of the full predictor against f_l on this level's training set
        monitor = (data.v, data.u - summed(len(nets))(data.v)) if nets else (data.v, data.u)
        curve = _fit_level(net, opt, data.v, target, tspec, seed, lv.index, ev, monitor=monitor, log=log)
        nets.append(net)
        rep.curves.append(curve)
        val_target = ev.validation.u[lv.index - 1] - (ev.validation.u[lv.index - 2] if paired else 0.0)
        rep.level_g.append(_level_g(_net_predict(net), ev, lv.index, val_target, data.v, target, rep.warnings))
        if paired:
            rep.level_gaps.append(ev.validation.gap(lv.index))
    rep.g_test, rep.g_train, rep.g = evaluate(summed(len(nets)), ev.test.v, ev.test.u[-1])
    rep.networks = nets
    rep.wall_clock = time.perf_counter() - t0
    return rep


def run_counts(hierarchy, counts, net_spec, opt_spec, tspec, ev, seed=0, threads=1, pipeline="mlft", log=None):
    """Dispatch: a single non-zero count trains one level, otherwise ``pipeline``."""
    nonzero = [i for i, c in enumerate(counts) if c > 0]
    if not nonzero:
        raise ValueError("all counts are zero")
    if len(nonzero) == 1:
        i = nonzero[0]
        return train_single_level(hierarchy[i], hierarchy, counts[i], net_spec, opt_spec, tspec, ev, seed,
                                  threads, log)
    run = run_mlft if pipeline == "mlft" else run_ml2mc
    return run(hierarchy, counts, net_spec, opt_spec, tspec, ev, seed, threads, log)


def iterations_to_threshold(report: RunReport, threshold: float):
    """Iterations of the finest-level fit until the full predictor's training MSE reaches ``threshold``."""
    return report.curves[-1].iterations_to(threshold, "monitor_mse")


def common_threshold(reports, fraction: float = 0.5) -> float:
    """A shared target: ``fraction`` of the smallest training MSE at the start of the finest-level fit."""
    return fraction * min(r.curves[-1].monitor_mse[0] for r in reports)


def iterations_or_cap(report: RunReport, threshold: float) -> int:
    """Like ``iterations_to_threshold`` but an unreached threshold counts as one past the last iteration."""
    it = iterations_to_threshold(report, threshold)
    return report.curves[-1].iterations[-1] + 1 if it is None else it


@dataclass
class SweepRow:
    r: float
    m1: int
    m2: int
    g: list

    @property
    def median(self) -> float:
        return float(np.median(self.g))

    @property
    def q25(self) -> float:
        return float(np.percentile(self.g, 25))

    @property
    def q75(self) -> float:
        return float(np.percentile(self.g, 75))


def sweep_ratio(hierarchy, T: float, r_grid, seeds, net_spec, opt_spec, tspec, ev_for_seed, threads=1,
                log=None) -> list:
    """For each ``r``: counts from the budget split, endpoints single-level, interior MLFT."""
    if len(hierarchy) != 2:
        raise ValueError("the ratio sweep needs a two-level hierarchy")
    costs = [lv.cost for lv in hierarchy]
    rows = []
    for r in r_grid:
        m1, m2 = ratio_to_counts(r, T, costs)
        gs = []
        for seed in seeds:
            rep = run_counts(hierarchy, (m1, m2), net_spec, opt_spec, tspec, ev_for_seed(seed), seed, threads,
                             log=log)
            gs.append(rep.g)
        rows.append(SweepRow(float(r), m1, m2, gs))
    return rows


# -- report directory ----------------------------------------------------------------


def _csv(rows, header) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def write_report(rep: RunReport, out_dir, config_hash: str = "", config_text: str = "",
                 checkpoints: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, c in enumerate(rep.curves, start=1):
        rows = [(it, float(tr), float(te), config_hash) for it, tr, te in zip(c.iterations, c.train_mse, c.test_mse)]
        (out / f"loss_curve_l{k}.csv").write_text(_csv(rows, ["iteration", "train_mse", "test_mse", "config_hash"]))
    m = rep.metrics()
    (out / "metrics.csv").write_text(
        _csv([(m["g_test"], m["g_train"], m["g"], m["e_L"], config_hash)],
             ["g_test", "g_train", "g", "e_L", "config_hash"])
    )
    level_rows = []
    for k, gl in enumerate(rep.level_g, start=1):
        gap = rep.level_gaps[k - 2] if k >= 2 and len(rep.level_gaps) >= k - 1 else float("nan")
        level_rows.append((k, rep.counts[k - 1], float(gl), float(gap), config_hash))
    if level_rows:
        (out / "levels.csv").write_text(_csv(level_rows, ["level", "M", "g_level", "gap", "config_hash"]))
    lines = [
        f"pipeline = {rep.pipeline}",
        f"counts = {','.join(map(str, rep.counts))}",
        f"seed = {rep.seed}",
        f"config_hash = {config_hash}",
        f"g_test = {rep.g_test!r}",
        f"g_train = {rep.g_train!r}",
        f"g = {rep.g!r}",
        f"e_L = {rep.e_L!r}",
        f"level_g = {','.join(repr(float(x)) for x in rep.level_g)}",
        f"level_gaps = {','.join(repr(float(x)) for x in rep.level_gaps)}",
        f"continuity = {','.join(str(x).lower() for x in rep.continuity)}",
    ]
    for k, v in rep.coefficients.items():
        lines.append(f"coef.{k} = {v!r}")
    for w in rep.warnings:
        lines.append(f"warning = {w}")
    lines.append(f"wall_clock_seconds = {rep.wall_clock:.3f}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    if config_text:
        (out / "config.ini").write_text(config_text)
    if checkpoints:
        for k, net in enumerate(rep.networks, start=1):
            nnet.save_checkpoint(out / f"net_{k}.ckpt", net, extra={"config_hash": config_hash})
    return out


def read_report(path) -> dict:
    """Key/value pairs of ``report.txt``."""
    out = {}
    for line in (Path(path) / "report.txt").read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out.setdefault(k, v)
    return out


def sweep_csv(rows, config_hash: str = "", predicted=None) -> str:
    """Sweep table; ``predicted`` maps ``r`` to the estimator curve and marks its argmin."""
    header = ["r", "M1", "M2", "median_g", "q25", "q75", "predicted_g", "estimator_argmin", "config_hash"]
    best = None
    if predicted:
        best = min(predicted, key=predicted.get)
    body = []
    for row in rows:
        pg = predicted.get(row.r, float("nan")) if predicted else float("nan")
        body.append((row.r, row.m1, row.m2, row.median, row.q25, row.q75, float(pg),
                     int(best is not None and row.r == best), config_hash))
    return _csv(body, header)
