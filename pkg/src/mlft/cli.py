"""Command-line interface: ``mlft <command> [options]``.

Exit codes: 0 success, 1 failed verification, 2 configuration or usage
error, 3 solver failure, 4 training divergence, 5 ill-conditioned kernel,
6 infeasible budget.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np

from . import budget as bud
from . import estimate as est
from . import ntk
from .config import ExperimentConfig, load_config, with_overrides
from .errors import (
    ConfigError,
    DegenerateModelError,
    IllConditionedKernelError,
    IndefiniteOperatorError,
    InfeasibleBudgetError,
    SampleGenerationError,
    SolverDivergenceError,
    StabilityError,
    TrainingDivergenceError,
    UnderdeterminedError,
)
from .levels import generate_samples, save_dataset
from .net import build_network
from .train import (
    build_eval_data,
    read_report,
    run_counts,
    run_ml2mc,
    run_mlft,
    sweep_csv,
    sweep_ratio,
    train_single_level,
    write_report,
)

EXIT_CODES = [
    ((ConfigError, UnderdeterminedError, DegenerateModelError), 2, "config"),
    ((SolverDivergenceError, StabilityError, IndefiniteOperatorError, SampleGenerationError), 3, "solver"),
    ((TrainingDivergenceError,), 4, "divergence"),
    ((IllConditionedKernelError,), 5, "kernel"),
    ((InfeasibleBudgetError,), 6, "infeasible"),
]

REFERENCE_SLOPES = {"c1": 0.30588, "d2_over_c2sq": 0.40594}


class UsageError(ConfigError):
    pass


@contextlib.contextmanager
def out_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"output directory {out} is locked by another command ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _counts(s: str) -> tuple:
    try:
        return tuple(int(x) for x in s.split(","))
    except ValueError:
        raise UsageError(f"counts must be comma-separated integers, got {s!r}") from None


def _progress(quiet):
    if quiet:
        return None
    return lambda it, tr, te: print(f"  iter {it:6d}  train {tr:.4e}  test {te:.4e}", file=sys.stderr)


def _eval(cfg: ExperimentConfig, threads: int):
    return build_eval_data(cfg.hierarchy, cfg.n_test, cfg.n_validation, cfg.seed, threads)


# -- commands ----------------------------------------------------------------------


def cmd_generate(cfg, args, out: Path):
    if not 1 <= args.level <= len(cfg.hierarchy):
        raise UsageError(f"level must be in 1..{len(cfg.hierarchy)}")
    lv = cfg.hierarchy[args.level - 1]
    s = generate_samples(lv, cfg.hierarchy, args.count, cfg.seed, args.split, paired=args.paired,
                         threads=args.threads)
    name = f"{cfg.problem.name}_l{lv.index}_{args.split}_m{args.count}_s{cfg.seed}.bin"
    path = save_dataset(s, out / name, f"config_hash = {cfg.hash}\n\n{cfg.text}")
    print(f"wrote {path}")
    print(f"count = {len(s)}")
    print(f"level = {lv.index}")
    print(f"seed = {cfg.seed}")
    print(f"cost = {args.count * lv.cost!r}")
    return 0


def _run_dir(out: Path, name: str) -> Path:
    return out / name


def cmd_run(cfg, args, out: Path):
    ev = _eval(cfg, args.threads)
    log = _progress(args.quiet)
    L = len(cfg.hierarchy)
    if args.pipeline == "single":
        level = args.level or L
        if args.count is None:
            raise UsageError("single pipeline needs --count")
        rep = train_single_level(cfg.hierarchy[level - 1], cfg.hierarchy, args.count, cfg.network, cfg.optimizer,
                                 cfg.training, ev, cfg.seed, args.threads, log)
        tag = f"single_l{level}_m{args.count}"
    else:
        if args.counts:
            counts = _counts(args.counts)
        elif args.ratio is not None:
            if cfg.budget is None:
                raise UsageError("--ratio needs [budget] T in the config")
            counts = bud.ratio_to_counts(args.ratio, cfg.budget, cfg.costs)
        else:
            raise UsageError("give --counts or --ratio")
        if len(counts) != L:
            raise UsageError(f"need {L} counts")
        rep = run_counts(cfg.hierarchy, counts, cfg.network, cfg.optimizer, cfg.training, ev, cfg.seed,
                         args.threads, pipeline=args.pipeline, log=log)
        tag = f"{rep.pipeline}_{'_'.join(map(str, counts))}"
    d = write_report(rep, _run_dir(out, f"run_{tag}_s{cfg.seed}"), cfg.hash, cfg.text)
    print(f"wrote {d}")
    print(f"g_test = {rep.g_test!r}")
    print(f"g_train = {rep.g_train!r}")
    print(f"g = {rep.g!r}")
    return 0


def _trial_from_report(path: Path, cfg, final: bool = False):
    """Trial record from a run report; ``final`` puts the full predictor's ``g`` last."""
    rep = read_report(path)
    if rep.get("config_hash") != cfg.hash:
        raise ConfigError(f"report {path} was produced by config {rep.get('config_hash')}, not {cfg.hash}")
    counts = _counts(rep["counts"])
    g = [float(x) for x in rep["level_g"].split(",") if x]
    gaps = [float(x) for x in rep.get("level_gaps", "").split(",") if x]
    if len(g) != len(counts):
        raise ConfigError(f"report {path} lacks per-level errors")
    if final:
        g[-1] = float(rep["g"])
    return est.TrialRecord(counts, g, [0.0] + gaps if gaps else ()), rep["pipeline"]


def apriori_coefficients(cfg, seed: int, counts, threads: int = 1, cap: int = 16, log=None):
    """Run MLFT at ``counts`` and collect ``R, c_l, d_l`` from the network entering each level."""
    from . import net as nnet
    from .train import _seed, _INIT, _SHUFFLE

    hierarchy = cfg.hierarchy
    ev = _eval(cfg, threads)
    net = build_network(cfg.network, _seed(seed, _INIT, 1))
    opt = cfg.optimizer.make()
    c, d, jitters = [], [0.0], []
    for lv, m in zip(hierarchy, counts):
        paired = lv.index >= 2
        data = generate_samples(lv, hierarchy, m, seed, "train", paired=paired, threads=threads)
        if lv.index == 1:
            c1, gram = ntk.coeff_c1(net, data, cap=cap, return_gram=True)
            c.append(c1)
            jitters.append(gram.jitter)
        else:
            cl, dl, gram = ntk.coeff_cl_dl(net, data, cap=cap, return_gram=True)
            c.append(cl)
            d.append(dl)
            jitters.append(gram.jitter if gram is not None else 0.0)
        nnet.fit(net, opt, data.v, data.u, cfg.training.iters, cfg.training.batch_size,
                 _seed(seed, _SHUFFLE, lv.index), cfg.training.log_every, log=log)
    R = ntk.estimate_R(net, ev.validation.v[: min(8, len(ev.validation))])
    return est.EstimatorModel("mlft_apriori", len(hierarchy), R=R, c=c, d=d, costs=cfg.costs,
                              provenance={"R": "max over 8 validation probes at the final state",
                                          "c": f"Gram of up to {cap} training samples per level",
                                          "d": "network state entering each level"}), jitters


def cmd_estimate(cfg, args, out: Path):
    method = args.method or cfg.estimator_method
    kind = args.kind or cfg.estimator_kind
    extra = {"config_hash": cfg.hash, "method": method}
    anchor = _counts(args.anchor) if args.anchor else cfg.anchor
    if method == "apriori":
        if not anchor:
            raise UsageError("a priori coefficients need anchor counts")
        model, jitters = apriori_coefficients(cfg, cfg.seed, anchor, args.threads, cfg.gram_cap,
                                              _progress(args.quiet))
        extra["jitter"] = ",".join(repr(j) for j in jitters)
        extra["anchor"] = ",".join(map(str, anchor))
    elif method == "heuristic":
        if args.report:
            trial, pipe = _trial_from_report(Path(args.report[0]), cfg)
        else:
            if not anchor:
                raise UsageError("heuristic fit needs --report or anchor counts")
            ev = _eval(cfg, args.threads)
            run = run_mlft if kind.startswith("mlft") else run_ml2mc
            rep = run(cfg.hierarchy, anchor, cfg.network, cfg.optimizer, cfg.training, ev, cfg.seed,
                      args.threads, _progress(args.quiet))
            d = write_report(rep, out / f"anchor_{rep.pipeline}_s{cfg.seed}", cfg.hash, cfg.text)
            print(f"wrote {d}")
            trial, pipe = _trial_from_report(d, cfg)
        if kind.startswith("mlft"):
            model = est.fit_heuristic_mlft(trial, cfg.costs)
        else:
            model = est.fit_heuristic_ml2mc(trial, cfg.costs)
        extra["trial"] = ",".join(map(str, trial.m))
    elif method == "lsq":
        trials = [_trial_from_report(Path(p), cfg, final=True)[0] for p in (args.report or [])]
        model = est.fit_least_squares(trials, "mlft_apost" if kind.startswith("mlft") else "ml2mc_apost",
                                      costs=cfg.costs, seed=cfg.seed)
    else:
        raise UsageError(f"unknown method {method!r}")
    path = out / f"estimator_{model.kind}.txt"
    path.write_text(est.model_to_text(model, extra))
    print(f"wrote {path}")
    if model.kind == "mlft_apriori":
        print(f"R = {model.R!r}")
        for l, cl in enumerate(model.c, start=1):
            print(f"c_{l} = {cl!r}")
        for l, dl in enumerate(model.d[1:], start=2):
            print(f"d_{l} = {dl!r}")
        print(f"jitter = {extra['jitter']}")
    return 0


def _load_model(path: str, cfg) -> est.EstimatorModel:
    text = Path(path).read_text()
    model = est.model_from_text(text)
    import configparser

    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    if cp.has_section("extra") and cfg is not None:
        h = cp["extra"].get("config_hash")
        if h and h != cfg.hash:
            raise ConfigError(f"estimator {path} was produced by config {h}, not {cfg.hash}")
    if not model.costs and cfg is not None:
        model = est.with_costs(model, cfg.costs)
    return model


def cmd_budget(cfg, args, out: Path):
    if not args.estimator:
        raise UsageError("budget needs --estimator")
    model = _load_model(args.estimator, cfg)
    T = args.T if args.T is not None else (cfg.budget if cfg else None)
    if T is None:
        raise UsageError("give --T or [budget] T")
    if model.kind == "ml2mc_apost":
        sol = bud.optimize_ml2mc(model, T)
    else:
        sol = bud.optimize_mlft(model, T)
    text = bud.budget_csv(sol)
    if cfg is not None:
        text = _with_hash(text, cfg.hash)
    path = out / "budget.csv"
    path.write_text(text)
    print(f"wrote {path}")
    print(f"counts = {','.join(map(str, sol.m_rounded))}")
    print(f"ghat = {sol.ghat_rounded!r}")
    return 0


def _with_hash(text: str, h: str) -> str:
    rows = list(csv.reader(io.StringIO(text)))
    rows[0].append("config_hash")
    for r in rows[1:]:
        r.append(h)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_sweep(cfg, args, out: Path):
    T = args.T if args.T is not None else cfg.budget
    if T is None:
        raise UsageError("give --T or [budget] T")
    ratios = tuple(float(x) for x in args.ratios.split(",")) if args.ratios else cfg.ratios
    reps = args.reps or cfg.reps
    seeds = [cfg.seed + k for k in range(reps)]
    cache = {}

    def ev_for(seed):
        if seed not in cache:
            cache.clear()
            cache[seed] = build_eval_data(cfg.hierarchy, cfg.n_test, cfg.n_validation, seed, args.threads)
        return cache[seed]

    rows = sweep_ratio(cfg.hierarchy, T, ratios, seeds, cfg.network, cfg.optimizer, cfg.training, ev_for,
                       args.threads, _progress(args.quiet))
    predicted = None
    if args.estimator:
        model = _load_model(args.estimator, cfg)
        predicted = {}
        for r in ratios:
            m = bud.ratio_to_counts(r, T, cfg.costs)
            if min(m) > 0:
                predicted[r] = est.eval_ghat(model, m)
    path = out / "sweep.csv"
    path.write_text(sweep_csv(rows, cfg.hash, predicted))
    print(f"wrote {path}")
    for row in rows:
        print(f"r = {row.r:.4f}  M = ({row.m1}, {row.m2})  median g = {row.median:.6g}")
    return 0


def growth_table(cfg, m_grid, reps: int, threads: int = 1, log=None):
    """``c_1`` at initialization and ``d_2 / c_2^2`` after level-1 training, per sample count."""
    from . import net as nnet
    from .train import _seed, _INIT, _SHUFFLE

    if len(m_grid) < 2:
        raise UnderdeterminedError("growth slopes need at least two sample counts")
    cap = max(m_grid)
    rows = {m: {"c1": [], "ratio": []} for m in m_grid}
    for k in range(reps):
        seed = cfg.seed + k
        net = build_network(cfg.network, _seed(seed, _INIT, 1))
        lv1 = cfg.hierarchy[0]
        s1 = generate_samples(lv1, cfg.hierarchy, cap, seed, "train", threads=threads)
        for m in m_grid:
            rows[m]["c1"].append(ntk.coeff_c1(net, s1.subset(m), cap=cap))
        if len(cfg.hierarchy) >= 2:
            m1 = cfg.anchor[0] if cfg.anchor else cap
            tr = generate_samples(lv1, cfg.hierarchy, m1, seed + 10_000, "train", threads=threads)
            opt = cfg.optimizer.make()
            nnet.fit(net, opt, tr.v, tr.u, cfg.training.iters, cfg.training.batch_size,
                     _seed(seed, _SHUFFLE, 1), cfg.training.log_every, log=log)
            s2 = generate_samples(cfg.hierarchy[1], cfg.hierarchy, cap, seed, "train", paired=True,
                                  threads=threads)
            for m in m_grid:
                c2, d2 = ntk.coeff_cl_dl(net, s2.subset(m), cap=cap)
                rows[m]["ratio"].append(d2 / c2**2 if c2 > 0 else float("nan"))
    table = [(m, float(np.median(rows[m]["c1"])), float(np.median(rows[m]["ratio"])) if rows[m]["ratio"]
              else float("nan")) for m in m_grid]
    slopes = {"c1": est.loglog_slope([t[0] for t in table], [t[1] for t in table])}
    if all(np.isfinite(t[2]) and t[2] > 0 for t in table):
        slopes["d2_over_c2sq"] = est.loglog_slope([t[0] for t in table], [t[2] for t in table])
    return table, slopes


def cmd_growth(cfg, args, out: Path):
    m_grid = _counts(args.m) if args.m else cfg.growth_m
    if len(m_grid) < 2:
        raise UsageError("growth needs at least two sample counts")
    table, slopes = growth_table(cfg, m_grid, args.reps or cfg.reps, args.threads, _progress(args.quiet))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["M", "c1", "d2_over_c2sq", "config_hash"])
    for m, c1, ratio in table:
        wr.writerow([m, repr(c1), repr(ratio), cfg.hash])
    (out / "growth.csv").write_text(buf.getvalue())
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["quantity", "slope", "reference_slope", "config_hash"])
    for q, s in slopes.items():
        wr.writerow([q, repr(s), repr(REFERENCE_SLOPES[q]), cfg.hash])
    (out / "growth_slopes.csv").write_text(buf.getvalue())
    print(f"wrote {out / 'growth.csv'}")
    for q, s in slopes.items():
        print(f"slope {q} = {s:.5f} (reference {REFERENCE_SLOPES[q]})")
    return 0


def cmd_verify(cfg, args, out: Path):
    from .verify import run_checks

    results = run_checks()
    ok = True
    for name, passed, detail in results:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
    return 0 if ok else 1


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "estimate": cmd_estimate,
    "budget": cmd_budget,
    "sweep": cmd_sweep,
    "growth": cmd_growth,
    "verify": cmd_verify,
}
NEEDS_CONFIG = {"generate", "run", "estimate", "sweep", "growth"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file or preset name (nls, burgers, elliptic)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sample generation")
    common.add_argument("--quiet", action="store_true", help="suppress training progress")

    p = argparse.ArgumentParser(prog="mlft", description="Multi-level fine-tuning experiments")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="generate a dataset")
    g.add_argument("--level", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--split", default="train", choices=["train", "validation", "test"])
    g.add_argument("--paired", action="store_true", help="also store the previous level's targets")

    r = sub.add_parser("run", parents=[common], help="run a training pipeline")
    r.add_argument("pipeline", choices=["single", "mlft", "ml2mc"])
    r.add_argument("--counts", help="comma-separated per-level counts")
    r.add_argument("--ratio", type=float, help="coarse-to-total budget ratio (two levels)")
    r.add_argument("--level", type=int, help="level for the single pipeline (default finest)")
    r.add_argument("--count", type=int, help="sample count for the single pipeline")

    e = sub.add_parser("estimate", parents=[common], help="fit an error estimator")
    e.add_argument("method", nargs="?", choices=["apriori", "heuristic", "lsq"])
    e.add_argument("--kind", choices=["mlft_apost", "ml2mc_apost", "mlft"])
    e.add_argument("--report", action="append", help="run report directory (repeatable)")
    e.add_argument("--anchor", help="anchor counts for a fresh trial")

    b = sub.add_parser("budget", parents=[common], help="optimize per-level counts")
    b.add_argument("--estimator", help="estimator file")
    b.add_argument("--T", type=float, help="budget")

    s = sub.add_parser("sweep", parents=[common], help="sweep the coarse-to-total ratio")
    s.add_argument("--T", type=float)
    s.add_argument("--ratios")
    s.add_argument("--reps", type=int)
    s.add_argument("--estimator")

    gr = sub.add_parser("growth", parents=[common], help="coefficient growth diagnostic")
    gr.add_argument("--m", help="comma-separated sample counts")
    gr.add_argument("--reps", type=int)

    sub.add_parser("verify", parents=[common], help="run the invariant checks")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = None
        if args.config:
            cfg = with_overrides(load_config(args.config), args.seed)
        elif args.command in NEEDS_CONFIG:
            raise UsageError("--config is required")
        out = Path(args.out or (cfg.out if cfg else "out"))
        with out_lock(out):
            return COMMANDS[args.command](cfg, args, out)
    except Exception as exc:  # map to the exit-code contract
        for types, code, label in EXIT_CODES:
            if isinstance(exc, types):
                print(f"error: {label}: {exc}", file=sys.stderr)
                return code
        if isinstance(exc, (ValueError, KeyError, FileNotFoundError)):
            print(f"error: config: {exc}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
