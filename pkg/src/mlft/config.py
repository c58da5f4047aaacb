"""Experiment configuration: an INI file with one section per component.

The canonical text (sections and keys in a fixed order) is hashed so every
output can name the configuration that produced it.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

from . import solvers
from .errors import ConfigError
from .levels import LevelSpec, Problem, TransferKind, check_hierarchy
from .net import Branch, NetworkSpec
from .train import OptimizerSpec, TrainSpec

PRESET_DIR = Path(__file__).with_name("presets")


def _floats(s: str) -> list:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list:
    return [int(x) for x in s.split(",") if x.strip()]


@dataclass
class ExperimentConfig:
    text: str
    problem: Problem
    hierarchy: list
    network: NetworkSpec
    optimizer: OptimizerSpec
    training: TrainSpec
    n_test: int
    n_validation: int
    seed: int
    estimator_kind: str
    estimator_method: str
    anchor: tuple
    gram_cap: int
    budget: float | None
    ratios: tuple
    reps: int
    growth_m: tuple
    out: str

    @property
    def hash(self) -> str:
        return config_hash(self.text)

    @property
    def costs(self) -> list:
        return [lv.cost for lv in self.hierarchy]


def canonical(cp: configparser.ConfigParser) -> str:
    lines = []
    for sec in sorted(cp.sections()):
        lines.append(f"[{sec}]")
        for k in sorted(cp[sec]):
            lines.append(f"{k} = {cp[sec][k].strip()}")
        lines.append("")
    return "\n".join(lines)


def config_hash(text: str) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    return hashlib.sha256(canonical(cp).encode()).hexdigest()[:16]


def _problem(cp) -> Problem:
    name = cp["problem"].get("name")
    sec = cp["problem"]
    if name == "nls":
        params = solvers.NlsParams(
            beta=sec.getfloat("beta", 100.0),
            tau=sec.getfloat("tau", 1.0),
            tol=sec.getfloat("tol", 1e-10),
            max_iters=sec.getint("max_iters", 100_000),
        )
        dist = solvers.NlsPotentialDist(
            k_terms=sec.getint("k_terms", 4),
            alpha=sec.getfloat("alpha", 0.1),
            amp_range=tuple(_floats(sec.get("amp_range", "-400,-200"))),
            omega_range=tuple(_floats(sec.get("omega_range", "40,80"))),
            inv_sigma_range=tuple(_floats(sec.get("inv_sigma_range", "10,20"))),
        )
        return Problem("nls", params, dist)
    if name == "burgers":
        params = solvers.BurgersParams(
            kappa=sec.getfloat("kappa", 0.005),
            t_term=sec.getfloat("t_term", 0.1),
            dt_factor=sec.getfloat("dt_factor", 10.0),
            k_steps=sec.getint("k_steps", 40),
        )
        return Problem("burgers", params)
    if name == "elliptic":
        params = solvers.EllipticParams(
            k_terms=sec.getint("k_terms", 6),
            c_shift=sec.getfloat("c_shift", 100.0),
            amp_sigma=sec.getfloat("amp_sigma", 20.0),
        )
        return Problem("elliptic", params)
    raise ConfigError(f"unknown problem {name!r}")


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
        problem = _problem(cp)
        h = cp["hierarchy"]
        ns, costs = _ints(h["n"]), _floats(h["cost"])
        if len(ns) != len(costs):
            raise ConfigError("hierarchy n and cost lists differ in length")
        transfer = TransferKind(h.get("restriction", "fourier"), h.get("interpolation", "cubic"))
        hierarchy = [LevelSpec(i + 1, n, c, problem, transfer) for i, (n, c) in enumerate(zip(ns, costs))]
        check_hierarchy(hierarchy)

        nw = cp["network"]
        subs = _ints(nw["n_sub"])
        channels = _ints(nw.get("channels", "32"))
        if len(channels) == 1:
            channels *= len(subs)
        branches = tuple(
            Branch(s, nw.getint("depth", 4), c, nw.getint("conv_window", 7)) for s, c in zip(subs, channels)
        )
        network = NetworkSpec(problem.dim, hierarchy[-1].n, branches, nw.getint("transfer_window", 3),
                              nw.getfloat("gamma", 3e-4))

        op = cp["optimizer"]
        hyper = tuple((k, float(v)) for k, v in sorted(op.items()) if k != "kind")
        optimizer = OptimizerSpec(op.get("kind", "momentum"), hyper)
        optimizer.make()

        tr = cp["training"]
        training = TrainSpec(tr.getint("iters", 2000), tr.getint("batch_size", 32), tr.getint("log_every", 50))

        sp = cp["splits"]
        ex = cp["experiment"] if cp.has_section("experiment") else {}
        es = cp["estimator"] if cp.has_section("estimator") else {}
        bu = cp["budget"] if cp.has_section("budget") else {}
        seed = int(ex.get("seed", sp.get("seed", "0")))
        budget = bu.get("T")
        return ExperimentConfig(
            text=text,
            problem=problem,
            hierarchy=hierarchy,
            network=network,
            optimizer=optimizer,
            training=training,
            n_test=sp.getint("test", 64),
            n_validation=sp.getint("validation", 64),
            seed=seed,
            estimator_kind=es.get("kind", "mlft_apost"),
            estimator_method=es.get("method", "heuristic"),
            anchor=tuple(_ints(es.get("anchor", ""))),
            gram_cap=int(es.get("gram_cap", "16")),
            budget=float(budget) if budget else None,
            ratios=tuple(_floats(bu.get("ratios", "0,0.25,0.5,0.75,1"))),
            reps=int(bu.get("reps", "1")),
            growth_m=tuple(_ints(es.get("growth_m", "4,8,16"))),
            out=ex.get("out", "out"),
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(name_or_path: str) -> ExperimentConfig:
    """Read a config file, or a preset by name (``nls``, ``burgers``, ``elliptic``)."""
    path = Path(name_or_path)
    if not path.exists():
        preset = PRESET_DIR / f"{name_or_path}.ini"
        if not preset.exists():
            raise ConfigError(f"no config file or preset named {name_or_path!r}")
        path = preset
    return parse_config(path.read_text())


def with_overrides(cfg: ExperimentConfig, seed=None) -> ExperimentConfig:
    if seed is None:
        return cfg
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(cfg.text)
    if not cp.has_section("experiment"):
        cp.add_section("experiment")
    cp["experiment"]["seed"] = str(int(seed))
    return parse_config(canonical(cp))


def preset_names() -> list:
    return sorted(p.stem for p in PRESET_DIR.glob("*.ini"))
