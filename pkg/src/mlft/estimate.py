"""Generalization-error estimators for multi-level training and their fits.

Three model kinds share one recursion ``g_1 = p_1 / sqrt(M_1)`` and
``g_l = (p_l + q_l g_{l-1}) / sqrt(M_l)``:

* ``mlft_apriori``: ``p_l = 2 R c_l``, ``q_l = 2 R d_l / c_l``
* ``mlft_apost``: ``p_1 = a_1``, ``p_l = a_l b_l``, ``q_l = a_l``
* ``ml2mc_apost``: ``g_L = sum_l a_l / sqrt(M_l)`` (independent levels)
"""
from __future__ import annotations

import configparser
import io
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .errors import DegenerateModelError, UnderdeterminedError

KINDS = ("mlft_apriori", "mlft_apost", "ml2mc_apost")


def _tuple(x):
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class EstimatorModel:
    kind: str
    levels: int
    a: tuple = ()
    b: tuple = ()  # b[0] is unused and kept at 0
    R: float = 0.0
    c: tuple = ()
    d: tuple = ()  # d[0] is unused and kept at 0
    costs: tuple = ()
    residual: float | None = None
    converged: bool = True
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.levels < 1:
            raise ValueError("need at least one level")
        for name in ("a", "b", "c", "d", "costs"):
            object.__setattr__(self, name, _tuple(getattr(self, name)))
        need = {"mlft_apriori": ("c", "d"), "mlft_apost": ("a", "b"), "ml2mc_apost": ("a",)}[self.kind]
        for name in need:
            vals = getattr(self, name)
            if name in ("b", "d") and not vals and self.levels == 1:
                vals = (0.0,)
                object.__setattr__(self, name, vals)
            if len(vals) != self.levels:
                raise ValueError(f"{name} needs {self.levels} entries, got {len(vals)}")
            if not all(np.isfinite(vals)) or min(vals) < 0:
                raise ValueError(f"coefficients {name} must be finite and >= 0")
        if self.kind == "mlft_apriori" and not (np.isfinite(self.R) and self.R >= 0):
            raise ValueError("R must be finite and >= 0")
        if self.costs and len(self.costs) != self.levels:
            raise ValueError("costs must have one entry per level")

    def recursion(self):
        """Per-level ``(p_l, q_l)`` of the nested form (``q_1`` is 0)."""
        L = self.levels
        if self.kind == "ml2mc_apost":
            raise ValueError("ML2MC models are additive, not nested")
        if self.kind == "mlft_apost":
            p = [self.a[0]] + [self.a[l] * self.b[l] for l in range(1, L)]
            q = [0.0] + [self.a[l] for l in range(1, L)]
            return p, q
        r2 = 2.0 * self.R
        p = [r2 * cl for cl in self.c]
        q = [0.0]
        for l in range(1, L):
            if self.c[l] == 0:
                if self.d[l] == 0:
                    q.append(0.0)
                    continue
                raise DegenerateModelError(f"c_{l + 1} = 0 with d_{l + 1} > 0: levels {l} and {l + 1} coincide")
            q.append(r2 * self.d[l] / self.c[l])
        return p, q

    def to_apost(self) -> "EstimatorModel":
        """Equivalent a posteriori model (``a_l = 2R d_l / c_l``, ``b_l = c_l^2 / d_l``)."""
        if self.kind != "mlft_apriori":
            return self
        p, q = self.recursion()
        a = [p[0]] + q[1:]
        b = [0.0] + [p[l] / q[l] if q[l] else 0.0 for l in range(1, self.levels)]
        return EstimatorModel("mlft_apost", self.levels, a=a, b=b, costs=self.costs,
                              provenance={"a": "from a priori", "b": "from a priori"})


@dataclass(frozen=True)
class TrialRecord:
    """One training trial: counts, measured per-level errors and level gaps."""

    m: tuple
    g: tuple
    e: tuple = ()  # e[0] unused

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(x) for x in self.m))
        object.__setattr__(self, "g", _tuple(self.g))
        object.__setattr__(self, "e", _tuple(self.e))
        if min(self.m) < 1:
            raise ValueError("trial counts must be >= 1")
        if min(self.g) < 0 or (self.e and min(self.e) < 0):
            raise ValueError("trial errors must be >= 0")
        if len(self.g) != len(self.m) or (self.e and len(self.e) != len(self.m)):
            raise ValueError("trial fields must have one entry per level")

    @property
    def levels(self) -> int:
        return len(self.m)


def eval_ghat(model: EstimatorModel, m) -> float:
    """Estimated generalization error at counts ``m`` (reals allowed)."""
    m = np.asarray(m, dtype=float)
    if m.shape != (model.levels,):
        raise ValueError(f"need {model.levels} counts")
    if np.any(m <= 0):
        raise ValueError("counts must be positive")
    if model.kind == "ml2mc_apost":
        return float(np.sum(np.asarray(model.a) / np.sqrt(m)))
    p, q = model.recursion()
    g = 0.0
    for l in range(model.levels):
        g = (p[l] + q[l] * g) / np.sqrt(m[l])
    return float(g)


def level_errors(model: EstimatorModel, m) -> list:
    """``g_1, ..., g_L`` for the nested kinds; per-level terms for ML2MC."""
    m = np.asarray(m, dtype=float)
    if model.kind == "ml2mc_apost":
        return list(np.asarray(model.a) / np.sqrt(m))
    p, q = model.recursion()
    out, g = [], 0.0
    for l in range(model.levels):
        g = (p[l] + q[l] * g) / np.sqrt(m[l])
        out.append(float(g))
    return out


def fit_heuristic_mlft(trial: TrialRecord, costs=()) -> EstimatorModel:
    """Match ``ghat_l = g_l`` at one trial with ``b_l`` set to the measured level gap."""
    L = trial.levels
    if L > 1 and len(trial.e) != L:
        raise ValueError("the MLFT heuristic needs level gaps e_2..e_L")
    a = [trial.g[0] * np.sqrt(trial.m[0])]
    b = [0.0]
    prev = trial.g[0]
    for l in range(1, L):
        bl = trial.e[l]
        denom = bl + prev
        if denom == 0:
            raise DegenerateModelError(f"b_{l + 1} + g_{l} = 0; level {l + 1} cannot be fitted")
        a.append(trial.g[l] * np.sqrt(trial.m[l]) / denom)
        b.append(bl)
        prev = (a[-1] / np.sqrt(trial.m[l])) * (bl + prev)
    return EstimatorModel("mlft_apost", L, a=a, b=b, costs=costs, residual=0.0,
                          provenance={"a": f"heuristic at m={list(trial.m)}", "b": "validation level gaps"})


def fit_heuristic_ml2mc(trial: TrialRecord, costs=()) -> EstimatorModel:
    a = [g * np.sqrt(m) for g, m in zip(trial.g, trial.m)]
    return EstimatorModel("ml2mc_apost", trial.levels, a=a, costs=costs, residual=0.0,
                          provenance={"a": f"heuristic at m={list(trial.m)}"})


def n_coefficients(kind: str, L: int) -> int:
    if kind == "mlft_apost":
        return 2 * L - 1
    if kind == "ml2mc_apost":
        return L
    raise ValueError(f"least squares supports mlft_apost and ml2mc_apost, not {kind}")


def _log_ghat(theta, kind, L, m):
    """``log ghat`` for log-coefficients ``theta``; complex-safe for complex-step derivatives."""
    coef = np.exp(theta)
    m = np.asarray(m, dtype=float)
    if kind == "ml2mc_apost":
        return np.log(np.sum(coef / np.sqrt(m)))
    a, b = coef[:L], coef[L:]
    g = a[0] / np.sqrt(m[0])
    for l in range(1, L):
        g = a[l] / np.sqrt(m[l]) * (b[l - 1] + g)
    return np.log(g)


def fit_least_squares(trials, kind: str = "mlft_apost", starts: int = 8, seed: int = 0, costs=()):
    """Fit coefficients by least squares on ``log g_L - log ghat_L`` over trials.

    Uses a Levenberg-Marquardt solve from several seeded starting points in
    log-coefficient space; derivatives come from the complex step.
    """
    trials = list(trials)
    if not trials:
        raise UnderdeterminedError("no trials")
    L = trials[0].levels
    k = n_coefficients(kind, L)
    distinct = {t.m for t in trials}
    if len(distinct) < k:
        raise UnderdeterminedError(f"{len(distinct)} distinct trials cannot determine {k} coefficients")
    if any(t.levels != L for t in trials):
        raise ValueError("all trials must have the same number of levels")
    gL = np.array([t.g[-1] for t in trials])
    if np.any(gL <= 0):
        raise ValueError("least squares needs positive g_L in every trial")
    ms = [t.m for t in trials]
    target = np.log(gL)

    def resid(theta):
        return np.array([_log_ghat(theta, kind, L, m) for m in ms]) - target

    def jac(theta):
        h = 1e-30
        cols = []
        for i in range(k):
            tc = theta.astype(complex)
            tc[i] += 1j * h
            cols.append(np.array([_log_ghat(tc, kind, L, m).imag / h for m in ms]))
        return np.stack(cols, axis=1)

    rng = np.random.default_rng(seed)
    centre = np.log(np.median(gL * np.sqrt([m[-1] for m in ms])))
    best = None
    for s in range(starts):
        theta0 = np.full(k, centre) + (rng.standard_normal(k) if s else 0.0)
        try:
            with np.errstate(all="ignore"):
                sol = scipy.optimize.least_squares(
                    resid, theta0, jac=jac, method="lm" if len(ms) >= k else "trf",
                    xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000,
                )
        except (ValueError, FloatingPointError):
            continue
        obj = float(np.sum(sol.fun**2))
        if np.isfinite(obj) and (best is None or obj < best[0]):
            best = (obj, sol.x, sol.success)
    if best is None:
        raise DegenerateModelError("least squares failed from every start")
    obj, theta, ok = best
    coef = np.exp(theta)
    prov = {"a": f"least squares over {len(trials)} trials, {starts} starts, seed {seed}"}
    if kind == "ml2mc_apost":
        model = EstimatorModel(kind, L, a=coef, costs=costs, residual=obj, converged=ok, provenance=prov)
    else:
        prov["b"] = prov["a"]
        model = EstimatorModel(kind, L, a=coef[:L], b=np.r_[0.0, coef[L:]], costs=costs,
                               residual=obj, converged=ok, provenance=prov)
    if not ok:
        warnings.warn("least-squares fit did not report convergence; returning the best start")
    return model


# -- text format --------------------------------------------------------------------


def _fmt(vals) -> str:
    return ",".join(repr(float(v)) for v in vals)


def model_to_text(model: EstimatorModel, extra: dict | None = None) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    sec = {"kind": model.kind, "levels": str(model.levels)}
    if model.kind == "mlft_apriori":
        sec.update(R=repr(model.R), c=_fmt(model.c), d=_fmt(model.d))
    else:
        sec["a"] = _fmt(model.a)
        if model.kind == "mlft_apost":
            sec["b"] = _fmt(model.b)
    if model.costs:
        sec["costs"] = _fmt(model.costs)
    sec["residual"] = "" if model.residual is None else repr(model.residual)
    sec["converged"] = str(model.converged).lower()
    cp["estimator"] = sec
    cp["provenance"] = {k: str(v) for k, v in model.provenance.items()}
    if extra:
        cp["extra"] = {k: str(v) for k, v in extra.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def model_from_text(text: str) -> EstimatorModel:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    sec = cp["estimator"]
    kw = {"kind": sec["kind"], "levels": int(sec["levels"])}
    for name in ("a", "b", "c", "d", "costs"):
        if name in sec:
            kw[name] = _floats(sec[name])
    if "R" in sec:
        kw["R"] = float(sec["R"])
    if sec.get("residual"):
        kw["residual"] = float(sec["residual"])
    kw["converged"] = sec.get("converged", "true") == "true"
    if cp.has_section("provenance"):
        kw["provenance"] = dict(cp["provenance"])
    return EstimatorModel(**kw)


def with_costs(model: EstimatorModel, costs) -> EstimatorModel:
    return replace(model, costs=_tuple(costs))


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    if x.size < 2 or np.ptp(x) == 0:
        raise UnderdeterminedError("a slope needs at least two distinct abscissae")
    return float(np.polyfit(x, y, 1)[0])
