"""Sample allocation across levels under a data-generation budget.

Minimizes the estimated error ``ghat_L(M_1, ..., M_L)`` subject to
``sum_l M_l t_l <= T``. The nested multi-level estimator expands to
``sum_j w_j / sqrt(prod_{l >= j} M_l)``, which is convex in ``x = log M``.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleBudgetError
from .estimate import EstimatorModel, eval_ghat


@dataclass(frozen=True)
class BudgetSolution:
    m_continuous: tuple
    m_rounded: tuple
    ghat_continuous: float
    ghat_rounded: float
    budget: float
    costs: tuple
    slack: float
    diagnostics: dict = field(default_factory=dict, compare=False)


def _costs(model: EstimatorModel, costs=None) -> np.ndarray:
    t = np.asarray(costs if costs is not None else model.costs, dtype=float)
    if t.shape != (model.levels,):
        raise ValueError("the model carries no per-level costs; pass costs explicitly")
    if np.any(t <= 0):
        raise ValueError("costs must be positive")
    return t


def _check_feasible(t, T):
    if not T >= t.sum():
        raise InfeasibleBudgetError(f"budget {T:g} cannot buy one sample per level (needs {t.sum():g})")


def _safe_ghat(model, m):
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        return np.inf
    return eval_ghat(model, m)


def _repair_and_fill(model, m, t, T):
    """Give back samples until feasible, then greedily buy the best marginal decrease per cost."""
    m = m.copy()
    while m @ t > T + 1e-9 * T:
        # rounding up can overspend; give back the sample whose loss hurts least
        cand = [(_safe_ghat(model, m - np.eye(len(m))[l]), l) for l in range(len(m)) if m[l] > 1]
        m[min(cand)[1]] -= 1
    while True:
        left = T - m @ t
        best, pick = 0.0, None
        g0 = _safe_ghat(model, m)
        for l in range(len(m)):
            if t[l] <= left + 1e-9 * T:
                gain = (g0 - _safe_ghat(model, m + np.eye(len(m))[l])) / t[l]
                if gain > best:
                    best, pick = gain, l
        if pick is None:
            break
        m[pick] += 1
    return m


def round_counts(model: EstimatorModel, m_cont, t, T):
    """Best of every floor/ceil pattern (at least one sample per level), each repaired and greedily filled."""
    m_cont = np.asarray(m_cont, dtype=float)
    lo = np.maximum(np.floor(m_cont + 1e-9), 1.0)
    hi = np.maximum(np.ceil(m_cont - 1e-9), 1.0)
    best = None
    for pattern in itertools.product((0, 1), repeat=len(m_cont)):
        start = np.where(np.array(pattern, dtype=bool), hi, lo)
        m = _repair_and_fill(model, start, t, T)
        val = _safe_ghat(model, m)
        if best is None or val < best[0]:
            best = (val, m)
    return tuple(int(x) for x in best[1])


def _solution(model, m_cont, t, T, diag):
    m_round = round_counts(model, m_cont, t, T)
    return BudgetSolution(
        m_continuous=tuple(float(x) for x in m_cont),
        m_rounded=m_round,
        ghat_continuous=_safe_ghat(model, m_cont),
        ghat_rounded=_safe_ghat(model, m_round),
        budget=float(T),
        costs=tuple(float(x) for x in t),
        slack=float(T - np.dot(m_round, t)),
        diagnostics=diag,
    )


def term_weights(model: EstimatorModel) -> np.ndarray:
    """``w_j = p_j prod_{l > j} q_l`` of the expanded nested estimator."""
    p, q = model.recursion()
    L = model.levels
    return np.array([p[j] * np.prod(q[j + 1 :]) for j in range(L)])


def _inner_newton(w, t, lam, x, tol=1e-13, max_iters=200):
    """Minimize ``sum_j w_j exp(-S_j / 2) + lam sum t e^x`` over ``x >= 0`` (projected Newton)."""
    L = len(w)
    tri = np.tril(np.ones((L, L)))  # tri[l, j] = 1 if j <= l

    def parts(x):
        s = np.cumsum(x[::-1])[::-1]  # S_j = sum_{k >= j} x_k
        e = w * np.exp(-0.5 * s)
        ex = lam * t * np.exp(x)
        val = e.sum() + ex.sum()
        grad = -0.5 * tri @ e + ex
        hess = 0.25 * np.array([[e[: min(i, k) + 1].sum() for k in range(L)] for i in range(L)]) + np.diag(ex)
        return val, grad, hess

    it = 0
    for it in range(max_iters):
        val, grad, hess = parts(x)
        active = (x <= 0) & (grad > 0)
        free = ~active
        pg = np.where(free, grad, 0.0)
        if np.max(np.abs(pg)) <= tol * max(1.0, val):
            break
        step = np.zeros(L)
        step[free] = -np.linalg.solve(hess[np.ix_(free, free)], grad[free])
        alpha = 1.0
        while alpha > 1e-12:
            x_new = np.maximum(x + alpha * step, 0.0)
            if parts(x_new)[0] <= val + 1e-4 * grad @ (x_new - x):
                break
            alpha *= 0.5
        if np.max(np.abs(x_new - x)) < 1e-15:
            x = x_new
            break
        x = x_new
    return x, it


def optimize_mlft(model: EstimatorModel, T: float, costs=None) -> BudgetSolution:
    """Convex allocation for the nested estimators (``mlft_apost`` / ``mlft_apriori``)."""
    if model.kind == "ml2mc_apost":
        raise ValueError("use optimize_ml2mc for ML2MC models")
    t = _costs(model, costs)
    _check_feasible(t, T)
    L = model.levels
    if L == 1:
        return _solution(model, np.array([T / t[0]]), t, T, {"iterations": 0, "multiplier": 0.0})
    w = term_weights(model)
    if not np.any(w > 0):
        raise ValueError("estimator is identically zero; nothing to optimize")

    def spend(lam, x0):
        x, its = _inner_newton(w, t, lam, x0)
        return x, float(t @ np.exp(x)), its

    x = np.log(np.maximum(T / (L * t), 1.0))
    lo, hi = 1e-300, 1.0
    x_hi, cost_hi, _ = spend(hi, x)
    while cost_hi > T:
        hi *= 16.0
        x_hi, cost_hi, _ = spend(hi, x_hi)
    x_lo = x_hi
    total_its = 0
    # bisection on log(lambda): spending decreases as the multiplier grows
    for k in range(400):
        mid = np.sqrt(lo * hi) if lo > 1e-300 else hi * 1e-3
        x_mid, cost, its = spend(mid, x_lo)
        total_its += its
        if cost > T:
            lo, x_lo = mid, x_mid
        else:
            hi, x_hi = mid, x_mid
            if abs(cost - T) <= 1e-12 * T:
                break
        if hi / lo - 1 < 1e-15:
            break
    x = x_hi
    m_cont = np.exp(x)
    # close the remaining sliver of budget exactly on the free coordinates
    free = m_cont > 1.0 + 1e-12
    if np.any(free):
        extra = T - t @ m_cont
        m_cont[free] *= 1 + extra / (t[free] @ m_cont[free])
    return _solution(model, m_cont, t, T, {"iterations": total_its, "bisections": k + 1, "multiplier": hi})


def optimize_ml2mc(model: EstimatorModel, T: float, costs=None) -> BudgetSolution:
    """Closed form ``M_l ∝ (a_l / t_l)^{2/3}`` scaled to spend the whole budget."""
    if model.kind != "ml2mc_apost":
        raise ValueError("optimize_ml2mc needs an ml2mc_apost model")
    t = _costs(model, costs)
    _check_feasible(t, T)
    a = np.asarray(model.a)
    base = (a / t) ** (2.0 / 3.0)
    if not np.any(base > 0):
        raise ValueError("all coefficients vanish")
    m_cont = T * base / (t @ base)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(m_cont > 0, a * m_cont**-1.5 / (2 * t), np.nan)
    return _solution(model, m_cont, t, T, {"iterations": 0, "multiplier": float(np.nanmax(lam))})


def marginal_gains(model: EstimatorModel, m) -> np.ndarray:
    """``-d ghat / d M_l`` at real counts ``m``."""
    m = np.asarray(m, dtype=float)
    if model.kind == "ml2mc_apost":
        return np.asarray(model.a) * m**-1.5 / 2
    w = term_weights(model)
    terms = w * np.exp(-0.5 * np.cumsum(np.log(m)[::-1])[::-1])  # w_j prod_{k >= j} M_k^{-1/2}
    return np.cumsum(terms) / (2 * m)


def kkt_residual(model: EstimatorModel, m, costs=None) -> float:
    """Relative spread of ``(-d ghat / d M_l) / t_l`` over levels with ``M_l > 1`` (0 at a KKT point)."""
    t = _costs(model, costs)
    m = np.asarray(m, dtype=float)
    lam = marginal_gains(model, m) / t
    free = m > 1.0 + 1e-9
    if not np.any(free):
        return 0.0
    top = lam[free].max()
    # a level pinned at one must not want more samples than the free ones
    pinned = float(max(0.0, (lam[~free].max() - top) / top)) if np.any(~free) else 0.0
    return max(float((top - lam[free].min()) / top), pinned)


def _axis(top: int, density: int | None):
    if top < 1:
        return np.array([], dtype=int)
    if density is None or top <= density:
        return np.arange(1, top + 1)
    lin = np.linspace(1, top, density // 2)
    geo = np.geomspace(1, top, density - density // 2)
    return np.unique(np.round(np.r_[lin, geo]).astype(int))


def optimize_bruteforce(model: EstimatorModel, T: float, grid_density: int | None = None, costs=None):
    """Exhaustive search over integer counts (the last level takes the remaining budget)."""
    t = _costs(model, costs)
    L = model.levels
    if L > 3:
        raise ValueError("brute force is limited to L <= 3")
    _check_feasible(t, T)
    tops = [int(np.floor((T - (t.sum() - t[l])) / t[l] + 1e-9)) for l in range(L - 1)]
    axes = [_axis(top, grid_density) for top in tops]
    head = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, L - 1)
    last = np.floor((T - head @ t[: L - 1]) / t[-1] + 1e-9)
    cand = np.column_stack([head, last])[last >= 1]
    if cand.shape[0] == 0:
        raise InfeasibleBudgetError("no integer allocation fits the budget")
    vals = _ghat_rows(model, cand)
    i = int(np.argmin(vals))
    m, val = cand[i], float(vals[i])
    mt = tuple(int(x) for x in m)
    return BudgetSolution(tuple(map(float, m)), mt, val, val, float(T), tuple(map(float, t)),
                          float(T - m @ t), {"grid_density": grid_density, "evaluated": int(cand.shape[0])})


def _ghat_rows(model: EstimatorModel, m: np.ndarray) -> np.ndarray:
    """``eval_ghat`` over the rows of ``m``."""
    root = np.sqrt(m)
    if model.kind == "ml2mc_apost":
        return (np.asarray(model.a) / root).sum(axis=1)
    p, q = model.recursion()
    g = np.zeros(m.shape[0])
    for l in range(model.levels):
        g = (p[l] + q[l] * g) / root[:, l]
    return g


def ratio_to_counts(r: float, T: float, t, L: int = 2) -> tuple:
    """Counts for a two-level split with coarse-to-total budget ratio ``r``."""
    if L != 2:
        raise ValueError("the ratio parameterization is defined for two levels")
    if not 0 <= r <= 1:
        raise ValueError("r must lie in [0, 1]")
    t1, t2 = float(t[0]), float(t[1])
    return int(np.floor(r * T / t1 + 1e-9)), int(np.floor((1 - r) * T / t2 + 1e-9))


def budget_csv(sol: BudgetSolution) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["level", "t_l", "M_continuous", "M_rounded", "cost_share", "ghat_continuous", "ghat_rounded"])
    spent = float(np.dot(sol.m_rounded, sol.costs))
    for l, (tl, mc, mr) in enumerate(zip(sol.costs, sol.m_continuous, sol.m_rounded), start=1):
        wr.writerow([l, repr(tl), repr(mc), mr, repr(mr * tl / spent), repr(sol.ghat_continuous),
                     repr(sol.ghat_rounded)])
    return buf.getvalue()
