"""Slow, independent reference computations used to check the main modules.

Nothing here imports the implementations it checks; each routine is a
direct transcription of a definition.
"""
from __future__ import annotations

import numpy as np

MAX_SIZE = 4096


def dense_operator_matrix(op, shape, check_linear: bool = True, seed: int = 0) -> np.ndarray:
    """Materialize a grid operator column by column from unit impulses.

    ``op`` maps an array of ``shape`` to an array. With ``check_linear`` a
    random input is pushed through both the operator and the matrix; a
    mismatch means the operator is not linear.
    """
    size = int(np.prod(shape))
    if size > MAX_SIZE:
        raise ValueError(f"operator size {size} exceeds oracle cap {MAX_SIZE}")
    cols = []
    for j in range(size):
        e = np.zeros(size)
        e[j] = 1.0
        cols.append(np.asarray(op(e.reshape(shape)), dtype=float).ravel())
    mat = np.stack(cols, axis=1)
    if check_linear:
        x = np.random.default_rng(seed).standard_normal(size)
        direct = np.asarray(op(x.reshape(shape)), dtype=float).ravel()
        if not np.allclose(direct, mat @ x, rtol=1e-9, atol=1e-9 * (1 + np.abs(direct).max())):
            raise ValueError("operator is not linear")
    return mat


def dft_lowpass(values: np.ndarray, n_coarse: int) -> np.ndarray:
    """Fourier restriction by explicit DFT sums (1-D), modes ``|k| < n_coarse / 2``."""
    n = values.shape[0]
    x = np.arange(n)
    kmax = (n_coarse - 1) // 2
    out = np.zeros(n_coarse)
    xc = np.arange(n_coarse) * (n // n_coarse)
    for k in range(-kmax, kmax + 1):
        coef = np.sum(values * np.exp(-2j * np.pi * k * x / n)) / n
        out += np.real(coef * np.exp(2j * np.pi * k * xc / n))
    return out


def neg_laplacian_periodic(n: int, dim: int = 1) -> np.ndarray:
    """Dense ``-Laplace_h`` on ``n`` (or ``n x n``) periodic nodes built entry by entry."""
    size = n**dim
    a = np.zeros((size, size))
    h2 = float(n * n)
    if dim == 1:
        for i in range(n):
            a[i, i] += 2 * h2
            a[i, (i + 1) % n] -= h2
            a[i, (i - 1) % n] -= h2
        return a
    for i in range(n):
        for j in range(n):
            p = i * n + j
            a[p, p] += 4 * h2
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a[p, ((i + di) % n) * n + (j + dj) % n] -= h2
    return a


def dense_green_diagonal(v: np.ndarray) -> np.ndarray:
    """``n^2 diag((-Laplace_h + diag v)^{-1})`` via an explicit inverse."""
    n = v.shape[0]
    a = neg_laplacian_periodic(n, 2) + np.diag(np.ravel(v))
    return np.diag(np.linalg.inv(a)).reshape(n, n) * n * n


def dense_eig_ground_state(v: np.ndarray, beta: float = 0.0, tol: float = 1e-13, max_iters: int = 10000):
    """Principal eigenvector of ``-Laplace_h + diag v`` by shifted inverse power iteration.

    Only ``beta = 0`` is supported; the result is normalized to ``h sum u^2 = 1``
    with positive mean.
    """
    v = np.asarray(v, dtype=float)
    if beta != 0:
        raise ValueError("the eigen oracle handles the linear case only")
    n = v.shape[0]
    if v.ndim != 1 or n > 64:
        raise ValueError("dense_eig_ground_state needs a 1-D grid with n <= 64")
    a = neg_laplacian_periodic(n, 1) + np.diag(v)
    # Gershgorin lower bound gives a shift below the spectrum
    shift = np.min(np.diag(a) - (np.sum(np.abs(a), axis=1) - np.abs(np.diag(a)))) - 1.0
    inv = np.linalg.inv(a - shift * np.eye(n))
    x = np.ones(n)
    lam_old = np.inf
    for _ in range(max_iters):
        y = inv @ x
        y /= np.linalg.norm(y)
        lam = y @ a @ y
        if np.linalg.norm(y - x) < tol or abs(lam - lam_old) < tol * max(1.0, abs(lam)) and np.linalg.norm(y - x) < 1e-10:
            x = y
            break
        x, lam_old = y, lam
    else:
        raise RuntimeError("inverse power iteration did not converge")
    if x.mean() < 0:
        x = -x
    return x / np.sqrt(np.sum(x**2) / n)


def green_constant_series(n: int, c: float) -> float:
    """Green-function diagonal for constant ``c`` from the explicit eigen-decomposition."""
    lap = neg_laplacian_periodic(n, 2)
    w = np.linalg.eigvalsh(lap)
    return float(np.sum(1.0 / (w + c)))


def linear_conv_ntk(v: np.ndarray, v2: np.ndarray, window: int) -> np.ndarray:
    """NTK of ``NN(v)_i = sum_w W_w v_{i+w}`` (periodic) by direct summation."""
    n = v.shape[0]
    half = window // 2
    theta = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            s = 0.0
            for w in range(-half, half + 1):
                s += v[(i + w) % n] * v2[(j + w) % n]
            theta[i, j] = s
    return theta


def kernel_ridgeless_predict(gram: np.ndarray, cross_blocks, targets, base_outputs, base_query):
    """Kernel regression increment ``NN0(v) + sum_m Theta(v, v_m) alpha_m``.

    ``gram`` is the dense stacked Gram matrix, ``cross_blocks[m]`` is
    ``Theta(v, v_m)``, ``targets`` and ``base_outputs`` are stacked per sample.
    """
    w = np.ravel(targets) - np.ravel(base_outputs)
    alpha = np.linalg.solve(gram, w)
    n = cross_blocks[0].shape[1]
    pred = np.array(base_query, dtype=float).ravel().copy()
    for m, block in enumerate(cross_blocks):
        pred += block @ alpha[m * n : (m + 1) * n]
    return pred


def linear_model_gradient_flow_limit(x, y, theta0, jac):
    """Infinite-time limit of gradient flow for a model linear in its parameters.

    For ``f(x) = f0(x) + J (theta - theta0)`` trained on squared loss the
    flow converges to ``theta0 + J^T (J J^T)^{-1} (y - f0)``; this solves the
    linear ODE in closed form through its eigen-decomposition instead.
    """
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    r0 = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    k = jac @ jac.T
    w, q = np.linalg.eigh(k)
    keep = w > 1e-14 * w.max()
    # residual decays as exp(-t K); only the kernel null-space part survives
    coef = q.T @ r0
    delta = jac.T @ (q[:, keep] @ (coef[keep] / w[keep]))
    return np.asarray(theta0, dtype=float) + delta


def dense_ginv_norm(gram: np.ndarray, w: np.ndarray) -> float:
    return float(np.sqrt(w @ np.linalg.inv(gram) @ w))


def dense_spectral_norm(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (mat + mat.T)))))


def grid_search_allocation(ghat, costs, budget, max_counts=None):
    """Exhaustive integer search over allocations with ``sum M_l t_l <= T`` and ``M_l >= 1``.

    The last level takes all remaining budget (``ghat`` decreases in every count).
    """
    costs = list(map(float, costs))
    best = (np.inf, None)

    def rec(prefix, spent):
        nonlocal best
        lvl = len(prefix)
        if lvl == len(costs) - 1:
            m_last = int(np.floor((budget - spent) / costs[-1] + 1e-9))
            if m_last >= 1:
                m = prefix + [m_last]
                val = ghat(m)
                if val < best[0]:
                    best = (val, m)
            return
        rest = sum(costs[lvl + 1 :])
        top = int(np.floor((budget - spent - rest) / costs[lvl] + 1e-9))
        if max_counts is not None:
            top = min(top, max_counts)
        for k in range(1, top + 1):
            rec(prefix + [k], spent + k * costs[lvl])

    rec([], 0.0)
    return best
