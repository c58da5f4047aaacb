"""Empirical neural tangent kernel, stacked Gram matrices and the coefficients
``R``, ``c_l`` and ``d_l`` of the a priori error estimator.

Jacobian rows come from reverse-mode passes seeded with unit output
co-vectors, so ``Theta(v, v') = J(v) J(v')^T`` is exact for the finite
network at its current parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import IllConditionedKernelError, MissingPairError, NumericError
from .net import NetworkState, backward, forward

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
DEFAULT_CAP = 16


class LinearConv:
    """One-channel periodic convolution ``NN(v)_i = sum_w W_w v_{i+w}``.

    A model linear in both input and parameters, with the closed-form
    kernel ``Theta(v, v')_{ij} = sum_w v_{i+w} v'_{j+w}``.
    """

    def __init__(self, weights, n: int):
        self.weights = np.asarray(weights, dtype=np.float64).ravel()
        if self.weights.size % 2 == 0 or self.weights.size > n:
            raise ValueError("window must be odd and no wider than the grid")
        self.n_out = n
        self.out_shape = (n,)
        half = self.weights.size // 2
        self._idx = (np.arange(n)[:, None] + np.arange(-half, half + 1)[None, :]) % n

    def forward(self, v):
        v = np.asarray(v, dtype=np.float64)
        return v[..., self._idx] @ self.weights

    def jacobian(self, v):
        return np.asarray(v, dtype=np.float64)[self._idx]


def _n_out(net) -> int:
    return net.n_out if isinstance(net, LinearConv) else net.spec.n_out


def _out_shape(net) -> tuple:
    return net.out_shape if isinstance(net, LinearConv) else net.spec.out_shape


def _forward(net, v):
    return net.forward(v) if isinstance(net, LinearConv) else forward(net, v)


def jacobian(net: NetworkState, v: np.ndarray) -> np.ndarray:
    """``(n_out, n_params)`` Jacobian of the flattened output at ``v``."""
    v = np.asarray(getattr(v, "values", v), dtype=np.float64)
    if isinstance(net, LinearConv):
        return net.jacobian(v)
    n_out = net.spec.n_out
    _, tape = forward(net, v[None], cache=True)
    cot = np.eye(n_out).reshape((n_out,) + net.spec.out_shape)
    grads = backward(net, tape, cot, per_example=True)
    return np.concatenate([grads[k].reshape(n_out, -1) for k in net.params], axis=1)


def empirical_ntk(net: NetworkState, v, v2) -> np.ndarray:
    """Kernel block ``Theta(v, v2)``, an ``n_out x n_out`` matrix."""
    j1 = jacobian(net, v)
    j2 = j1 if v2 is v else jacobian(net, v2)
    return j1 @ j2.T


@dataclass(frozen=True, eq=False)
class GramMatrix:
    m: int
    n_out: int
    matrix: np.ndarray
    cholesky: np.ndarray
    jitter: float
    jacobians: np.ndarray | None = None

    def solve(self, w: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self.cholesky, True), np.ravel(w), check_finite=False)


def _try_cholesky(a: np.ndarray):
    try:
        chol = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    # a rank-deficient matrix can slip through with round-off sized pivots
    floor = 1e-12 * np.mean(np.diag(a))
    if not np.all(np.isfinite(chol)) or np.min(np.diag(chol)) ** 2 <= floor:
        return None
    return chol


def build_gram(net: NetworkState, params, cap: int = DEFAULT_CAP, ladder=JITTER_LADDER,
               keep_jacobians: bool = False) -> GramMatrix:
    """Stacked Gram matrix of ``Theta`` over the parameter samples ``params``."""
    params = np.asarray(params, dtype=np.float64)
    m = params.shape[0]
    if not 1 <= m <= cap:
        raise ValueError(f"Gram needs 1 <= m <= {cap} samples, got {m}")
    n = _n_out(net)
    jac = np.stack([jacobian(net, params[i]) for i in range(m)])
    g = np.empty((m * n, m * n))
    for i in range(m):
        for j in range(i, m):
            block = jac[i] @ jac[j].T
            g[i * n : (i + 1) * n, j * n : (j + 1) * n] = block
            if j != i:
                g[j * n : (j + 1) * n, i * n : (i + 1) * n] = block.T
    g = 0.5 * (g + g.T)
    scale = np.trace(g) / (m * n)
    for rung in ladder:
        lam = rung * scale
        chol = _try_cholesky(g + lam * np.eye(m * n) if lam else g)
        if chol is not None:
            return GramMatrix(m, n, g, chol, lam, jac if keep_jacobians else None)
    raise IllConditionedKernelError(
        f"Gram matrix of {m} samples is not positive definite even with jitter {ladder[-1]:g} x scale"
    )


def ginv_norm(gram: GramMatrix, w) -> float:
    """``sqrt(w^T G^{-1} w)`` from the Cholesky factor."""
    w = np.ravel(np.asarray(w, dtype=np.float64))
    if w.size != gram.m * gram.n_out:
        raise ValueError(f"vector length {w.size} does not match Gram size {gram.m * gram.n_out}")
    z = scipy.linalg.solve_triangular(gram.cholesky, w, lower=True, check_finite=False)
    return float(np.sqrt(z @ z))


def spectral_norm(theta: np.ndarray, tol: float = 1e-8, max_iters: int = 100_000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    x = np.random.default_rng(seed).standard_normal(theta.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iters):
        y = theta @ x
        lam_new = float(np.linalg.norm(y))
        if lam_new == 0.0:
            return 0.0
        x = y / lam_new
        if abs(lam_new - lam) <= tol * lam_new:
            return lam_new
        lam = lam_new
    raise NumericError(f"power iteration did not reach {tol:g} in {max_iters} steps")


def estimate_R(net: NetworkState, probe, tol: float = 1e-10) -> float:
    """``max_v sqrt(||Theta(v, v)||_2)`` over the probe set.

    A finite probe only bounds the supremum over the parameter distribution
    from below.
    """
    probe = np.asarray(probe, dtype=np.float64)
    if probe.shape[0] == 0:
        raise ValueError("empty probe set")
    best = 0.0
    for v in probe:
        jac = jacobian(net, v)
        best = max(best, np.sqrt(spectral_norm(jac @ jac.T, tol=tol)))
    return float(best)


def _first(samples, cap):
    m = min(len(samples), cap)
    return m, np.asarray(samples.v[:m]), samples


def coeff_c1(net: NetworkState, samples, cap: int = DEFAULT_CAP, return_gram: bool = False):
    """``c_1 = ||u - NN(v)||_{G^{-1}}`` over (at most ``cap``) level-1 samples."""
    m, v, s = _first(samples, cap)
    gram = build_gram(net, v, cap=cap)
    w = np.asarray(s.u[:m]) - _forward(net, v)
    c1 = ginv_norm(gram, w)
    return (c1, gram) if return_gram else c1


def coeff_cl_dl(net: NetworkState, samples, cap: int = DEFAULT_CAP, return_gram: bool = False):
    """``c_l = ||w||_{G^{-1}}`` and ``d_l = m max_i ||(G^{-1} w)_i||_2`` for ``w = u_l - u_{l-1}``."""
    if getattr(samples, "u_prev", None) is None:
        raise MissingPairError("c_l and d_l need samples paired with the previous level")
    m, v, s = _first(samples, cap)
    w = np.asarray(s.u[:m]) - np.asarray(s.u_prev[:m])
    if not np.any(w):
        return (0.0, 0.0, None) if return_gram else (0.0, 0.0)
    gram = build_gram(net, v, cap=cap)
    c = ginv_norm(gram, w)
    z = gram.solve(w).reshape(m, -1)
    d = float(m * np.max(np.linalg.norm(z, axis=1)))
    return (c, d, gram) if return_gram else (c, d)


class KernelRegressor:
    """Kernel ridgeless regression with the empirical NTK around the current network.

    ``predict(v) = NN(v) + sum_m Theta(v, v_m) alpha_m`` with
    ``alpha = G^{-1}(u - NN(v_m))``: the infinitely-long training limit of
    the linearized network.
    """

    def __init__(self, net: NetworkState, v_train, u_train, cap: int = DEFAULT_CAP):
        self.net = net
        v_train = np.asarray(v_train, dtype=np.float64)
        self.gram = build_gram(net, v_train, cap=cap, keep_jacobians=True)
        self.base = _forward(net, v_train)
        self.residual = (np.asarray(u_train, dtype=np.float64) - self.base).reshape(-1)
        self.alpha = self.gram.solve(self.residual)
        jac = self.gram.jacobians
        self._direction = jac.reshape(-1, jac.shape[-1]).T @ self.alpha

    def predict(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        out = _forward(self.net, v).reshape(-1) + jacobian(self.net, v) @ self._direction
        return out.reshape(_out_shape(self.net))

    def rkhs_norm2(self) -> float:
        """``alpha^T G alpha``, the squared RKHS norm of the fitted increment."""
        return float(self.alpha @ self.gram.matrix @ self.alpha)

    def ginv_norm2(self) -> float:
        return ginv_norm(self.gram, self.residual) ** 2
