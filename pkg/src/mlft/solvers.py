"""Parametric PDE solvers, parameter samplers and sample centering.

Three problems are supported:

* ``nls``: ground state of the 1-D non-linear Schrodinger (Gross-Pitaevskii)
  equation ``-u'' + v u + beta u^3 = E u`` with ``int u^2 = 1``, ``int u > 0``.
* ``burgers``: viscous Burgers' equation advanced from initial value ``v`` to
  a terminal time.
* ``elliptic``: diagonal of the Green function of ``-Laplace + v`` on a 2-D
  periodic grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    IndefiniteOperatorError,
    ResolutionMismatchError,
    SolverDivergenceError,
    StabilityError,
    UnsupportedDimensionError,
)
from .grid import Field, Grid

PROBLEMS = ("nls", "burgers", "elliptic")


@dataclass(frozen=True)
class NlsParams:
    beta: float = 100.0
    tau: float = 1.0
    tol: float = 1e-10
    max_iters: int = 100_000

    def __post_init__(self):
        if self.beta < 0 or self.tau <= 0 or self.tol <= 0:
            raise ValueError("NlsParams requires beta >= 0, tau > 0, tol > 0")


@dataclass(frozen=True)
class NlsPotentialDist:
    k_terms: int = 4
    alpha: float = 0.1
    amp_range: tuple = (-400.0, -200.0)
    omega_range: tuple = (40.0, 80.0)
    inv_sigma_range: tuple = (10.0, 20.0)
    phase_range: tuple = (0.0, 2 * np.pi)

    def __post_init__(self):
        if self.k_terms < 1:
            raise ValueError("k_terms must be >= 1")
        for name in ("amp_range", "omega_range", "inv_sigma_range", "phase_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} must satisfy lo <= hi")


@dataclass(frozen=True)
class BurgersParams:
    kappa: float = 0.005
    t_term: float = 0.1
    dt_factor: float = 10.0
    k_steps: int = 40

    def __post_init__(self):
        if self.kappa < 0 or self.t_term <= 0 or self.dt_factor <= 0:
            raise ValueError("BurgersParams requires kappa >= 0, t_term > 0, dt_factor > 0")
        if self.kappa * self.dt_factor > 0.5:
            raise ValueError("diffusion step unstable: kappa * dt_factor must be <= 1/2")


@dataclass(frozen=True)
class EllipticParams:
    k_terms: int = 6
    c_shift: float = 100.0
    amp_sigma: float = 20.0
    phase_range: tuple = (0.0, 2 * np.pi)

    def __post_init__(self):
        if self.c_shift <= 0:
            raise ValueError("c_shift must be positive")
        if self.amp_sigma < 0:
            raise ValueError("amp_sigma must be non-negative")


def _require_dim(grid: Grid, dim: int):
    if grid.dim != dim:
        raise UnsupportedDimensionError(f"expected a {dim}-D grid, got dim={grid.dim}")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


# -- non-linear Schrodinger ---------------------------------------------------


def periodic_distance(x, c):
    """Signed periodic distance ``x - c`` wrapped into ``[-1/2, 1/2)``."""
    d = x - c
    return d - np.floor(d + 0.5)


def sample_nls_potential(dist: NlsPotentialDist, grid: Grid, seed) -> Field:
    _require_dim(grid, 1)
    rng = _rng(seed)
    k = dist.k_terms
    amp = rng.uniform(*dist.amp_range, size=k)
    omega = rng.uniform(*dist.omega_range, size=k)
    inv_sigma = rng.uniform(*dist.inv_sigma_range, size=k)
    phase = rng.uniform(*dist.phase_range, size=k)
    centre = rng.uniform(0.0, 1.0, size=k)

    x = grid.coords()[:, None]
    d = periodic_distance(x, centre)
    envelope = inv_sigma / np.sqrt(2 * np.pi) * np.exp(-0.5 * (d * inv_sigma) ** 2)
    v = amp * (dist.alpha + np.cos(2 * np.pi * omega * x + phase)) * envelope
    return Field(grid, v.sum(axis=1))


def laplacian_symbol(n: int, dim: int = 1) -> np.ndarray:
    """Eigenvalues of the periodic second-difference ``-Laplace_h`` in FFT order."""
    lam = 4.0 * n**2 * np.sin(np.pi * np.arange(n) / n) ** 2
    if dim == 1:
        return lam
    return lam[:, None] + lam[None, :]


def _neg_laplacian_1d(n: int) -> np.ndarray:
    a = np.zeros((n, n))
    idx = np.arange(n)
    a[idx, idx] = 2.0
    a[idx, (idx + 1) % n] -= 1.0
    a[idx, (idx - 1) % n] -= 1.0
    return a * n**2


def nls_energy(u: np.ndarray, v: np.ndarray, beta: float) -> float:
    """Discrete energy ``h sum(|D u|^2 + v u^2 + beta/2 u^4)``."""
    n = u.shape[0]
    grad = (np.roll(u, -1) - u) * n
    return float(np.sum(grad**2 + v * u**2 + 0.5 * beta * u**4) / n)


def solve_nls(v: Field, p: NlsParams = NlsParams(), energy_log: list | None = None) -> Field:
    """Ground state by the backward-Euler normalized gradient flow.

    Each step solves ``(I + tau (-Laplace_h + v + beta u_n^2 - s)) u* = u_n`` and
    renormalizes. The constant shift ``s = min(v)`` leaves the ground state
    unchanged and keeps the system positive definite for any ``tau``.
    """
    _require_dim(v.grid, 1)
    n = v.grid.n
    h = v.grid.h
    vv = v.values
    shift = min(float(vv.min()), 0.0)
    base = np.eye(n) + p.tau * (_neg_laplacian_1d(n) + np.diag(vv - shift))
    u = np.ones(n)
    change = np.inf
    for _ in range(p.max_iters):
        a = base + p.tau * p.beta * np.diag(u**2)
        u_new = scipy.linalg.solve(a, u, assume_a="pos", check_finite=False)
        u_new /= np.sqrt(h * np.sum(u_new**2))
        if np.sum(u_new) < 0:
            u_new = -u_new
        change = float(np.max(np.abs(u_new - u)))
        u = u_new
        if energy_log is not None:
            energy_log.append(nls_energy(u, vv, p.beta))
        if not np.isfinite(change):
            break
        if change < p.tol:
            return Field(v.grid, u)
    raise SolverDivergenceError(
        f"NLS gradient flow did not converge in {p.max_iters} iterations (last change {change:.3e})",
        residual=change,
    )


# -- viscous Burgers ------------------------------------------------------------


def sample_burgers_initial(k_steps: int, grid: Grid, seed) -> Field:
    _require_dim(grid, 1)
    if k_steps < 1 or grid.n % k_steps:
        raise ResolutionMismatchError(f"{k_steps} steps do not divide n={grid.n}")
    amp = _rng(seed).standard_normal(k_steps)
    return Field(grid, np.repeat(amp, grid.n // k_steps))


def godunov_flux(ul: np.ndarray, ur: np.ndarray) -> np.ndarray:
    """Exact Riemann flux for ``f(u) = u^2 / 2``."""
    f = lambda u: 0.5 * u * u  # noqa: E731
    rarefaction = np.where((ul < 0) & (ur > 0), 0.0, np.minimum(f(ul), f(ur)))
    return np.where(ul <= ur, rarefaction, np.maximum(f(ul), f(ur)))


def godunov_step(u: np.ndarray, dt: float, h: float) -> np.ndarray:
    flux = godunov_flux(u, np.roll(u, -1))  # interface i + 1/2
    return u - dt / h * (flux - np.roll(flux, 1))


def diffusion_step(u: np.ndarray, dt: float, h: float, kappa: float) -> np.ndarray:
    return u + kappa * dt / h**2 * (np.roll(u, -1) - 2 * u + np.roll(u, 1))


def solve_burgers(v: Field, p: BurgersParams = BurgersParams()) -> Field:
    """Lie splitting: a Godunov convection step, then an explicit diffusion step."""
    _require_dim(v.grid, 1)
    h = v.grid.h
    dt_full = p.dt_factor * h * h
    n_steps = max(1, int(np.ceil(p.t_term / dt_full - 1e-9)))
    last_dt = p.t_term - (n_steps - 1) * dt_full
    u = v.values.copy()
    for step in range(n_steps):
        dt = dt_full if step < n_steps - 1 else last_dt
        cfl = np.max(np.abs(u)) * dt / h
        if cfl > 1.0:
            raise StabilityError(
                f"CFL condition violated at step {step}: max|u| dt / h = {cfl:.3f}", step=step
            )
        u = diffusion_step(godunov_step(u, dt, h), dt, h, p.kappa)
    return Field(v.grid, u)


# -- diagonal of inverse --------------------------------------------------------


def sample_elliptic_potential(p: EllipticParams, grid: Grid, seed) -> Field:
    _require_dim(grid, 2)
    rng = _rng(seed)
    k = p.k_terms
    a = rng.normal(0.0, p.amp_sigma, size=k)
    b = rng.normal(0.0, p.amp_sigma, size=k)
    phi = rng.uniform(*p.phase_range, size=k)
    psi = rng.uniform(*p.phase_range, size=k)
    x, y = grid.coords()
    v = np.full(grid.shape, float(p.c_shift))
    for j in range(k):
        freq = 2.0 ** (j + 1) * np.pi
        v += a[j] * np.cos(freq * (x + y) + phi[j])
        v += b[j] * np.cos(freq * (2 * x - y) + psi[j])
    return Field(grid, v)


def elliptic_operator(v: Field) -> np.ndarray:
    """Dense ``-Laplace_h + diag(v)`` with the 5-point periodic stencil."""
    n = v.grid.n
    lap = _neg_laplacian_1d(n)
    eye = np.eye(n)
    return np.kron(lap, eye) + np.kron(eye, lap) + np.diag(v.flat)


def solve_diag_inverse(v: Field) -> Field:
    """Diagonal of the discrete Green function ``(A^{-1})_{ii} / h^2``.

    The ``1/h^2`` factor turns the matrix inverse into the kernel of the
    integral operator; this is the normalization under which a constant
    potential gives the closed form of :func:`diag_inverse_constant`.
    """
    _require_dim(v.grid, 2)
    a = elliptic_operator(v)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteOperatorError("-Laplace + v is not positive definite") from exc
    linv = scipy.linalg.solve_triangular(chol, np.eye(a.shape[0]), lower=True, check_finite=False)
    diag = np.sum(linv**2, axis=0)  # (L^-T L^-1)_ii
    return Field(v.grid, diag.reshape(v.grid.shape) * v.grid.n**2)


def diag_inverse_constant(n: int, c: float) -> float:
    """Green-function diagonal for the constant potential ``c`` on an ``n x n`` grid."""
    s = np.sin(np.arange(1, n + 1) * np.pi / n) ** 2
    return float(np.sum(1.0 / (4.0 * n**2 * (s[:, None] + s[None, :]) + c)))


def center_sample(problem: str, level_n: int, v: Field, u: Field, c_shift: float = 100.0):
    """Problem-specific centering applied to every generated pair."""
    if problem == "nls":
        return v, u - 1.0
    if problem == "burgers":
        return v, u
    if problem == "elliptic":
        return v - c_shift, u - diag_inverse_constant(level_n, c_shift)
    raise ValueError(f"unknown problem {problem!r}")
