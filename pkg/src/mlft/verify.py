"""Fast invariant checks behind ``mlft verify``. Each check returns ``(passed, detail)``."""
from __future__ import annotations

import numpy as np

from . import budget as bud
from . import estimate as est
from . import net as nnet
from . import ntk, solvers
from .grid import Field, Grid, fourier_prolong, restrict


def check_nls_constant():
    u = solvers.solve_nls(Field(Grid(1, 32), np.zeros(32)))
    err = float(np.max(np.abs(u.values - 1.0)))
    return err <= 1e-8, f"max |u - 1| = {err:.2e}"


def check_burgers_invariants():
    g = Grid(1, 64)
    const = solvers.solve_burgers(Field(g, np.full(64, 0.3)))
    v = solvers.sample_burgers_initial(8, g, 3)
    u = solvers.solve_burgers(v)
    fix = float(np.max(np.abs(const.values - 0.3)))
    mass = abs(float(u.values.sum() - v.values.sum())) * g.h
    return fix == 0.0 and mass <= 1e-12, f"fixed point {fix:.1e}, mass drift {mass:.1e}"


def check_elliptic_constant():
    worst = 0.0
    for n in (2, 4, 8):
        d = solvers.solve_diag_inverse(Field(Grid(2, n), np.full((n, n), 100.0)))
        worst = max(worst, float(np.max(np.abs(d.values - solvers.diag_inverse_constant(n, 100.0)))))
    return worst <= 1e-10, f"max deviation {worst:.1e}"


def check_fourier_roundtrip():
    rng = np.random.default_rng(0)
    # band-limited: the coarse Nyquist mode is dropped by design
    f = restrict(Field(Grid(1, 32), rng.standard_normal(32)), "fourier", 16)
    err = float(np.max(np.abs(restrict(fourier_prolong(f, 64), "fourier", 16).values - f.values)))
    return err <= 1e-12, f"restrict(prolong(f)) - f = {err:.1e}"


def _tiny_net(seed=0):
    spec = nnet.NetworkSpec(dim=1, n_input=16, branches=(nnet.Branch(4, 3, 4, 3), nnet.Branch(8, 3, 4, 3)),
                            transfer_window=3, gamma=1.0)
    return nnet.build_network(spec, seed)


def check_gradient():
    net = _tiny_net()
    rng = np.random.default_rng(1)
    v, u = rng.standard_normal((3, 16)), rng.standard_normal((3, 16))
    _, grads = nnet.loss_and_grads(net, v, u)
    flat, gflat = net.flat(), np.concatenate([grads[k].ravel() for k in net.params])
    worst = 0.0
    for i in rng.choice(flat.size, 10, replace=False):
        eps = 1e-6 * max(1.0, abs(flat[i]))
        vals = []
        for s in (1, -1):
            x = flat.copy()
            x[i] += s * eps
            trial = net.copy()
            trial.set_flat(x)
            vals.append(nnet.loss_and_grads(trial, v, u)[0])
        fd = (vals[0] - vals[1]) / (2 * eps)
        worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8))
    return worst < 1e-5, f"max relative error {worst:.1e}"


def check_gram_symmetry():
    net = _tiny_net()
    v = np.random.default_rng(2).standard_normal((4, 16))
    gram = ntk.build_gram(net, v)
    asym = float(np.max(np.abs(gram.matrix - gram.matrix.T)))
    scale = float(np.max(np.abs(gram.matrix)))
    return asym <= 1e-10 * scale, f"asymmetry {asym:.1e} at scale {scale:.2e}"


def check_budget_bruteforce():
    model = est.EstimatorModel("mlft_apost", 2, a=(3.0, 0.8), b=(0.0, 0.2), costs=(1.0, 16.0))
    sol = bud.optimize_mlft(model, 512.0)
    brute = bud.optimize_bruteforce(model, 512.0)
    rel = sol.ghat_rounded / brute.ghat_rounded - 1
    return rel <= 0.01, f"convex {sol.ghat_rounded:.6g} vs grid {brute.ghat_rounded:.6g}"


CHECKS = [
    ("nls_constant_potential", check_nls_constant),
    ("burgers_fixed_point_and_mass", check_burgers_invariants),
    ("elliptic_constant_potential", check_elliptic_constant),
    ("fourier_transfer_roundtrip", check_fourier_roundtrip),
    ("backprop_vs_finite_differences", check_gradient),
    ("gram_symmetry", check_gram_symmetry),
    ("budget_vs_bruteforce", check_budget_bruteforce),
]


def run_checks() -> list:
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed command
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
