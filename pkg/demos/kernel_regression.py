"""The empirical NTK of a small network and the kernel regression it defines.

Builds the Gram matrix on a few random inputs, checks that the kernel
regressor reproduces the training targets, compares the two ways of writing
its RKHS norm, and computes the a priori coefficients c_1 and R.

    python3 demos/kernel_regression.py
"""
import numpy as np

from mlft import net as nnet
from mlft import ntk
from mlft.grid import Grid
from mlft.levels import SampleSet

n = 32
spec = nnet.NetworkSpec(n_input=n, branches=(nnet.Branch(8, 3, 32, 3), nnet.Branch(32, 3, 32, 3)), gamma=1e-2)
net = nnet.build_network(spec, seed=0)
print(f"network with {net.flat().size} parameters on {n} nodes")

rng = np.random.default_rng(1)
m = 4
v = rng.standard_normal((m, n))
u = np.sin(2 * np.pi * np.arange(n) / n) + 0.1 * v

gram = ntk.build_gram(net, v)
eig = np.linalg.eigvalsh(gram.matrix)
print(f"Gram {gram.matrix.shape}, jitter {gram.jitter:g}, eigenvalues in [{eig[0]:.3e}, {eig[-1]:.3e}]")

reg = ntk.KernelRegressor(net, v, u)
err = max(np.linalg.norm(reg.predict(v[i]) - u[i]) / np.linalg.norm(u[i]) for i in range(m))
print(f"max relative misfit at training inputs: {err:.2e}")
print(f"alpha^T G alpha = {reg.rkhs_norm2():.6e}   w^T G^-1 w = {reg.ginv_norm2():.6e}")

q = rng.standard_normal(n)
print(f"network vs kernel prediction at a fresh input: "
      f"{np.linalg.norm(nnet.forward(net, q)):.3e} vs {np.linalg.norm(reg.predict(q)):.3e}")

samples = SampleSet(1, Grid(1, n), v, u, 1, "train")
print(f"c_1 = {ntk.coeff_c1(net, samples):.4e}")
print(f"R   = {ntk.estimate_R(net, v):.4e}")
