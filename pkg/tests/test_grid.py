import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mlft.errors import ResolutionMismatchError, TooCoarseError, UnsupportedDimensionError
from mlft.grid import Field, Grid, constant, fourier_prolong, grid_l2, interpolate, restrict, vec2
from mlft.oracle import dense_operator_matrix, dft_lowpass

finite = st.floats(-1e3, 1e3, allow_nan=False)


def field1(n, values):
    return Field(Grid(1, n), np.asarray(values, dtype=float))


def test_grid_basics():
    g = Grid(2, 8)
    assert g.step * g.n == 1
    assert g.size == 64 and g.shape == (8, 8)
    with pytest.raises(UnsupportedDimensionError):
        Grid(3, 4)


def test_field_rejects_nonfinite():
    with pytest.raises(ValueError):
        field1(4, [0, np.nan, 0, 0])


@pytest.mark.parametrize("kind", ["fourier", "average"])
def test_restrict_constant(kind):
    out = restrict(constant(Grid(1, 64), 2.5), kind, 8)
    assert out.grid == Grid(1, 8)
    np.testing.assert_allclose(out.values, 2.5, atol=1e-13)


def test_restrict_low_mode_exact():
    x = np.arange(64) / 64
    out = restrict(field1(64, np.cos(2 * np.pi * x)), "fourier", 8)
    assert np.max(np.abs(out.values - np.cos(2 * np.pi * np.arange(8) / 8))) < 1e-12


def test_restrict_removes_high_frequency():
    x = np.arange(320) / 320
    out = restrict(field1(320, np.cos(2 * np.pi * 60 * x)), "fourier", 40)
    modes = np.fft.fft(out.values)
    assert np.max(np.abs(modes)) < 1e-9
    np.testing.assert_allclose(out.values, dft_lowpass(np.cos(2 * np.pi * 60 * x), 40), atol=1e-12)


@given(arrays(float, 32, elements=finite))
def test_fourier_restrict_matches_dft_oracle(v):
    out = restrict(field1(32, v), "fourier", 8)
    np.testing.assert_allclose(out.values, dft_lowpass(v, 8), atol=1e-9 * (1 + np.abs(v).max()))


def test_restrict_errors():
    with pytest.raises(ResolutionMismatchError):
        restrict(constant(Grid(1, 64), 1.0), "fourier", 12)
    with pytest.raises(TooCoarseError):
        restrict(constant(Grid(1, 64), 1.0), "average", 2)
    with pytest.raises(ResolutionMismatchError):
        interpolate(constant(Grid(1, 6), 1.0), "linear", 16)


@pytest.mark.parametrize("kind", ["linear", "cubic"])
@pytest.mark.parametrize("dim", [1, 2])
def test_interpolate_constant(kind, dim):
    out = interpolate(constant(Grid(dim, 8), -1.5), kind, 64)
    np.testing.assert_allclose(out.values, -1.5, atol=1e-13)


def test_interpolate_linear_midpoints():
    out = interpolate(field1(4, [0, 1, 0, 1]), "linear", 8)
    np.testing.assert_allclose(out.values, [0, 0.5, 1, 0.5, 0, 0.5, 1, 0.5], atol=1e-15)


def test_interpolate_cubic_smooth():
    xc, xf = np.arange(16) / 16, np.arange(64) / 64
    out = interpolate(field1(16, xc * (1 - xc)), "cubic", 64)
    # stay away from the derivative kink of the periodic extension at x = 0
    inner = (xf > 2 / 16) & (xf < 14 / 16)
    assert np.max(np.abs(out.values - xf * (1 - xf))[inner]) < 1e-3


@pytest.mark.parametrize("kind", ["linear", "cubic"])
def test_interpolation_reproduces_coarse_nodes(kind):
    v = np.random.default_rng(0).standard_normal((8, 8))
    out = interpolate(Field(Grid(2, 8), v), kind, 32)
    np.testing.assert_allclose(out.values[::4, ::4], v, atol=1e-14)


@given(arrays(float, 16, elements=finite), arrays(float, 16, elements=finite), finite, finite)
def test_transfer_linearity(f, g, a, b):
    for op in (lambda x: restrict(field1(16, x), "fourier", 4).values,
               lambda x: restrict(field1(16, x), "average", 4).values,
               lambda x: interpolate(field1(16, x), "linear", 32).values,
               lambda x: interpolate(field1(16, x), "cubic", 32).values):
        lhs = op(a * f + b * g)
        rhs = a * op(f) + b * op(g)
        scale = 1 + np.abs(a * f).max() + np.abs(b * g).max()
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_average_after_linear_is_fixed_stencil():
    # interpolate linearly to 2n and average back: a circulant with stencil (1/8, 3/4, 1/8)
    n = 8
    mat = dense_operator_matrix(
        lambda x: restrict(interpolate(field1(n, x), "linear", 2 * n), "average", n).values, (n,)
    )
    expect = np.zeros((n, n))
    for i in range(n):
        expect[i, i] = 0.75
        expect[i, (i - 1) % n] = expect[i, (i + 1) % n] = 0.125
    np.testing.assert_allclose(mat, expect, atol=1e-12)


def test_fourier_projection_idempotent():
    proj = dense_operator_matrix(lambda x: fourier_prolong(restrict(field1(32, x), "fourier", 8), 32).values, (32,))
    np.testing.assert_allclose(proj @ proj, proj, atol=1e-12)
    np.testing.assert_allclose(proj, proj.T, atol=1e-12)
    pinv = np.linalg.pinv(proj)
    np.testing.assert_allclose(proj @ pinv @ proj, proj, atol=1e-10)


def test_norms():
    one = constant(Grid(1, 10), 1.0)
    assert grid_l2(one) == pytest.approx(1.0, abs=1e-14)
    assert vec2(one) == pytest.approx(np.sqrt(10), abs=1e-14)
    f = field1(2, [3, 4])
    assert vec2(f) == pytest.approx(5.0)
    assert grid_l2(f) == pytest.approx(5 / np.sqrt(2))
    z = constant(Grid(2, 4), 0.0)
    assert vec2(z) == 0 and grid_l2(z) == 0


@given(arrays(float, (4, 4), elements=finite))
def test_norm_relation(v):
    f = Field(Grid(2, 4), v)
    assert abs(grid_l2(f) ** 2 - f.grid.h**2 * vec2(f) ** 2) <= 1e-14 * (1 + vec2(f) ** 2)
