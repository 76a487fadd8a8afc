import importlib

import numpy as np
import pytest

from nematiq import _kernels_py as ref
from nematiq import kernels


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_python_switch(monkeypatch):
    monkeypatch.setenv("NEMATIQ_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("NEMATIQ_PURE_PYTHON")
        importlib.reload(kernels)


@pytest.fixture
def arrays():
    r = np.random.default_rng(5)
    return r.standard_normal((4, 3, 12, 10)), r.standard_normal((4, 3, 12, 10)), r.standard_normal((4, 3, 2, 12, 10))


def test_cross_matches_reference(arrays):
    a, b, _ = arrays
    assert np.allclose(kernels.cross(a, b), np.cross(a, b, axis=-3), atol=1e-14)


def test_poly_matches_reference(arrays):
    a, _, _ = arrays
    c = (1.0, -0.5, 0.25)
    r = (a * a).sum(axis=-3)
    assert np.allclose(kernels.poly_eval(r, c), c[0] + c[1] * r + c[2] * r * r, rtol=1e-14)
    assert np.allclose(kernels.poly_f(a, c), ref.poly_f(a, c), rtol=1e-14)


def test_advect_matches_reference(arrays):
    a, _, g = arrays
    u = a[:, :2]
    assert np.allclose(kernels.advect(u, g), ref.advect(u, g), rtol=1e-14)
    expected = u[:, 0, None] * g[:, :, 0] + u[:, 1, None] * g[:, :, 1]
    assert np.allclose(kernels.advect(u, g), expected, rtol=1e-14)


def test_broadcast_readonly_inputs():
    a = np.broadcast_to(np.arange(3.0)[:, None, None], (3, 4, 4))
    b = np.broadcast_to(np.array([0.0, 0.0, 1.0])[:, None, None], (3, 4, 4))
    out = kernels.cross(a, b)
    assert np.allclose(out[:, 0, 0], [1.0, 0.0, 0.0])
