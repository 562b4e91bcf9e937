import os
import subprocess
import sys

import numpy as np
import pytest

from svsoftmax import _kernels as K
from svsoftmax._accel import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


def cases(seed, count=100):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n, k = int(rng.integers(1, 20)), int(rng.integers(2, 12))
        cos = rng.uniform(-1, 1, size=(n, k))
        cos[rng.random((n, k)) < 0.1] = 1.0
        yield rng, cos, rng.integers(0, k, size=n)


@needs_numba
@pytest.mark.parametrize("kind", [K.MASK_NONE, K.MASK_PLAIN, K.MASK_MARGIN])
def test_forward_backends_agree(kind):
    for rng, cos, y in cases(kind):
        m = (float(rng.integers(1, 4)), float(rng.uniform(0, 0.4)), float(rng.uniform(0, 0.6)))
        args = (cos, y, float(rng.uniform(1, 64)), float(rng.uniform(1, 1.4)), *m, kind, False, K._NO_FROZEN)
        a = K.forward_nb(*args)
        b = K.forward_np(*args)
        np.testing.assert_array_equal(a[3], b[3])  # mask
        for u, v in zip(a, b):
            np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-15)


@needs_numba
def test_frozen_mask_and_backward_agree():
    for rng, cos, y in cases(7):
        frozen = rng.random(cos.shape) < 0.5
        args = (cos, y, 30.0, 1.2, 1.0, 0.35, 0.0, K.MASK_MARGIN, True, frozen)
        a = K.forward_nb(*args)
        b = K.forward_np(*args)
        np.testing.assert_array_equal(a[3], b[3])
        coef = rng.uniform(0, 1, size=len(y))
        ga = K.backward_nb(a[1], a[3], y, 30.0, 1.2, a[5], coef)
        gb = K.backward_np(a[1], a[3], y, 30.0, 1.2, a[5], coef)
        np.testing.assert_array_equal(ga, gb)


@needs_numba
def test_mask_and_margin_backends_agree():
    grid = np.linspace(-1, 1, 4001)
    for m in [(1.0, 0.0, 0.5), (3.0, 0.1, 0.2), (1.0, 0.35, 0.0)]:
        f_np = K.margin_f_np(grid, *m)
        df_np = K.margin_df_np(grid, *m)
        for c, f, df in zip(grid, f_np, df_np):
            assert K.margin_f_nb(c, *m) == pytest.approx(f, abs=1e-15)
            assert K.margin_df_nb(c, *m) == pytest.approx(df, rel=1e-13)
    for _, cos, y in cases(8):
        ref = np.ascontiguousarray(cos[np.arange(len(y)), y] - 0.1)
        np.testing.assert_array_equal(K.mask_nb(cos, y, ref), K.mask_np(cos, y, ref))


def test_env_flag_selects_numpy():
    code = "from svsoftmax import _accel, _kernels; print(_accel.BACKEND, _kernels._forward is _kernels.forward_np)"
    env = dict(os.environ, SVSOFTMAX_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


@needs_numba
def test_benchmark_script_runs():
    script = os.path.join(os.path.dirname(__file__), "..", "benchmarks", "bench_kernels.py")
    out = subprocess.run([sys.executable, script, "--batch", "8", "--classes", "4", "--repeat", "1"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.splitlines()[0].split()[:3] == ["kernel", "N", "K"]
    assert len(out.stdout.splitlines()) == 3
