import os
import subprocess
import sys

import numpy as np
import pytest

from seqforge import _backend, _kernels_py

compiled = _backend.BACKENDS.get("compiled")
needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def test_python_backend_always_available():
    assert "python" in _backend.BACKENDS


def test_bad_backend_env_rejected():
    env = dict(os.environ, SEQFORGE_BACKEND="fortran")
    r = subprocess.run([sys.executable, "-c", "import seqforge"], env=env, capture_output=True, text=True)
    assert r.returncode != 0 and "SEQFORGE_BACKEND" in r.stderr


def test_env_selects_python_backend():
    env = dict(os.environ, SEQFORGE_BACKEND="python")
    r = subprocess.run([sys.executable, "-c", "import seqforge; print(seqforge.BACKEND)"], env=env,
                       capture_output=True, text=True)
    assert r.stdout.strip() == "python"


@needs_ext
@pytest.mark.parametrize("kind,c", [(0, (-1.0, 900.0, -5.0)), (1, (0.5, -1.2e-3, 1.5e-7))])
def test_synth_parity_bit_exact(rng, kind, c):
    n = 10_000
    rho = rng.uniform(0.1, 1.2, n).astype(np.float32)
    t1 = rng.uniform(300, 4000, n).astype(np.float32)
    t2 = rng.uniform(40, 600, n).astype(np.float32)
    sel = (rng.random(n) > 0.2).astype(np.uint8)
    a, ma = compiled.synth_loglinear(rho, t1, t2, sel, kind, *c)
    b, mb = _kernels_py.synth_loglinear(rho, t1, t2, sel, kind, *c)
    assert a.tobytes() == b.tobytes()
    assert ma == mb


@needs_ext
def test_synth_empty_selection():
    z = np.zeros(4, np.float32)
    for k in (compiled, _kernels_py):
        out, m = k.synth_loglinear(z + 1, z + 1, z + 1, np.zeros(4, np.uint8), 0, 0.0, 0.0, 0.0)
        assert not out.any() and m == -np.inf


@needs_ext
def test_em_pass_parity(rng):
    x = rng.normal(50, 20, 50_000)
    args = (np.array([20.0, 50.0, 90.0]), np.array([30.0, 60.0, 40.0]), np.array([0.2, 0.5, 0.3]))
    for a, b in zip(compiled.em_pass(x, *args), _kernels_py.em_pass(x, *args)):
        assert np.allclose(a, b, rtol=1e-11, atol=1e-9)


@needs_ext
def test_responsibilities_parity(rng):
    x = rng.normal(50, 20, 5000)
    args = ((20.0, 50.0, 90.0), (30.0, 60.0, 40.0), (0.2, 0.5, 0.3))
    assert np.allclose(compiled.responsibilities(x, *args), _kernels_py.responsibilities(x, *args), rtol=1e-13)


@needs_ext
def test_fuse_accumulate_parity(rng):
    outs = []
    for k in (compiled, _kernels_py):
        acc = np.zeros((9, 9, 9, 3))
        cnt = np.zeros((9, 9, 9), np.int64)
        r = np.random.default_rng(1)
        for _ in range(5):
            o = r.integers(0, 5, 3)
            k.fuse_accumulate(acc, cnt, int(o[0]), int(o[1]), int(o[2]), r.random((4, 4, 4, 3)).astype(np.float32))
        outs.append((acc, cnt))
    assert np.array_equal(outs[0][0], outs[1][0]) and np.array_equal(outs[0][1], outs[1][1])
