import os
import subprocess
import sys

import numpy as np
import pytest

from crbm import kernels
from crbm.kernels import _pykernels

BACKENDS = kernels.backends()
needs_compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def _arrays(rng, E=7, Q=5, n=12, m=9):
    return rng.standard_normal((E, Q)), rng.standard_normal((E, Q, n)), rng.standard_normal((E, Q, m))


def test_reference_kernels_match_einsum(rng):
    coef, a, b = _arrays(rng)
    assert np.allclose(_pykernels.outer_accumulate(coef, a, b), np.einsum("eq,eqi,eqj->eij", coef, a, b),
                       rtol=1e-13, atol=1e-13)
    assert np.allclose(_pykernels.weighted_accumulate(coef, a), np.einsum("eq,eqi->ei", coef, a),
                       rtol=1e-13, atol=1e-13)
    u = rng.standard_normal((7, 12))
    assert np.allclose(_pykernels.row_dot(a, u), np.einsum("eqi,ei->eq", a, u), rtol=1e-13, atol=1e-13)
    target = np.zeros(5)
    _pykernels.scatter_add(target, np.array([0, 3, 0, 4]), np.array([1.0, 2.0, 3.0, 4.0]))
    assert target.tolist() == [4.0, 0.0, 0.0, 2.0, 4.0]
    r = rng.standard_normal((9000, 6))
    col, row = rng.standard_normal(9000), rng.standard_normal(6)
    expect = r - np.outer(col, row)
    m = _pykernels.rank1_update_maxabs(r, col, row)
    assert np.array_equal(r, expect) and np.array_equal(m, np.abs(expect).max(axis=1))


@needs_compiled
def test_compiled_kernels_bit_identical(rng):
    c, p = BACKENDS["cython"], BACKENDS["python"]
    for shape in ((7, 5, 12, 9), (1, 1, 1, 1), (30, 8, 12, 12)):
        coef, a, b = _arrays(rng, *shape)
        u = rng.standard_normal((shape[0], shape[2]))
        assert np.array_equal(kernels.outer_accumulate(coef, a, b, c), kernels.outer_accumulate(coef, a, b, p))
        assert np.array_equal(kernels.outer_accumulate(coef, a, backend=c), kernels.outer_accumulate(coef, a, backend=p))
        assert np.array_equal(kernels.weighted_accumulate(coef, a, c), kernels.weighted_accumulate(coef, a, p))
        assert np.array_equal(kernels.row_dot(a, u, c), kernels.row_dot(a, u, p))
    idx = rng.integers(0, 50, 400)
    vals = rng.standard_normal(400)
    t1, t2 = np.zeros(50), np.zeros(50)
    kernels.scatter_add(t1, idx, vals, c)
    kernels.scatter_add(t2, idx, vals, p)
    assert np.array_equal(t1, t2)
    r = rng.standard_normal((5000, 11))
    r1, r2 = r.copy(), r.copy()
    col, row = rng.standard_normal(5000), rng.standard_normal(11)
    m1 = kernels.rank1_update_maxabs(r1, col, row, c)
    m2 = kernels.rank1_update_maxabs(r2, col, row, p)
    assert np.array_equal(r1, r2) and np.array_equal(m1, m2)


def test_kernel_argument_checks():
    with pytest.raises(TypeError):
        kernels.scatter_add(np.zeros(3, dtype=np.float32), [0], [1.0])
    with pytest.raises(TypeError):
        kernels.rank1_update_maxabs(np.zeros((3, 2))[:, ::2], np.zeros(3), np.zeros(1))


def test_backend_flag():
    assert kernels.BACKEND in BACKENDS


def test_env_var_forces_fallback():
    env = dict(os.environ, CRBM_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "from crbm import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env)
    assert out.stdout.strip() == "python"


@needs_compiled
def test_hf_solve_identical_across_backends(tmp_path):
    code = ("import numpy as np; from crbm.bench import HertzConfig, build_hertz_model, solve_hertz; "
            "from crbm.nitsche import FrictionModel; "
            "m = build_hertz_model(HertzConfig(h_target=0.02, friction=FrictionModel.tresca(0.1))); "
            f"np.save({str(tmp_path)!r} + '/' + __import__('crbm.kernels').kernels.BACKEND, solve_hertz(m, 0.9).U_cv)")
    for backend in ("python", "cython"):
        env = dict(os.environ, CRBM_KERNELS=backend)
        subprocess.run([sys.executable, "-c", code], check=True, env=env)
    a, b = np.load(tmp_path / "python.npy"), np.load(tmp_path / "cython.npy")
    assert a.tobytes() == b.tobytes()
