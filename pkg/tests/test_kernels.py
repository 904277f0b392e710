"""Cross-checks between the compiled core and its pure-Python twin."""

import numpy as np
import pytest

import switchpred as sp
from switchpred import _core_py, kernels


compiled = pytest.importorskip("switchpred._core", reason="compiled core not built")


def _random_problem(rng, n, p, N, M):
    A = rng.normal(size=(p, n, n))
    B = rng.normal(size=(p, n))
    K = 0.4 * rng.normal(size=(p, n))
    W = rng.normal(size=(p, n, n))
    P = np.einsum("prc,psc->prs", W, W) + 0.3 * np.eye(n)
    x0 = rng.normal(size=n)
    u_all = np.zeros(M + N + 1)
    u_all[:N] = rng.normal(size=N)
    return A, B, K, P, x0, u_all


def _run(backend, A, B, K, P, x0, u_all, n, N, M, h, method=0, eps=1e-3):
    Eh = np.ascontiguousarray([sp.mat_exp(A[i], h) for i in range(A.shape[0])])
    args = dict(
        u_all=u_all.copy(), X=np.zeros((M + 1, n)), U=np.zeros(M + 1),
        sig_plant=np.zeros(M + 1, dtype=np.int64),
        Pt=np.zeros((M + 1, n)), sig_pred=np.zeros(M + 1, dtype=np.int64),
        info=np.zeros(4, dtype=np.int64),
    )
    args["X"][0] = x0
    backend.closed_loop_sweep(
        np.ascontiguousarray(A), np.ascontiguousarray(B),
        np.ascontiguousarray(K), np.ascontiguousarray(P), Eh, method,
        args["u_all"], args["X"], args["U"], args["sig_plant"], args["Pt"],
        args["sig_pred"], h, eps, 1e3, 1e12, args["info"],
    )
    return args


@pytest.mark.parametrize("method", [0, 1])
@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_closed_loop_backends_bit_identical(seed, method):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(2, 4)), int(rng.integers(1, 4))
    N, M, h = 50, 150, 0.01
    A, B, K, P, x0, u_all = _random_problem(rng, n, p, N, M)
    got_c = _run(compiled, A, B, K, P, x0, u_all, n, N, M, h, method)
    got_p = _run(_core_py, A, B, K, P, x0, u_all, n, N, M, h, method)
    for key in ("u_all", "X", "U", "sig_plant", "Pt", "sig_pred", "info"):
        assert np.array_equal(got_c[key], got_p[key]), key


@pytest.mark.parametrize("seed", [4, 5])
def test_predictor_sweep_backends_bit_identical(seed):
    rng = np.random.default_rng(seed)
    n, p = 2, 2
    A, B, K, P, x0, _ = _random_problem(rng, n, p, 10, 10)
    u = rng.normal(size=300)
    h = 1e-3
    outs = []
    for backend in (compiled, _core_py):
        vals = np.empty((301, n))
        vals[0] = x0
        modes = np.empty(301, dtype=np.int64)
        bad = backend.predictor_sweep(
            np.ascontiguousarray(A), np.ascontiguousarray(B),
            np.ascontiguousarray(P), x0, u, h, vals, modes)
        outs.append((bad, vals, modes))
    assert outs[0][0] == outs[1][0] == -1
    assert np.array_equal(outs[0][1], outs[1][1])
    assert np.array_equal(outs[0][2], outs[1][2])


def test_active_backend_is_compiled():
    # the packaged build in this environment carries the extension
    assert kernels.BACKEND == "compiled"


def test_nonfinite_detection_matches():
    A = np.full((1, 2, 2), 800.0)
    B = np.ones((1, 2))
    P = np.eye(2)[None]
    x0 = np.array([1.0, 1.0])
    u = np.zeros(400)
    h = 1.0
    results = []
    for backend in (compiled, _core_py):
        vals = np.empty((401, 2))
        vals[0] = x0
        modes = np.empty(401, dtype=np.int64)
        results.append(backend.predictor_sweep(
            np.ascontiguousarray(A), B, np.ascontiguousarray(P),
            x0, u, h, vals, modes))
    assert results[0] == results[1]
    assert results[0] > 0
