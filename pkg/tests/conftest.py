import numpy as np
import pytest

from noteacher import autodiff as ad
from noteacher import kernels

FD_STEP = 1e-5


def fd_gradient(fn, x, step=FD_STEP):
    """Central finite-difference gradient of scalar ``fn`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        hi = fn(x.copy())
        x[i] = orig - step
        lo = fn(x.copy())
        x[i] = orig
        g[i] = (hi - lo) / (2 * step)
    return g


def rel_error(analytic, numeric, atol=1e-7):
    """Max over entries of |a - n| / max(|a|, |n|), ignoring entries where both are below ``atol``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    ok = scale <= atol
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(ok, 0.0, diff / scale)
    return float(rel.max()) if rel.size else 0.0


def check_grad(build, *arrays, tol=1e-4):
    """Compare autodiff gradients of ``build(*Values)`` with finite differences for every input."""
    leaves = [ad.Value(a, requires_grad=True) for a in arrays]
    analytic = ad.gradients(build(*leaves), leaves)
    worst = 0.0
    for k, a in enumerate(arrays):

        def scalar(xk, k=k):
            args = [ad.Value(v) for v in arrays]
            args[k] = ad.Value(xk)
            return float(build(*args).data)

        worst = max(worst, rel_error(analytic[k], fd_gradient(scalar, a)))
    assert worst <= tol, f"relative gradient error {worst:.3e} exceeds {tol}"
    return worst


@pytest.fixture(params=sorted(kernels.IMPLEMENTATIONS))
def kernel_impl(request):
    """Each available kernel backend (the compiled one is skipped when not built)."""
    return kernels.IMPLEMENTATIONS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
