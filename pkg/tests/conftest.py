import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


def random_weights(rng, dims, zero_frac=0.0):
    ws = [rng.normal(size=(dims[l + 1], dims[l])) for l in range(len(dims) - 1)]
    if zero_frac:
        ws = [w * (rng.random(w.shape) >= zero_frac) for w in ws]
    return ws


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = f()
            a[idx] = old - h
            down = f()
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


# -- acceptance summary: one line per criterion ---------------------------------

_ACCEPTANCE = []


def pytest_runtest_makereport(item, call):
    if call.when != "call" or not item.nodeid.split("::")[0].endswith("test_acceptance.py"):
        return
    label = getattr(item.function, "criterion", item.name)
    detail = dict(item.user_properties).get("detail", "")
    ok = call.excinfo is None
    _ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
