import numpy as np
import pytest

from monotone_io.model import model_from_dict

_CRITERIA: dict[int, dict] = {}


def make_model(f, h=None, lo=None, hi=None, G=None, g=None, u_lo=(0.0,), u_hi=(1.0,), orders=None, params=None):
    """Small model factory; the state domain is a box unless ``G, g`` are given."""
    n = len(f)
    if G is None:
        lo = [-1.0] * n if lo is None else lo
        hi = [1.0] * n if hi is None else hi
        eye = np.eye(n)
        G = np.vstack([eye, -eye]).tolist()
        g = list(hi) + [-v for v in lo]
    d = {
        "n": n,
        "m": len(u_lo),
        "p": 1 if h is None else len(h),
        "f": list(f),
        "h": ["x1"] if h is None else list(h),
        "state_domain": {"G": G, "g": g},
        "input_domain": {"lo": list(u_lo), "hi": list(u_hi)},
    }
    if orders is not None:
        d["orders"] = orders
    if params is not None:
        d["params"] = params
    return model_from_dict(d)


@pytest.fixture(scope="session")
def noncoop():
    """x1' = -x1 - x2, x2' = x1 - x2 with a dummy input; not cooperative."""
    return make_model(["-x1 - x2 + 0*u1", "x1 - x2"], u_lo=(0.0,), u_hi=(0.0,))


@pytest.fixture(scope="session")
def coop_linear():
    return make_model(["-x1 + x2 + u1", "x1 - x2"])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    num = getattr(report, "criterion", None)
    if num is None:
        return
    entry = _CRITERIA.setdefault(num[0], {"title": num[1], "ok": True, "seen": False})
    if report.when == "call" or report.failed:
        entry["seen"] = True
        entry["ok"] = entry["ok"] and not report.failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {num:2d}: {e['title']}")


REVERSED = {"state": [1], "input": [0], "output": [1]}


def sqrt3_loop():
    """Plant k_y(w) = w/2 against controller k_w(y) = 1/(1+y); fixed point sqrt(3) - 1."""
    from monotone_io.interconnect import FeedbackLoop

    plant = make_model(["-2*x1 + u1"], lo=[0.0], hi=[1.0])
    ctrl = make_model(["-x1 + 1/(1 + u1)"], lo=[0.0], hi=[1.0], orders=REVERSED)
    return FeedbackLoop(plant, ctrl)


def flip_loop():
    """Identity-gain plant against k_w(y) = 1 - y, so the composed map is an involution."""
    from monotone_io.interconnect import FeedbackLoop

    plant = make_model(["-x1 + u1"], lo=[0.0], hi=[1.0])
    ctrl = make_model(["-x1 + 1 - u1"], lo=[0.0], hi=[1.0], orders=REVERSED)
    return FeedbackLoop(plant, ctrl)
