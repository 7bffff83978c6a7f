import numpy as np
import pytest

from imblimit.weights import make_weight

SHIPPED = ["logistic", "exp:0.1", "exp:0.5", "exp:0.9", "polyleft:0", "polyleft:1", "polyleft:2"]
CONVEX = ["logistic", "exp:0.1", "exp:0.5", "exp:0.9"]

CRITERIA = {
    1: "mean slope on the toy path at N=1e5",
    2: "intercept drift per decade = -log 10",
    3: "limit solver exactness",
    4: "pAUC orderings and logistic gap shrinkage",
    5: "gradient/Hessian vs central differences",
    6: "Hessian convexity at random points",
    7: "KL projection vs constrained optimizer",
    8: "joint tilt vs constrained optimizer",
    9: "Renyi identity",
    10: "upsampling equivalence",
    11: "delta weight degeneracy",
    12: "threshold protocol on the mixture",
}

_RESULTS = {}


@pytest.fixture
def criterion():
    """Record a sub-check of an acceptance criterion; lines are printed at the end of the run."""

    def record(number, passed, detail=""):
        _RESULTS.setdefault(number, []).append((bool(passed), detail))
        print(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        parts = _RESULTS.get(number)
        if parts is None:
            terminalreporter.write_line(f"criterion {number:2d} NOT RUN  {title}")
            continue
        ok = all(p for p, _ in parts)
        failed = "; ".join(d for p, d in parts if not p)
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if failed:
            line += f"  (failed: {failed})"
        terminalreporter.write_line(line)


@pytest.fixture(params=SHIPPED)
def shipped_weight(request):
    return make_weight(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
