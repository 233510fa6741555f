import pytest

from lakekernel.governance import permissive_policy
from lakekernel.kernel import LakeKernel
from lakekernel.util import DeterministicIds, FixedClock


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    verdict = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {name}: {verdict}", flush=True)

WL = ("pandas==2.0", "polars==0.88")


@pytest.fixture
def kernel(tmp_path):
    """Fresh kernel with a fixed clock, deterministic ids and a policy that
    lets the default principals do everything."""
    k = LakeKernel(tmp_path / "lake",
                   policy=permissive_policy(["alice", "bob", "sim"], WL),
                   clock=FixedClock(0), ids=DeterministicIds(77))
    k.init()
    return k


def make_kernel(path, principals=("alice", "bob"), whitelist=WL, seed=77,
                policy=None, clock=None):
    k = LakeKernel(path,
                   policy=policy or permissive_policy(list(principals), whitelist),
                   clock=clock or FixedClock(0), ids=DeterministicIds(seed))
    k.init()
    return k
