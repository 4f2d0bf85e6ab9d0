import pytest

from capmeter import selftest
from capmeter.exceptions import CapmeterError


# MARK: run_selftest
def test_all_checks_pass() -> None:
    results = selftest.run_selftest()
    assert [r.name for r in results] == list(selftest.CHECKS)
    failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
    assert failed == []


@pytest.mark.parametrize(
    argnames=["error"],
    argvalues=[(AssertionError("off by one"),), (CapmeterError("off by one"),)],
)
def test_failures_are_reported(monkeypatch, error: Exception) -> None:
    """
    Ensure a failing check is reported rather than raised.

    The remaining checks still run.
    """

    def broken() -> str:
        raise error

    monkeypatch.setattr(selftest, "CHECKS", {"broken": broken, "fine": lambda: "ok"})
    results = selftest.run_selftest()
    assert results == [
        selftest.CheckResult("broken", False, "off by one"),
        selftest.CheckResult("fine", True, "ok"),
    ]


# MARK: individual checks
@pytest.mark.parametrize(
    argnames=["check"],
    argvalues=[
        (selftest.check_lower_bound,),
        (selftest.check_cover,),
        (selftest.check_oracles,),
        (selftest.check_identities,),
    ],
)
def test_check_details(check) -> None:
    detail = check()
    assert isinstance(detail, str) and detail
