"""Per-criterion PASS/FAIL lines for the acceptance suite."""


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {verdict}")
    elif not report.passed:
        # an error outside the test body still fails the criterion
        print(f"\n[acceptance] {name}: FAIL ({report.when})")
