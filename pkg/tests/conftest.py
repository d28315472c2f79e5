import pytest

from perovnet.dataset import SamplerConfig, generate
from perovnet.stacks import default_library, preset


@pytest.fixture(scope="session")
def library():
    return default_library()


@pytest.fixture(scope="session")
def dataset12(tmp_path_factory, library):
    out = tmp_path_factory.mktemp("data") / "ds12"
    generate(preset("transparent"), library, out, 12, SamplerConfig("sobol", 0))
    return out


@pytest.fixture(scope="session")
def dataset60(tmp_path_factory, library):
    out = tmp_path_factory.mktemp("data") / "ds60"
    generate(preset("transparent"), library, out, 60, SamplerConfig("sobol", 0))
    return out


ACCEPTANCE = "test_acceptance.py::test_criterion_"


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that was collected."""
    rows = {}
    for key, verdict in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL"), ("skipped", "SKIP")):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if ACCEPTANCE not in nodeid:
                continue
            name = nodeid.split(ACCEPTANCE, 1)[1]
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            if rows.get(name, ("PASS",))[0] == "PASS" or verdict == "FAIL":
                rows[name] = (verdict, detail)
    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(rows):
        verdict, detail = rows[name]
        num, _, title = name.partition("_")
        terminalreporter.write_line(f"criterion {int(num):2d} {title:<20} {verdict}  {detail}")
