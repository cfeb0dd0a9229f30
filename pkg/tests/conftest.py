import numpy as np
import pytest

from macopt.scenario import Scenario


def scalar_channel(gains):
    """(U, N, 1) channel with |h|^2 = gains[u][n]."""
    return np.sqrt(np.asarray(gains, dtype=float))[:, :, None].astype(complex)


def random_channel(rng, U, N, L, scale=1.0):
    z = rng.standard_normal((U, N, L)) + 1j * rng.standard_normal((U, N, L))
    return scale * z / np.sqrt(2.0)


def unit_noise_scenario(**kw):
    """Scenario whose per-subcarrier noise power is exactly 1 mW."""
    kw.setdefault("bandwidth_hz", 1.0)
    kw.setdefault("num_subcarriers", 1)
    kw.setdefault("noise_psd_dbm_hz", 10.0 * np.log10(kw["num_subcarriers"] / kw["bandwidth_hz"]))
    return Scenario(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        props = dict(report.user_properties)
        status = "PASS" if report.passed else "FAIL"
        if report.passed and props.get("status") == "soft-fail":
            status = "FAIL (soft, reported as a warning)"
        _CRITERIA[int(name.split("_")[2])] = (status, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        status, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}: {detail}")
