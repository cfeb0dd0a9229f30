import numpy as np
import pytest
from scipy import stats

from macopt.channel import (
    ChannelTrace,
    generate,
    load_trace,
    mean_receive_snr,
    mix64,
    save_trace,
    scale_to_snr,
)
from macopt.errors import DomainError, ParseError
from macopt.scenario import Scenario


@pytest.fixture
def case():
    return Scenario(num_users=3, num_ap_antennas=2, num_subcarriers=64, seed=7)


def test_case_study_dims(case):
    trace = generate(case, 1000)
    assert trace.dims == (3, 2, 64, 1000)


def test_deterministic(case):
    assert generate(case, 5) == generate(case, 5)


def test_trials_are_independent_substreams(case):
    # Trial t does not depend on how many trials were requested.
    a = generate(case, 3)
    b = generate(case, 7)
    assert np.array_equal(a.h, b.h[:3])


def test_mix_is_not_identity():
    assert len({mix64(0, t) for t in range(1000)}) == 1000
    assert mix64(1, 0) != mix64(0, 1)


def test_pathloss_mean():
    s = Scenario(num_users=1, num_ap_antennas=1, num_subcarriers=1000, distances_m=(3.0,), seed=1)
    trace = generate(s, 100)  # 1e5 draws
    assert np.mean(np.abs(trace.h) ** 2) == pytest.approx(3.0**-4, rel=0.05)


def test_rayleigh_component_variance_chi2():
    s = Scenario(num_users=1, num_ap_antennas=1, num_subcarriers=1000, distances_m=(2.0,), seed=3)
    h = generate(s, 100).h.ravel()
    sigma2 = 2.0**-4 / 2
    n = h.size
    for part in (h.real, h.imag):
        stat = (n - 1) * np.var(part, ddof=1) / sigma2
        p = 2 * min(stats.chi2.cdf(stat, n - 1), stats.chi2.sf(stat, n - 1))
        assert p > 0.01
    assert abs(np.corrcoef(h.real, h.imag)[0, 1]) < 4 / np.sqrt(n)


def test_rician_keeps_mean_power():
    s = Scenario(num_users=2, num_ap_antennas=2, num_subcarriers=500, distances_m=(1.0, 2.0), seed=4)
    h = generate(s, 100, fading="rician", k_db=6.0).h
    p = np.mean(np.abs(h) ** 2, axis=(0, 2, 3))
    assert p == pytest.approx([1.0, 2.0**-4], rel=0.05)


def test_round_trip(tmp_path):
    s = Scenario(num_users=2, num_ap_antennas=2, num_subcarriers=4, seed=11)
    trace = generate(s, 1)
    path = tmp_path / "t.chan"
    save_trace(trace, path)
    assert load_trace(path) == trace


def test_truncated_block(tmp_path):
    s = Scenario(num_users=2, num_ap_antennas=2, num_subcarriers=4, seed=11)
    trace = generate(s, 2)
    path = tmp_path / "t.chan"
    save_trace(trace, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[: 2 + 8]) + "\n")
    with pytest.raises(ParseError, match="block 2"):
        load_trace(path)


def test_nan_entry(tmp_path):
    path = tmp_path / "t.chan"
    path.write_text("MACOPT-CHAN v1\nU=1 L=1 N=1 trials=1\n0 0 NaN 0.0\n")
    with pytest.raises(ParseError, match="non-finite value") as err:
        load_trace(path)
    assert err.value.line == 3


def test_bad_header(tmp_path):
    path = tmp_path / "t.chan"
    path.write_text("NOPE\n")
    with pytest.raises(ParseError, match="line 1"):
        load_trace(path)


def test_non_numeric_token(tmp_path):
    path = tmp_path / "t.chan"
    path.write_text("MACOPT-CHAN v1\nU=1 L=1 N=1 trials=1\n0 0 abc 0.0\n")
    with pytest.raises(ParseError, match="line 3"):
        load_trace(path)


def test_scale_to_zero_db(case):
    trace = scale_to_snr(generate(case, 3), case, 0.0)
    assert mean_receive_snr(trace, case) == pytest.approx(1.0, abs=1e-9)


def test_scale_composition_is_identity(case):
    trace = generate(case, 2)
    up = scale_to_snr(trace, case, 10.0)
    down = scale_to_snr(up, case, 10.0 * np.log10(mean_receive_snr(trace, case)))
    np.testing.assert_allclose(down.h, trace.h, rtol=1e-9, atol=0)


def test_scaling_ignores_input_scale(case):
    trace = generate(case, 2)
    a = scale_to_snr(trace, case, 20.0)
    b = scale_to_snr(ChannelTrace(trace.h * 123.4), case, 20.0)
    np.testing.assert_allclose(a.h, b.h, rtol=1e-12)


def test_zero_trace_rejected(case):
    with pytest.raises(DomainError):
        scale_to_snr(ChannelTrace(np.zeros((1, 3, 64, 2))), case, 0.0)
