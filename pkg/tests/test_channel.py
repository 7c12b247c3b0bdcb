import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiband_loc.channel import (
    SPEED_OF_LIGHT,
    Area,
    BandSpec,
    ChannelError,
    CsiVector,
    Location,
    PathModelConfig,
    PathSet,
    ScenarioConfig,
    channel_response,
    gen_paths,
    gen_scenario,
    observe_csi,
    observe_many,
    sanitize_phase,
    sanitize_rows,
)
from multiband_loc.metrics import ccne_rows

BAND = BandSpec(1, 5.765e9, 20e6, 64, 153)


def single_path(alpha=1.0, tau=0.0, band=BAND):
    return PathSet(np.array([[alpha]]), np.array([tau]), (band.band_index,))


# -- scenario ----------------------------------------------------------------


def test_grid_corner_and_spacing():
    sc = gen_scenario(ScenarioConfig(area=(0, 4, 0, 4), rp_count=16, tp_count=11))
    xy = np.array([p.as_array() for p in sc.reference_points])
    assert len(xy) == 16
    assert tuple(xy.min(axis=0)) == (0.5, 0.5)
    assert sorted(set(xy[:, 0])) == [0.5, 1.5, 2.5, 3.5]
    assert sorted(set(xy[:, 1])) == [0.5, 1.5, 2.5, 3.5]


def test_table_counts_and_containment():
    sc = gen_scenario(ScenarioConfig())
    assert (len(sc.reference_points), len(sc.test_points)) == (16, 11)
    assert all(sc.area.contains(p) for p in sc.reference_points + sc.test_points)


def test_single_rp_at_center():
    sc = gen_scenario(ScenarioConfig(area=(0, 4, 0, 2), rp_count=1, tp_count=0))
    assert sc.reference_points[0] == Location(2.0, 1.0)


def test_scenario_deterministic():
    a = gen_scenario(ScenarioConfig(seed=9))
    b = gen_scenario(ScenarioConfig(seed=9))
    assert a.test_points == b.test_points


@pytest.mark.parametrize("area", [(0, 0, 0, 4), (0, 4, 2, 2), (1, 0, 0, 4)])
def test_degenerate_area_rejected(area):
    with pytest.raises(ChannelError):
        gen_scenario(ScenarioConfig(area=area))


# -- paths -------------------------------------------------------------------


def test_los_delay_three_metres(scenario, bands):
    loc = Location(3.0, 0.0)  # AP at the origin
    paths = gen_paths(scenario, loc, bands, PathModelConfig(), np.random.default_rng(0))
    assert paths.tau[0] == pytest.approx(3.0 / SPEED_OF_LIGHT, rel=1e-12)
    assert paths.tau[0] == pytest.approx(1.0007e-8, rel=1e-4)
    assert np.allclose(np.abs(paths.alpha[0]), 1 / 3.0)
    assert np.all(paths.tau[1:] > paths.tau[0])


def test_los_amplitude_decays_with_distance(scenario, bands):
    cfg = PathModelConfig(p_count=1)
    near = gen_paths(scenario, Location(1.0, 0.0), bands, cfg, np.random.default_rng(0))
    far = gen_paths(scenario, Location(2.0, 0.0), bands, cfg, np.random.default_rng(0))
    assert abs(near.alpha[0, 0]) == pytest.approx(2 * abs(far.alpha[0, 0]))


def test_single_path_config(scenario, bands):
    paths = gen_paths(scenario, Location(1, 1), bands, PathModelConfig(p_count=1), np.random.default_rng(0))
    assert paths.n_paths == 1


def test_paths_deterministic(scenario, bands):
    a = gen_paths(scenario, Location(1, 2), bands, PathModelConfig(), np.random.default_rng(5))
    b = gen_paths(scenario, Location(1, 2), bands, PathModelConfig(), np.random.default_rng(5))
    assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.tau, b.tau)


def test_path_delays_unambiguous(scenario, bands):
    paths = gen_paths(scenario, Location(3.9, 3.9), bands, PathModelConfig(), np.random.default_rng(0))
    assert np.all(paths.tau < 1 / BAND.subcarrier_spacing)


def test_band_tilt_bounds(scenario, bands):
    cfg = PathModelConfig(gain_jitter=0.0)
    paths = gen_paths(scenario, Location(2, 2), bands, cfg, np.random.default_rng(0))
    ratio = paths.alpha[1:] / paths.alpha[1:, :1]
    assert np.all((np.abs(ratio) >= 0.8 / 1.2 - 1e-12) & (np.abs(ratio) <= 1.2 / 0.8 + 1e-12))
    assert np.all(np.abs(np.angle(ratio)) <= np.pi / 8 + 1e-12)


def test_location_outside_area_rejected(scenario, bands):
    with pytest.raises(ChannelError):
        gen_paths(scenario, Location(9, 9), bands, PathModelConfig(), np.random.default_rng(0))


# -- channel response --------------------------------------------------------


def test_zero_delay_all_ones():
    h = channel_response(single_path(), BAND).values
    assert np.array_equal(h, np.ones(64))


def test_idft_peak_one_sample_delay():
    h = channel_response(single_path(tau=1 / BAND.bandwidth), BAND).values
    assert int(np.argmax(np.abs(np.fft.ifft(h)))) == 1


@pytest.mark.parametrize("bins", [(3,), (2, 9), (1, 5, 17)])
def test_idft_peaks_match_delays(bins):
    taus = np.array(bins) / BAND.bandwidth
    alpha = np.array([[1.0], [0.8], [0.6]])[: len(bins)]
    h = channel_response(PathSet(alpha, taus, (1,)), BAND).values
    peaks = np.argsort(np.abs(np.fft.ifft(h)))[::-1][: len(bins)]
    assert sorted(peaks.tolist()) == sorted(bins)


def test_two_path_fading_period():
    dtau = 8 / BAND.bandwidth  # fading period of 2.5 MHz = 8 subcarriers
    h = channel_response(PathSet(np.ones((2, 1)), np.array([0.0, dtau]), (1,)), BAND).values
    mag = np.abs(h)
    expected = 2 * np.abs(np.cos(np.pi * (BAND.subcarrier_freqs()) * dtau))
    assert np.allclose(mag, expected, atol=1e-9)
    period = round(1 / dtau / BAND.subcarrier_spacing)
    assert period == 8
    assert np.allclose(mag[:-period], mag[period:], atol=1e-9)


def test_missing_band_gain():
    with pytest.raises(ChannelError):
        channel_response(single_path(), BandSpec(2, 5.785e9))


@settings(max_examples=40, deadline=None)
@given(
    st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
    st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
    st.floats(0, 3e-6),
)
def test_response_linear_in_gains(a1, a2, tau):
    r = lambda a: channel_response(single_path(a, tau), BAND).values
    total = r(a1 + a2)
    scale = max(np.linalg.norm(total), 1e-300)
    assert np.linalg.norm(total - r(a1) - r(a2)) <= 1e-12 * max(scale, abs(a1) + abs(a2))


@settings(max_examples=40, deadline=None)
@given(st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False), st.floats(0, 3e-6))
def test_single_path_energy(alpha, tau):
    h = channel_response(single_path(alpha, tau), BAND).values
    assert np.sum(np.abs(h) ** 2) == pytest.approx(64 * abs(alpha) ** 2, rel=1e-9)


def test_response_tiled_over_antennas():
    csi = channel_response(single_path(0.5, 1e-8), BAND, n_antennas=3)
    rows = csi.per_antenna()
    assert rows.shape == (3, 64)
    assert np.array_equal(rows[0], rows[2])


def test_subcarrier_grid():
    f = BAND.subcarrier_freqs()
    assert f[0] == 5.765e9 - 32 * BAND.subcarrier_spacing
    assert np.allclose(np.diff(f), 20e6 / 64)


# -- observation and sanitization --------------------------------------------


def test_noiseless_uncorrupted_is_identity():
    csi = channel_response(single_path(0.3 + 0.1j, 2e-8), BAND)
    out = observe_csi(csi, math.inf, False, np.random.default_rng(0))
    assert np.array_equal(out.values, csi.values)


def test_observed_snr_monte_carlo(scenario, bands):
    paths = gen_paths(scenario, Location(1.2, 2.7), bands, PathModelConfig(), np.random.default_rng(0))
    csi = channel_response(paths, BAND)
    rows = observe_many(csi, 30.0, False, np.random.default_rng(7), 10_000)
    noise = np.mean(np.abs(rows - csi.values) ** 2) * 64
    measured_db = -10 * np.log10(noise / np.sum(np.abs(csi.values) ** 2))
    assert abs(measured_db - 30.0) < 0.5
    assert abs(np.mean(ccne_rows(rows, csi.values[None])) + 30.0) < 0.5


def test_sanitization_recovers_uncorrupted_quality(scenario, bands):
    paths = gen_paths(scenario, Location(2.2, 0.7), bands, PathModelConfig(), np.random.default_rng(0))
    truth = sanitize_phase(channel_response(paths, BAND)).values
    clean = sanitize_rows(observe_many(channel_response(paths, BAND), 30.0, False, np.random.default_rng(1), 2000))
    dirty = sanitize_rows(observe_many(channel_response(paths, BAND), 30.0, True, np.random.default_rng(1), 2000))
    a = np.mean(ccne_rows(clean, truth[None]))
    b = np.mean(ccne_rows(dirty, truth[None]))
    assert abs(a - b) < 1.0


def test_linear_ramp_removed():
    k = np.arange(64)
    csi = CsiVector(2.0 * np.exp(1j * (0.07 * k - 1.1)), BAND)
    out = sanitize_phase(csi).values
    assert np.max(np.abs(np.angle(out))) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.1, 0.1), st.floats(-np.pi, np.pi), st.integers(0, 2**32 - 1))
def test_sanitize_invariance_idempotence_amplitude(a, b, seed):
    rng = np.random.default_rng(seed)
    tau = rng.uniform(0, 1e-7, 4)
    alpha = rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1))
    h = channel_response(PathSet(alpha, tau, (1,)), BAND)
    k = np.arange(64)
    corrupted = h.replace(h.values * np.exp(1j * (a * k + b)))
    s = sanitize_phase(h)
    s_corrupt = sanitize_phase(corrupted)
    assert np.max(np.abs(s_corrupt.values - s.values)) <= 1e-6 * np.max(np.abs(h.values))
    assert np.max(np.abs(sanitize_phase(s).values - s.values)) <= 1e-9 * np.max(np.abs(h.values))
    assert np.array_equal(np.abs(s.values), np.abs(h.values)) or np.allclose(
        np.abs(s.values), np.abs(h.values), rtol=1e-15, atol=0
    )


def test_sanitize_needs_two_subcarriers():
    with pytest.raises(ChannelError):
        sanitize_rows(np.ones((1, 1)))


def test_csi_vector_validation():
    with pytest.raises(ChannelError):
        CsiVector(np.ones(10), BAND)
    with pytest.raises(ChannelError):
        CsiVector(np.full(64, np.nan), BAND)


def test_area_clamp():
    area = Area(0, 4, 0, 4)
    assert np.array_equal(area.clamp(np.array([[-1.0, 5.0], [2.0, 2.0]])), [[0, 4], [2, 2]])
