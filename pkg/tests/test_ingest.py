import numpy as np
import pytest

from powertrace.core import EmptyAlignmentError, ParseError, PowertrainKind
from powertrace.ingest import (
    SyncConfig,
    noise_score,
    parse_log,
    read_aligned_csv,
    select_reference,
    synchronize,
    write_aligned_csv,
    write_raw_log,
    read_raw_log,
)
from powertrace.synthgen import add_multirate_jitter, generate_cycle, preset_spec

from conftest import make_channel, make_ice_log


def raw_csv(rows):
    return "timestamp_s,channel,value,unit\n" + "\n".join(rows) + "\n"


class TestParseLog:
    def test_single_channel_three_rows(self):
        text = raw_csv(["0.0,speed,10.0,km/h", "0.5,speed,11.0,km/h", "1.0,speed,12.0,km/h"])
        log = parse_log(text, PowertrainKind.ICE)
        assert set(log.channels) == {"speed"}
        np.testing.assert_array_equal(log.channels["speed"].values, [10.0, 11.0, 12.0])

    def test_interleaved_channels_split_by_name(self):
        # group-by-name oracle: each channel keeps its own timeline
        rows = [
            "0.0,speed,10.0,km/h",
            "0.1,engine_rpm,1500,RPM",
            "0.5,speed,11.0,km/h",
            "0.6,engine_rpm,1510,RPM",
            "1.0,speed,12.0,km/h",
        ]
        log = parse_log(raw_csv(rows), PowertrainKind.ICE)
        assert len(log.channels["speed"]) == 3
        assert len(log.channels["engine_rpm"]) == 2
        np.testing.assert_array_equal(log.channels["engine_rpm"].timestamps, [0.1, 0.6])

    def test_non_numeric_value_names_line(self):
        text = raw_csv(["0.0,speed,10.0,km/h", "0.5,speed,abc,km/h"])
        with pytest.raises(ParseError, match="line 3"):
            parse_log(text, PowertrainKind.ICE)

    def test_bad_header_rejected(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_log("time,name,val,unit\n0,a,1,x\n", PowertrainKind.ICE)

    def test_unknown_channel_kept_with_warning(self):
        text = raw_csv(["0.0,mystery,1.0,?", "0.0,speed,10.0,km/h"])
        with pytest.warns(UserWarning, match="mystery"):
            log = parse_log(text, PowertrainKind.ICE)
        assert "mystery" in log.channels
        assert log.meta["extra_channels"] == "mystery"

    def test_rows_sorted_per_channel(self):
        text = raw_csv(["1.0,speed,12.0,km/h", "0.0,speed,10.0,km/h", "0.5,speed,11.0,km/h"])
        log = parse_log(text, PowertrainKind.ICE)
        np.testing.assert_array_equal(log.channels["speed"].timestamps, [0.0, 0.5, 1.0])

    def test_timestamp_resolution_preserved(self):
        text = raw_csv(["0.1234567,speed,1.0,km/h"])
        log = parse_log(text, PowertrainKind.ICE)
        assert log.channels["speed"].timestamps[0] == 0.1234567


class TestSelectReference:
    def test_smooth_ramp_beats_white_noise(self):
        t = np.arange(100.0)
        ramp = np.linspace(0, 10, 100)
        noise = np.random.default_rng(0).normal(0, 1, 100)
        log = make_ice_log()
        log.channels.clear()
        log.channels["ramp"] = make_channel("ramp", "kW", t, ramp)
        log.channels["noisy"] = make_channel("noisy", "kW", t, noise)
        # oracle: compute both scores directly
        assert noise_score(ramp) < noise_score(noise)
        assert select_reference(log) == "ramp"

    def test_single_channel_wins_by_default(self):
        log = make_ice_log()
        only = {"speed": log.channels["speed"]}
        log.channels.clear()
        log.channels.update(only)
        assert select_reference(log) == "speed"

    def test_lexicographic_tie_break(self):
        t = np.arange(10.0)
        v = np.sin(t)
        log = make_ice_log()
        log.channels.clear()
        log.channels["b"] = make_channel("b", "kW", t, v)
        log.channels["a"] = make_channel("a", "kW", t, v)
        assert select_reference(log) == "a"

    def test_constant_channel_scores_zero_and_wins(self):
        t = np.arange(10.0)
        log = make_ice_log()
        log.channels.clear()
        log.channels["flat"] = make_channel("flat", "kW", t, np.full(10, 5.0))
        log.channels["ramp"] = make_channel("ramp", "kW", t, t)
        assert noise_score(log.channels["flat"].values) == 0.0
        assert select_reference(log) == "flat"


def two_channel_log(ref_t, ref_v, src_t, src_v):
    log = make_ice_log()
    log.channels.clear()
    log.channels["ref"] = make_channel("ref", "km/h", ref_t, ref_v)
    log.channels["src"] = make_channel("src", "N·m", src_t, src_v)
    log.channels["fuel_power"] = make_channel("fuel_power", "kW", ref_t, np.ones(len(ref_t)))
    return log


class TestSynchronize:
    def test_shared_timestamps_pass_through(self):
        t = np.arange(10) * 0.5
        rng = np.random.default_rng(1)
        v1, v2 = rng.normal(size=10), rng.normal(size=10)
        log = two_channel_log(t, v1, t, v2)
        out = synchronize(log, SyncConfig(reference="ref"))
        assert out.n_rows == 10
        np.testing.assert_array_equal(out.features[:, out.feature_names.index("src")], v2)

    def test_nearest_assignment_within_gap(self):
        # ref {0,1,2}, source {0.1,0.9,2.4}: gaps 0.1, 0.1, 0.4 all pass 0.5
        log = two_channel_log([0.0, 1.0, 2.0], [1, 2, 3], [0.1, 0.9, 2.4], [10.0, 20.0, 30.0])
        out = synchronize(log, SyncConfig(reference="ref", max_gap=0.5))
        assert out.n_rows == 3
        np.testing.assert_array_equal(out.features[:, out.feature_names.index("src")], [10, 20, 30])

    def test_row_dropped_when_gap_exceeded(self):
        # same fixture, max_gap 0.2: the t=2 row (gap 0.4) is dropped
        log = two_channel_log([0.0, 1.0, 2.0], [1, 2, 3], [0.1, 0.9, 2.4], [10.0, 20.0, 30.0])
        out = synchronize(log, SyncConfig(reference="ref", max_gap=0.2))
        np.testing.assert_array_equal(out.timestamps, [0.0, 1.0])
        np.testing.assert_array_equal(out.features[:, out.feature_names.index("src")], [10, 20])

    def test_all_rows_dropped_raises(self):
        log = two_channel_log([0.0, 1.0], [1, 2], [50.0, 60.0], [1.0, 2.0])
        with pytest.raises(EmptyAlignmentError):
            synchronize(log, SyncConfig(reference="ref", max_gap=0.1))

    def test_equidistant_tie_takes_earlier_sample(self):
        # source samples at exactly +-0.5 around each reference time
        log = two_channel_log([1.0, 3.0], [0, 0], [0.5, 1.5, 2.5, 3.5], [10.0, 20.0, 30.0, 40.0])
        out = synchronize(log, SyncConfig(reference="ref", max_gap=1.0))
        np.testing.assert_array_equal(out.features[:, out.feature_names.index("src")], [10.0, 30.0])

    def test_nearest_neighbor_optimality_exhaustive(self):
        # on jittered multi-rate logs, every emitted cell is the true nearest
        spec = preset_spec(PowertrainKind.ICE, "urban", duration_s=120.0, rate_hz=4.0, seed=5)
        log, _ = generate_cycle(spec)
        jittered = add_multirate_jitter(
            log,
            {"speed": 4.0, "engine_torque": 1.0, "engine_rpm": 2.0, "acceleration": 0.5},
            jitter_frac=0.3,
            drop_prob=0.05,
            seed=9,
        )
        out = synchronize(jittered, SyncConfig(reference="speed", max_gap=5.0))
        for col, name in enumerate(out.feature_names):
            ch = jittered.channels[name]
            for i, t in enumerate(out.timestamps):
                gaps = np.abs(ch.timestamps - t)
                best = gaps.min()
                emitted = out.features[i, col]
                candidates = ch.values[gaps == best]
                assert emitted in candidates, f"{name} at t={t}"

    def test_determinism_bit_identical(self):
        spec = preset_spec(PowertrainKind.EV, "urban", duration_s=60.0, rate_hz=4.0, seed=2)
        log, _ = generate_cycle(spec)
        a = synchronize(log)
        b = synchronize(log)
        assert a.feature_names == b.feature_names
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.target, b.target)

    def test_synchronized_series_passes_validation(self):
        from powertrace.core import validate_series

        spec = preset_spec(PowertrainKind.HEV, "urban", duration_s=60.0, seed=8)
        log, _ = generate_cycle(spec)
        jittered = add_multirate_jitter(log, {"speed": 1.0, "engine_rpm": 0.5},
                                        jitter_frac=0.2, drop_prob=0.05, seed=1)
        assert validate_series(synchronize(jittered)) == []

    def test_hev_target_is_sum_of_fuel_and_electric(self):
        spec = preset_spec(PowertrainKind.HEV, "mixed-route", duration_s=160.0, rate_hz=2.0, seed=4)
        log, _ = generate_cycle(spec)
        out = synchronize(log, SyncConfig(reference="speed"))
        fuel = log.channels["fuel_power"].values
        elec = log.channels["electric_power"].values
        np.testing.assert_allclose(out.target, fuel + elec, atol=1e-12)


class TestRoundTrips:
    def test_raw_log_roundtrip(self, tmp_path):
        log = make_ice_log()
        path = tmp_path / "raw.csv"
        write_raw_log(log, path)
        back = read_raw_log(path, PowertrainKind.ICE)
        for name, ch in log.channels.items():
            np.testing.assert_array_equal(back.channels[name].timestamps, ch.timestamps)
            np.testing.assert_array_equal(back.channels[name].values, ch.values)
            assert back.channels[name].unit == ch.unit

    def test_aligned_roundtrip(self, tmp_path):
        log = make_ice_log()
        series = synchronize(log)
        path = tmp_path / "aligned.csv"
        write_aligned_csv(series, path)
        back = read_aligned_csv(path)
        assert back.feature_names == series.feature_names
        np.testing.assert_array_equal(back.features, series.features)
        np.testing.assert_array_equal(back.target, series.target)
