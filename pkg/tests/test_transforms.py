import numpy as np
import pytest
from pydantic import ValidationError

from eyedentify.errors import ShapeError, ZScoreUndefinedError
from eyedentify.preprocessing.transforms import (
    ZScoreStats,
    fit_zscore,
    prepare_sequence,
    transform_fast,
    transform_slow,
    window_count,
    windows,
)
from eyedentify.preprocessing.recording import VelocitySequence
from eyedentify.pydantic_models.models import TransformConfig

CFG = TransformConfig(c=0.02, v_min=40.0)


class TestSlow:
    def test_zero(self):
        np.testing.assert_array_equal(transform_slow([[0.0, 0.0]], CFG), [[0.0, 0.0]])

    def test_hand_value(self):
        assert transform_slow([[25.0, 0.0]], CFG)[0, 0] == pytest.approx(0.46212, abs=1e-5)

    def test_saccade_is_squashed(self):
        out = transform_slow([[500.0, -500.0]], CFG)[0]
        assert out[0] == pytest.approx(0.99999999, abs=1e-8)
        assert out[0] < 1.0 and out[1] > -1.0

    def test_bounded_for_huge_velocities(self):
        out = transform_slow([[1e6, -1e6]], CFG)
        assert (np.abs(out) < 1.0).all()

    @pytest.mark.parametrize("c", [0.01, 0.02, 0.05])
    def test_odd_and_bounded_on_random_velocities(self, c):
        cfg = TransformConfig.model_validate({"c": c, "v_min": 40.0}, context={"unsafe_hparams": True})
        rng = np.random.default_rng(11)
        v = np.concatenate([rng.normal(0.0, 30.0, (5000, 2)), rng.standard_cauchy((5000, 2)) * 200.0])
        out = transform_slow(v, cfg)
        np.testing.assert_allclose(transform_slow(-v, cfg), -out, rtol=0, atol=1e-12)
        assert (np.abs(out) < 1.0).all()

    def test_strictly_increasing(self):
        # 0.01 deg/s steps stay resolvable up to tanh(10)
        grid = np.arange(-50000, 50001) * 0.01
        out = transform_slow(np.column_stack([grid, -grid]), CFG)
        assert (np.diff(out[:, 0]) > 0).all()
        assert (np.diff(out[:, 1]) < 0).all()


class TestZScore:
    def test_two_point_fit(self):
        v = VelocitySequence(pairs=[[40.0, 1.0], [60.0, -1.0], [5.0, 5.0], [0.0, 0.0]], rate=1000.0)
        stats = fit_zscore([v], CFG)
        assert stats.mean_x == pytest.approx(50.0)
        assert stats.sd_x == pytest.approx(10.0)
        assert stats.mean_y == pytest.approx(0.0)
        assert stats.sd_y == pytest.approx(1.0)

    def test_pools_all_sequences(self):
        a = VelocitySequence(pairs=[[40.0, 1.0]], rate=1000.0)
        b = VelocitySequence(pairs=[[60.0, -1.0]], rate=1000.0)
        assert fit_zscore([a, b], CFG).mean_x == pytest.approx(50.0)

    def test_speed_at_threshold_is_included(self):
        v = VelocitySequence(pairs=[[40.0, 0.0], [24.0, 32.0], [39.0, 0.0]], rate=1000.0)
        stats = fit_zscore([v], CFG)
        assert stats.mean_x == pytest.approx(32.0)
        assert stats.mean_y == pytest.approx(16.0)

    def test_all_sub_threshold(self):
        v = VelocitySequence(pairs=[[1.0, 1.0], [30.0, 20.0]], rate=1000.0)
        with pytest.raises(ZScoreUndefinedError):
            fit_zscore([v], CFG)

    def test_constant_channel(self):
        v = VelocitySequence(pairs=[[40.0, 0.0], [60.0, 0.0]], rate=1000.0)
        with pytest.raises(ZScoreUndefinedError):
            fit_zscore([v], CFG)


class TestFast:
    stats = ZScoreStats(mean_x=50.0, mean_y=2.0, sd_x=10.0, sd_y=4.0)

    def test_sub_threshold_truncated_to_z0(self):
        out = transform_fast(np.array([[30.0, 20.0]]), CFG, self.stats)
        np.testing.assert_allclose(out[0], [-5.0, -0.5])

    def test_supra_threshold(self):
        out = transform_fast(np.array([[100.0, 0.0]]), CFG, self.stats)
        np.testing.assert_allclose(out[0], [5.0, -0.5])

    def test_threshold_is_not_truncated(self):
        out = transform_fast(np.array([[40.0, 0.0]]), CFG, self.stats)
        np.testing.assert_allclose(out[0], [-1.0, -0.5])

    def test_input_untouched(self):
        pairs = np.array([[1.0, 1.0], [100.0, 0.0]])
        transform_fast(pairs, CFG, self.stats)
        np.testing.assert_array_equal(pairs, [[1.0, 1.0], [100.0, 0.0]])

    def test_truncation_set_is_sub_threshold_speeds(self):
        rng = np.random.default_rng(5)
        speed = CFG.v_min * rng.uniform(0.0, 2.0, 1_000_000)
        angle = rng.uniform(0.0, 2 * np.pi, len(speed))
        pairs = np.column_stack([speed * np.cos(angle), speed * np.sin(angle)])
        # speed exactly at the threshold
        pairs[:2] = [[40.0, 0.0], [24.0, -32.0]]
        out = transform_fast(pairs, CFG, self.stats)
        truncated = (out == self.stats.z0).all(axis=1)
        norms = np.sqrt(pairs[:, 0] ** 2 + pairs[:, 1] ** 2)
        np.testing.assert_array_equal(truncated, norms < CFG.v_min)
        assert not truncated[:2].any()


class TestWindows:
    @pytest.mark.parametrize("n,length,stride,expected", [(1000, 1000, 1000, 1), (2500, 1000, 1000, 2), (999, 1000, 10, 0)])
    def test_count(self, n, length, stride, expected):
        assert window_count(n, length, stride) == expected

    def test_count_matches_extraction(self):
        rng = np.random.default_rng(2)
        for n, length, stride in rng.integers(1, 200, size=(500, 3)):
            data = np.zeros((n, 2))
            ws = windows(data, data, length=int(length), stride=int(stride))
            count = window_count(int(n), int(length), int(stride))
            assert len(ws) == count
            assert all(len(w.slow) == length for w in ws)
            # no further window fits
            assert count * stride + length > n
            if count:
                assert ws[-1].start + length <= n

    def test_starts(self):
        data = np.arange(2400.0).reshape(1200, 2)
        ws = windows(data, data, length=1000, stride=50, label="u", sequence_id="u/0")
        assert [w.start for w in ws] == [0, 50, 100, 150, 200]
        np.testing.assert_array_equal(ws[2].slow, data[100:1100])
        assert all(w.label == "u" for w in ws)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            windows(np.zeros((10, 2)), np.zeros((9, 2)), length=5, stride=1)

    def test_limit(self):
        v = VelocitySequence(pairs=np.full((3000, 2), 50.0), rate=1000.0, subject_id="u")
        seq = prepare_sequence(v, CFG, ZScoreStats(50.0, 50.0, 1.0, 1.0))
        assert len(seq.windows(1000, 250)) == 9
        assert len(seq.windows(1000, 250, limit=2000)) == 5


class TestConfigDomains:
    def test_outside_grid_rejected(self):
        with pytest.raises(ValidationError):
            TransformConfig(c=0.03)

    def test_unsafe_accepts(self):
        cfg = TransformConfig.model_validate({"c": 0.03, "v_min": 45.0}, context={"unsafe_hparams": True})
        assert cfg.c == 0.03

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            TransformConfig.model_validate({"c": 0.02, "speed": 1})
