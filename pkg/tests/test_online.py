import numpy as np
import pytest

from forcegrip import dataset as ds
from forcegrip import mlp
from forcegrip import online
from forcegrip import pipeline
from forcegrip.errors import ConfigurationError, ParseError


@pytest.fixture(scope="module")
def test_trial(corpus):
    return ds.split(corpus[0]).test[0]


def zero_trial(n, channels=8):
    z = np.zeros((n, 3))
    return ds.TrialRecording(200.0, np.zeros((n, channels)), z, z.copy())


class TestPush:
    def test_fill_phase_is_silent(self, estimator):
        predictor = online.OnlinePredictor(estimator, buffer_size=1)
        w = estimator.window_len
        outs = [predictor.push(np.ones(8)) for _ in range(w)]
        assert all(o is None for o in outs[:w - 1])
        assert outs[-1] is not None
        assert len(predictor.emg_fifo) == w

    def test_fifo_never_exceeds_window(self, estimator, test_trial):
        predictor = online.OnlinePredictor(estimator)
        for row in test_trial.emg[:300]:
            predictor.push(row)
            assert len(predictor.emg_fifo) <= estimator.window_len
            assert len(predictor.force_buffer) < predictor.buffer_size

    def test_twenty_hz_output(self, estimator, test_trial):
        predictor = online.OnlinePredictor(estimator)
        assert predictor.buffer_size == 10
        refs = predictor.replay(test_trial)
        gaps = np.diff([r.sample_index for r in refs])
        assert np.all(gaps == 10)
        assert np.all(np.isclose(np.diff([r.timestamp for r in refs]), 1 / 20))

    def test_zero_stream_is_constant(self, estimator):
        refs = online.OnlinePredictor(estimator).replay(zero_trial(400))
        expected = min(max(estimator.model.predict_one(np.zeros(8)), 0.0), 20.0)
        values = np.array([r.value for r in refs])
        np.testing.assert_allclose(values, expected, rtol=1e-12, atol=1e-12)

    def test_values_are_clamped(self, estimator, test_trial):
        loud = ds.TrialRecording(200.0, 50 * test_trial.emg, test_trial.force_thumb, test_trial.force_index)
        values = [r.value for r in online.OnlinePredictor(estimator).replay(loud)]
        assert max(values) <= online.GRIPPER_MAX_FORCE_N
        assert min(values) >= 0.0

    def test_channel_mismatch(self, estimator):
        with pytest.raises(ConfigurationError):
            online.OnlinePredictor(estimator).push(np.zeros(7))

    def test_buffer_size_from_rate(self):
        assert online.force_buffer_size(200.0) == 10
        assert online.force_buffer_size(1000.0) == 50
        assert online.force_buffer_size(10.0) == 1


class TestReset:
    def test_fresh_after_reset(self, estimator, test_trial):
        fresh = online.OnlinePredictor(estimator).replay(test_trial)
        used = online.OnlinePredictor(estimator)
        for row in test_trial.emg[:123]:
            used.push(row)
        used.reset()
        assert used.replay(test_trial) == fresh

    def test_reset_idempotent(self, estimator, test_trial):
        a, b = online.OnlinePredictor(estimator), online.OnlinePredictor(estimator)
        for p in (a, b):
            for row in test_trial.emg[:77]:
                p.push(row)
        a.reset()
        b.reset()
        b.reset()
        assert a.replay(test_trial) == b.replay(test_trial)

    def test_reset_discards_partial_buffers(self, estimator, test_trial):
        predictor = online.OnlinePredictor(estimator)
        for row in test_trial.emg[:45]:
            predictor.push(row)
        predictor.reset()
        assert len(predictor.emg_fifo) == 0 and predictor.force_buffer == []
        assert np.all(predictor._state.z == 0)


class TestReplay:
    @pytest.mark.parametrize("n", [39, 40, 49, 50, 137, 2000])
    def test_emission_count(self, estimator, n):
        refs = online.OnlinePredictor(estimator).replay(zero_trial(n))
        assert len(refs) == online.emission_count(n, 40, 10) == max(0, n - 40 + 1) // 10

    def test_deterministic(self, estimator, test_trial):
        first = online.OnlinePredictor(estimator).replay(test_trial)
        assert online.OnlinePredictor(estimator).replay(test_trial) == first

    def test_matches_batch_bit_for_bit(self, estimator, test_trial):
        refs = online.OnlinePredictor(estimator).replay(test_trial)
        idx, values = online.batch_references(estimator, test_trial)
        assert [r.sample_index for r in refs] == idx.tolist()
        assert np.array_equal(np.array([r.value for r in refs]), values)

    def test_causal(self, estimator, test_trial):
        cut = 700
        emg = test_trial.emg.copy()
        emg[cut + 1:] = np.random.default_rng(0).standard_normal(emg[cut + 1:].shape) * 5
        altered = ds.TrialRecording(200.0, emg, test_trial.force_thumb, test_trial.force_index)
        a = online.OnlinePredictor(estimator).replay(test_trial)
        b = online.OnlinePredictor(estimator).replay(altered)
        early = [r for r in a if r.sample_index <= cut]
        assert early == b[:len(early)]
        assert a[len(early)] != b[len(early)]

    def test_tracks_true_force(self, estimator, test_trial):
        refs = online.OnlinePredictor(estimator).replay(test_trial)
        labels = ds.trial_labels(test_trial)
        idx = [r.sample_index for r in refs]
        assert mlp.r2(np.array([r.value for r in refs]), labels[idx]) >= 0.95

    def test_smoothing_does_not_degrade(self, estimator, test_trial):
        ev = pipeline.evaluate(estimator, test_trial)
        assert ev.smoothed_r2 >= ev.raw_r2 - 0.005


class TestPersistence:
    def test_estimator_round_trip(self, estimator, test_trial, tmp_path):
        estimator.save(tmp_path / "model.txt")
        back = online.ForceEstimator.load(tmp_path / "model.txt")
        assert np.array_equal(back.mvc.x_mvc, estimator.mvc.x_mvc)
        assert online.OnlinePredictor(back).replay(test_trial) == online.OnlinePredictor(estimator).replay(test_trial)

    def test_reference_csv(self, tmp_path):
        refs = [online.ForceReference(0.5, 0.195, 39, 0.5), online.ForceReference(1.25, 0.245, 49, 1.25)]
        online.write_references(tmp_path / "r.csv", refs)
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "timestamp_s,force_n"
        back = online.read_references(tmp_path / "r.csv")
        assert [(r.timestamp, r.value) for r in back] == [(0.195, 0.5), (0.245, 1.25)]

    def test_reference_csv_errors(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("t,f\n")
        with pytest.raises(ParseError, match="line 1"):
            online.read_references(path)
        path.write_text("timestamp_s,force_n\n0.1,0.2\n0.2,abc\n")
        with pytest.raises(ParseError, match="line 3"):
            online.read_references(path)

    def test_mismatched_model_and_profile(self, estimator):
        with pytest.raises(ConfigurationError):
            online.ForceEstimator(estimator.model, ds.MvcProfile(np.ones(7)))
