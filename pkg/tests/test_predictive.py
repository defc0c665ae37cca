import numpy as np

from bnnkit.mlp import Mlp, MlpSpec, init_params, softmax
from bnnkit.predictive import (
    PredictiveResult,
    SamplerHandle,
    error_rate,
    point_sampler,
    predict,
    write_probs_csv,
)
from bnnkit.vi import ViState, make_sampler as vi_sampler


def cycling_sampler(thetas, center=None):
    """Deterministic sampler that replays a fixed list of parameter vectors."""
    state = {"i": 0}

    def draw(_gen):
        theta = thetas[state["i"] % len(thetas)]
        state["i"] += 1
        return theta

    return SamplerHandle("point", center or thetas[0], draw, np.random.default_rng(0))


class TestPredict:
    def test_point_sampler_nst_invariant(self, blob_splits, tiny_spec):
        _, valid = blob_splits
        spec = MlpSpec(16, (8,), 3)
        theta = init_params(spec, 1)
        sampler = point_sampler(theta, np.random.default_rng(0))
        p0 = predict(sampler, valid, nst=0)
        p5 = predict(sampler, valid, nst=5)
        np.testing.assert_allclose(p5.probs, p0.probs, rtol=0, atol=1e-12)

    def test_two_sample_average_is_exact(self, blob_splits):
        _, valid = blob_splits
        spec = MlpSpec(16, (8,), 3)
        model = Mlp(spec)
        t1, t2 = init_params(spec, 1), init_params(spec, 2)
        sampler = cycling_sampler([t1, t2])
        pred = predict(sampler, valid, nst=2)
        expected = (
            softmax(model.logits(t1.values, valid.inputs))
            + softmax(model.logits(t2.values, valid.inputs))
        ) / 2
        np.testing.assert_array_equal(pred.probs, expected)

    def test_rows_stay_normalized(self, blob_splits):
        _, valid = blob_splits
        spec = MlpSpec(16, (8,), 3)
        model = Mlp(spec)
        rng = np.random.default_rng(3)
        state = ViState(
            rng.normal(scale=0.3, size=model.layout.total_len),
            rng.uniform(-2, 0, size=model.layout.total_len),
        )
        sampler = vi_sampler(state, model.layout, np.random.default_rng(5))
        pred = predict(sampler, valid, nst=7)
        np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, rtol=0, atol=1e-9)
        assert ((pred.probs >= 0) & (pred.probs <= 1)).all()

    def test_draw_order_invariance(self, blob_splits):
        _, valid = blob_splits
        spec = MlpSpec(16, (8,), 3)
        thetas = [init_params(spec, s) for s in range(5)]
        fwd = predict(cycling_sampler(thetas), valid, nst=5)
        rev = predict(cycling_sampler(thetas[::-1]), valid, nst=5)
        np.testing.assert_allclose(fwd.probs, rev.probs, rtol=0, atol=1e-12)

    def test_vi_collapsed_scale_matches_mean_path(self, blob_splits):
        _, valid = blob_splits
        spec = MlpSpec(16, (8,), 3)
        model = Mlp(spec)
        rng = np.random.default_rng(1)
        state = ViState(
            rng.normal(scale=0.3, size=model.layout.total_len),
            np.full(model.layout.total_len, -np.inf),
            "exp",
        )
        sampler = vi_sampler(state, model.layout, np.random.default_rng(2))
        p5 = predict(sampler, valid, nst=5)
        p0 = predict(sampler, valid, nst=0)
        np.testing.assert_allclose(p5.probs, p0.probs, rtol=0, atol=1e-9)

    def test_per_sample_probs_kept_on_request(self, blob_splits):
        _, valid = blob_splits
        spec = MlpSpec(16, (8,), 3)
        sampler = point_sampler(init_params(spec, 0), np.random.default_rng(0))
        pred = predict(sampler, valid, nst=3, keep_samples=True)
        assert pred.per_sample_probs.shape == (3, len(valid), 3)
        np.testing.assert_allclose(pred.per_sample_probs.mean(axis=0), pred.probs, atol=1e-12)


class TestErrorRate:
    def test_perfect_predictions(self):
        probs = np.eye(3)[[0, 1, 2, 1]]
        assert error_rate(PredictiveResult(probs), np.array([0, 1, 2, 1])) == 0.0

    def test_uniform_ties_break_to_lowest_class(self):
        probs = np.full((4, 10), 0.1)
        assert error_rate(PredictiveResult(probs), np.zeros(4, dtype=int)) == 0.0

    def test_one_wrong_of_four(self):
        probs = np.eye(2)[[0, 0, 1, 1]]
        assert error_rate(PredictiveResult(probs), np.array([0, 1, 1, 1])) == 0.25


def test_probs_csv_roundtrip(tmp_path):
    probs = np.array([[0.25, 0.75], [0.5, 0.5]])
    write_probs_csv(PredictiveResult(probs), tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().strip().splitlines()
    assert lines[0] == "p0,p1"
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    np.testing.assert_array_equal(back, probs)
