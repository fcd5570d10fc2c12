import numpy as np
import pytest

from pipelines.optim import Adam
from pipelines.training import EpochRecord, Metrics, TrainConfig, fit, predict_sign


class TestAdam:
    def test_zero_learning_rate_keeps_parameters_bit_identical(self, rng):
        params = rng.normal(size=50)
        before = params.copy()
        opt = Adam(lr=0.0)
        for _ in range(5):
            opt.step(params, rng.normal(size=50))
        np.testing.assert_array_equal(params, before)
        assert opt.t == 5

    def test_first_step_moves_each_parameter_by_lr(self):
        params = np.zeros(3)
        Adam(lr=0.01).step(params, np.array([2.0, -0.5, 1e-3]))
        np.testing.assert_allclose(params, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_minimizes_a_quadratic(self):
        target = np.array([1.0, -2.0, 0.5])
        params = np.zeros(3)
        opt = Adam(lr=0.01)
        for _ in range(3000):
            opt.step(params, 2.0 * (params - target))
        np.testing.assert_allclose(params, target, atol=2e-2)

    def test_negative_learning_rate_rejected(self):
        with pytest.raises(ValueError, match="learning rate"):
            Adam(lr=-0.1)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            Adam().step(np.zeros(3), np.zeros(4))


class TestTrainConfig:
    @pytest.mark.parametrize("field,value,message", [
        ("epochs", 0, "epochs"),
        ("batch_size", 0, "batch_size"),
        ("learning_rate", -1.0, "learning_rate"),
        ("gradient_method", "backprop", "gradient_method"),
        ("threads", 0, "threads"),
        ("adam_eps", 0.0, "eps"),
    ])
    def test_invalid_values(self, field, value, message):
        with pytest.raises(ValueError, match=message):
            TrainConfig(**{field: value}).validate()

    def test_defaults_are_valid(self):
        assert TrainConfig().validate().batch_size == 4


class TestFit:
    def make_problem(self, n=40):
        labels = np.where(np.arange(n) % 2 == 1, 1, -1)
        features = labels[:, None] * np.array([1.0, 0.5]) + 0.1
        return features, labels

    def run(self, cfg, features, labels, params):
        seen = []

        def loss_and_grad(idx):
            seen.append(idx.copy())
            f = features[idx] @ params
            residual = f - labels[idx]
            return float(np.mean(residual ** 2)), 2.0 * residual @ features[idx] / idx.size, f

        def evaluate_test():
            return float(np.mean(predict_sign(features @ params) == labels))

        metrics = fit(params, loss_and_grad, labels, evaluate_test, cfg, "toy", evaluate_test)
        return metrics, seen

    def test_visits_every_sample_once_per_epoch(self):
        features, labels = self.make_problem()
        params = np.zeros(2)
        _, seen = self.run(TrainConfig(batch_size=6, epochs=2, learning_rate=0.0), features, labels, params)
        first = np.concatenate(seen[:7])
        second = np.concatenate(seen[7:])
        np.testing.assert_array_equal(np.sort(first), np.arange(40))
        np.testing.assert_array_equal(np.sort(second), np.arange(40))
        assert not np.array_equal(first, second)

    def test_order_depends_only_on_seed(self):
        features, labels = self.make_problem()
        _, a = self.run(TrainConfig(batch_size=5, epochs=1, learning_rate=0.0, seed=3), features, labels, np.zeros(2))
        _, b = self.run(TrainConfig(batch_size=5, epochs=1, learning_rate=0.0, seed=3), features, labels, np.zeros(2))
        np.testing.assert_array_equal(np.concatenate(a), np.concatenate(b))

    def test_learns_separable_problem(self):
        features, labels = self.make_problem()
        params = np.zeros(2)
        metrics, _ = self.run(TrainConfig(batch_size=4, epochs=5, learning_rate=0.05), features, labels, params)
        assert metrics.records[-1].test_acc == 1.0
        assert metrics.final_train_accuracy == 1.0
        assert metrics.records[-1].mean_loss < metrics.records[0].mean_loss

    def test_empty_training_set(self):
        with pytest.raises(ValueError, match="empty"):
            fit(np.zeros(2), lambda idx: (0.0, np.zeros(2), np.zeros(0)), np.zeros(0), lambda: 0.0, TrainConfig(), "toy")


class TestMetrics:
    def metrics(self):
        m = Metrics("moqe-4")
        m.records = [EpochRecord(1, 0.8, 0.85, 0.6, 1.5), EpochRecord(2, 0.9, 0.91, 0.4, 1.4)]
        return m

    def test_frame_leaves_out_timing_by_default(self):
        df = self.metrics().to_frame()
        assert list(df.columns) == ["model", "epoch", "running_train_acc", "test_acc", "mean_loss"]
        assert "epoch_seconds" in self.metrics().to_frame(timing=True).columns

    def test_compute_series(self):
        df = self.metrics().compute_series(4)
        assert list(df.columns) == ["num_experts", "epoch", "compute", "test_acc"]
        assert df["compute"].tolist() == [4, 8]

    def test_final_test_accuracy(self):
        assert self.metrics().final_test_accuracy == 0.91
        assert Metrics("empty").final_test_accuracy is None


def test_sign_tie_goes_to_plus_one():
    np.testing.assert_array_equal(predict_sign(np.array([-0.2, 0.0, 3.0])), [-1, 1, 1])
