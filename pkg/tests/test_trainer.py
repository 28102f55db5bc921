import math

import numpy as np
import pytest

from cann.dataio import OutfitItem, OutfitRecord
from cann.errors import ContractError, DataValidationError, TrainingError
from cann.model import CannModel, ModelConfig
from cann.tensor import Parameter, Tensor
from cann.trainer import (
    TrainConfig,
    build_batch,
    evaluate_loss,
    lr_schedule,
    sgd_step,
    train,
    train_step,
    validate_dataset,
)

from conftest import make_features, make_outfits

CFG = TrainConfig(epochs=2, batch_size=3, k=4, rng_seed=0)


class TestBuildBatch:
    def test_shapes_and_padding(self):
        outfits = make_outfits(n_outfits=5, items_per_outfit=3)
        batch = build_batch(outfits, CFG, np.random.default_rng(0))
        assert len(batch.seeds) == CFG.batch_size
        assert len(batch.targets) == CFG.batch_size
        for seed, target in zip(batch.seeds, batch.targets):
            assert len(seed) == CFG.k
            assert seed[:2] == [None, None]  # 3-item outfit minus mask, left-padded
            assert target not in seed[2:]

    def test_target_excluded_from_seed_but_in_pool(self):
        outfits = make_outfits(n_outfits=4, items_per_outfit=4)
        batch = build_batch(outfits, CFG, np.random.default_rng(1))
        for target in batch.targets:
            assert target in batch.candidate_ids

    def test_candidates_deduplicated_in_first_seen_order(self):
        outfits = [
            OutfitRecord("o0", [OutfitItem("a", "c"), OutfitItem("b", "c")]),
            OutfitRecord("o1", [OutfitItem("a", "c"), OutfitItem("b", "c")]),
        ]
        cfg = TrainConfig(batch_size=4, k=4)
        batch = build_batch(outfits, cfg, np.random.default_rng(2))
        assert batch.candidate_ids == ["a", "b"]

    def test_deterministic_given_seeded_rng(self):
        outfits = make_outfits()
        a = build_batch(outfits, CFG, np.random.default_rng(3))
        b = build_batch(outfits, CFG, np.random.default_rng(3))
        assert a == b

    def test_single_item_outfit_rejected(self):
        bad = [OutfitRecord("o0", [OutfitItem("a", "c")])]
        with pytest.raises(DataValidationError, match="o0"):
            validate_dataset(bad)
        with pytest.raises(DataValidationError):
            build_batch(bad, CFG, np.random.default_rng(0))

    def test_outfit_longer_than_k_rejected(self):
        items = [OutfitItem(f"i{n}", "c") for n in range(6)]
        cfg = TrainConfig(batch_size=2, k=4)
        with pytest.raises(DataValidationError, match="k=4"):
            build_batch([OutfitRecord("o0", items)], cfg, np.random.default_rng(0))

    def test_target_indices(self):
        outfits = make_outfits()
        batch = build_batch(outfits, CFG, np.random.default_rng(4))
        for target, idx in zip(batch.targets, batch.target_indices()):
            assert batch.candidate_ids[idx] == target


class TestLrSchedule:
    def test_halving_every_two_epochs(self):
        cfg = TrainConfig(lr0=0.2, decay_factor=2.0, decay_every_epochs=2)
        expected = [0.2, 0.2, 0.1, 0.1, 0.05]
        assert [lr_schedule(e, cfg) for e in range(5)] == pytest.approx(expected)

    def test_negative_epoch_rejected(self):
        with pytest.raises(ContractError):
            lr_schedule(-1, TrainConfig())

    def test_other_decay_factor(self):
        cfg = TrainConfig(lr0=1.0, decay_factor=10.0, decay_every_epochs=1)
        assert lr_schedule(3, cfg) == pytest.approx(1e-3)


class TestSgdStep:
    def test_update_rule(self):
        t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        t.grad = np.array([0.5, -1.0])
        sgd_step({"w": Parameter("w", t)}, lr=0.1)
        np.testing.assert_allclose(t.data, [0.95, 2.1])
        assert t.grad is None

    def test_missing_gradient_rejected(self):
        t = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(ContractError, match="w"):
            sgd_step({"w": Parameter("w", t)}, lr=0.1)

    def test_quadratic_descent_converges(self):
        # minimizing (w - 3)^2 by hand with the same step rule
        t = Tensor(np.array([0.0]), requires_grad=True)
        param = {"w": Parameter("w", t)}
        for _ in range(100):
            t.grad = 2.0 * (t.data - 3.0)
            sgd_step(param, lr=0.1)
        np.testing.assert_allclose(t.data, [3.0], atol=1e-6)


class TestConfig:
    def test_batch_size_floor(self):
        with pytest.raises(ContractError):
            TrainConfig(batch_size=1)

    def test_lr_positive(self):
        with pytest.raises(ContractError):
            TrainConfig(lr0=0.0)


@pytest.fixture(scope="module")
def small_setup():
    outfits = make_outfits(n_outfits=8, items_per_outfit=3, pool_size=14)
    cfg = ModelConfig(d_c=12, d_f=16, S=2, b_star=2, k=4, d_y=8, S_f=2)
    features = make_features(outfits, cfg.d_c)
    return outfits, cfg, features


class TestTrainStep:
    def test_initial_loss_near_log_pool_size(self, small_setup):
        # an untrained model is near-uniform over the in-batch pool
        outfits, cfg, features = small_setup
        model = CannModel(cfg, seed=1)
        rng = np.random.default_rng(0)
        losses = []
        for _ in range(8):
            batch = build_batch(outfits, CFG, rng)
            loss = train_step(CannModel(cfg, seed=1), batch, features, lr=0.0)
            losses.append(loss - math.log(len(batch.candidate_ids)))
        assert abs(float(np.mean(losses))) < 0.5

    def test_loss_decreases_on_repeated_batch(self, small_setup):
        outfits, cfg, features = small_setup
        model = CannModel(cfg, seed=2)
        batch = build_batch(outfits, CFG, np.random.default_rng(1))
        first = train_step(model, batch, features, lr=0.05)
        for _ in range(30):
            last = train_step(model, batch, features, lr=0.05)
        assert last < first

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_raises(self, small_setup):
        outfits, cfg, features = small_setup
        model = CannModel(cfg, seed=3)
        model.head.W_h.data[:] = np.inf
        batch = build_batch(outfits, CFG, np.random.default_rng(2))
        with pytest.raises(TrainingError):
            train_step(model, batch, features, lr=0.1)


class TestTrainLoop:
    def test_history_records_schedule(self, small_setup, tmp_path):
        outfits, cfg, features = small_setup
        model = CannModel(cfg, seed=4)
        tcfg = TrainConfig(epochs=3, batch_size=3, k=4, lr0=0.2,
                           decay_every_epochs=2, steps_per_epoch=2)
        log = tmp_path / "loss.csv"
        history = train(model, outfits, features, tcfg, loss_log_path=log)
        assert [h["epoch"] for h in history] == [0, 1, 2]
        assert [h["lr"] for h in history] == pytest.approx([0.2, 0.2, 0.1])
        lines = log.read_text().strip().splitlines()
        assert lines[0] == "epoch,mean_loss,lr"
        assert len(lines) == 4

    def test_deterministic_for_fixed_seed(self, small_setup):
        outfits, cfg, features = small_setup
        tcfg = TrainConfig(epochs=2, batch_size=3, k=4, steps_per_epoch=2, rng_seed=5)
        h1 = train(CannModel(cfg, seed=6), outfits, features, tcfg)
        h2 = train(CannModel(cfg, seed=6), outfits, features, tcfg)
        assert h1 == h2

    def test_validation_loss_logged(self, small_setup):
        outfits, cfg, features = small_setup
        tcfg = TrainConfig(epochs=2, batch_size=3, k=4, steps_per_epoch=1)
        history = train(CannModel(cfg, seed=7), outfits, features, tcfg, validation=outfits)
        assert all("val_loss" in h for h in history)

    def test_early_stop_on_flat_validation(self, small_setup):
        outfits, cfg, features = small_setup
        tcfg = TrainConfig(epochs=30, batch_size=3, k=4, lr0=1e-9,
                           steps_per_epoch=1, stabilize_epochs=2)
        history = train(CannModel(cfg, seed=8), outfits, features, tcfg, validation=outfits)
        assert len(history) < 30

    def test_evaluate_loss_does_not_update(self, small_setup):
        outfits, cfg, features = small_setup
        model = CannModel(cfg, seed=9)
        before = {n: p.tensor.data.copy() for n, p in model.parameters().items()}
        evaluate_loss(model, outfits, features, CFG, np.random.default_rng(0))
        for n, p in model.parameters().items():
            np.testing.assert_array_equal(p.tensor.data, before[n])
