import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from panorama_iqa.core.imageio import DatasetManifest, ManifestEntry
from panorama_iqa.core.model import QualityTransformer
from panorama_iqa.core.training import (
    GRADCHECK_TOLERANCE,
    Trainer,
    backward,
    build_viewport_pool,
    check_gradients,
    iter_batches,
    mae_loss,
    source_index_map,
    toy_problem,
    train,
    write_loss_log,
)
from panorama_iqa.exceptions import (
    EmptyInputError,
    NonFiniteUpdateError,
    ShapeMismatchError,
)
from panorama_iqa.settings import (
    Activation,
    EncoderKind,
    OptimizerKind,
    TrainConfig,
    apply_overrides,
)

from .conftest import write_image


class TestMaeLoss:
    def test_examples(self):
        assert mae_loss([1.0, 2.0], [1.0, 4.0]) == 1.0
        assert mae_loss([3.0], [3.0]) == 0.0

    def test_homogeneous(self, rng):
        preds, targets = rng.normal(size=10), rng.normal(size=10)
        assert mae_loss(-2.5 * preds, -2.5 * targets) == pytest.approx(
            2.5 * mae_loss(preds, targets)
        )

    def test_tensor_in_tensor_out(self):
        preds = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
        loss = mae_loss(preds, torch.tensor([0.0, 3.0], dtype=torch.float64))
        loss.backward()
        assert torch.is_tensor(loss)
        np.testing.assert_allclose(preds.grad.numpy(), [0.5, -0.5])

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            mae_loss([], [])

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mae_loss([1.0, 2.0], [1.0])


class TestGradients:
    def test_zero_residual_gives_zero_gradients(self):
        model, batch = toy_problem()
        with torch.no_grad():
            batch.targets = model(batch.pixels, batch.centers, batch.sources).clone()
        loss, grads = backward(model, batch)
        assert loss == 0.0
        assert all(torch.all(g == 0) for g in grads.values())

    def test_head_bias_gradient_is_mean_sign(self):
        model, batch = toy_problem()
        _, grads = backward(model, batch)
        with torch.no_grad():
            preds = model(batch.pixels, batch.centers, batch.sources)
        expected = torch.sign(preds - batch.targets).mean()
        assert grads["head.bias"].item() == pytest.approx(expected.item())

    def test_every_parameter_has_a_gradient(self):
        model, batch = toy_problem()
        _, grads = backward(model, batch)
        assert set(grads) == {name for name, _ in model.named_parameters()}

    @pytest.mark.parametrize("encoder", list(EncoderKind))
    def test_gelu_gradients_match_finite_differences(self, encoder):
        model, batch = toy_problem(Activation.GELU, encoder)
        checks = check_gradients(model, batch, coords_per_tensor=12)
        if encoder is EncoderKind.CONV:
            assert sum(c.n_checked for c in checks) >= 200
        failed = [c.to_dict() for c in checks if not c.passed(GRADCHECK_TOLERANCE)]
        assert not failed

    @pytest.mark.parametrize("encoder", list(EncoderKind))
    def test_relu_gradients_match_finite_differences(self, encoder):
        model, batch = toy_problem(Activation.RELU, encoder)
        checks = check_gradients(model, batch, coords_per_tensor=12)
        assert sum(c.n_checked for c in checks) >= 200
        failed = [c.to_dict() for c in checks if not c.passed(GRADCHECK_TOLERANCE)]
        assert not failed

    def test_cls_token_starts_off_zero(self):
        model, _ = toy_problem()
        assert torch.count_nonzero(model.cls_token) == model.cls_token.numel()

    def test_gradient_check_leaves_parameters_untouched(self):
        model, batch = toy_problem()
        before = {k: v.clone() for k, v in model.state_dict().items()}
        check_gradients(model, batch, coords_per_tensor=3)
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, before[name])


def sgd(learning_rate):
    return TrainConfig(optimizer=OptimizerKind.SGD, learning_rate=learning_rate)


class TestTrainer:
    def zero_grads(self, model):
        return {n: torch.zeros_like(p) for n, p in model.named_parameters()}

    def test_zero_gradients_leave_parameters(self):
        model, _ = toy_problem()
        before = {k: v.clone() for k, v in model.state_dict().items()}
        trainer = Trainer(model, sgd(0.1))
        trainer.apply_gradients(self.zero_grads(model))
        for name, tensor in trainer.model.state_dict().items():
            assert torch.equal(tensor, before[name])
        assert trainer.state.step == 1

    def test_sgd_step(self):
        model, _ = toy_problem()
        bias = model.head.bias.item()
        trainer = Trainer(model, sgd(0.1))
        grads = self.zero_grads(model)
        grads["head.bias"] = torch.ones_like(grads["head.bias"])
        trainer.apply_gradients(grads)
        assert trainer.model.head.bias.item() == pytest.approx(bias - 0.1)

    def test_non_finite_update_is_rolled_back(self):
        model, _ = toy_problem()
        before = {k: v.clone() for k, v in model.state_dict().items()}
        trainer = Trainer(model, sgd(0.1))
        grads = self.zero_grads(model)
        grads["head.bias"] = torch.full_like(grads["head.bias"], float("inf"))
        with pytest.raises(NonFiniteUpdateError):
            trainer.apply_gradients(grads)
        assert trainer.state.step == 0
        for name, tensor in trainer.model.state_dict().items():
            assert torch.equal(tensor, before[name])

    def test_zero_learning_rate_freezes_parameters(self):
        model, batch = toy_problem()
        before = {k: v.clone() for k, v in model.state_dict().items()}
        trainer = Trainer(model, TrainConfig(learning_rate=0.0))
        for _ in range(3):
            trainer.step(batch)
        for name, tensor in trainer.model.state_dict().items():
            assert torch.equal(tensor, before[name])

    def test_loss_log_grows_per_step(self):
        model, batch = toy_problem()
        trainer = Trainer(model, TrainConfig(learning_rate=1e-2))
        losses = [trainer.step(batch) for _ in range(4)]
        assert [e["step"] for e in trainer.state.loss_log] == [1, 2, 3, 4]
        assert [e["loss"] for e in trainer.state.loss_log] == losses
        assert losses[-1] < losses[0]

    def test_snapshots_are_detached(self):
        model, batch = toy_problem()
        trainer = Trainer(model, TrainConfig())
        snapshot = trainer.model
        trainer.step(batch)
        assert not torch.equal(snapshot.head.bias, trainer.model.head.bias)
        assert not any(p.requires_grad for p in snapshot.parameters())

    def test_frozen_batch_loss_does_not_increase(self):
        model, batch = toy_problem()
        trainer = Trainer(model, sgd(1e-5))
        losses = [trainer.step(batch) for _ in range(10)]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_deterministic_steps(self):
        states = []
        for _ in range(2):
            model, batch = toy_problem(seed=3)
            trainer = Trainer(model, TrainConfig(learning_rate=1e-2))
            for _ in range(3):
                trainer.step(batch)
            states.append(trainer.model.state_dict())
        for name, tensor in states[0].items():
            assert torch.equal(tensor, states[1][name])


class TestBatches:
    def test_source_index_map_is_sorted(self):
        manifest = DatasetManifest(
            (
                ManifestEntry("c.ppm", 1.0, "blur", "s0"),
                ManifestEntry("a.ppm", 1.0, "blur", "s1"),
            )
        )
        assert source_index_map(manifest) == {"a.ppm": 0, "c.ppm": 1}

    def test_pool_is_labeled_and_ordered(self, tiny_dataset, toy_config):
        pool = build_viewport_pool(tiny_dataset, toy_config.sampler)
        paths = [item.image_path for item in pool]
        assert paths == sorted(paths)
        assert set(paths) == {e.image_path for e in tiny_dataset}
        mos = {e.image_path: e.mos for e in tiny_dataset}
        assert all(item.target == mos[item.image_path] for item in pool)
        sources = source_index_map(tiny_dataset)
        for item in pool:
            assert item.viewport.source_index == sources[item.image_path]

    def test_mixed_batches_cover_pool_once(self, tiny_dataset, toy_config):
        pool = build_viewport_pool(tiny_dataset, toy_config.sampler)
        config = replace(toy_config.training, batch_size=3)
        batches = iter_batches(pool, config, epoch=0)
        assert all(len(b) <= 3 for b in batches)
        assert sorted(id(item) for b in batches for item in b) == sorted(map(id, pool))

    def test_grouped_batches_hold_one_image(self, tiny_dataset, toy_config):
        pool = build_viewport_pool(tiny_dataset, toy_config.sampler)
        config = replace(toy_config.training, group_by_image=True)
        batches = iter_batches(pool, config, epoch=0)
        assert len(batches) == len(tiny_dataset)
        assert all(len({item.image_path for item in b}) == 1 for b in batches)

    def test_shuffle_depends_on_epoch(self, tiny_dataset, toy_config):
        pool = build_viewport_pool(tiny_dataset, toy_config.sampler)
        first = [id(i) for b in iter_batches(pool, toy_config.training, 0) for i in b]
        again = [id(i) for b in iter_batches(pool, toy_config.training, 0) for i in b]
        other = [id(i) for b in iter_batches(pool, toy_config.training, 1) for i in b]
        assert first == again
        assert first != other


class TestTrain:
    def test_runs_requested_steps(self, tiny_dataset, toy_config):
        result = train(tiny_dataset, toy_config)
        assert result.state.step == toy_config.training.steps
        assert len(result.loss_log) == toy_config.training.steps
        assert result.model.config.n_sources == len(tiny_dataset)
        assert result.sources == source_index_map(tiny_dataset)

    def test_zero_steps_returns_initialization(self, tiny_dataset, toy_config):
        config = apply_overrides(toy_config, {"training.steps": 0})
        result = train(tiny_dataset, config)
        model_config = replace(config.model, n_sources=len(tiny_dataset))
        initial = QualityTransformer(model_config, seed=config.training.seed)
        trained = result.model.state_dict()
        for name, tensor in initial.state_dict().items():
            if name == "source_table":
                assert torch.equal(trained[name][:-1], tensor[:-1])
            else:
                assert torch.equal(trained[name], tensor)
        assert result.loss_log == []

    def test_independent_of_manifest_order(self, tiny_dataset, toy_config):
        reordered = DatasetManifest(
            tuple(reversed(tiny_dataset.entries)), tiny_dataset.base_dir
        )
        first = train(tiny_dataset, toy_config).loss_log
        second = train(reordered, toy_config).loss_log
        assert first == second

    def test_resampling_each_epoch(self, tiny_dataset, toy_config):
        config = apply_overrides(
            toy_config,
            {"training.resample_each_epoch": True, "training.steps": 12},
        )
        assert len(train(tiny_dataset, config).loss_log) == 12

    def test_empty_manifest(self, toy_config):
        with pytest.raises(EmptyInputError):
            train(DatasetManifest(()), toy_config)

    def test_overfits_a_single_viewport(self, tmp_path, rng, toy_config):
        write_image(tmp_path / "only.ppm", rng.random((32, 64, 3)))
        manifest = DatasetManifest(
            (ManifestEntry("only.ppm", 4.0, "blur", "s0"),), tmp_path
        )
        config = apply_overrides(
            toy_config,
            {
                "sampler.stride": 16,
                "training.steps": 500,
                "training.batch_size": 1,
                "training.learning_rate": 2e-3,
            },
        )
        log = train(manifest, config).loss_log
        assert len(build_viewport_pool(manifest, config.sampler)) == 1
        assert log[-1]["loss"] < 0.05 * log[0]["loss"]

    def test_write_loss_log(self, tmp_path):
        entries = [{"step": 1, "loss": 2.0}, {"step": 2, "loss": 1.5}]
        write_loss_log(entries, tmp_path / "loss.jsonl")
        lines = (tmp_path / "loss.jsonl").read_text().splitlines()
        assert [json.loads(line) for line in lines] == entries
