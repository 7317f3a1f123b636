"""Unit tests for training module."""
import json
import logging

import pytest
import torch

from conditioning import build_condition_batch
from config import RunConfig
from evaluation import evaluate_checkpoint, head_accuracy
from fixtures import write_fixture
from losses import LossReport
from networks import count_parameters
from painter_core import CheckpointError, Mode, NumericalError, seeded_rng, spawn_rng
from painting_data import Batch, load_dataset
from perceptual import PerceptualBackbone
from training import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_NAME,
    METRICS_LOG,
    build_training_dataset,
    discriminator_objective,
    fit,
    generator_forward,
    generator_objective,
    init_state,
    restore,
    snapshot,
    train_step,
)


def _random_batch(config, schema, seed=0, batch=2):
    rng = seeded_rng(seed)
    size = config.image_size
    labels = torch.stack([
        torch.randint(n, (batch,), generator=rng) for n in schema.sizes
    ], dim=1)
    return Batch(
        content=torch.rand(batch, 3, size, size, generator=rng) * 2 - 1,
        style=torch.rand(batch, 3, size, size, generator=rng) * 2 - 1,
        style_labels=labels,
    )


def _metrics(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestTrainStep:
    """Tests for a single alternating update."""

    def test_identical_states_give_identical_reports(self, tiny_config, schema):
        batch = _random_batch(tiny_config, schema)
        _, first = train_step(init_state(tiny_config, schema), batch)
        _, second = train_step(init_state(tiny_config, schema), batch)
        assert first == second

    def test_step_counter_and_report(self, tiny_config, schema):
        state = init_state(tiny_config, schema)
        state, report = train_step(state, _random_batch(tiny_config, schema))
        assert state.step == 1
        assert report.rec >= 0 and report.sp >= 0 and report.reg_real >= 0 and report.reg_fake >= 0
        assert report.rec == pytest.approx(
            report.rec_cycle_x + report.rec_cycle_y + report.rec_idt_y + report.rec_idt_x, rel=1e-5
        )

    def test_zero_sigma_matches_test_mode(self, tiny_config, schema):
        config = tiny_config.with_overrides(perturbation={"sigma": 0.0})
        batch = _random_batch(config, schema)
        _, train_report = train_step(init_state(config, schema), batch, Mode.TRAIN)
        _, test_report = train_step(init_state(config, schema), batch, Mode.TEST)
        assert train_report == test_report

    def test_backbone_unchanged(self, tiny_config, schema):
        state = init_state(tiny_config, schema)
        before = [p.clone() for p in state.backbone.parameters()]
        for seed in range(2):
            train_step(state, _random_batch(tiny_config, schema, seed))
        for a, b in zip(before, state.backbone.parameters()):
            assert torch.equal(a, b)

    def test_backbone_drawn_from_fourth_child_source(self, tiny_config, schema):
        root = seeded_rng(tiny_config.seed)
        backbone_rng = [spawn_rng(root) for _ in range(4)][-1]
        expected = PerceptualBackbone.from_settings(tiny_config.perceptual, backbone_rng)
        state = init_state(tiny_config, schema)
        for a, b in zip(expected.parameters(), state.backbone.parameters()):
            assert torch.equal(a, b)
        other = init_state(tiny_config.with_overrides(seed=tiny_config.seed + 1), schema)
        assert any(not torch.equal(a, b) for a, b in zip(other.backbone.parameters(), state.backbone.parameters()))

    def test_non_finite_loss_names_component(self, tiny_config, schema):
        batch = _random_batch(tiny_config, schema)
        batch.content[0, 0, 0, 0] = float("nan")
        with pytest.raises(NumericalError, match="non-finite adv_f_d at step 1"):
            train_step(init_state(tiny_config, schema), batch)

    def test_all_weights_change(self, tiny_config, schema):
        state = init_state(tiny_config, schema)
        g_before = [p.clone() for p in state.networks.generator_parameters()]
        d_before = [p.clone() for p in state.networks.discriminator_parameters()]
        train_step(state, _random_batch(tiny_config, schema))
        assert any(not torch.equal(a, b) for a, b in zip(g_before, state.networks.generator_parameters()))
        assert any(not torch.equal(a, b) for a, b in zip(d_before, state.networks.discriminator_parameters()))


class TestObjectives:
    """Gradient partition, ablation and finite-difference checks on a miniature model."""

    @pytest.fixture
    def setup(self, miniature_config, schema):
        state = init_state(miniature_config, schema)
        batch = _random_batch(miniature_config, schema, seed=3).to(torch.float64)
        condition = build_condition_batch(
            batch.style_labels, Mode.TEST, schema, miniature_config.perturbation, dtype=torch.float64
        )
        return state, batch, condition

    def test_discriminator_objective_touches_only_discriminators(self, setup):
        state, batch, condition = setup
        nets = state.networks
        with torch.no_grad():
            outputs = generator_forward(nets, batch.content, batch.style, condition)
        full_d, _ = discriminator_objective(
            nets, batch.content, batch.style, batch.style_labels, outputs.fake_y, outputs.fake_x, state.config
        )
        full_d.backward()
        assert all(p.grad is None for p in nets.generator_parameters())
        assert any(p.grad is not None for p in nets.discriminator_parameters())

    def test_zero_weights_leave_only_adversarial_gradient(self, setup):
        state, batch, condition = setup
        nets = state.networks
        params = list(nets.generator_parameters())
        config = state.config.with_overrides(loss_weights={"lambda_rec": 0.0, "lambda_reg": 0.0, "lambda_s": 0.0})
        outputs = generator_forward(nets, batch.content, batch.style, condition)
        full_g, parts, _ = generator_objective(
            nets, state.backbone, batch.content, batch.style, batch.style_labels, outputs, config
        )
        ablated = torch.autograd.grad(full_g, params, retain_graph=True, allow_unused=True)
        adversarial = torch.autograd.grad(parts.adv_f_g + parts.adv_b_g, params, allow_unused=True)
        for a, b in zip(ablated, adversarial):
            if a is None or b is None:
                assert a is None and b is None
            else:
                assert torch.allclose(a, b, atol=1e-12, rtol=0)

    def test_gradient_checker_skips_kinks(self, gradient_checker):
        # autograd gives 0 at the ReLU kink, the central difference gives 0.5
        p = torch.tensor([0.0, 1.0, -2.0, 3.0], dtype=torch.float64, requires_grad=True)
        errors = gradient_checker(lambda: torch.relu(p).pow(2).sum() + torch.relu(p).sum(), [p], n_samples=20)
        assert len(errors) == 20
        assert max(errors) < 1e-6
        flat = torch.zeros(3, dtype=torch.float64, requires_grad=True)
        with pytest.raises(AssertionError, match="away from a kink"):
            gradient_checker(lambda: torch.relu(flat).sum(), [flat], n_samples=5)

    def test_miniature_model_is_small(self, setup):
        state, _, _ = setup
        assert count_parameters(state.networks) < 1000

    @pytest.mark.parametrize("seed", [1, 5, 11, 23])
    def test_full_g_gradient(self, setup, gradient_checker, seed):
        state, batch, condition = setup
        nets = state.networks

        def full_g():
            outputs = generator_forward(nets, batch.content, batch.style, condition)
            value, _, _ = generator_objective(
                nets, state.backbone, batch.content, batch.style, batch.style_labels, outputs, state.config
            )
            return value

        errors = gradient_checker(full_g, list(nets.generator_parameters()), n_samples=100, seed=seed)
        assert max(errors) < 1e-3

    @pytest.mark.parametrize("seed", [2, 7, 13, 29])
    def test_full_d_gradient(self, setup, gradient_checker, seed):
        state, batch, condition = setup
        nets = state.networks
        with torch.no_grad():
            outputs = generator_forward(nets, batch.content, batch.style, condition)

        def full_d():
            value, _ = discriminator_objective(
                nets, batch.content, batch.style, batch.style_labels, outputs.fake_y, outputs.fake_x, state.config
            )
            return value

        errors = gradient_checker(full_d, list(nets.discriminator_parameters()), n_samples=100, seed=seed)
        assert max(errors) < 1e-3


class TestCheckpoints:
    """Tests for snapshot / restore."""

    def test_round_trip(self, tmp_path, tiny_config, schema):
        state = init_state(tiny_config, schema)
        train_step(state, _random_batch(tiny_config, schema))
        path = snapshot(state, tmp_path / "ckpt.pt")
        restored = restore(path)
        assert restored.step == 1
        assert restored.config == state.config
        assert restored.schema == state.schema
        for a, b in zip(state.networks.state_dict().values(), restored.networks.state_dict().values()):
            assert torch.equal(a, b)
        moments = restored.opt_g.state_dict()["state"]
        for key, value in state.opt_g.state_dict()["state"].items():
            assert torch.equal(value["exp_avg"], moments[key]["exp_avg"])
        assert torch.equal(state.data_rng.get_state(), restored.data_rng.get_state())
        assert torch.equal(state.noise_rng.get_state(), restored.noise_rng.get_state())

    def test_continuing_after_restore_matches(self, tmp_path, tiny_config, schema):
        state = init_state(tiny_config, schema)
        train_step(state, _random_batch(tiny_config, schema, 0))
        restored = restore(snapshot(state, tmp_path / "ckpt.pt"))
        batch = _random_batch(tiny_config, schema, 1)
        _, a = train_step(state, batch)
        _, b = train_step(restored, batch)
        assert a == b

    def test_schema_mismatch_names_axis(self, tmp_path, tiny_config, schema):
        path = snapshot(init_state(tiny_config, schema), tmp_path / "ckpt.pt")
        other = type(schema)(schema.artists, ("middle", "old"), schema.genres)
        with pytest.raises(CheckpointError, match="axis 'period'"):
            restore(path, expected_schema=other)

    def test_tampered_byte(self, tmp_path, tiny_config, schema):
        path = snapshot(init_state(tiny_config, schema), tmp_path / "ckpt.pt")
        data = bytearray(path.read_bytes())
        data[-10] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="checksum mismatch"):
            restore(path)

    def test_version_mismatch(self, tmp_path, tiny_config, schema):
        path = snapshot(init_state(tiny_config, schema), tmp_path / "ckpt.pt")
        data = path.read_bytes()
        rest = data[len(CHECKPOINT_MAGIC):].split(b"\n", 1)[1]
        path.write_bytes(CHECKPOINT_MAGIC + b"99\n" + rest)
        with pytest.raises(CheckpointError, match="unsupported checkpoint version 99"):
            restore(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"hello")
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            restore(path)

    def test_write_failure_is_fatal(self, tmp_path, tiny_config, schema):
        target = tmp_path / "occupied"
        target.mkdir()
        (target / "keep").write_text("x")
        with pytest.raises(CheckpointError, match="cannot write checkpoint"):
            snapshot(init_state(tiny_config, schema), target)


class TestFit:
    """Tests for the training loop."""

    def test_zero_steps(self, tmp_path, tiny_config, tiny_dataset):
        result = fit(tiny_config.with_overrides(total_steps=0), tiny_dataset, tmp_path)
        assert result.state.step == 0
        assert result.metrics_path.read_text() == ""

    def test_metrics_lines_and_checkpoints(self, tmp_path, tiny_config, tiny_dataset):
        result = fit(tiny_config, tiny_dataset, tmp_path)
        records = _metrics(result.metrics_path)
        assert [r["step"] for r in records] == [1, 2, 3, 4]
        assert set(records[0]) == {"step", *LossReport.field_names()}
        assert (tmp_path / CHECKPOINT_NAME).exists()
        assert (tmp_path / "checkpoint_000002.pt").exists()
        assert (tmp_path / "checkpoint_000004.pt").exists()

    def test_same_seed_byte_identical_logs(self, tmp_path, tiny_config, tiny_dataset):
        fit(tiny_config, tiny_dataset, tmp_path / "a")
        fit(tiny_config, tiny_dataset, tmp_path / "b")
        assert (tmp_path / "a" / METRICS_LOG).read_bytes() == (tmp_path / "b" / METRICS_LOG).read_bytes()

    def test_resume_reproduces_uninterrupted_run(self, tmp_path, tiny_config, tiny_dataset):
        fit(tiny_config, tiny_dataset, tmp_path / "full")
        fit(tiny_config.with_overrides(total_steps=2), tiny_dataset, tmp_path / "split")
        fit(tiny_config, tiny_dataset, tmp_path / "split", resume=tmp_path / "split" / CHECKPOINT_NAME)
        assert (tmp_path / "split" / METRICS_LOG).read_bytes() == (tmp_path / "full" / METRICS_LOG).read_bytes()

    def test_resume_from_periodic_checkpoint_truncates_log(self, tmp_path, tiny_config, tiny_dataset):
        fit(tiny_config, tiny_dataset, tmp_path)
        full = (tmp_path / METRICS_LOG).read_bytes()
        result = fit(tiny_config, tiny_dataset, tmp_path, resume=tmp_path / "checkpoint_000002.pt")
        assert result.state.step == 4
        assert (tmp_path / METRICS_LOG).read_bytes() == full

    def test_resume_into_new_directory_inherits_log(self, tmp_path, tiny_config, tiny_dataset):
        fit(tiny_config, tiny_dataset, tmp_path / "full")
        fit(tiny_config.with_overrides(total_steps=2), tiny_dataset, tmp_path / "a")
        fit(tiny_config, tiny_dataset, tmp_path / "b", resume=tmp_path / "a" / "checkpoint_000002.pt")
        log = (tmp_path / "b" / METRICS_LOG).read_bytes()
        assert len(log.splitlines()) == 4
        assert log == (tmp_path / "full" / METRICS_LOG).read_bytes()
        assert len((tmp_path / "a" / METRICS_LOG).read_bytes().splitlines()) == 2

    def test_resume_finished_run_is_noop(self, tmp_path, tiny_config, tiny_dataset, caplog):
        fit(tiny_config, tiny_dataset, tmp_path)
        before = (tmp_path / METRICS_LOG).read_bytes()
        with caplog.at_level(logging.WARNING):
            result = fit(tiny_config, tiny_dataset, tmp_path, resume=tmp_path / CHECKPOINT_NAME)
        assert result.state.step == 4
        assert (tmp_path / METRICS_LOG).read_bytes() == before
        assert "nothing to do" in caplog.text

    def test_holdout_reduces_style_pool(self, tiny_config, fixture_root):
        dataset = build_training_dataset(tiny_config.with_overrides(holdout_fraction=0.25), fixture_root)
        assert len(dataset.style_entries) == 12


@pytest.mark.slow
class TestOverfitRun:
    """Scaled-down acceptance run on the synthetic fixture at 64x64."""

    @pytest.fixture(scope="class")
    def run(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("fixture64")
        write_fixture(root, seed=0, image_size=64)
        out = tmp_path_factory.mktemp("overfit")
        config = RunConfig().with_overrides(total_steps=500, checkpoint_interval=500, log_interval=50)
        dataset = load_dataset(root, config.image_size, flip=config.flip_augment)
        result = fit(config, dataset, out)
        return result, dataset, root

    def test_reconstruction_halves(self, run):
        result, _, _ = run
        records = _metrics(result.metrics_path)
        assert len(records) == 500
        tail = sum(r["rec"] for r in records[-10:]) / 10
        assert tail <= 0.5 * records[0]["rec"]

    def test_style_discriminator_learns_artists(self, run):
        result, dataset, _ = run
        accuracy = head_accuracy(
            result.state.networks.style_discriminator, dataset.style_images, dataset.style_labels, "artist"
        )
        assert accuracy >= 0.9

    def test_judge_recognises_generated_artists(self, run):
        result, _, root = run
        report = evaluate_checkpoint(result.checkpoint_path, root, axes=("artist",), splits=10)
        rows = report.accuracy_rows("artist")
        assert len(rows) == 4
        mean_accuracy = sum(r.value * r.set_size for r in rows) / sum(r.set_size for r in rows)
        assert mean_accuracy >= 0.6
