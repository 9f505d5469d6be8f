import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.autodiff import ContractError, NumericError, Tensor
from src.diffusion import build_schedule
from src.losses import (
    DegenerateBatchError,
    info_nce,
    instance_embedding,
    mse_loss,
    reconstruction_error,
    stage1_objective,
)
from src.model import DiffMavilModel
from tests.conftest import load_run_config, make_batch


class TestMse:
    def test_perfect_reconstruction(self, rng):
        x = Tensor(rng.standard_normal((6, 4)))
        assert mse_loss(x, x).item() == 0.0

    def test_constant_offset(self):
        target = Tensor(np.zeros((1, 8)))
        assert reconstruction_error(Tensor(np.full((1, 8), 0.3)), target).item() == pytest.approx(0.09)

    def test_gradient_scales_with_error(self, rng):
        target = Tensor(rng.standard_normal((3, 4)))
        delta = rng.standard_normal((3, 4))
        grads = []
        for factor in (1.0, 2.0):
            recon = Tensor(target.data + factor * delta, requires_grad=True)
            reconstruction_error(recon, target).backward()
            grads.append(recon.grad)
        np.testing.assert_allclose(grads[1], 2.0 * grads[0])

    def test_permutation_invariant(self, rng):
        recon, target = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        perm = rng.permutation(5)
        a = reconstruction_error(Tensor(recon), Tensor(target)).item()
        b = reconstruction_error(Tensor(recon[perm]), Tensor(target[perm])).item()
        assert a == pytest.approx(b)

    def test_sums_modalities(self, rng):
        ra, ta = Tensor(rng.standard_normal((4, 2))), Tensor(rng.standard_normal((4, 2)))
        rv, tv = Tensor(rng.standard_normal((3, 5))), Tensor(rng.standard_normal((3, 5)))
        expected = reconstruction_error(ra, ta).item() + reconstruction_error(rv, tv).item()
        assert mse_loss(ra, ta, rv, tv).item() == pytest.approx(expected)

    def test_masked_rows_only(self, rng):
        target = Tensor(np.zeros((4, 2)))
        recon = Tensor(np.array([[1.0, 1.0], [0.0, 0.0], [3.0, 3.0], [0.0, 0.0]]))
        assert reconstruction_error(recon, target, rows=np.array([1, 3])).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            mse_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_video_terms_come_together(self):
        x = Tensor(np.zeros((2, 2)))
        with pytest.raises(ContractError):
            mse_loss(x, x, recon_v=x)


class TestInfoNce:
    def test_uniform_logits_give_log_batch(self):
        rows = Tensor(np.ones((5, 3)))
        assert info_nce(rows, rows).item() == pytest.approx(math.log(5))

    def test_two_aligned_orthogonal_pairs(self):
        x = Tensor(np.eye(2))
        assert info_nce(x, x, 0.1).item() == pytest.approx(math.log1p(math.exp(-10.0)), rel=1e-9)

    def test_permutation_invariant(self, rng):
        x, y = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
        perm = rng.permutation(6)
        a = info_nce(Tensor(x), Tensor(y)).item()
        b = info_nce(Tensor(x[perm]), Tensor(y[perm])).item()
        assert a == pytest.approx(b)

    def test_decreases_with_positive_similarity(self, rng):
        base = rng.standard_normal((4, 8))
        noise = rng.standard_normal((4, 8))
        losses = [info_nce(Tensor(base), Tensor(base + s * noise)).item() for s in (2.0, 1.0, 0.5, 0.1)]
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert min(losses) >= 0

    def test_gradient(self, rng):
        from src.autodiff.gradcheck import check_gradients

        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        y = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        errors = check_gradients(lambda: info_nce(x, y, 0.5), {"x": x, "y": y})
        assert max(errors.values()) < 1e-5

    def test_single_instance(self):
        with pytest.raises(DegenerateBatchError):
            info_nce(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))))

    def test_zero_norm_row(self):
        x = Tensor(np.array([[0.0, 0.0], [1.0, 0.0]]))
        with pytest.raises(NumericError):
            info_nce(x, x)

    def test_nonpositive_temperature(self):
        x = Tensor(np.eye(2))
        with pytest.raises(ContractError):
            info_nce(x, x, 0.0)


def test_instance_embedding_is_sequence_mean(rng):
    um = Tensor(rng.standard_normal((2, 5, 3)))
    np.testing.assert_allclose(instance_embedding(um).data, um.data.mean(axis=1))


class TestStage1Objective:
    @pytest.fixture
    def schedule(self):
        return build_schedule()

    def test_breakdown_bookkeeping(self, toy_config, schedule):
        model = DiffMavilModel(toy_config)
        batch = make_batch(toy_config, ids=(0, 1, 2, 3))
        out = stage1_objective(batch, model, 0.85, toy_config.loss, schedule, key=(0, 0))
        values = out.values()
        assert all(np.isfinite(v) and v >= 0 for v in values.values())
        lam = toy_config.loss
        expected = (
            values["mse_audio"]
            + values["mse_video"]
            + lam.lambda_inter * values["nce_inter"]
            + lam.lambda_intra * (values["nce_intra_audio"] + values["nce_intra_video"])
        )
        assert values["total"] == pytest.approx(expected)

    def test_deterministic(self, toy_config, toy_batch, schedule):
        model = DiffMavilModel(toy_config)
        a = stage1_objective(toy_batch, model, 0.9, toy_config.loss, schedule, key=(3, 1)).values()
        b = stage1_objective(toy_batch, model, 0.9, toy_config.loss, schedule, key=(3, 1)).values()
        assert a == b

    def test_zero_weights_leave_mse(self, toy_batch, schedule):
        config = load_run_config("toy.json", loss={"lambda_inter": 0.0, "lambda_intra": 0.0})
        model = DiffMavilModel(config)
        out = stage1_objective(toy_batch, model, 0.9, config.loss, schedule, key=(0, 0))
        assert out.total.item() == pytest.approx(out.mse)
        assert out.nce_intra_audio.item() == 0.0

    def test_baseline_has_same_terms(self, toy_batch):
        config = load_run_config("toy_mavil.json")
        out = stage1_objective(toy_batch, DiffMavilModel(config), 0.9, config.loss, key=(0, 0))
        terms = {"mse_audio", "mse_video", "nce_inter", "nce_intra_audio", "nce_intra_video", "total"}
        assert set(out.values()) == terms
        assert out.nce_inter.item() > 0

    def test_disabled_diffusion_matches_baseline(self, toy_batch, schedule):
        disabled = load_run_config("toy.json", model={"diffusion_enabled": False})
        baseline = load_run_config("toy_mavil.json")
        a = stage1_objective(toy_batch, DiffMavilModel(disabled), 0.9, disabled.loss, schedule, key=(0, 4))
        b = stage1_objective(toy_batch, DiffMavilModel(baseline), 0.9, baseline.loss, schedule, key=(0, 4))
        assert a.values() == b.values()

    def test_baseline_cannot_enable_diffusion(self):
        with pytest.raises(ValidationError):
            load_run_config("toy_mavil.json", model={"diffusion_enabled": True})

    def test_baseline_and_diffusion_share_encoders(self, toy_config):
        diffusion = DiffMavilModel(toy_config)
        baseline = DiffMavilModel(load_run_config("toy_mavil.json"))
        for (name, a), (_, b) in zip(
            diffusion.audio_encoder.named_parameters(), baseline.audio_encoder.named_parameters()
        ):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)

    def test_audio_only_mode(self, schedule):
        config = load_run_config("toy_audiomae_diffusion.json")
        batch = make_batch(config)
        assert batch.video is None
        out = stage1_objective(batch, DiffMavilModel(config), 0.9, config.loss, schedule, key=(0, 0))
        assert out.mse_video.item() == 0.0
        assert out.nce_inter.item() == 0.0
        assert out.nce_intra_video.item() == 0.0
        assert out.nce_intra_audio.item() > 0

    def test_diffusion_model_needs_schedule(self, toy_config, toy_batch):
        with pytest.raises(ContractError):
            stage1_objective(toy_batch, DiffMavilModel(toy_config), 0.9, toy_config.loss, None)

    def test_batch_model_video_disagreement(self, toy_batch):
        config = load_run_config("toy_audiomae.json")
        with pytest.raises(ContractError):
            stage1_objective(toy_batch, DiffMavilModel(config), 0.9, config.loss)

    def test_masked_only_mse(self, toy_config, toy_batch, schedule):
        config = load_run_config("toy.json", loss={"mse_masked_only": True})
        model = DiffMavilModel(config)
        full = stage1_objective(toy_batch, model, 0.9, toy_config.loss, schedule, key=(0, 0))
        masked = stage1_objective(toy_batch, model, 0.9, config.loss, schedule, key=(0, 0))
        assert full.mse != masked.mse

    def test_single_view_without_intra_weight(self, toy_batch, schedule):
        config = load_run_config("toy.json", loss={"lambda_intra": 0.0})
        assert config.views == 1
        out = stage1_objective(toy_batch, DiffMavilModel(config), 0.9, config.loss, schedule, key=(0, 0))
        assert out.nce_intra_audio.item() == 0.0
        assert out.nce_inter.item() > 0

    def test_gradients_reach_every_parameter(self, toy_config, toy_batch, schedule):
        model = DiffMavilModel(toy_config)
        stage1_objective(toy_batch, model, 0.9, toy_config.loss, schedule, key=(0, 0)).total.backward()
        missing = [name for name, p in model.named_parameters() if p.grad is None]
        assert missing == []
