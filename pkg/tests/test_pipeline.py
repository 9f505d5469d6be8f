import dataclasses
import json
import math

import numpy as np
import pytest

import src.pipeline as pipeline
from src.autodiff import Tensor
from src.flops import flops_pretraining, workload_from_config
from src.logging_config import RunArtifacts
from src.pipeline import DivergenceError, Pretrainer, TrainResult, _latent_r2
from src.schedulers import build_epoch_plans
from tests.conftest import load_run_config


def _without_timing(result: TrainResult) -> list[dict]:
    return [r.model_dump(exclude={"wall_seconds"}) for r in result.history]


class TestShortRun:
    def test_writes_artifacts(self, toy_config, tmp_path):
        artifacts = RunArtifacts(tmp_path / "run")
        with Pretrainer(toy_config, artifacts=artifacts, max_steps=3) as trainer:
            result = trainer.run()

        assert result.steps == 3
        assert [r.step for r in result.history] == [0, 1, 2]
        lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3
        first = json.loads(lines[0])
        assert first["epoch"] == 0
        assert first["batch_size"] == 16
        assert first["lr"] == 0.0
        assert json.loads((tmp_path / "run" / "config.json").read_text())["mode"] == "diffmavil"
        assert result.checkpoint_path == tmp_path / "run" / "checkpoint.bin"
        assert result.checkpoint_path.exists()

    def test_without_artifacts(self, toy_config):
        result = Pretrainer(toy_config, max_steps=2).run()
        assert result.checkpoint_path is None
        assert all(math.isfinite(r.total) for r in result.history)

    def test_reproducible(self, toy_config):
        a = Pretrainer(toy_config, max_steps=3).run()
        b = Pretrainer(toy_config, max_steps=3).run()
        assert _without_timing(a) == _without_timing(b)

    def test_seed_changes_run(self, toy_config):
        other = load_run_config("toy.json", seed=5)
        a = Pretrainer(toy_config, max_steps=2).run()
        b = Pretrainer(other, max_steps=2).run()
        assert a.history[1].total != b.history[1].total

    def test_loss_terms_are_recorded(self, toy_config):
        record = Pretrainer(toy_config, max_steps=1).run().history[0]
        assert record.mse_audio > 0 and record.mse_video > 0
        assert record.nce_inter > 0
        assert record.nce_intra_audio > 0 and record.nce_intra_video > 0


class TestFlopsAccounting:
    def test_cumulative_matches_analytic(self):
        config = load_run_config("toy.json", epochs=3, data={"dataset_size": 16}, optimizer={"warmup_epochs": 1})
        result = Pretrainer(config).run()
        assert result.steps == build_epoch_plans(config).total_steps
        expected = flops_pretraining(workload_from_config(config)).total
        assert math.isclose(result.cumulative_flops, expected, rel_tol=0.01)
        assert result.history[-1].cumulative_flops == pytest.approx(result.cumulative_flops)

    def test_cumulative_is_monotone(self, toy_config):
        result = Pretrainer(toy_config, max_steps=4).run()
        values = [r.cumulative_flops for r in result.history]
        assert all(a < b for a, b in zip(values, values[1:]))


class TestAudioOnly:
    @pytest.mark.parametrize("name", ["toy_audiomae.json", "toy_audiomae_diffusion.json"])
    def test_video_never_built(self, name):
        config = load_run_config(name)
        trainer = Pretrainer(config, max_steps=1)
        result = trainer.run()
        assert result.stats.video_built == 0
        assert result.stats.audio_built == config.data.dataset_size
        assert result.history[0].mse_video == 0.0
        assert result.history[0].nce_inter == 0.0

    def test_no_alignment_without_video(self):
        trainer = Pretrainer(load_run_config("toy_audiomae.json"), max_steps=1)
        with pytest.raises(ValueError):
            trainer.evaluate(count=4)


class TestMicroBatches:
    def test_reconstruction_unchanged(self, toy_config):
        chunked = load_run_config("toy.json", batch={"micro_batch": 4})
        whole = Pretrainer(toy_config, max_steps=1).run().history[0]
        split = Pretrainer(chunked, max_steps=1).run().history[0]
        assert split.micro_batches == 4
        assert whole.micro_batches == 1
        assert split.mse_audio == pytest.approx(whole.mse_audio, rel=1e-9)
        assert split.mse_video == pytest.approx(whole.mse_video, rel=1e-9)

    def test_chunk_weights_sum_to_batch(self, toy_config):
        chunked = load_run_config("toy.json", batch={"micro_batch": 5})
        record = Pretrainer(chunked, max_steps=1).run().history[0]
        assert record.batch_size == 16
        assert record.micro_batches == 4


class TestDivergence:
    def test_non_finite_loss(self, toy_config, tmp_path, monkeypatch):
        objective = pipeline.stage1_objective

        def poisoned(*args, **kwargs):
            out = objective(*args, **kwargs)
            return dataclasses.replace(out, total=Tensor(np.nan))

        monkeypatch.setattr(pipeline, "stage1_objective", poisoned)
        artifacts = RunArtifacts(tmp_path)
        with pytest.raises(DivergenceError) as excinfo:
            Pretrainer(toy_config, artifacts=artifacts, max_steps=2).run()

        assert excinfo.value.record["step"] == 0
        saved = json.loads((tmp_path / "divergence.json").read_text())
        assert saved["epoch"] == 0
        assert "nan" in saved["reason"]
        assert (tmp_path / "metrics.jsonl").exists()
        assert not (tmp_path / "checkpoint.bin").exists()


class TestEvaluation:
    def test_report_is_finite(self, toy_config):
        trainer = Pretrainer(toy_config, max_steps=1)
        trainer.run()
        report = trainer.evaluate(count=8)
        for value in (report.positive_cosine, report.negative_cosine, report.latent_r2):
            assert math.isfinite(value)
        assert -1.0 <= report.negative_cosine <= 1.0

    def test_latent_fit_recovers_linear_target(self, rng):
        features = rng.standard_normal((40, 6))
        target = features[:, 0] * 2.0 + 0.5
        assert _latent_r2(features, target, components=6) == pytest.approx(1.0)


@pytest.mark.slow
def test_toy_pretraining_learns(toy_config):
    trainer = Pretrainer(toy_config, max_steps=200)
    result = trainer.run()
    assert result.final_mse <= 0.7 * result.initial_mse
    report = trainer.evaluate()
    assert report.separated
    # z[0] sets both the audio band and the blob row
    assert report.latent_r2 > 0.0
