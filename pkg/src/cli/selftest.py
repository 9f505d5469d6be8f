"""``selftest``: gradient, masking, scheduler, diffusion and FLOPS checks on a clean build."""

import argparse
import json
import time
from collections.abc import Callable

import numpy as np
from loguru import logger

from src.autodiff import Tensor, ops
from src.autodiff.gradcheck import check_gradients
from src.cli import CONFIG_DIR, emit_json
from src.config import RunConfig
from src.diffusion import build_schedule
from src.flops import flops_compare, flops_pretraining, workload_from_config
from src.losses import PairBatch, stage1_objective
from src.model import DiffMavilModel
from src.patching import DegeneratePlanError, PatchSpec, exact_decimal, make_masking_plan, patchify, unpatchify
from src.schedulers import BatchPlan, CurriculumSchedule, batch_size_at, masking_ratio_at
from src.seeding import stream
from src.synthetic import generate_dataset

GRAD_TOLERANCE = 1e-3
TOY_CONFIGS = ("toy.json", "toy_mavil.json", "toy_audiomae.json", "toy_audiomae_diffusion.json")

CheckResult = tuple[bool, str]


def _config(name: str, **model_overrides) -> RunConfig:
    data = json.loads((CONFIG_DIR / name).read_text())
    data.setdefault("model", {}).update(model_overrides)
    return RunConfig.model_validate(data)


def check_op_gradients() -> CheckResult:
    rng = stream(0, 100)
    x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    weights = Tensor(rng.standard_normal((2, 3, 5)))
    index = np.array([[2, 0], [1, 2]])

    def loss() -> Tensor:
        h = ops.layernorm(ops.gelu(ops.matmul(x, w)))
        picked = ops.gather_rows(ops.l2_normalize(h), index)
        joined = ops.concat([picked, ops.slice(ops.softmax(h), 1, 0, 1)], axis=1)
        contrast = ops.mean(ops.mul(ops.log_softmax(h, axis=1), ops.softmax(h)))
        return ops.add(ops.sum(ops.mul(joined, weights)), contrast)

    errors = check_gradients(loss, {"x": x, "w": w})
    worst = max(errors.values())
    return worst < GRAD_TOLERANCE, f"max relative error {worst:.2e}"


def check_masking(plans: int = 1000) -> CheckResult:
    rng = stream(0, 101)
    checked = 0
    while checked < plans:
        total = int(rng.integers(2, 600))
        rho = float(rng.uniform(0.05, 0.95))
        try:
            plan = make_masking_plan(total, rho, rng)
        except DegeneratePlanError:
            continue
        joined = np.concatenate([plan.visible_indices, plan.masked_indices])
        if not np.array_equal(np.sort(joined), np.arange(total)):
            return False, f"plan for M={total} is not a partition"
        if plan.num_visible != round((1 - exact_decimal(rho)) * total):
            return False, f"M={total}, rho={rho}: {plan.num_visible} visible"
        if not np.array_equal(joined[plan.restore_permutation], np.arange(total)):
            return False, f"restore permutation fails for M={total}"
        checked += 1

    audio = rng.standard_normal((32, 16))
    video = rng.standard_normal((4, 8, 8, 3))
    if not np.array_equal(unpatchify(patchify(audio, PatchSpec.audio(4, 4))), audio):
        return False, "audio patchify round trip differs"
    if not np.array_equal(unpatchify(patchify(video, PatchSpec.video(2, 4, 3))), video):
        return False, "video patchify round trip differs"
    return True, f"{plans} plans and both round trips exact"


def check_schedulers(tuples: int = 1000) -> CheckResult:
    rng = stream(0, 102)
    for _ in range(tuples):
        rho1, rho2 = (float(v) for v in rng.uniform(0.05, 0.95, size=2))
        epochs = int(rng.integers(1, 101))
        epoch = int(rng.integers(0, epochs))
        base = int(rng.integers(2, 4097))
        curriculum = CurriculumSchedule("linear", rho1, rho2, epochs)
        t = 0.0 if epochs == 1 else epoch / (epochs - 1)
        rho = rho1 if epochs == 1 else rho1 * (1 - t) + rho2 * t
        if masking_ratio_at(curriculum, epoch) != rho:
            return False, f"ratio mismatch at epoch {epoch}/{epochs}"
        if epochs > 1 and masking_ratio_at(curriculum, epochs - 1) != rho2:
            return False, f"final ratio is not exactly {rho2}"
        low = min(rho1, rho2)
        batch = batch_size_at(BatchPlan(base, curriculum, dataset_size=10**6), epoch)
        if batch != max(1, round((1 - exact_decimal(low)) / (1 - exact_decimal(rho)) * base)):
            return False, f"batch mismatch at epoch {epoch}/{epochs}"
        if batch > 1 and abs(batch * (1 - rho) - base * (1 - low)) > 1:
            return False, f"batch-visible product drifts at epoch {epoch}/{epochs}"
    return True, f"{tuples} random schedules exact"


def check_diffusion(samples: int = 100_000) -> CheckResult:
    schedule = build_schedule()
    if not (np.diff(schedule.alpha_bar) < 0).all():
        return False, "alpha_bar is not strictly decreasing"
    if not (schedule.beta_eff > schedule.beta).all():
        return False, "beta^phi does not exceed beta"
    x0 = np.full((samples, 1), 1.0)
    for t in (1, 250, 500, 750, 1000):
        a = schedule.alpha_bar_at(t)
        x = schedule.diffuse(x0, t, stream(0, 103, t)).data
        stderr = np.sqrt((1 - a) / samples)
        if abs(x.mean() - np.sqrt(a)) > 3 * stderr:
            return False, f"t={t}: mean {x.mean():.5f} vs {np.sqrt(a):.5f}"
        if abs(x.var() / (1 - a) - 1) > 0.02:
            return False, f"t={t}: variance {x.var():.5f} vs {1 - a:.5f}"
    return True, f"5 steps x {samples} samples within tolerance"


def check_flops_ratios() -> CheckResult:
    def report(name: str):
        return flops_pretraining(workload_from_config(_config(name)), name=name)

    baseline = report("mavil_full.json")
    self_attn = flops_compare(report("diffmavil_self_full.json"), baseline)
    cross = flops_compare(report("diffmavil_cross_full.json"), baseline)
    curriculum = flops_compare(report("diffmavil_full.json"), baseline)
    expectations = [
        ("cross total", cross.total_ratio, 0.81, 0.03),
        ("cross video decoder", cross.ratios["video_decoder"], 0.53, 0.05),
        ("curriculum total", curriculum.total_ratio, 0.68, 0.03),
        ("mask-then-project video encoder", self_attn.ratios["video_encoder"], 0.97, 0.02),
    ]
    for label, value, target, tolerance in expectations:
        if abs(value - target) > tolerance:
            return False, f"{label} ratio {value:.3f}, expected {target} +/- {tolerance}"
    return True, ", ".join(f"{label} {value:.2f}x" for label, value, _, _ in expectations)


def _toy_gradient_error(config: RunConfig) -> float:
    model = DiffMavilModel(config)
    pairs = generate_dataset(range(2), config.data, include_video=config.include_video)
    batch = PairBatch.from_arrays(
        [0, 1],
        [p.audio for p in pairs],
        config.data.audio_spec,
        [p.video for p in pairs] if config.include_video else None,
        config.data.video_spec,
    )
    schedule = build_schedule(config.diffusion.steps) if config.diffusion_enabled else None

    def loss() -> Tensor:
        return stage1_objective(
            batch, model, config.curriculum.rho1, config.loss, schedule, key=(config.seed, 0)
        ).total

    errors = check_gradients(loss, dict(model.named_parameters()), samples_per_param=1)
    return max(errors.values())


def check_model_gradients() -> CheckResult:
    configs = {name: _config(name) for name in TOY_CONFIGS}
    configs["toy.json (self decoders)"] = _config("toy.json", video_attention="self", audio_attention="self")
    worst = {}
    for label, config in configs.items():
        worst[label] = _toy_gradient_error(config)
        if worst[label] >= GRAD_TOLERANCE:
            return False, f"{label}: relative error {worst[label]:.2e}"
    return True, f"max relative error {max(worst.values()):.2e} over {len(worst)} configurations"


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "op_gradients": check_op_gradients,
    "masking": check_masking,
    "schedulers": check_schedulers,
    "diffusion": check_diffusion,
    "flops_ratios": check_flops_ratios,
    "model_gradients": check_model_gradients,
}


def run_checks(names: list[str] | None = None) -> dict[str, bool]:
    results = {}
    for name in names or list(CHECKS):
        start = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as e:
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        elapsed = time.perf_counter() - start
        if ok:
            logger.info(f"PASS {name}: {detail}")
        else:
            logger.error(f"FAIL {name}: {detail}")
        logger.info(f"[TIMING] {name}: {elapsed:.2f}s")
        results[name] = ok
    return results


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--only",
        nargs="+",
        choices=sorted(CHECKS),
        default=None,
        help="Run a subset of the checks",
    )


def run(args: argparse.Namespace) -> int:
    results = run_checks(args.only)
    emit_json(results)
    return 0 if all(results.values()) else 1
