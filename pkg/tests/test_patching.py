from fractions import Fraction

import numpy as np
import pytest

from src.autodiff import Tensor
from src.patching import (
    BatchedPlan,
    DegeneratePlanError,
    GeometryError,
    MaskingPlan,
    Modality,
    PatchSpec,
    PlanError,
    gather_masked,
    gather_visible,
    make_masking_plan,
    patchify,
    restore_order,
    stack_grids,
    unpatchify,
    visible_count,
)


class TestPatchify:
    def test_full_scale_audio_grid(self):
        grid = patchify(np.zeros((1024, 128)), PatchSpec.audio(16, 16))
        assert grid.grid_dims == (64, 8)
        assert grid.num_patches == 512
        assert grid.patch_dim == 256

    def test_single_patch_equals_flattened_input(self, rng):
        x = rng.standard_normal((16, 16))
        grid = patchify(x, PatchSpec.audio(16, 16))
        np.testing.assert_array_equal(grid.patches.data[0], x.ravel())

    def test_video_grid(self):
        grid = patchify(np.zeros((16, 32, 32, 1)), PatchSpec.video(2, 16, 1))
        assert grid.grid_dims == (8, 2, 2)
        assert grid.patches.shape == (32, 512)
        assert grid.modality == Modality.VIDEO

    def test_patches_are_grid_ordered(self):
        x = np.arange(16, dtype=float).reshape(4, 4)
        grid = patchify(x, PatchSpec.audio(2, 2))
        np.testing.assert_array_equal(grid.patches.data[1], [2.0, 3.0, 6.0, 7.0])

    @pytest.mark.parametrize(
        "shape, spec",
        [
            ((32, 16), PatchSpec.audio(4, 4)),
            ((24, 8), PatchSpec.audio(8, 2)),
            ((4, 8, 8, 3), PatchSpec.video(2, 4, 3)),
            ((6, 12, 12, 1), PatchSpec.video(3, 6, 1)),
        ],
    )
    def test_round_trip_is_bit_exact(self, rng, shape, spec):
        x = rng.standard_normal(shape)
        np.testing.assert_array_equal(unpatchify(patchify(x, spec)), x)

    def test_non_divisible_axis_names_axis(self):
        with pytest.raises(GeometryError, match="freq"):
            patchify(np.zeros((16, 10)), PatchSpec.audio(4, 4))

    def test_channel_mismatch(self):
        with pytest.raises(GeometryError):
            patchify(np.zeros((2, 4, 4, 3)), PatchSpec.video(2, 4, 1))


class TestMaskingPlan:
    @pytest.mark.parametrize("total, rho, visible", [(512, 0.8, 102), (10, 0.5, 5), (512, 0.9, 51)])
    def test_visible_count(self, total, rho, visible):
        plan = make_masking_plan(total, rho, 0)
        assert plan.num_visible == visible
        assert plan.num_masked == total - visible

    def test_ties_round_to_even(self):
        assert visible_count(5, 0.5) == 2
        assert visible_count(7, 0.5) == 4

    @pytest.mark.parametrize("total, rho, visible", [(10, 0.95, 0), (30, 0.85, 4), (10, 0.65, 4)])
    def test_ties_are_exact_on_decimal_ratios(self, total, rho, visible):
        assert visible_count(total, rho) == visible

    def test_random_plans_partition_and_restore(self, rng):
        for _ in range(1000):
            total = int(rng.integers(2, 300))
            rho = float(rng.uniform(0.05, 0.95))
            try:
                plan = make_masking_plan(total, rho, rng)
            except DegeneratePlanError:
                continue
            joined = np.concatenate([plan.visible_indices, plan.masked_indices])
            np.testing.assert_array_equal(np.sort(joined), np.arange(total))
            assert plan.num_visible == round((1 - Fraction(str(rho))) * total)
            np.testing.assert_array_equal(joined[plan.restore_permutation], np.arange(total))

    def test_deterministic_per_seed(self):
        a = make_masking_plan(64, 0.75, 7)
        b = make_masking_plan(64, 0.75, 7)
        np.testing.assert_array_equal(a.visible_indices, b.visible_indices)

    def test_different_seeds_differ(self):
        first = make_masking_plan(64, 0.75, 0).visible_indices
        assert any(
            not np.array_equal(first, make_masking_plan(64, 0.75, seed).visible_indices) for seed in range(1, 101)
        )

    @pytest.mark.parametrize("total, rho", [(4, 0.9), (4, 0.1), (1, 0.5)])
    def test_degenerate(self, total, rho):
        with pytest.raises(DegeneratePlanError):
            make_masking_plan(total, rho, 0)

    @pytest.mark.parametrize("rho", [0.0, 1.0, -0.2])
    def test_ratio_out_of_range(self, rho):
        with pytest.raises(PlanError):
            make_masking_plan(10, rho, 0)


def _tagged_grid(total: int, dim: int = 3):
    rows = np.repeat(np.arange(total, dtype=float)[:, None], dim, axis=1)
    grid = patchify(np.zeros((total, 1)), PatchSpec.audio(1, 1))
    grid.patches = Tensor(rows)
    return grid


class TestOrdering:
    def test_hand_permutation(self):
        plan = MaskingPlan(
            total=4,
            mask_ratio=0.5,
            visible_indices=np.array([0, 2]),
            masked_indices=np.array([1, 3]),
            restore_permutation=np.argsort(np.array([0, 2, 1, 3])),
        )
        rows = Tensor(np.arange(4, dtype=float)[:, None])
        visible = Tensor(rows.data[[0, 2]])
        masked = Tensor(rows.data[[1, 3]])
        np.testing.assert_array_equal(restore_order(visible, masked, plan).data, rows.data)

    def test_gather_then_restore_is_identity(self):
        grid = _tagged_grid(20)
        plan = make_masking_plan(20, 0.7, 3)
        restored = restore_order(gather_visible(grid, plan), gather_masked(grid, plan), plan)
        np.testing.assert_array_equal(restored.data, grid.patches.data)

    def test_batched_plan_round_trip(self, rng):
        grids = [patchify(rng.standard_normal((8, 8)), PatchSpec.audio(2, 2)) for _ in range(3)]
        batch = stack_grids(grids)
        plan = BatchedPlan(tuple(make_masking_plan(16, 0.75, seed) for seed in range(3)))
        restored = restore_order(gather_visible(batch, plan), gather_masked(batch, plan), plan)
        np.testing.assert_array_equal(restored.data, batch.patches.data)

    def test_second_view_differs_with_same_cardinality(self):
        first, second = make_masking_plan(64, 0.8, (0, 1, 0)), make_masking_plan(64, 0.8, (0, 1, 1))
        assert first.num_visible == second.num_visible
        assert not np.array_equal(first.visible_indices, second.visible_indices)

    def test_plan_grid_mismatch(self):
        with pytest.raises(PlanError):
            gather_visible(_tagged_grid(10), make_masking_plan(12, 0.5, 0))

    def test_restore_count_mismatch(self):
        plan = make_masking_plan(10, 0.5, 0)
        with pytest.raises(PlanError):
            restore_order(Tensor(np.zeros((4, 2))), Tensor(np.zeros((6, 2))), plan)

    def test_batched_plan_needs_equal_counts(self):
        with pytest.raises(PlanError):
            BatchedPlan((make_masking_plan(10, 0.5, 0), make_masking_plan(12, 0.5, 0)))
