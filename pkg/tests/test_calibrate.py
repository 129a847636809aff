import numpy as np
import pytest

from safidel.calibrate import (
    CalibrationError,
    CalibratorParams,
    ParamGrid,
    apply_calibrator,
    apply_enhancement,
    apply_gaussian_blur,
    calibrate,
    enumerate_grid,
    gaussian_kernel,
    random_search,
)
from safidel.dataset import ImageTensor, load_manifest
from safidel.detector import MockDetector
from safidel.scenario import attr_loss, inter, sia

import planted
from conftest import random_image


@pytest.fixture(scope="module")
def planted_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("planted")
    manifest = planted.write_planted_dataset(root, n_samples=3)
    return load_manifest(manifest)


@pytest.fixture
def mock_detector():
    return MockDetector(planted.PLANTED_RULE)


class TestEnhancements:
    @pytest.mark.parametrize("kind", ["brightness", "contrast", "sharpness"])
    def test_factor_one_is_bit_exact(self, rng, kind):
        img = random_image(rng, 9, 11, 3)
        out = apply_enhancement(img, kind, 1.0)
        assert np.array_equal(out.data, img.data)

    def test_brightness_scales(self):
        img = ImageTensor(np.full((4, 4, 1), 0.8))
        out = apply_enhancement(img, "brightness", 0.5)
        assert np.all(out.data == 0.4)

    def test_brightness_clamps(self):
        img = ImageTensor(np.full((4, 4, 1), 0.8))
        out = apply_enhancement(img, "brightness", 2.0)
        assert np.all(out.data == 1.0)

    def test_contrast_fixes_uniform_images(self):
        # Every pixel equals the mean, so the blend collapses; the float
        # mean of a constant array can be one ulp off, nothing more.
        img = ImageTensor(np.full((16, 16, 1), 0.8))
        out = apply_enhancement(img, "contrast", 2.0)
        assert np.allclose(out.data, img.data, atol=1e-15, rtol=0.0)
        assert np.array_equal(out.to_u8(), img.to_u8())

    def test_contrast_spreads_around_mean(self):
        img = ImageTensor(np.array([[[0.25], [0.75]]]))
        out = apply_enhancement(img, "contrast", 2.0)
        assert out.data[0, 0, 0] == pytest.approx(0.0)
        assert out.data[0, 1, 0] == pytest.approx(1.0)

    def test_sharpness_border_rows_untouched(self, rng):
        img = random_image(rng, 6, 6)
        out = apply_enhancement(img, "sharpness", 1.7)
        assert np.array_equal(out.data[0], img.data[0])
        assert np.array_equal(out.data[-1], img.data[-1])
        assert np.array_equal(out.data[:, 0], img.data[:, 0])
        assert np.array_equal(out.data[:, -1], img.data[:, -1])

    def test_brightness_monotone_in_factor(self, rng):
        img = random_image(rng, 5, 7)
        factors = [0.5, 0.8, 1.0, 1.3, 1.9]
        outs = [apply_enhancement(img, "brightness", f).data for f in factors]
        for lo, hi in zip(outs, outs[1:]):
            assert np.all(hi >= lo)

    def test_non_positive_factor_rejected(self, rng):
        with pytest.raises(ValueError):
            apply_enhancement(random_image(rng), "brightness", 0.0)

    def test_unknown_kind_rejected(self, rng):
        with pytest.raises(ValueError, match="enhancement"):
            apply_enhancement(random_image(rng), "blur", 1.1)


class TestGaussianBlur:
    def test_sigma_zero_is_bit_exact(self, rng):
        img = random_image(rng)
        assert np.array_equal(apply_gaussian_blur(img, 0.0).data, img.data)

    def test_constant_image_unchanged(self):
        img = ImageTensor(np.full((8, 8, 3), 0.3))
        out = apply_gaussian_blur(img, 2.0)
        assert np.allclose(out.data, img.data, atol=1e-12)

    def test_kernel_radius_and_normalization(self):
        k = gaussian_kernel(1.0)
        assert len(k) == 7  # radius ceil(3*1) = 3
        assert abs(k.sum() - 1.0) < 1e-12

    def test_blur_smooths_step_edge(self):
        data = np.zeros((5, 10, 1))
        data[:, 5:] = 1.0
        out = apply_gaussian_blur(ImageTensor(data), 1.0)
        assert 0.0 < out.data[2, 4, 0] < 0.5 < out.data[2, 5, 0] < 1.0

    def test_negative_sigma_rejected(self, rng):
        with pytest.raises(ValueError):
            apply_gaussian_blur(random_image(rng), -0.1)


class TestApplyCalibrator:
    def test_identity_params_bit_exact(self, rng):
        img = random_image(rng, 8, 8, 3)
        out = apply_calibrator(img, CalibratorParams())
        assert np.array_equal(out.data, img.data)

    def test_brightness_only_matches_enhancement(self, rng):
        img = random_image(rng)
        p = CalibratorParams(brightness=0.7)
        assert np.array_equal(
            apply_calibrator(img, p).data, apply_enhancement(img, "brightness", 0.7).data
        )

    def test_dimensions_preserved(self, rng):
        for _ in range(20):
            h, w, c = int(rng.integers(3, 12)), int(rng.integers(3, 12)), (1, 3)[int(rng.integers(0, 2))]
            img = random_image(rng, h, w, c)
            p = CalibratorParams(
                contrast=float(rng.uniform(0.5, 1.5)),
                brightness=float(rng.uniform(0.5, 1.5)),
                sharpness=float(rng.uniform(0.5, 1.5)),
                blur_sigma=float(rng.uniform(0.0, 1.5)),
            )
            out = apply_calibrator(img, p)
            assert out.data.shape == img.data.shape

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            CalibratorParams(contrast=-1.0)
        with pytest.raises(ValueError):
            CalibratorParams(blur_sigma=-0.5)


class TestParamGrid:
    def test_full_three_axis_grid(self):
        g = ParamGrid.parse("contrast=0.8:1.2:0.1,brightness=0.8:1.2:0.1,sharpness=0.8:1.2:0.1")
        assert len(enumerate_grid(g)) == 125

    def test_shorthand_applies_to_three_axes(self):
        g = ParamGrid.parse("0.8:1.2:0.1")
        cands = enumerate_grid(g)
        assert len(cands) == 125
        assert cands[0].as_tuple() == (0.8, 0.8, 0.8, 0.0)
        assert cands[-1].as_tuple() == (1.2, 1.2, 1.2, 0.0)

    def test_lexicographic_order(self):
        cands = enumerate_grid(ParamGrid.parse("0.8:1.2:0.1"))
        assert cands[1].as_tuple() == (0.8, 0.8, 0.9, 0.0)
        assert cands[5].as_tuple() == (0.8, 0.9, 0.8, 0.0)
        assert cands[25].as_tuple() == (0.9, 0.8, 0.8, 0.0)

    def test_single_point_axis(self):
        g = ParamGrid.parse("brightness=1.0:1.0:0.1")
        cands = enumerate_grid(g)
        assert len(cands) == 1
        assert cands[0].is_identity()

    def test_step_accumulation_rounded(self):
        g = ParamGrid(brightness=(0.1, 0.4, 0.1))
        values = g.axis_values("brightness")
        assert values == [0.1, 0.2, 0.3, 0.4]

    def test_blur_axis_spelled_blur(self):
        g = ParamGrid.parse("blur=0.0:1.0:0.5")
        assert [c.blur_sigma for c in enumerate_grid(g)] == [0.0, 0.5, 1.0]

    def test_bad_specsisrejected(self):
        with pytest.raises(ValueError):
            ParamGrid.parse("hue=0:1:0.1")
        with pytest.raises(ValueError):
            ParamGrid.parse("brightness=0:1")
        with pytest.raises(ValueError):
            ParamGrid(brightness=(1.0, 0.5, 0.1))

    def test_table_label_format(self):
        p = CalibratorParams(1.1, 0.8, 0.8)
        assert p.table_label(592) == "(1.1,0.8,0.8):592"


BRIGHTNESS_GRID = ParamGrid(brightness=(0.8, 1.2, 0.1))


class TestCalibrate:
    def test_planted_brightness_recovered(self, planted_ds, mock_detector):
        result = calibrate(planted_ds, "darkener", mock_detector, "neq", BRIGHTNESS_GRID)
        assert result.best.brightness == 1.1
        assert result.best_objective == 0.0
        assert result.worst_objective > 0.0
        assert len(result.trace) == 5

    def test_trace_matches_manual_recomputation(self, planted_ds, mock_detector):
        result = calibrate(planted_ds, "darkener", mock_detector, "neq", BRIGHTNESS_GRID)
        sel = planted_ds.selector
        for params, objective in result.trace:
            total = 0.0
            for sample in planted_ds.samples:
                real = mock_detector.detect(sample.load_real(), "r", sample.objects)
                syn = mock_detector.detect(
                    apply_calibrator(sample.load_synthetic("darkener"), params),
                    "s",
                    sample.objects,
                )
                a = sia(inter(real, sample.sd, sel, sample.image_size), sel)
                b = sia(inter(syn, sample.sd, sel, sample.image_size), sel)
                total += attr_loss("neq", a, b)
            assert total == objective

    def test_identity_synthetic_gives_zero_objective(self, tmp_path, mock_detector):
        # Synthetic identical to real: identity parameters reach the lower bound.
        root = tmp_path / "ident"
        manifest = planted.write_planted_dataset(root, n_samples=2)
        import json

        data = json.loads(manifest.read_text())
        for sample in data["samples"]:
            sample["synthetic"]["darkener"] = sample["real_image"]
        manifest.write_text(json.dumps(data))
        ds = load_manifest(manifest)
        result = calibrate(ds, "darkener", mock_detector, "neq", BRIGHTNESS_GRID)
        identity_entries = [obj for p, obj in result.trace if p.is_identity()]
        assert identity_entries == [0.0]
        assert result.best_objective == 0.0

    def test_l1_loss_counts_attribute_flips(self, planted_ds, mock_detector):
        neq = calibrate(planted_ds, "darkener", mock_detector, "neq", BRIGHTNESS_GRID)
        l1 = calibrate(planted_ds, "darkener", mock_detector, "l1", BRIGHTNESS_GRID)
        assert l1.best.brightness == 1.1
        # Attribute flips are at least as numerous as flipped samples.
        for (_, o_l1), (_, o_neq) in zip(l1.trace, neq.trace):
            assert o_l1 >= o_neq

    def test_fnr_loss_against_direct_sum(self, planted_ds, mock_detector):
        from safidel.fidelity import fnr_consistency

        result = calibrate(planted_ds, "darkener", mock_detector, "fnr", BRIGHTNESS_GRID)
        for params, objective in result.trace:
            total = 0.0
            for sample in planted_ds.samples:
                real = mock_detector.detect(sample.load_real(), "r", sample.objects)
                syn = mock_detector.detect(
                    apply_calibrator(sample.load_synthetic("darkener"), params),
                    "s",
                    sample.objects,
                )
                total += fnr_consistency(
                    sample.objects, real, syn, planted_ds.selector, 0.5
                )
            assert total == pytest.approx(objective)

    def test_jobs_do_not_change_result(self, planted_ds, mock_detector):
        seq = calibrate(planted_ds, "darkener", mock_detector, "neq", BRIGHTNESS_GRID, jobs=1)
        par = calibrate(planted_ds, "darkener", mock_detector, "neq", BRIGHTNESS_GRID, jobs=4)
        assert seq.trace == par.trace

    def test_tie_break_earliest_candidate(self, planted_ds):
        from safidel.detector import MockRule

        # A detector that never fires makes every candidate equally good.
        blind = MockDetector(MockRule(min_area=1e9))
        result = calibrate(planted_ds, "darkener", blind, "neq", BRIGHTNESS_GRID)
        assert result.best == result.trace[0][0]
        assert result.worst == result.trace[0][0]

    def test_unknown_generator_rejected(self, planted_ds, mock_detector):
        with pytest.raises(ValueError, match="generator"):
            calibrate(planted_ds, "nope", mock_detector, "neq", BRIGHTNESS_GRID)

    def test_unknown_loss_rejected(self, planted_ds, mock_detector):
        with pytest.raises(ValueError, match="loss"):
            calibrate(planted_ds, "darkener", mock_detector, "linf", BRIGHTNESS_GRID)

    def test_empty_dataset_rejected(self, tmp_path, mock_detector):
        import json

        manifest = tmp_path / "empty.json"
        manifest.write_text(json.dumps({"generators": ["g"], "samples": []}))
        with pytest.warns(UserWarning):
            ds = load_manifest(manifest)
        with pytest.raises(ValueError, match="empty"):
            calibrate(ds, "g", mock_detector, "neq", BRIGHTNESS_GRID)

    def test_detector_failure_names_sample(self, planted_ds):
        class Exploding:
            detector_id = "boom"

            def detect(self, img, image_id, gt=()):
                raise RuntimeError("kaput")

        with pytest.raises(CalibrationError, match="scene_000"):
            calibrate(planted_ds, "darkener", Exploding(), "neq", BRIGHTNESS_GRID)


class TestRandomSearch:
    BOUNDS = {"brightness": (0.8, 1.2)}

    def test_single_sample_trace(self, planted_ds, mock_detector):
        result = random_search(
            planted_ds, "darkener", mock_detector, "neq", self.BOUNDS, 1, seed=7
        )
        assert len(result.trace) == 1
        assert result.best == result.worst

    def test_same_seed_same_trace(self, planted_ds, mock_detector):
        a = random_search(planted_ds, "darkener", mock_detector, "neq", self.BOUNDS, 20, seed=3)
        b = random_search(planted_ds, "darkener", mock_detector, "neq", self.BOUNDS, 20, seed=3)
        assert a.trace == b.trace

    def test_unsampled_axes_stay_identity(self, planted_ds, mock_detector):
        result = random_search(
            planted_ds, "darkener", mock_detector, "neq", self.BOUNDS, 5, seed=1
        )
        for params, _ in result.trace:
            assert params.contrast == 1.0
            assert params.sharpness == 1.0
            assert params.blur_sigma == 0.0

    def test_bad_bounds_rejected(self, planted_ds, mock_detector):
        with pytest.raises(ValueError):
            random_search(planted_ds, "darkener", mock_detector, "neq", {"hue": (0, 1)}, 2, 0)
        with pytest.raises(ValueError):
            random_search(planted_ds, "darkener", mock_detector, "neq", self.BOUNDS, 0, 0)

    def test_matches_grid_optimum_across_seeds(self, tmp_path_factory, mock_detector):
        # The zero-loss brightness basin is wide enough that 500 uniform
        # draws hit it essentially always; demand at least 95 of 100 seeds.
        root = tmp_path_factory.mktemp("planted_rs")
        ds = load_manifest(planted.write_planted_dataset(root, n_samples=1))
        grid_best = calibrate(ds, "darkener", mock_detector, "neq", BRIGHTNESS_GRID).best_objective
        hits = 0
        for seed in range(100):
            result = random_search(
                ds, "darkener", mock_detector, "neq", self.BOUNDS, 500, seed=seed
            )
            if result.best_objective <= grid_best:
                hits += 1
        assert hits >= 95
