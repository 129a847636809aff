"""Parametric post-transforms on synthetic images and their calibration.

The transform is a fixed pipeline contrast -> brightness -> sharpness ->
Gaussian blur (the stages do not commute, so the order is part of the
contract); each enhancement blends the image toward a degenerate version
of itself and clamps to [0, 1].  Calibration minimizes a per-sample loss
between detector outputs on the real image and on the transformed
synthetic image, summed over a paired dataset, via exhaustive grid search
or seeded random search.
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .dataset import ImageTensor, PairedDataset
from .fidelity import DetectionSet, fnr_consistency
from .scenario import attr_loss, inter, sia

ENHANCEMENT_KINDS = ("brightness", "contrast", "sharpness")
LOSSES = ("neq", "l1", "fnr")

# 3x3 smoothing kernel used as the sharpness degenerate image.
_SMOOTH_KERNEL = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


@dataclass(frozen=True)
class CalibratorParams:
    """One transform configuration; (1, 1, 1, 0) is the exact identity."""

    contrast: float = 1.0
    brightness: float = 1.0
    sharpness: float = 1.0
    blur_sigma: float = 0.0

    def __post_init__(self):
        if self.contrast <= 0 or self.brightness <= 0 or self.sharpness <= 0:
            raise ValueError("enhancement factors must be positive")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")

    def is_identity(self) -> bool:
        return (
            self.contrast == 1.0
            and self.brightness == 1.0
            and self.sharpness == 1.0
            and self.blur_sigma == 0.0
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.contrast, self.brightness, self.sharpness, self.blur_sigma)

    def table_label(self, objective: float) -> str:
        """Render as "(contrast,brightness,sharpness):objective"."""
        return (
            f"({self.contrast:g},{self.brightness:g},{self.sharpness:g}):{objective:g}"
        )

    def to_json_dict(self) -> dict:
        return {
            "contrast": self.contrast,
            "brightness": self.brightness,
            "sharpness": self.sharpness,
            "blur_sigma": self.blur_sigma,
        }


def _smoothed(data: np.ndarray) -> np.ndarray:
    """3x3 smoothing with border pixels copied from the input."""
    out = data.copy()
    if data.shape[0] < 3 or data.shape[1] < 3:
        return out
    for ch in range(data.shape[2]):
        conv = ndimage.correlate(data[:, :, ch], _SMOOTH_KERNEL, mode="constant")
        out[1:-1, 1:-1, ch] = conv[1:-1, 1:-1]
    return out


def apply_enhancement(img: ImageTensor, kind: str, factor: float) -> ImageTensor:
    """Blend toward a degenerate image: out = degenerate + factor * (img - degenerate).

    Degenerates: all-black for brightness, the uniform mean-luminance image
    for contrast, the 3x3-smoothed image for sharpness.  Factor 1.0 returns
    the input bit-exactly; output is clamped to [0, 1].
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    if kind not in ENHANCEMENT_KINDS:
        raise ValueError(f"unknown enhancement {kind!r}, expected one of {ENHANCEMENT_KINDS}")
    if factor == 1.0:
        return img
    if kind == "brightness":
        out = img.data * factor
    elif kind == "contrast":
        mean_luma = float(img.luma().mean())
        out = mean_luma + factor * (img.data - mean_luma)
    else:
        degenerate = _smoothed(img.data)
        out = degenerate + factor * (img.data - degenerate)
    return ImageTensor(np.clip(out, 0.0, 1.0))


def apply_gaussian_blur(img: ImageTensor, sigma: float) -> ImageTensor:
    """Separable Gaussian blur with edge replication; sigma 0 is the identity."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return img
    kernel = gaussian_kernel(sigma)
    out = img.data.astype(np.float64, copy=True)
    out = ndimage.correlate1d(out, kernel, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="nearest")
    return ImageTensor(np.clip(out, 0.0, 1.0))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian of radius ceil(3*sigma), renormalized to sum 1."""
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def apply_calibrator(img: ImageTensor, p: CalibratorParams) -> ImageTensor:
    """Apply contrast, brightness, sharpness, then blur; dimensions preserved."""
    out = apply_enhancement(img, "contrast", p.contrast)
    out = apply_enhancement(out, "brightness", p.brightness)
    out = apply_enhancement(out, "sharpness", p.sharpness)
    return apply_gaussian_blur(out, p.blur_sigma)


_AXES = ("contrast", "brightness", "sharpness", "blur_sigma")


@dataclass(frozen=True)
class ParamGrid:
    """Per-parameter (start, stop, step) ranges; omitted axes stay at identity."""

    contrast: tuple[float, float, float] | None = None
    brightness: tuple[float, float, float] | None = None
    sharpness: tuple[float, float, float] | None = None
    blur_sigma: tuple[float, float, float] | None = None

    def __post_init__(self):
        for axis in _AXES:
            spec = getattr(self, axis)
            if spec is None:
                continue
            start, stop, step = spec
            if start > stop:
                raise ValueError(f"{axis}: start must be <= stop")
            if step <= 0:
                raise ValueError(f"{axis}: step must be positive")

    def axis_values(self, axis: str) -> list[float]:
        spec = getattr(self, axis)
        if spec is None:
            return [0.0] if axis == "blur_sigma" else [1.0]
        start, stop, step = spec
        count = int(math.floor((stop - start) / step + 1 + 1e-9))
        return [round(start + i * step, 10) for i in range(count)]

    @classmethod
    def parse(cls, spec: str) -> "ParamGrid":
        """Parse "contrast=0.8:1.2:0.1,brightness=..." grid syntax.

        A bare "start:stop:step" is shorthand for applying that range to
        contrast, brightness, and sharpness.
        """
        spec = spec.strip()
        if not spec:
            return cls()
        if "=" not in spec:
            rng = _parse_range(spec)
            return cls(contrast=rng, brightness=rng, sharpness=rng)
        kwargs = {}
        for part in spec.split(","):
            name, _, rng_text = part.partition("=")
            name = name.strip()
            if name == "blur":
                name = "blur_sigma"
            if name not in _AXES:
                raise ValueError(f"unknown grid parameter {name!r}")
            kwargs[name] = _parse_range(rng_text)
        return cls(**kwargs)


def _parse_range(text: str) -> tuple[float, float, float]:
    parts = text.strip().split(":")
    if len(parts) != 3:
        raise ValueError(f"range {text!r} must be start:stop:step")
    return (float(parts[0]), float(parts[1]), float(parts[2]))


def enumerate_grid(g: ParamGrid) -> list[CalibratorParams]:
    """All grid candidates, contrast varying slowest, then brightness,
    sharpness, blur."""
    out = []
    for c in g.axis_values("contrast"):
        for b in g.axis_values("brightness"):
            for s in g.axis_values("sharpness"):
                for blur in g.axis_values("blur_sigma"):
                    out.append(CalibratorParams(c, b, s, blur))
    return out


@dataclass
class CalibrationResult:
    best: CalibratorParams
    best_objective: float
    worst: CalibratorParams
    worst_objective: float
    trace: list[tuple[CalibratorParams, float]]

    def to_json_dict(self) -> dict:
        return {
            "best": self.best.to_json_dict(),
            "best_objective": self.best_objective,
            "best_cell": self.best.table_label(self.best_objective),
            "worst": self.worst.to_json_dict(),
            "worst_objective": self.worst_objective,
            "worst_cell": self.worst.table_label(self.worst_objective),
            "trace": [
                {"params": p.to_json_dict(), "objective": obj} for p, obj in self.trace
            ],
        }


class CalibrationError(RuntimeError):
    pass


def _sample_losses(
    sample,
    generator: str,
    detector,
    loss: str,
    candidates: Sequence[CalibratorParams],
    sel,
    iou_min: float,
) -> list[float]:
    """Per-candidate loss contributions of one paired sample.

    The real side does not depend on the transform, so it is detected once.
    """
    try:
        real_img = sample.load_real()
        real_dets = detector.detect(
            real_img, image_id=f"{sample.sample_id}::real", gt=sample.objects
        )
    except Exception as exc:
        raise CalibrationError(
            f"detector failed on real image of sample {sample.sample_id!r}: {exc}"
        ) from exc
    size = sample.image_size
    if loss in ("neq", "l1"):
        real_ref = sia(inter(real_dets, sample.sd, sel, size), sel)

    syn_img = sample.load_synthetic(generator)
    losses = []
    for idx, params in enumerate(candidates):
        try:
            transformed = apply_calibrator(syn_img, params)
            syn_dets = detector.detect(
                transformed,
                image_id=f"{sample.sample_id}::{generator}::{idx}",
                gt=sample.objects,
            )
        except CalibrationError:
            raise
        except Exception as exc:
            raise CalibrationError(
                f"detector failed on sample {sample.sample_id!r} at params "
                f"{params.as_tuple()}: {exc}"
            ) from exc
        if loss == "fnr":
            value = fnr_consistency(sample.objects, real_dets, syn_dets, sel, iou_min)
        else:
            syn_ref = sia(inter(syn_dets, sample.sd, sel, size), sel)
            value = attr_loss(loss, real_ref, syn_ref)
        losses.append(value)
    return losses


def _evaluate_candidates(
    ds: PairedDataset,
    generator: str,
    detector,
    loss: str,
    candidates: Sequence[CalibratorParams],
    iou_min: float,
    jobs: int,
) -> CalibrationResult:
    if generator not in ds.generators:
        raise ValueError(f"generator {generator!r} not in dataset ({ds.generators})")
    if not ds.samples:
        raise ValueError("dataset is empty")
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}, expected one of {LOSSES}")
    if not candidates:
        raise ValueError("no candidates to evaluate")

    sel = ds.selector

    def work(sample):
        return _sample_losses(sample, generator, detector, loss, candidates, sel, iou_min)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_sample = list(pool.map(work, ds.samples))
    else:
        per_sample = [work(s) for s in ds.samples]

    # Reduce in manifest order so sums are bit-identical for any job count.
    objectives = [0.0] * len(candidates)
    for losses in per_sample:
        for i, value in enumerate(losses):
            objectives[i] += value

    best_i = min(range(len(candidates)), key=lambda i: (objectives[i], i))
    worst_i = max(range(len(candidates)), key=lambda i: (objectives[i], -i))
    return CalibrationResult(
        best=candidates[best_i],
        best_objective=objectives[best_i],
        worst=candidates[worst_i],
        worst_objective=objectives[worst_i],
        trace=list(zip(candidates, objectives)),
    )


def calibrate(
    ds: PairedDataset,
    generator: str,
    detector,
    loss: str,
    grid: ParamGrid,
    *,
    iou_min: float = 0.5,
    jobs: int = 1,
) -> CalibrationResult:
    """Exhaustive grid search for the transform minimizing the summed loss.

    ``loss`` is one of "neq" (count of samples whose safety attributes
    disagree), "l1" (summed absolute attribute differences), or "fnr"
    (summed miss-rate gaps).  Ties go to the earliest grid candidate.
    """
    return _evaluate_candidates(
        ds, generator, detector, loss, enumerate_grid(grid), iou_min, jobs
    )


def random_search(
    ds: PairedDataset,
    generator: str,
    detector,
    loss: str,
    bounds: Mapping[str, tuple[float, float]],
    n_samples: int,
    seed: int,
    *,
    iou_min: float = 0.5,
    jobs: int = 1,
) -> CalibrationResult:
    """Evaluate ``n_samples`` parameter draws taken uniformly from ``bounds``.

    ``bounds`` maps axis names (contrast, brightness, sharpness, blur_sigma)
    to (low, high); omitted axes stay at identity.  Draws are made with a
    seeded generator in fixed axis order, so the trace is reproducible.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    for axis in bounds:
        if axis not in _AXES:
            raise ValueError(f"unknown bounds parameter {axis!r}")
    rng = random.Random(seed)
    candidates = []
    for _ in range(n_samples):
        draw = {}
        for axis in _AXES:
            if axis in bounds:
                lo, hi = bounds[axis]
                draw[axis] = rng.uniform(lo, hi)
        candidates.append(CalibratorParams(**draw))
    return _evaluate_candidates(ds, generator, detector, loss, candidates, iou_min, jobs)
