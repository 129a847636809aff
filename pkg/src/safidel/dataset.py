"""KITTI-format label parsing, PNG image I/O, and paired-dataset assembly."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .boxes import BoundingBox
from .scenario import AttributeSelector, ScenarioDescription, encode_ground_truth

KITTI_COLUMNS = 15
DONT_CARE_LABEL = "DontCare"


class KittiParseError(ValueError):
    """Raised on a malformed label line; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class GroundTruthObject:
    """One labeled object from a KITTI label file."""

    label: str
    truncated: float
    occluded: int
    alpha: float
    bbox: BoundingBox
    dimensions: tuple[float, float, float]  # h, w, l in meters
    location: tuple[float, float, float]  # x, y, z in meters
    rotation_y: float

    @property
    def dont_care(self) -> bool:
        return self.label == DONT_CARE_LABEL


def parse_kitti_labels(text: str) -> list[GroundTruthObject]:
    """Parse KITTI label text, one object per non-empty line.

    Columns: type, truncated, occluded, alpha, bbox(left top right bottom),
    dimensions(h w l), location(x y z), rotation_y.
    """
    objects = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != KITTI_COLUMNS:
            raise KittiParseError(
                line_no, f"expected {KITTI_COLUMNS} columns, got {len(parts)}"
            )
        label = parts[0]
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise KittiParseError(line_no, f"non-numeric field: {exc}") from None
        try:
            occluded = int(nums[1])
            bbox = BoundingBox(nums[3], nums[4], nums[5], nums[6])
        except ValueError as exc:
            raise KittiParseError(line_no, str(exc)) from None
        objects.append(
            GroundTruthObject(
                label=label,
                truncated=nums[0],
                occluded=occluded,
                alpha=nums[2],
                bbox=bbox,
                dimensions=(nums[7], nums[8], nums[9]),
                location=(nums[10], nums[11], nums[12]),
                rotation_y=nums[13],
            )
        )
    return objects


def format_kitti_labels(objects: Iterable[GroundTruthObject]) -> str:
    """Serialize objects back to KITTI label lines (shortest float repr)."""
    lines = []
    for o in objects:
        fields = [
            o.label,
            repr(o.truncated),
            str(o.occluded),
            repr(o.alpha),
            repr(o.bbox.x1),
            repr(o.bbox.y1),
            repr(o.bbox.x2),
            repr(o.bbox.y2),
            repr(o.dimensions[0]),
            repr(o.dimensions[1]),
            repr(o.dimensions[2]),
            repr(o.location[0]),
            repr(o.location[1]),
            repr(o.location[2]),
            repr(o.rotation_y),
        ]
        lines.append(" ".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """An image as float values in [0, 1], shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) image data, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("empty image")
        if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def flatten(self) -> np.ndarray:
        return self.data.reshape(-1)

    def luma(self) -> np.ndarray:
        """Per-pixel luminance (h, w); identity for single-channel images."""
        if self.channels == 1:
            return self.data[:, :, 0]
        return (
            0.299 * self.data[:, :, 0]
            + 0.587 * self.data[:, :, 1]
            + 0.114 * self.data[:, :, 2]
        )

    def to_u8(self) -> np.ndarray:
        # np.rint rounds halves to even, matching the documented quantization.
        return np.rint(self.data * 255.0).astype(np.uint8)

    @classmethod
    def from_u8(cls, arr: np.ndarray) -> "ImageTensor":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)


def load_image(path: str | Path) -> ImageTensor:
    """Load an 8-bit grayscale or RGB PNG; values map to [0, 1] as v/255."""
    with Image.open(path) as img:
        if img.format != "PNG":
            raise ValueError(f"{path}: only PNG images are supported, got {img.format}")
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.uint8)[:, :, np.newaxis]
        elif img.mode == "RGB":
            arr = np.asarray(img, dtype=np.uint8)
        else:
            raise ValueError(f"{path}: unsupported PNG mode {img.mode!r} (need 8-bit L or RGB)")
    return ImageTensor.from_u8(arr)


def save_image(img: ImageTensor, path: str | Path) -> None:
    """Write an 8-bit PNG; load_image(save_image(x)) is lossless on u8 values."""
    u8 = img.to_u8()
    if img.channels == 1:
        pil = Image.fromarray(u8[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(u8, mode="RGB")
    pil.save(path, format="PNG")


class ManifestError(ValueError):
    pass


@dataclass
class PairedSample:
    """A real image with labels plus its per-generator synthetic counterparts."""

    sample_id: str
    real_image: Path
    labels: Path
    synthetic: dict[str, Path]
    objects: list[GroundTruthObject]
    image_size: tuple[int, int]  # width, height
    sd: ScenarioDescription
    extra_real_images: list[Path] = field(default_factory=list)

    def load_real(self) -> ImageTensor:
        return load_image(self.real_image)

    def load_synthetic(self, generator: str) -> ImageTensor:
        return load_image(self.synthetic[generator])

    def real_world_set(self) -> list[Path]:
        """All real images sharing this sample's scenario description."""
        return [self.real_image, *self.extra_real_images]


@dataclass
class PairedDataset:
    samples: list[PairedSample]
    generators: list[str]
    selector: AttributeSelector

    def __iter__(self):
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)


def _png_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as img:
        return img.size  # (width, height)


def load_manifest(path: str | Path, selector: AttributeSelector | None = None) -> PairedDataset:
    """Load a paired dataset manifest (JSON; paths relative to the manifest).

    Schema::

        {"selector": {...}, "generators": ["name", ...],
         "samples": [{"id": str, "real_image": path, "labels": path,
                      "synthetic": {"name": path, ...},
                      "extra_attributes": {"name": number, ...},
                      "extra_real_images": [path, ...]}, ...]}

    ``selector`` overrides the manifest's selector block when given.
    """
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(manifest, Mapping):
        raise ManifestError(f"{path}: manifest must be a JSON object")

    if selector is None:
        try:
            selector = AttributeSelector.from_json_dict(manifest.get("selector", {}))
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: bad selector: {exc}") from None
    generators = list(manifest.get("generators", []))
    if len(set(generators)) != len(generators):
        raise ManifestError(f"{path}: duplicate generator names")

    base = path.parent
    samples: list[PairedSample] = []
    seen_ids: set[str] = set()
    for entry in manifest.get("samples", []):
        try:
            sample_id = str(entry["id"])
            real_image = base / entry["real_image"]
            labels = base / entry["labels"]
            synthetic_spec = entry.get("synthetic", {})
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: malformed sample entry: {exc}") from None
        if sample_id in seen_ids:
            raise ManifestError(f"duplicate sample id: {sample_id!r}")
        seen_ids.add(sample_id)

        synthetic = {}
        for gen in generators:
            if gen not in synthetic_spec:
                raise ManifestError(
                    f"sample {sample_id!r} has no image for generator {gen!r}"
                )
            synthetic[gen] = base / synthetic_spec[gen]
        for p in (real_image, labels, *synthetic.values()):
            if not p.exists():
                raise ManifestError(f"sample {sample_id!r}: missing file {p}")

        extra_real = [base / p for p in entry.get("extra_real_images", [])]
        for p in extra_real:
            if not p.exists():
                raise ManifestError(f"sample {sample_id!r}: missing file {p}")

        try:
            objects = parse_kitti_labels(labels.read_text())
        except KittiParseError as exc:
            raise ManifestError(f"sample {sample_id!r}: {exc}") from None
        size = _png_size(real_image)
        extra_attrs = ScenarioDescription(
            {str(k): float(v) for k, v in entry.get("extra_attributes", {}).items()}
        )
        sd = encode_ground_truth(objects, size, selector, extra_attrs)
        samples.append(
            PairedSample(
                sample_id=sample_id,
                real_image=real_image,
                labels=labels,
                synthetic=synthetic,
                objects=objects,
                image_size=size,
                sd=sd,
                extra_real_images=extra_real,
            )
        )

    if not samples:
        warnings.warn(f"manifest {path} contains no samples", stacklevel=2)
    return PairedDataset(samples=samples, generators=generators, selector=selector)
