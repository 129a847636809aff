import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from safidel.boxes import BoundingBox
from safidel.dataset import GroundTruthObject, ImageTensor
from safidel.fidelity import Detection, DetectionSet

WORKERS = Path(__file__).parent / "workers"


def make_gt(box, label="Car"):
    return GroundTruthObject(
        label=label,
        truncated=0.0,
        occluded=0,
        alpha=0.0,
        bbox=box if isinstance(box, BoundingBox) else BoundingBox(*box),
        dimensions=(1.5, 1.6, 3.6),
        location=(0.0, 1.7, 20.0),
        rotation_y=0.0,
    )


def random_image(rng, height=12, width=16, channels=1):
    return ImageTensor(rng.random((height, width, channels)))


def grid_gt_boxes(n, box_size=10.0, gap=6.0, per_row=6):
    """Non-overlapping boxes laid out on a grid, left to right, top down."""
    boxes = []
    for i in range(n):
        r, c = divmod(i, per_row)
        x = 1.0 + c * (box_size + gap)
        y = 1.0 + r * (box_size + gap)
        boxes.append(BoundingBox(x, y, x + box_size, y + box_size))
    return boxes


def dets_for(gt, indices, score=0.9):
    """Detections exactly reproducing the given ground-truth boxes."""
    return DetectionSet(
        image_id="dets",
        detections=[
            Detection(label=gt[i].label, bbox=gt[i].bbox, score=score) for i in indices
        ],
    )


def block_mean_detections(img, sel, image_id="blocks"):
    """One detection per grid cell whose score is the cell's mean pixel value.

    With score_threshold 0 the grid embedding of this set equals blockwise
    averaging of the image, which shrinks every vector distance.
    """
    cell_h = img.height / sel.grid_rows
    cell_w = img.width / sel.grid_cols
    dets = []
    for r in range(sel.grid_rows):
        for c in range(sel.grid_cols):
            block = img.data[
                round(r * cell_h) : round((r + 1) * cell_h),
                round(c * cell_w) : round((c + 1) * cell_w),
                :,
            ]
            cx, cy = (c + 0.5) * cell_w, (r + 0.5) * cell_h
            dets.append(
                Detection(
                    label="cell",
                    bbox=BoundingBox(cx - 1, cy - 1, cx + 1, cy + 1),
                    score=float(block.mean()),
                )
            )
    return DetectionSet(image_id=image_id, detections=dets)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
