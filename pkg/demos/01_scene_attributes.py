#!/usr/bin/env python3
# Scene attributes: encode labeled objects into grid-cell occupancy
# attributes, rewrite detector output into the same vocabulary, and compare
# the safety-influencing subset.

from safidel import (
    AttributeSelector,
    BoundingBox,
    Detection,
    DetectionSet,
    attr_loss,
    encode_ground_truth,
    inter,
    pia,
    safety_similar,
    sia,
)
from safidel.dataset import GroundTruthObject

SIZE = (200.0, 120.0)
sel = AttributeSelector(grid_rows=2, grid_cols=3, area_threshold=900.0)


def car(x1, y1, x2, y2):
    return GroundTruthObject(
        label="Car", truncated=0.0, occluded=0, alpha=0.0,
        bbox=BoundingBox(x1, y1, x2, y2),
        dimensions=(1.5, 1.6, 3.6), location=(0.0, 1.7, 20.0), rotation_y=0.0,
    )


# A close-by car (large box) and a distant one (small box).
near, far = car(10, 10, 60, 50), car(150, 20, 165, 32)
sd = encode_ground_truth([near, far], SIZE, sel)
print("scene attributes (1 = occupied):")
for name, value in sd.items():
    if value:
        print(f"  {name} = {value:g}")

# A detector that only finds the close-by car.
dets = DetectionSet("frame_0", [Detection("Car", near.bbox, 0.93)])
interpreted = inter(dets, sd, sel, SIZE)
print("\nperceivable attributes:", sorted(pia(interpreted, sel).names()))
print("safety-influencing subset:", dict(sia(interpreted, sel).items()))

# Missing the distant car changes the *_any attributes but no *_near ones,
# so the scene is still safety-equivalent to perfect perception.
perfect = DetectionSet("frame_0", [Detection("Car", near.bbox, 0.93),
                                   Detection("Car", far.bbox, 0.88)])
print("\nsafety similar to perfect perception:",
      safety_similar(sd, dets, perfect, sel, SIZE))
print("attribute L1 gap (all perceivable):",
      attr_loss("l1", pia(interpreted, sel), pia(inter(perfect, sd, sel, SIZE), sel)))
