#!/usr/bin/env python3
# The four instance-level fidelity checks against a small set of real
# counterparts.  The reported minimum distance is conservative: shrinking
# the real-world set can only raise it.

import numpy as np

from safidel import (
    AttributeSelector,
    BoundingBox,
    Detection,
    DetectionSet,
    FidelityQuery,
    ImageTensor,
    encode_ground_truth,
    iv_fidelity,
    lf_fidelity,
    ov_fidelity,
    sa_fidelity,
)
from safidel.dataset import GroundTruthObject

rng = np.random.default_rng(42)
SIZE = (16.0, 12.0)
sel = AttributeSelector(grid_rows=2, grid_cols=2, area_threshold=20.0)

# Input-value fidelity: pixel-space distance to the nearest real image.
synthetic = ImageTensor(rng.random((12, 16, 1)))
reals = [ImageTensor(np.clip(synthetic.data + rng.normal(0, s, synthetic.data.shape), 0, 1))
         for s in (0.30, 0.05, 0.15)]
verdict = iv_fidelity(synthetic, reals, FidelityQuery("l2", 3.0))
print(f"IV: min L2 distance {verdict.min_distance:.3f} "
      f"(nearest real #{verdict.witness_id}), holds={verdict.holds}")

subset = reals[:1]
print("IV over a smaller real set:",
      f"{iv_fidelity(synthetic, subset, FidelityQuery('l2', 3.0)).min_distance:.3f}",
      "(never below the full-set minimum)")

# Output-value fidelity: distance between per-cell max-score embeddings.
box = BoundingBox(2, 2, 8, 8)
syn_out = DetectionSet("syn", [Detection("Car", box, 0.9)])
real_out = [DetectionSet("real_a", [Detection("Car", box, 0.8)]),
            DetectionSet("real_b", [])]
ov = ov_fidelity(syn_out, real_out, FidelityQuery("l1", 0.2), sel, SIZE)
print(f"OV: min L1 distance {ov.min_distance:.3f} via {ov.witness_id}, holds={ov.holds}")

# Latent-feature fidelity: every requested layer must be close at once.
syn_feat = DetectionSet("syn", [], {"stage3": np.array([0.2, 0.4]), "stage4": np.array([1.0])})
real_feat = [DetectionSet("real_a", [], {"stage3": np.array([0.2, 0.5]),
                                         "stage4": np.array([0.1])})]
lf = lf_fidelity(syn_feat, real_feat, FidelityQuery("l1", 1.0, ("stage3", "stage4")))
print(f"LF: worst-layer distance {lf.min_distance:.3f}, holds={lf.holds}")

# Safety-aware fidelity forgives the miss of a small (distant) object.
gt = [GroundTruthObject("Car", 0.0, 0, 0.0, box, (1.5, 1.6, 3.6), (0, 1.7, 20), 0.0),
      GroundTruthObject("Car", 0.0, 0, 0.0, BoundingBox(12, 9, 15, 11),
                        (1.5, 1.6, 3.6), (0, 1.7, 80), 0.0)]
sd = encode_ground_truth(gt, SIZE, sel)
syn_dets = DetectionSet("syn", [Detection("Car", box, 0.9)])
real_dets = [DetectionSet("real_a", [Detection("Car", box, 0.85),
                                     Detection("Car", BoundingBox(12, 9, 15, 11), 0.6)])]
sa = sa_fidelity(syn_dets, real_dets, sd, sel, SIZE)
print(f"SA: holds={sa.holds} (only the sub-threshold object differs)")
