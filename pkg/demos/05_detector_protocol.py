#!/usr/bin/env python3
# Talking to an external detector over the line-delimited JSON protocol,
# and caching its answers by image content so reruns are free.

import sys
import tempfile
import textwrap
from pathlib import Path

import numpy as np

from safidel import (
    CachingDetector,
    DetectionCache,
    DetectorHandle,
    ImageTensor,
    image_digest,
)

# A tiny stand-in detector speaking the wire protocol on stdio: it answers
# every request with one detection whose score is the mean pixel value.
WORKER = textwrap.dedent(
    """
    import base64, io, json, sys
    from PIL import Image

    for line in sys.stdin:
        msg = json.loads(line)
        img = Image.open(io.BytesIO(base64.b64decode(msg["image_png_b64"]))).convert("L")
        data = img.tobytes()
        score = round(sum(data) / (len(data) * 255.0), 6)
        print(json.dumps({"id": msg["id"], "detections": [
            {"label": "Car", "bbox": [1.0, 1.0, 9.0, 9.0], "score": score}]}))
        sys.stdout.flush()
    """
)

rng = np.random.default_rng(0)
frame = ImageTensor(rng.random((12, 12, 1)) * 0.5 + 0.25)

with tempfile.TemporaryDirectory() as tmp:
    worker_path = Path(tmp) / "worker.py"
    worker_path.write_text(WORKER)

    handle = DetectorHandle.from_spec(
        f"cmd:{sys.executable} {worker_path}", score_threshold=0.1
    )
    cache = DetectionCache(Path(tmp) / "cache")
    detector = CachingDetector(handle, cache)

    with handle:
        first = detector.detect(frame, "frame_0")
        print("detector answered:", first.to_json_dict())

        digest = image_digest(frame)
        print("content digest:", digest[:16], "…")
        print("cache hit now:", cache.get(handle.detector_id, digest) is not None)

        again = detector.detect(frame, "frame_0_rerun")
        print("second call served from cache, same boxes:",
              [d.to_json_dict() for d in again.detections]
              == [d.to_json_dict() for d in first.detections])
