"""Bridges to external perception functions, plus a deterministic mock.

The wire protocol is line-delimited JSON over a subprocess's stdio or the
same body POSTed to an HTTP endpoint::

    request:  {"id": str, "image_png_b64": str, "layers": [str],
               "score_threshold": number}
    response: {"id": str, "detections": [{"label": str,
               "bbox": [x1, y1, x2, y2], "score": number}],
               "features": {layer: [numbers]}, "error": str?}

Responses may arrive out of order; they are correlated by id.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import requests
from PIL import Image

from .boxes import BoundingBox
from .dataset import GroundTruthObject, ImageTensor
from .fidelity import Detection, DetectionSet

SUBPROCESS_STDIO = "subprocess-stdio"
HTTP = "http"


class DetectorError(RuntimeError):
    pass


def encode_png_b64(img: ImageTensor) -> str:
    u8 = img.to_u8()
    pil = Image.fromarray(u8[:, :, 0], mode="L") if img.channels == 1 else Image.fromarray(u8, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def image_digest(img: ImageTensor, layers: Sequence[str] = ()) -> str:
    """Content hash over the exact u8 pixel bytes, shape, and requested layers."""
    h = hashlib.sha256()
    u8 = img.to_u8()
    h.update(repr(u8.shape).encode())
    h.update(u8.tobytes())
    for layer in sorted(layers):
        h.update(b"|" + layer.encode())
    return h.hexdigest()


def _decode_response(
    payload: dict, request_id: str, requested_layers: Sequence[str], score_threshold: float
) -> DetectionSet:
    if payload.get("error"):
        raise DetectorError(f"detector reported error: {payload['error']}")
    if payload.get("id") != request_id:
        raise DetectorError(
            f"response id {payload.get('id')!r} does not match request {request_id!r}"
        )
    try:
        detections = [
            Detection.from_json_dict(d) for d in payload.get("detections", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise DetectorError(f"malformed detection in response: {exc}") from None
    detections = [d for d in detections if d.score >= score_threshold]
    features = {}
    raw_features = payload.get("features") or {}
    for layer in requested_layers:
        if layer not in raw_features:
            raise DetectorError(f"response missing requested layer {layer!r}")
        features[layer] = np.asarray(raw_features[layer], dtype=np.float64)
    return DetectionSet(image_id=request_id, detections=detections, features=features)


class _StdioClient:
    """One worker subprocess; thread-safe, correlates responses by id."""

    def __init__(self, command: str):
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._write_lock = threading.Lock()
        self._cond = threading.Condition()
        self._responses: dict[str, dict] = {}
        self._dead: str | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError:
                continue  # garbage on stdout; keep waiting for valid frames
            with self._cond:
                self._responses[str(payload.get("id"))] = payload
                self._cond.notify_all()
        with self._cond:
            self._dead = f"detector process exited with code {self._proc.poll()}"
            self._cond.notify_all()

    def request(self, payload: dict, timeout: float) -> dict:
        request_id = payload["id"]
        line = json.dumps(payload)
        with self._write_lock:
            if self._proc.poll() is not None:
                raise DetectorError("detector process is not running")
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise DetectorError(f"failed to write request: {exc}") from None
        with self._cond:
            ok = self._cond.wait_for(
                lambda: request_id in self._responses or self._dead is not None,
                timeout=timeout,
            )
            if request_id in self._responses:
                return self._responses.pop(request_id)
            if not ok:
                raise DetectorError(f"timed out waiting for response {request_id!r}")
            raise DetectorError(self._dead or "detector process died")

    def close(self):
        try:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
        except OSError:
            pass
        if self._proc.poll() is None:
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._reader.join(timeout=5)
        if self._proc.stdout is not None:
            self._proc.stdout.close()


@dataclass
class DetectorHandle:
    """Connection spec for an external detector plus decode policy."""

    transport: str
    endpoint: str
    detector_id: str
    score_threshold: float = 0.5
    requested_layers: tuple[str, ...] = ()
    timeout: float = 120.0
    _client: _StdioClient | None = field(default=None, repr=False, compare=False)
    _counter: int = field(default=0, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if self.transport not in (SUBPROCESS_STDIO, HTTP):
            raise ValueError(f"unknown transport {self.transport!r}")
        if not self.detector_id:
            raise ValueError("detector_id must be non-empty")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must be in [0, 1]")

    @classmethod
    def from_spec(
        cls,
        spec: str,
        score_threshold: float = 0.5,
        requested_layers: tuple[str, ...] = (),
    ) -> "DetectorHandle":
        """Build a handle from "cmd:<command line>" or an http(s) URL."""
        if spec.startswith("cmd:"):
            endpoint = spec[len("cmd:"):]
            transport = SUBPROCESS_STDIO
        elif spec.startswith(("http://", "https://")):
            endpoint = spec
            transport = HTTP
        elif spec.startswith("http:"):
            endpoint = "http://" + spec[len("http:"):]
            transport = HTTP
        else:
            raise ValueError(f"detector spec must start with cmd: or http(s)://, got {spec!r}")
        digest = hashlib.sha256(endpoint.encode()).hexdigest()[:12]
        return cls(
            transport=transport,
            endpoint=endpoint,
            detector_id=f"{transport}-{digest}",
            score_threshold=score_threshold,
            requested_layers=requested_layers,
        )

    def _next_request_id(self, image_id: str) -> str:
        with self._lock:
            self._counter += 1
            return f"{image_id}#{self._counter}"

    def detect(
        self,
        img: ImageTensor,
        image_id: str,
        gt: Sequence[GroundTruthObject] = (),
    ) -> DetectionSet:
        del gt  # external detectors never see ground truth
        return detect(self, img, image_id)

    def close(self):
        if self._client is not None:
            self._client.close()
            self._client = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def detect(h: DetectorHandle, img: ImageTensor, image_id: str) -> DetectionSet:
    """Run one image through the external detector and decode the response."""
    request_id = h._next_request_id(image_id)
    payload = {
        "id": request_id,
        "image_png_b64": encode_png_b64(img),
        "layers": list(h.requested_layers),
        "score_threshold": h.score_threshold,
    }
    if h.transport == SUBPROCESS_STDIO:
        with h._lock:
            if h._client is None:
                h._client = _StdioClient(h.endpoint)
            client = h._client
        response = client.request(payload, h.timeout)
    else:
        url = h.endpoint.rstrip("/") + "/detect"
        try:
            http_response = requests.post(url, json=payload, timeout=h.timeout)
            http_response.raise_for_status()
            response = http_response.json()
        except requests.RequestException as exc:
            raise DetectorError(f"http transport failure: {exc}") from None
        except ValueError as exc:
            raise DetectorError(f"malformed response body: {exc}") from None
    ds = _decode_response(response, request_id, h.requested_layers, h.score_threshold)
    ds.image_id = image_id
    return ds


@dataclass(frozen=True)
class MockRule:
    """Detection rule for the deterministic mock: an object is reported iff
    its bbox area, mean luminance, and RMS contrast all pass."""

    min_area: float = 100.0
    luma_window: tuple[float, float] = (0.0, 1.0)
    min_rms_contrast: float = 0.0

    def __post_init__(self):
        lo, hi = self.luma_window
        if lo > hi:
            raise ValueError("luma_window low bound exceeds high bound")


def detect_mock(
    rule: MockRule, img: ImageTensor, gt: Sequence[GroundTruthObject]
) -> DetectionSet:
    """Deterministic stand-in for a detector, driven by bbox pixel statistics.

    Each non-don't-care object is detected iff its area is >= ``min_area``,
    its mean luminance lies in ``luma_window``, and the RMS contrast
    (population std of luminance) over the bbox is >= ``min_rms_contrast``.
    Scores grow with area: 0.5 + 0.5 * min(1, area / (2 * min_area)).
    """
    luma = img.luma()
    lo, hi = rule.luma_window
    detections = []
    for obj in gt:
        if obj.dont_care:
            continue
        box = obj.bbox.clamped(img.width, img.height)
        area = box.area
        if area < rule.min_area:
            continue
        region = luma[
            int(np.floor(box.y1)) : int(np.ceil(box.y2)),
            int(np.floor(box.x1)) : int(np.ceil(box.x2)),
        ]
        if region.size == 0:
            continue
        mean = float(region.mean())
        rms = float(region.std())
        if not (lo <= mean <= hi) or rms < rule.min_rms_contrast:
            continue
        score = 0.5 + 0.5 * min(1.0, area / (2.0 * rule.min_area))
        detections.append(Detection(label=obj.label, bbox=obj.bbox, score=score))
    return DetectionSet(image_id="", detections=detections)


@dataclass
class MockDetector:
    """Adapter giving the mock the same detect() surface as a wire detector."""

    rule: MockRule
    detector_id: str = "mock"

    def detect(
        self,
        img: ImageTensor,
        image_id: str,
        gt: Sequence[GroundTruthObject] = (),
    ) -> DetectionSet:
        ds = detect_mock(self.rule, img, gt)
        ds.image_id = image_id
        return ds

    def close(self):
        pass


class DetectionCache:
    """Content-addressed detection store: one JSON file per (detector, digest)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, detector_id: str, digest: str) -> Path:
        safe = detector_id.replace("/", "_")
        return self.root / safe / f"{digest}.json"

    def get(self, detector_id: str, digest: str) -> DetectionSet | None:
        path = self._path(detector_id, digest)
        try:
            payload = json.loads(path.read_text())
            return DetectionSet.from_json_dict(payload)
        except FileNotFoundError:
            return None
        except (ValueError, KeyError, TypeError, AttributeError):
            # Corrupt entry: treat as a miss and evict.
            path.unlink(missing_ok=True)
            return None

    def put(self, detector_id: str, digest: str, value: DetectionSet) -> None:
        path = self._path(detector_id, digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        # Unique temp name per writer; atomic replace gives last-writer-wins.
        tmp = path.with_name(f".{digest}.{threading.get_ident()}.tmp")
        tmp.write_text(json.dumps(value.to_json_dict(), sort_keys=True))
        tmp.replace(path)


@dataclass
class CachingDetector:
    """Wrap any detector with the persistent content-addressed cache."""

    inner: object
    cache: DetectionCache

    @property
    def detector_id(self) -> str:
        return self.inner.detector_id

    def detect(self, img: ImageTensor, image_id: str, gt=()):
        layers = getattr(self.inner, "requested_layers", ())
        digest = image_digest(img, layers)
        hit = self.cache.get(self.detector_id, digest)
        if hit is not None:
            hit.image_id = image_id
            return hit
        result = self.inner.detect(img, image_id, gt)
        self.cache.put(self.detector_id, digest, result)
        return result

    def close(self):
        self.inner.close()
