"""Pretrained (or seeded random) torchvision detectors behind the wire protocol."""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image
from torchvision.models import detection as tv_detection

SUPPORTED_MODELS = ("ssd300_vgg16", "fasterrcnn_resnet50", "fcos_resnet50")

_BUILDERS = {
    "ssd300_vgg16": (tv_detection.ssd300_vgg16, "SSD300_VGG16_Weights"),
    "fasterrcnn_resnet50": (tv_detection.fasterrcnn_resnet50_fpn, "FasterRCNN_ResNet50_FPN_Weights"),
    "fcos_resnet50": (tv_detection.fcos_resnet50_fpn, "FCOS_ResNet50_FPN_Weights"),
}


@dataclass
class ServiceConfig:
    model: str = "fcos_resnet50"
    device: str = "cpu"
    score_floor: float = 0.0
    layers: tuple[str, ...] = ()  # served backbone stages; empty = all available
    transport: str = "stdio"
    port: int = 0
    weights: str = "pretrained"  # "pretrained" needs downloadable checkpoints
    seed: int = 0
    min_size: int | None = None
    max_size: int | None = None

    def __post_init__(self):
        if self.model not in SUPPORTED_MODELS:
            raise ValueError(f"model must be one of {SUPPORTED_MODELS}, got {self.model!r}")
        if not 0.0 <= self.score_floor <= 1.0:
            raise ValueError("score_floor must be in [0, 1]")
        if self.weights not in ("pretrained", "random"):
            raise ValueError("weights must be 'pretrained' or 'random'")
        if self.transport not in ("stdio", "http"):
            raise ValueError("transport must be 'stdio' or 'http'")


class DetectorService:
    """Owns one model instance; single in-flight inference per process."""

    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)

        builder, weights_enum_name = _BUILDERS[cfg.model]
        kwargs = {}
        if cfg.min_size is not None:
            kwargs["min_size"] = cfg.min_size
        if cfg.max_size is not None:
            kwargs["max_size"] = cfg.max_size
        if cfg.weights == "pretrained":
            weights = getattr(tv_detection, weights_enum_name).DEFAULT
            self.model = builder(weights=weights, **kwargs)
            self.categories = list(weights.meta["categories"])
        else:
            self.model = builder(weights=None, weights_backbone=None, **kwargs)
            self.categories = None
        self.model.eval()
        self.model.to(cfg.device)
        self._captured: dict[str, torch.Tensor] = {}
        self.model.backbone.register_forward_hook(self._capture)

    def _capture(self, module, inputs, output):
        if hasattr(output, "items"):
            self._captured = dict(output.items())
        else:
            self._captured = {"0": output}

    def available_layers(self) -> tuple[str, ...]:
        if self.cfg.layers:
            return tuple(self.cfg.layers)
        probe = torch.zeros(3, 64, 64, device=self.cfg.device)
        with torch.no_grad():
            self.model([probe])
        return tuple(self._captured.keys())

    def label_name(self, index: int) -> str:
        if self.categories and 0 <= index < len(self.categories):
            return self.categories[index]
        return f"class_{index}"

    def infer(self, image_bytes: bytes, layers: list[str], score_threshold: float) -> dict:
        """Run one image; returns the response payload sans id."""
        image = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        array = np.asarray(image, dtype=np.float32) / 255.0
        tensor = torch.from_numpy(array).permute(2, 0, 1).to(self.cfg.device)

        served = set(self.cfg.layers) if self.cfg.layers else None
        for layer in layers:
            if served is not None and layer not in served:
                raise ValueError(f"layer {layer!r} not served (serving {sorted(served)})")

        self._captured = {}
        with torch.no_grad():
            (output,) = self.model([tensor])

        floor = max(score_threshold, self.cfg.score_floor)
        detections = []
        for box, label, score in zip(
            output["boxes"].cpu(), output["labels"].cpu(), output["scores"].cpu()
        ):
            s = float(score)
            if s < floor:
                continue
            x1, y1, x2, y2 = (float(v) for v in box)
            if x2 <= x1 or y2 <= y1:
                continue
            detections.append(
                {"label": self.label_name(int(label)), "bbox": [x1, y1, x2, y2], "score": s}
            )

        payload: dict = {"detections": detections}
        if layers:
            features = {}
            for layer in layers:
                if layer not in self._captured:
                    raise ValueError(f"layer {layer!r} not produced by the backbone")
                pooled = torch.nn.functional.adaptive_avg_pool2d(self._captured[layer], 1)
                features[layer] = [float(v) for v in pooled.flatten().cpu()]
            payload["features"] = features
        return payload

    def handle_request(self, msg: dict) -> dict:
        """Protocol request -> protocol response; errors become the error field."""
        request_id = msg.get("id") if isinstance(msg, dict) else None
        try:
            if not isinstance(msg, dict):
                raise ValueError("request must be a JSON object")
            raw = base64.b64decode(msg["image_png_b64"], validate=True)
            layers = list(msg.get("layers", []))
            threshold = float(msg.get("score_threshold", 0.0))
            payload = self.infer(raw, layers, threshold)
        except Exception as exc:  # per-request failures keep the process alive
            return {"id": request_id, "detections": [], "error": str(exc)}
        return {"id": request_id, **payload}
