"""Reference object-detection service for the safidel wire protocol."""

from .service import SUPPORTED_MODELS, DetectorService, ServiceConfig

__all__ = ["SUPPORTED_MODELS", "DetectorService", "ServiceConfig"]
