import argparse
import sys

from .service import SUPPORTED_MODELS, DetectorService, ServiceConfig
from .transport import serve_http, serve_stdio


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="detector-service",
        description="Object-detection service speaking the safidel wire protocol",
    )
    parser.add_argument("--model", choices=SUPPORTED_MODELS, default="fcos_resnet50")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--score-floor", type=float, default=0.0)
    parser.add_argument("--layers", default="", help="comma-separated served backbone stages")
    parser.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--weights", choices=("pretrained", "random"), default="pretrained")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--min-size", type=int, default=None)
    parser.add_argument("--max-size", type=int, default=None)
    args = parser.parse_args(argv)

    layers = tuple(l for l in args.layers.split(",") if l)
    try:
        cfg = ServiceConfig(
            model=args.model,
            device=args.device,
            score_floor=args.score_floor,
            layers=layers,
            transport=args.transport,
            port=args.port,
            weights=args.weights,
            seed=args.seed,
            min_size=args.min_size,
            max_size=args.max_size,
        )
        service = DetectorService(cfg)
    except Exception as exc:
        print(f"startup failure: {exc}", file=sys.stderr)
        return 1

    if cfg.transport == "stdio":
        serve_stdio(service)
    else:
        serve_http(service, cfg.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
