import base64
import io
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image


def png_b64(array_u8):
    buf = io.BytesIO()
    Image.fromarray(array_u8).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def random_png_b64(rng, height=24, width=32):
    return png_b64(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


class ServiceProcess:
    """A stdio service under test; requests are answered strictly in order."""

    def __init__(self, *args):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "detector_service", "--transport", "stdio", *args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )

    def send_line(self, line: str) -> dict:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        return json.loads(self.proc.stdout.readline())

    def request(self, payload: dict) -> dict:
        return self.send_line(json.dumps(payload))

    def close(self):
        self.proc.stdin.close()
        self.proc.wait(timeout=30)
        self.proc.stdout.close()


@pytest.fixture(scope="session")
def fcos_service():
    svc = ServiceProcess(
        "--model", "fcos_resnet50", "--weights", "random", "--seed", "3",
        "--min-size", "64", "--max-size", "96",
    )
    yield svc
    svc.close()


@pytest.fixture(scope="session")
def ssd_service():
    svc = ServiceProcess(
        "--model", "ssd300_vgg16", "--weights", "random", "--seed", "3",
        "--score-floor", "0.5",
    )
    yield svc
    svc.close()
