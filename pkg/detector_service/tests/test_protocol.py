import json

import numpy as np
import pytest

from conftest import png_b64, random_png_b64


def assert_schema_valid(response, expect_id):
    assert set(response) <= {"id", "detections", "features", "error"}
    assert response["id"] == expect_id
    assert isinstance(response["detections"], list)
    for det in response["detections"]:
        assert set(det) == {"label", "bbox", "score"}
        assert isinstance(det["label"], str)
        x1, y1, x2, y2 = det["bbox"]
        assert x1 < x2 and y1 < y2
        assert 0.0 <= det["score"] <= 1.0
    if "features" in response:
        for layer, vec in response["features"].items():
            assert isinstance(layer, str)
            assert all(isinstance(v, (int, float)) for v in vec)
    if "error" in response and response["error"]:
        assert isinstance(response["error"], str)


def test_hundred_golden_requests_schema_and_ids(fcos_service):
    rng = np.random.default_rng(99)
    for i in range(100):
        request_id = f"golden_{i:03d}"
        kind = i % 10
        if kind == 7:  # broken payload: error echoed with the id
            payload = {"id": request_id, "image_png_b64": "@@@", "layers": []}
            response = fcos_service.request(payload)
            assert_schema_valid(response, request_id)
            assert response["error"]
            continue
        if kind == 8:  # unknown layer: error echoed with the id
            payload = {
                "id": request_id,
                "image_png_b64": random_png_b64(rng),
                "layers": ["not_a_layer"],
            }
            response = fcos_service.request(payload)
            assert_schema_valid(response, request_id)
            assert "not_a_layer" in response["error"]
            continue
        layers = ["0", "2"] if kind == 9 else []
        payload = {
            "id": request_id,
            "image_png_b64": random_png_b64(
                rng, height=int(rng.integers(16, 48)), width=int(rng.integers(16, 48))
            ),
            "layers": layers,
            "score_threshold": 0.0,
        }
        response = fcos_service.request(payload)
        assert_schema_valid(response, request_id)
        assert not response.get("error")
        if layers:
            assert set(response["features"]) == set(layers)
        else:
            assert "features" not in response


def test_malformed_json_line_answered_without_id(fcos_service):
    response = fcos_service.send_line("{this is not json")
    assert response["id"] is None
    assert response["error"]
    # and the process is still alive
    follow_up = fcos_service.request(
        {"id": "after", "image_png_b64": random_png_b64(np.random.default_rng(1)), "layers": []}
    )
    assert follow_up["id"] == "after"


def test_feature_dimension_constant_across_images(fcos_service):
    rng = np.random.default_rng(5)
    dims = []
    for i in range(2):
        response = fcos_service.request(
            {
                "id": f"dim_{i}",
                "image_png_b64": random_png_b64(rng, height=20 + 12 * i, width=30 + 8 * i),
                "layers": ["0", "1"],
                "score_threshold": 0.0,
            }
        )
        assert not response.get("error")
        dims.append({k: len(v) for k, v in response["features"].items()})
    assert dims[0] == dims[1]
    assert all(n > 0 for n in dims[0].values())


def test_repeated_inference_bitwise_stable(ssd_service):
    rng = np.random.default_rng(31)
    image = random_png_b64(rng, height=40, width=56)
    answers = []
    for i in range(3):
        response = ssd_service.request(
            {"id": f"rep_{i}", "image_png_b64": image, "layers": [], "score_threshold": 0.5}
        )
        assert not response.get("error")
        answers.append(json.dumps(response["detections"], sort_keys=True))
    assert answers[0] == answers[1] == answers[2]
    assert json.loads(answers[0])  # detections actually exist on this model


def test_boxes_stay_inside_the_image(ssd_service):
    rng = np.random.default_rng(41)
    height, width = 36, 52
    response = ssd_service.request(
        {
            "id": "bounds",
            "image_png_b64": random_png_b64(rng, height=height, width=width),
            "layers": [],
            "score_threshold": 0.5,
        }
    )
    assert not response.get("error")
    assert response["detections"]
    for det in response["detections"]:
        x1, y1, x2, y2 = det["bbox"]
        assert 0.0 <= x1 < x2 <= width
        assert 0.0 <= y1 < y2 <= height


def test_score_floor_filters(fcos_service):
    rng = np.random.default_rng(8)
    response = fcos_service.request(
        {
            "id": "floor",
            "image_png_b64": random_png_b64(rng),
            "layers": [],
            "score_threshold": 0.99,
        }
    )
    assert not response.get("error")
    for det in response["detections"]:
        assert det["score"] >= 0.99


def test_black_image_high_floor_is_empty(fcos_service):
    black = png_b64(np.zeros((32, 32, 3), dtype=np.uint8))
    response = fcos_service.request(
        {"id": "black", "image_png_b64": black, "layers": [], "score_threshold": 0.9}
    )
    assert not response.get("error")
    assert response["detections"] == []
