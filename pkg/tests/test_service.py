from __future__ import annotations

import json

import pytest
from starlette.testclient import TestClient

from agentdriver.service import create_app
from agentdriver.trajectory import Trajectory, encode_trajectory

from .util import scene_doc, detection


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture(scope="session")
def fixture_scene_doc(fixture_path):
    return json.loads(fixture_path.read_text())


def straight_text():
    return encode_trajectory(Trajectory(tuple((0.0, 2.5 * k) for k in range(1, 7))))


def scripted_config(**overrides):
    config = {
        "llm": {
            "kind": "scripted",
            "script": [
                ["*detection module*", "yes"],
                ["*prediction module*", "no"],
                ["*occupancy module*", "no"],
                ["*map module*", "no"],
                ["*detection functions are now available*",
                 [{"tool_call": {"name": "get_leading_object_detection", "arguments": {}}}, "done"]],
                ["*notable objects and their potential effects*",
                 "Notable objects:\n- obj1: leading vehicle\nPotential effects:\n- keep distance"],
                ["*Choose the driving plan*", "move_forward_with_constant_speed"],
                ["*Plan the trajectory*", straight_text()],
                ["*", "no"],
            ],
        }
    }
    for key, value in overrides.items():
        config[key] = value
    return config


def test_health(client):
    body = client.get("/v1/health").json()
    assert body["status"] == "ok"


def test_tools_export(client):
    body = client.get("/v1/tools").json()
    assert len(body["functions"]) == 20
    names = [f["name"] for f in body["functions"]]
    assert "get_leading_object_detection" in names
    assert all(set(f) == {"name", "description", "parameters"} for f in body["functions"])


def test_tools_dispatch_over_the_wire(client, fixture_scene_doc):
    response = client.post(
        "/v1/tools/dispatch",
        json={"scene": fixture_scene_doc, "call": {"name": "get_front_object_detections", "arguments": {}}},
    )
    body = response.json()
    assert response.status_code == 200
    assert [d["object_id"] for d in body["data"]["detections"]] == ["obj1", "obj2"]
    assert body["none_flag"] is False


def test_tools_dispatch_unknown_tool_is_observation_not_error(client, fixture_scene_doc):
    response = client.post(
        "/v1/tools/dispatch", json={"scene": fixture_scene_doc, "call": {"name": "nope"}}
    )
    assert response.status_code == 200
    assert "unknown tool" in response.json()["text"]


def test_decide_happy_path(client, fixture_scene_doc):
    response = client.post("/v1/decide", json={"scene": fixture_scene_doc, "config": scripted_config()})
    assert response.status_code == 200
    body = response.json()
    output = body["output"]
    assert output["scene_id"] == "fixture-threeobj"
    assert output["plan"]["text"] == "move_forward_with_constant_speed"
    assert len(output["trajectory"]) == 6
    assert output["config"]["llm"]["kind"] == "scripted"
    assert body["exchanges"] is None
    roles = [e["turn"]["role"] for e in body["transcript"]]
    assert roles[0] == "system" and "assistant" in roles


def test_decide_scene_validation_error_names_field(client, fixture_scene_doc):
    bad = json.loads(json.dumps(fixture_scene_doc))
    bad["predictions"].append({"object_id": "ghost", "waypoints": [[1, [0.0, 0.0]]]})
    response = client.post("/v1/decide", json={"scene": bad, "config": scripted_config()})
    assert response.status_code == 400
    error = response.json()["error"]
    assert error["type"] == "ValidationError"
    assert "predictions[1].object_id" in error["message"]


def test_decide_record_and_replay_round_trip(client, fixture_scene_doc):
    record_cfg = scripted_config()
    record_cfg["llm"]["record"] = True
    first = client.post("/v1/decide", json={"scene": fixture_scene_doc, "config": record_cfg}).json()
    exchanges = first["exchanges"]
    assert exchanges and all("request" in e for e in exchanges)

    replay_cfg = {"llm": {"kind": "replay", "replay_exchanges": exchanges}}
    second = client.post("/v1/decide", json={"scene": fixture_scene_doc, "config": replay_cfg}).json()
    assert second["output"]["trajectory"] == first["output"]["trajectory"]
    assert second["transcript"] == first["transcript"]


def test_decide_replay_divergence_surfaces(client, fixture_scene_doc):
    record_cfg = scripted_config()
    record_cfg["llm"]["record"] = True
    first = client.post("/v1/decide", json={"scene": fixture_scene_doc, "config": record_cfg}).json()
    mutated = json.loads(json.dumps(fixture_scene_doc))
    mutated["ego"]["velocity"] = [0.0, 9.0]  # changes the ego header prompt
    replay_cfg = {"llm": {"kind": "replay", "replay_exchanges": first["exchanges"]}}
    response = client.post("/v1/decide", json={"scene": mutated, "config": replay_cfg})
    assert response.status_code == 400
    assert response.json()["error"]["type"] == "ReplayDivergence"


def test_decide_backend_unavailable_maps_to_502(client, fixture_scene_doc):
    config = {"llm": {"kind": "http", "endpoint": "http://127.0.0.1:9/none",
                      "retry_attempts": 1, "backoff_start": 0.01}}
    response = client.post("/v1/decide", json={"scene": fixture_scene_doc, "config": config})
    assert response.status_code == 502
    assert response.json()["error"]["type"] == "BackendUnavailable"


def test_evaluate_endpoint(client):
    gt = [[0.0, 2.5 * k] for k in range(1, 7)]
    pred = [[0.0, 2.5 * k + 1.0] for k in range(1, 7)]
    response = client.post(
        "/v1/evaluate",
        json={"samples": [{"pred": pred, "gt": gt}], "convention": "both"},
    )
    body = response.json()
    assert response.status_code == 200
    assert set(body["reports"]) == {"uniad", "stp3"}
    assert body["reports"]["uniad"]["l2_m"]["avg"] == pytest.approx(1.0)
    assert "uniad" in body["table"] and "stp3" in body["table"]


def test_evaluate_empty_set_rejected(client):
    response = client.post("/v1/evaluate", json={"samples": [], "convention": "uniad"})
    assert response.status_code == 400
    assert response.json()["error"]["type"] == "EmptySet"


def test_memory_build_endpoint(client, fixture_scene_doc):
    no_gt = scene_doc(scene_id="no-gt")
    response = client.post(
        "/v1/memory/build", json={"scenes": [fixture_scene_doc, no_gt], "config": {}}
    )
    body = response.json()
    assert response.status_code == 200
    assert len(body["records"]) == 1
    assert body["skipped"] == ["no-gt"]
    assert body["header"]["schema"] == "agentdriver/memory/1"
    assert len(body["records"][0]["key"]) == 5 + 3 + 8


def test_sft_export_endpoint(client, fixture_scene_doc):
    response = client.post("/v1/sft/export", json={"scenes": [fixture_scene_doc]})
    assert response.status_code == 200
    pairs = response.json()["pairs"]
    assert len(pairs) == 1 and "completion" in pairs[0]

    no_gt = scene_doc(scene_id="no-gt")
    response2 = client.post("/v1/sft/export", json={"scenes": [no_gt]})
    assert response2.status_code == 400
    assert response2.json()["error"]["type"] == "MissingGroundTruth"


def test_plot_endpoint_polyline_counts(client, fixture_scene_doc):
    output = {"trajectory": [[0.0, 2.5 * k] for k in range(1, 7)],
              "reasoning": {"notable_objects": [["obj1", "leading"]]}}
    response = client.post("/v1/plot", json={"output": output, "scene": fixture_scene_doc})
    svg = response.json()["svg"]
    assert svg.count("<polyline") == 2  # planned + ground truth

    scene_no_gt = scene_doc(scene_id="plain", detections=[detection("a", 1.0, 5.0)])
    response2 = client.post("/v1/plot", json={"output": output, "scene": scene_no_gt})
    assert response2.json()["svg"].count("<polyline") == 1


def test_plot_endpoint_occupancy_layer(client, fixture_scene_doc):
    output = {"trajectory": [[0.0, 2.5 * k] for k in range(1, 7)]}
    response = client.post(
        "/v1/plot", json={"output": output, "scene": fixture_scene_doc, "include_occupancy": True}
    )
    svg = response.json()["svg"]
    assert 'class="occupancy"' in svg


def test_decide_is_deterministic_across_calls(client, fixture_scene_doc):
    bodies = [
        client.post("/v1/decide", json={"scene": fixture_scene_doc, "config": scripted_config()}).json()
        for _ in range(3)
    ]
    assert bodies[0] == bodies[1] == bodies[2]


def test_evaluate_malformed_boxes_rejected_cleanly(client):
    gt = [[0.0, 2.5 * k] for k in range(1, 7)]
    response = client.post(
        "/v1/evaluate",
        json={"samples": [{"pred": gt, "gt": gt,
                           "gt_boxes_per_step": [[{"oops": 1}], [], [], [], [], []]}]},
    )
    assert response.status_code == 400
    assert response.json()["error"]["type"] == "ValidationError"
