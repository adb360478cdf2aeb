from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from agentdriver.cli import main
from agentdriver.trajectory import Trajectory, encode_trajectory

from .util import scene_doc

FIXTURES = Path(__file__).parent / "fixtures"


def straight_text():
    return encode_trajectory(Trajectory(tuple((0.0, 2.5 * k) for k in range(1, 7))))


def write_scripted_config(path: Path, **llm_overrides) -> Path:
    llm = {
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
    llm.update(llm_overrides)
    path.write_text(json.dumps({"llm": llm}))
    return path


@pytest.fixture()
def scene_dir(tmp_path):
    d = tmp_path / "scenes"
    d.mkdir()
    shutil.copy(FIXTURES / "scene_threeobj.json", d / "scene_threeobj.json")
    return d


def read_all_bytes(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_run_fixture_scene_creates_outputs(scene_dir, tmp_path, capsys):
    config = write_scripted_config(tmp_path / "config.json")
    out = tmp_path / "out"
    code = main(["run", str(scene_dir), "--config", str(config), "--out", str(out)])
    assert code == 0
    assert (out / "fixture-threeobj.json").exists()
    assert (out / "fixture-threeobj.transcript.jsonl").exists()
    doc = json.loads((out / "fixture-threeobj.json").read_text())
    assert doc["plan"]["text"] == "move_forward_with_constant_speed"
    assert doc["transcript_ref"] == "fixture-threeobj.transcript.jsonl"
    assert "1 scene(s) processed" in capsys.readouterr().out


def test_run_deterministic_bytes(scene_dir, tmp_path):
    config = write_scripted_config(tmp_path / "config.json")
    out_dirs = [tmp_path / "out_a", tmp_path / "out_b"]
    for out in out_dirs:
        assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out)]) == 0
    assert read_all_bytes(out_dirs[0]) == read_all_bytes(out_dirs[1])


def test_run_empty_glob_exits_zero(tmp_path, capsys):
    code = main(["run", str(tmp_path / "nothing*.json"), "--out", str(tmp_path / "out")])
    assert code == 0
    assert "0 scenes" in capsys.readouterr().out


def test_run_unreachable_http_backend_exits_2(scene_dir, tmp_path, capsys):
    code = main(
        [
            "run", str(scene_dir), "--out", str(tmp_path / "out"),
            "--backend", "http", "--endpoint", "http://127.0.0.1:9/none",
            "--set", "llm.retry_attempts=1", "--set", "llm.backoff_start=0.01",
        ]
    )
    assert code == 2
    assert "BackendUnavailable" in capsys.readouterr().err


def test_run_record_then_replay(scene_dir, tmp_path):
    config = write_scripted_config(tmp_path / "config.json")
    out_rec = tmp_path / "rec"
    assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out_rec), "--record"]) == 0
    assert (out_rec / "fixture-threeobj.exchanges.jsonl").exists()

    out_replay = tmp_path / "replay"
    code = main(
        ["run", str(scene_dir), "--config", str(config), "--out", str(out_replay),
         "--replay-dir", str(out_rec)]
    )
    assert code == 0
    rec_doc = json.loads((out_rec / "fixture-threeobj.json").read_text())
    replay_doc = json.loads((out_replay / "fixture-threeobj.json").read_text())
    assert replay_doc["trajectory"] == rec_doc["trajectory"]
    assert replay_doc["reasoning"] == rec_doc["reasoning"]


def test_run_replay_divergence_fails(scene_dir, tmp_path, capsys):
    config = write_scripted_config(tmp_path / "config.json")
    out_rec = tmp_path / "rec"
    assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out_rec), "--record"]) == 0
    # mutate the scene so the recorded prompts no longer match
    scene_file = next(Path(scene_dir).glob("*.json"))
    doc = json.loads(scene_file.read_text())
    doc["ego"]["velocity"] = [0.0, 9.0]
    scene_file.write_text(json.dumps(doc))
    code = main(
        ["run", str(scene_dir), "--config", str(config), "--out", str(tmp_path / "replay"),
         "--replay-dir", str(out_rec)]
    )
    assert code == 1
    assert "ReplayDivergence" in capsys.readouterr().err


def test_memory_build_counts_and_skips(scene_dir, tmp_path, capsys):
    extra = scene_doc(scene_id="no-gt-scene")
    (scene_dir / "no_gt.json").write_text(json.dumps(extra))
    store = tmp_path / "store.jsonl"
    code = main(["memory", "build", str(scene_dir), "--store", str(store)])
    assert code == 0
    lines = [l for l in store.read_text().splitlines() if l.strip()]
    assert len(lines) == 2  # header + 1 record
    assert json.loads(lines[0])["schema"] == "agentdriver/memory/1"
    captured = capsys.readouterr()
    assert "skipped scene no-gt-scene" in captured.err
    assert "1 record(s)" in captured.out

    from agentdriver.memory import ExperienceStore

    loaded = ExperienceStore.load(store)
    assert len(loaded) == 1 and loaded.records[0].scene_id == "fixture-threeobj"


def test_memory_build_empty_glob(tmp_path):
    store = tmp_path / "store.jsonl"
    code = main(["memory", "build", str(tmp_path / "none*.json"), "--store", str(store)])
    assert code == 0
    lines = [l for l in store.read_text().splitlines() if l.strip()]
    assert len(lines) == 1  # header only


def test_run_with_memory_store(scene_dir, tmp_path):
    store = tmp_path / "store.jsonl"
    assert main(["memory", "build", str(scene_dir), "--store", str(store)]) == 0
    config = write_scripted_config(tmp_path / "config.json")
    # extend the script to answer the rerank question
    doc = json.loads(config.read_text())
    doc["llm"]["script"].insert(0, ["*Which past scenario*", "1"])
    doc["memory"] = {"enabled": True, "store_path": str(store), "top_k": 3}
    config.write_text(json.dumps(doc))
    out = tmp_path / "out"
    assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out)]) == 0
    result = json.loads((out / "fixture-threeobj.json").read_text())
    assert result["retrieval"]["chosen_scene_id"] == "fixture-threeobj"


def test_export_sft(scene_dir, tmp_path, capsys):
    out = tmp_path / "pairs.jsonl"
    code = main(["export-sft", str(scene_dir), "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1
    pair = json.loads(lines[0])
    assert pair["scene_id"] == "fixture-threeobj"


def test_export_sft_missing_gt_fails(tmp_path, capsys):
    d = tmp_path / "scenes"
    d.mkdir()
    (d / "no_gt.json").write_text(json.dumps(scene_doc(scene_id="no-gt")))
    code = main(["export-sft", str(d), "--out", str(tmp_path / "pairs.jsonl")])
    assert code == 1
    assert "MissingGroundTruth" in capsys.readouterr().err


def test_evaluate_cli_flow(scene_dir, tmp_path, capsys):
    config = write_scripted_config(tmp_path / "config.json")
    out = tmp_path / "out"
    assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out)]) == 0
    report_path = tmp_path / "report.json"
    code = main(
        ["evaluate", "--outputs", str(out), "--scenes", str(scene_dir),
         "--convention", "both", "--json", str(report_path)]
    )
    assert code == 0
    table = capsys.readouterr().out
    assert "uniad" in table and "stp3" in table
    reports = json.loads(report_path.read_text())
    assert set(reports) == {"uniad", "stp3"}
    # the scripted trajectory equals the ground truth, so L2 is zero
    assert reports["uniad"]["l2_m"]["avg"] == 0.0


def test_plot_cli(scene_dir, tmp_path):
    config = write_scripted_config(tmp_path / "config.json")
    out = tmp_path / "out"
    assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out)]) == 0
    svg_path = tmp_path / "plot.svg"
    code = main(
        ["plot", str(out / "fixture-threeobj.json"), str(scene_dir / "scene_threeobj.json"),
         "--out", str(svg_path)]
    )
    assert code == 0
    svg = svg_path.read_text()
    assert svg.count("<polyline") == 2


def test_plot_malformed_file_fails(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = main(["plot", str(bad), str(bad), "--out", str(tmp_path / "x.svg")])
    assert code == 1


def test_config_precedence_flags_env_file(scene_dir, tmp_path, monkeypatch):
    config = write_scripted_config(tmp_path / "config.json", model="file-model")
    monkeypatch.setenv("AGENTDRIVER_LLM_MODEL", "env-model")

    out1 = tmp_path / "o1"
    assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out1)]) == 0
    doc1 = json.loads((out1 / "fixture-threeobj.json").read_text())
    assert doc1["config"]["llm"]["model"] == "env-model"  # env beats file

    out2 = tmp_path / "o2"
    assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out2),
                 "--model", "flag-model"]) == 0
    doc2 = json.loads((out2 / "fixture-threeobj.json").read_text())
    assert doc2["config"]["llm"]["model"] == "flag-model"  # flag beats env

    monkeypatch.delenv("AGENTDRIVER_LLM_MODEL")
    out3 = tmp_path / "o3"
    assert main(["run", str(scene_dir), "--config", str(config), "--out", str(out3)]) == 0
    doc3 = json.loads((out3 / "fixture-threeobj.json").read_text())
    assert doc3["config"]["llm"]["model"] == "file-model"  # file beats defaults


def test_export_sft_empty_glob(tmp_path, capsys):
    out = tmp_path / "pairs.jsonl"
    code = main(["export-sft", str(tmp_path / "none*.json"), "--out", str(out)])
    assert code == 0
    assert out.read_text() == ""
    assert "0 training pair(s)" in capsys.readouterr().out


def test_run_against_real_server_with_workers(scene_dir, tmp_path):
    import threading
    import time

    import uvicorn

    from agentdriver.service import create_app

    # two more scenes so the worker pool has something to parallelize
    base = json.loads((scene_dir / "scene_threeobj.json").read_text())
    for i in (2, 3):
        doc = json.loads(json.dumps(base))
        doc["scene_id"] = f"fixture-copy{i}"
        (scene_dir / f"scene_copy{i}.json").write_text(json.dumps(doc))

    server = uvicorn.Server(
        uvicorn.Config(create_app(), host="127.0.0.1", port=0, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        assert time.monotonic() < deadline, "server failed to start"
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        config = write_scripted_config(tmp_path / "config.json")
        out = tmp_path / "out"
        code = main(
            ["run", str(scene_dir), "--config", str(config), "--out", str(out),
             "--server", f"http://127.0.0.1:{port}", "--workers", "2"]
        )
        assert code == 0
        names = {p.name for p in out.iterdir()}
        assert {"fixture-threeobj.json", "fixture-copy2.json", "fixture-copy3.json"} <= names
    finally:
        server.should_exit = True
        thread.join(timeout=5)


def test_memory_build_three_gt_scenes(tmp_path):
    d = tmp_path / "scenes"
    d.mkdir()
    base = json.loads((FIXTURES / "scene_threeobj.json").read_text())
    for i in range(3):
        doc = json.loads(json.dumps(base))
        doc["scene_id"] = f"train-{i}"
        (d / f"train_{i}.json").write_text(json.dumps(doc))
    store = tmp_path / "store.jsonl"
    assert main(["memory", "build", str(d), "--store", str(store)]) == 0
    lines = [l for l in store.read_text().splitlines() if l.strip()]
    assert len(lines) == 4  # header + 3 records

    from agentdriver.memory import ExperienceStore

    loaded = ExperienceStore.load(store)
    assert sorted(r.scene_id for r in loaded.records) == ["train-0", "train-1", "train-2"]
