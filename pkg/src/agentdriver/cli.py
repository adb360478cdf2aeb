"""Operator command line.

The CLI is a thin client of the HTTP service: every command speaks the
same wire API, either against a remote instance (--server URL) or against
an in-process instance over an ASGI bridge (the default, no socket, fully
offline). File I/O — globbing scenes, writing outputs, stores, reports,
plots — happens client-side; computation happens behind the API.

Exit codes: 0 success, 1 configuration/IO/validation failure,
2 LLM backend unavailable.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import httpx

from .config import load_config
from .errors import AgentDriverError, ParseError
from .service.app import create_app, dumps_stable

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BACKEND = 2


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=300.0)
    import warnings

    with warnings.catch_warnings():
        # starlette warns about its httpx-based test client; the bridge is
        # exactly what we want here and the warning is not actionable
        warnings.simplefilter("ignore", DeprecationWarning)
        from starlette.testclient import TestClient

    # in-process ASGI bridge: same wire format, no network
    return TestClient(create_app(), base_url="http://agentdriver.local")


class CommandError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_ERROR):
        super().__init__(message)
        self.exit_code = exit_code


def _check(response: httpx.Response) -> dict:
    if response.status_code == 200:
        return response.json()
    try:
        error = response.json().get("error", {})
    except json.JSONDecodeError:
        error = {}
    err_type = error.get("type", f"HTTP {response.status_code}")
    message = error.get("message", response.text[:200])
    code = EXIT_BACKEND if response.status_code == 502 else EXIT_ERROR
    raise CommandError(f"{err_type}: {message}", code)


def _scene_paths(pattern: str) -> list[Path]:
    p = Path(pattern)
    if p.is_dir():
        return sorted(p.glob("*.json"))
    return sorted(Path(m) for m in glob.glob(pattern))


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read {path}: {exc}")


def _parse_set_overrides(pairs: list[str]) -> dict:
    overrides: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise CommandError(f"--set expects dotted.key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings are convenient: --set llm.kind=http
        overrides[key] = value
    return overrides


def _resolve_config(args) -> dict:
    overrides = _parse_set_overrides(getattr(args, "set", []) or [])
    if getattr(args, "backend", None):
        overrides["llm.kind"] = args.backend
    if getattr(args, "endpoint", None):
        overrides["llm.endpoint"] = args.endpoint
    if getattr(args, "model", None):
        overrides["llm.model"] = args.model
    if getattr(args, "store", None) and args.command == "run":
        overrides["memory.store_path"] = args.store
        overrides["memory.enabled"] = True
    if getattr(args, "record", False):
        overrides["llm.record"] = True
    try:
        return load_config(getattr(args, "config", None), overrides=overrides)
    except AgentDriverError as exc:
        raise CommandError(str(exc))


# ---------------------------------------------------------------------------
# run


def _run_one(client: httpx.Client, scene_path: Path, config: dict, out_dir: Path, replay_dir: Path | None) -> dict:
    scene_doc = _read_json(scene_path)
    scene_id = scene_doc.get("scene_id", scene_path.stem)
    scene_config = json.loads(json.dumps(config))
    if replay_dir is not None:
        exchange_path = replay_dir / f"{scene_id}.exchanges.jsonl"
        if not exchange_path.exists():
            raise CommandError(f"no recorded exchanges for scene {scene_id} at {exchange_path}")
        exchanges = [json.loads(line) for line in exchange_path.read_text(encoding="utf-8").splitlines() if line.strip()]
        scene_config["llm"]["kind"] = "replay"
        scene_config["llm"]["replay_exchanges"] = exchanges

    body = {"scene": scene_doc, "config": scene_config}
    payload = _check(client.post("/v1/decide", json=body))

    out_doc = payload["output"]
    (out_dir / f"{scene_id}.json").write_text(dumps_stable(out_doc) + "\n", encoding="utf-8")
    transcript_lines = [json.dumps(e, sort_keys=True) for e in payload["transcript"]]
    (out_dir / f"{scene_id}.transcript.jsonl").write_text(
        "\n".join(transcript_lines) + ("\n" if transcript_lines else ""), encoding="utf-8"
    )
    if payload.get("exchanges") is not None:
        exchange_lines = [json.dumps(e, sort_keys=True) for e in payload["exchanges"]]
        (out_dir / f"{scene_id}.exchanges.jsonl").write_text(
            "\n".join(exchange_lines) + ("\n" if exchange_lines else ""), encoding="utf-8"
        )
    return out_doc


def cmd_run(args) -> int:
    config = _resolve_config(args)
    paths = _scene_paths(args.scenes)
    if not paths:
        print("0 scenes matched; nothing to do")
        return EXIT_OK
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    replay_dir = Path(args.replay_dir) if args.replay_dir else None

    workers = args.workers if args.workers else config["llm"]["max_in_flight"]
    if not args.server:
        workers = 1  # the in-process bridge is driven sequentially

    client = make_client(args.server)
    flagged = 0
    with client:
        if workers == 1:
            outputs = [_run_one(client, p, config, out_dir, replay_dir) for p in paths]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outputs = list(
                    pool.map(lambda p: _run_one(client, p, config, out_dir, replay_dir), paths)
                )
    for doc in outputs:
        if doc.get("flags"):
            flagged += 1
    print(f"{len(paths)} scene(s) processed, {flagged} with flags, outputs in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    output_paths = [
        p for p in sorted(Path(args.outputs).glob("*.json")) if not p.name.endswith(".transcript.json")
    ]
    outputs = {}
    for p in output_paths:
        doc = _read_json(p)
        if "trajectory" in doc and "scene_id" in doc:
            outputs[doc["scene_id"]] = doc
    if not outputs:
        raise CommandError(f"no pipeline outputs found in {args.outputs}")

    samples = []
    for scene_path in _scene_paths(args.scenes):
        scene_doc = _read_json(scene_path)
        scene_id = scene_doc.get("scene_id")
        if scene_id not in outputs:
            continue
        if scene_doc.get("gt_trajectory") is None:
            raise CommandError(f"scene {scene_id} has no gt_trajectory; cannot evaluate")
        samples.append(
            {
                "pred": outputs[scene_id]["trajectory"],
                "gt": scene_doc["gt_trajectory"],
                "gt_boxes_per_step": scene_doc.get("gt_boxes_per_step"),
            }
        )
    if not samples:
        raise CommandError("no (output, scene) pairs matched by scene_id")

    body = {
        "samples": samples,
        "convention": args.convention,
        "resolution": args.resolution,
    }
    with make_client(args.server) as client:
        payload = _check(client.post("/v1/evaluate", json=body))
    print(payload["table"])
    if args.json:
        Path(args.json).write_text(dumps_stable(payload["reports"]) + "\n", encoding="utf-8")
        print(f"JSON report written to {args.json}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# memory build


def cmd_memory_build(args) -> int:
    config = _resolve_config(args)
    paths = _scene_paths(args.scenes)
    scenes = [_read_json(p) for p in paths]
    body = {"scenes": scenes, "config": config}
    with make_client(args.server) as client:
        payload = _check(client.post("/v1/memory/build", json=body))
    lines = [json.dumps(payload["header"], sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True) for r in payload["records"]]
    Path(args.store).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for scene_id in payload["skipped"]:
        print(f"warning: skipped scene {scene_id} (no gt_trajectory)", file=sys.stderr)
    print(f"{len(payload['records'])} record(s) written to {args.store}, {len(payload['skipped'])} skipped")
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-sft


def cmd_export_sft(args) -> int:
    config = _resolve_config(args)
    scenes = [_read_json(p) for p in _scene_paths(args.scenes)]
    body = {"scenes": scenes, "config": config}
    with make_client(args.server) as client:
        payload = _check(client.post("/v1/sft/export", json=body))
    lines = [json.dumps(pair, sort_keys=True) for pair in payload["pairs"]]
    Path(args.out).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    print(f"{len(payload['pairs'])} training pair(s) written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot


def cmd_plot(args) -> int:
    body = {
        "output": _read_json(Path(args.output_file)),
        "scene": _read_json(Path(args.scene_file)),
        "include_occupancy": args.occupancy,
    }
    with make_client(args.server) as client:
        payload = _check(client.post("/v1/plot", json=body))
    Path(args.out).write_text(payload["svg"], encoding="utf-8")
    print(f"SVG written to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentdriver", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_flags: bool = True):
        p.add_argument("--server", default=None, help="remote service URL (default: in-process)")
        if config_flags:
            p.add_argument("--config", default=None, help="config file (JSON)")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="config override, e.g. --set llm.kind=http")

    p_run = sub.add_parser("run", help="run the pipeline over scene files")
    p_run.add_argument("scenes", help="scene glob or directory")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--backend", choices=["scripted", "replay", "http"], default=None)
    p_run.add_argument("--endpoint", default=None, help="chat-completions endpoint URL")
    p_run.add_argument("--model", default=None)
    p_run.add_argument("--store", default=None, help="experience store path (enables memory)")
    p_run.add_argument("--record", action="store_true", help="record exchange logs for replay")
    p_run.add_argument("--replay-dir", default=None, help="directory of recorded *.exchanges.jsonl")
    p_run.add_argument("--workers", type=int, default=None)
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("evaluate", help="open-loop metrics over pipeline outputs")
    p_eval.add_argument("--outputs", required=True, help="directory of pipeline output JSON")
    p_eval.add_argument("--scenes", required=True, help="scene glob or directory (with ground truth)")
    p_eval.add_argument("--convention", choices=["uniad", "stp3", "both"], default="both")
    p_eval.add_argument("--resolution", type=float, default=0.5)
    p_eval.add_argument("--json", default=None, help="also write a JSON report here")
    add_common(p_eval, config_flags=False)
    p_eval.set_defaults(func=cmd_evaluate)

    p_memory = sub.add_parser("memory", help="experience memory operations")
    memory_sub = p_memory.add_subparsers(dest="memory_command", required=True)
    p_build = memory_sub.add_parser("build", help="build an experience store from GT scenes")
    p_build.add_argument("scenes", help="scene glob or directory")
    p_build.add_argument("--store", required=True, help="store file to write (JSON lines)")
    add_common(p_build)
    p_build.set_defaults(func=cmd_memory_build)

    p_sft = sub.add_parser("export-sft", help="export fine-tuning pairs from GT scenes")
    p_sft.add_argument("scenes", help="scene glob or directory")
    p_sft.add_argument("--out", required=True, help="JSON-lines file to write")
    add_common(p_sft)
    p_sft.set_defaults(func=cmd_export_sft)

    p_plot = sub.add_parser("plot", help="bird's-eye-view SVG overlay")
    p_plot.add_argument("output_file", help="pipeline output JSON")
    p_plot.add_argument("scene_file", help="scene JSON")
    p_plot.add_argument("--out", required=True, help="SVG file to write")
    p_plot.add_argument("--occupancy", action="store_true", help="include occupancy heat layer")
    add_common(p_plot, config_flags=False)
    p_plot.set_defaults(func=cmd_plot)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
