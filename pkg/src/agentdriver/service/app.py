"""FastAPI service exposing the decision pipeline and its side surfaces.

The service is stateless: each request carries (or defaults) its full
configuration, so one long-running instance can serve many clients and
backends concurrently. File paths inside a config (experience store,
replay transcripts) are resolved on the service host.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import (
    backend_config,
    default_config,
    memory_config,
    merge,
    reasoning_config,
    reflection_settings,
    tool_config,
    tooluse_config,
)
from ..errors import (
    AgentDriverError,
    BackendUnavailable,
    EmptyStore,
    MissingGroundTruth,
    ValidationError,
)
from ..evaluation import CONVENTIONS, EvalSample, format_table, report
from ..llm import RecordingBackend, make_backend, turn_to_dict
from ..memory import CommonsenseMemory, ExperienceStore, record_from_scene
from ..plotting import render_bev_svg
from ..reasoning import (
    PipelineHandles,
    default_commonsense,
    export_sft_pairs,
    load_exemplar_pool,
    load_prompts,
    run_pipeline,
)
from ..scene import snapshot_from_dict, GTBox
from ..memory import STORE_SCHEMA_ID
from ..tools import DEFAULT_REGISTRY, ToolCall, dispatch
from ..trajectory import Trajectory
from . import schemas


def _resolve(config: dict) -> dict:
    return merge(default_config(), config or {})


def _load_commonsense(cfg: dict) -> CommonsenseMemory | None:
    mem = cfg["memory"]
    if not mem.get("commonsense_enabled", True):
        return None
    path = mem.get("commonsense_path")
    return CommonsenseMemory.load(path) if path else default_commonsense()


def _gt_boxes_from_payload(raw: list[list[dict]] | None):
    if raw is None:
        return tuple(() for _ in range(6))
    try:
        return tuple(
            tuple(
                GTBox(
                    center=(float(b["center"][0]), float(b["center"][1])),
                    size=(float(b["size"][0]), float(b["size"][1])),
                    heading=float(b["heading"]),
                    category=b["category"],
                )
                for b in step
            )
            for step in raw
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ValidationError("gt_boxes_per_step", f"malformed box: {exc}") from exc


def create_app() -> FastAPI:
    app = FastAPI(title="agentdriver", version=__version__)

    @app.exception_handler(AgentDriverError)
    async def agentdriver_error(_: Request, exc: AgentDriverError) -> JSONResponse:
        status = 502 if isinstance(exc, BackendUnavailable) else 400
        return JSONResponse(
            status_code=status,
            content={"error": {"type": type(exc).__name__, "message": str(exc)}},
        )

    @app.get("/v1/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.get("/v1/tools", response_model=schemas.ToolListResponse)
    def tools() -> schemas.ToolListResponse:
        return schemas.ToolListResponse(functions=DEFAULT_REGISTRY.export_functions())

    @app.post("/v1/tools/dispatch", response_model=schemas.ToolDispatchResponse)
    def tools_dispatch(req: schemas.ToolDispatchRequest) -> schemas.ToolDispatchResponse:
        snap = snapshot_from_dict(req.scene)
        cfg = _resolve(req.config)
        call = ToolCall(req.call.get("name", ""), req.call.get("arguments", {}) or {})
        result = dispatch(snap, call, DEFAULT_REGISTRY, tool_config(cfg))
        return schemas.ToolDispatchResponse(text=result.text, data=result.data, none_flag=result.none_flag)

    @app.post("/v1/decide", response_model=schemas.DecideResponse)
    def decide(req: schemas.DecideRequest) -> schemas.DecideResponse:
        snap = snapshot_from_dict(req.scene)
        cfg = _resolve(req.config)
        mem_cfg = memory_config(cfg)

        backend = make_backend(backend_config(cfg))
        recorder: RecordingBackend | None = None
        if cfg["llm"].get("record"):
            recorder = RecordingBackend(backend)
            backend = recorder

        store = None
        if mem_cfg.enabled and mem_cfg.store_path:
            store = ExperienceStore.load(mem_cfg.store_path, mem_cfg.key_spec())
            if len(store) == 0:
                raise EmptyStore(f"experience store {mem_cfg.store_path} has no records")
        reasoning_cfg = reasoning_config(cfg)
        handles = PipelineHandles(
            backend=backend,
            prompts=load_prompts(reasoning_cfg.prompts_dir),
            registry=DEFAULT_REGISTRY,
            store=store,
            commonsense=_load_commonsense(cfg),
            exemplar_pool=load_exemplar_pool(reasoning_cfg.exemplars_path),
        )
        output = run_pipeline(
            snap,
            handles,
            tooluse=tooluse_config(cfg),
            memory_config=mem_cfg,
            reasoning_config=reasoning_cfg,
            reflection_settings=reflection_settings(cfg),
            tool_config=tool_config(cfg),
            config_echo=cfg,
        )
        transcript_entries = [
            {"turn": turn_to_dict(t), "meta": m}
            for t, m in zip(output.transcript.turns, output.transcript.meta)
        ]
        return schemas.DecideResponse(
            output=output.to_dict(transcript_ref=f"{snap.scene_id}.transcript.jsonl"),
            transcript=transcript_entries,
            exchanges=recorder.exchanges if recorder is not None else None,
        )

    @app.post("/v1/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
        samples = [
            EvalSample(
                pred=Trajectory.from_list(s.pred),
                gt=Trajectory.from_list(s.gt),
                gt_boxes_per_step=_gt_boxes_from_payload(s.gt_boxes_per_step),
            )
            for s in req.samples
        ]
        conventions = list(CONVENTIONS) if req.convention == "both" else [req.convention]
        reports = {
            c: report(samples, c, resolution=req.resolution, ego_footprint=tuple(req.ego_footprint))
            for c in conventions
        }
        return schemas.EvaluateResponse(
            reports={c: r.to_dict() for c, r in reports.items()},
            table=format_table(list(reports.values())),
        )

    @app.post("/v1/memory/build", response_model=schemas.MemoryBuildResponse)
    def memory_build(req: schemas.MemoryBuildRequest) -> schemas.MemoryBuildResponse:
        cfg = _resolve(req.config)
        spec = memory_config(cfg).key_spec()
        records = []
        skipped = []
        for raw in req.scenes:
            snap = snapshot_from_dict(raw)
            try:
                rec = record_from_scene(snap, spec)
            except MissingGroundTruth:
                skipped.append(snap.scene_id)
                continue
            records.append(
                {
                    "scene_id": rec.scene_id,
                    "key": list(rec.key),
                    "scenario_text": rec.scenario_text,
                    "trajectory": rec.trajectory.to_list(),
                }
            )
        header = {
            "schema": STORE_SCHEMA_ID,
            "n_extras": spec.n_extras,
            "history_length": spec.history_length,
        }
        return schemas.MemoryBuildResponse(header=header, records=records, skipped=skipped)

    @app.post("/v1/sft/export", response_model=schemas.SftExportResponse)
    def sft_export(req: schemas.SftExportRequest) -> schemas.SftExportResponse:
        cfg = _resolve(req.config)
        prompts = load_prompts(reasoning_config(cfg).prompts_dir)
        scenes = [snapshot_from_dict(raw) for raw in req.scenes]
        return schemas.SftExportResponse(pairs=export_sft_pairs(scenes, prompts))

    @app.post("/v1/plot", response_model=schemas.PlotResponse)
    def plot(req: schemas.PlotRequest) -> schemas.PlotResponse:
        snap = snapshot_from_dict(req.scene)
        return schemas.PlotResponse(svg=render_bev_svg(req.output, snap, req.include_occupancy))

    return app


def _json_default(value):
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def dumps_stable(doc: dict) -> str:
    """Deterministic JSON used for all file outputs."""
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)
