"""Pydantic request/response models for the HTTP service.

Domain payloads (scenes, pipeline outputs, configs) travel as plain JSON
objects and are validated by the core loaders, which own the schemas and
produce field-exact error paths; the models here shape the envelopes.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ToolListResponse(BaseModel):
    functions: list[dict]


class ToolDispatchRequest(BaseModel):
    scene: dict
    call: dict  # {"name": ..., "arguments": {...}}
    config: dict = Field(default_factory=dict)


class ToolDispatchResponse(BaseModel):
    text: str
    data: dict
    none_flag: bool


class DecideRequest(BaseModel):
    scene: dict
    config: dict = Field(default_factory=dict)


class DecideResponse(BaseModel):
    output: dict
    transcript: list[dict]
    exchanges: list[dict] | None = None


class EvalSampleModel(BaseModel):
    pred: list[list[float]]
    gt: list[list[float]]
    gt_boxes_per_step: list[list[dict]] | None = None


class EvaluateRequest(BaseModel):
    samples: list[EvalSampleModel]
    convention: str = "both"
    resolution: float = 0.5
    ego_footprint: tuple[float, float] = (4.08, 1.73)


class EvaluateResponse(BaseModel):
    reports: dict[str, dict]
    table: str


class MemoryBuildRequest(BaseModel):
    scenes: list[dict]
    config: dict = Field(default_factory=dict)


class MemoryBuildResponse(BaseModel):
    header: dict
    records: list[dict]
    skipped: list[str]


class SftExportRequest(BaseModel):
    scenes: list[dict]
    config: dict = Field(default_factory=dict)


class SftExportResponse(BaseModel):
    pairs: list[dict]


class PlotRequest(BaseModel):
    output: dict
    scene: dict
    include_occupancy: bool = False


class PlotResponse(BaseModel):
    svg: str
