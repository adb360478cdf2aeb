"""Run configuration: one structured document holding every hyperparameter.

Precedence, highest first: command-line flags > environment variables >
config file > built-in defaults. The fully resolved document is embedded
in every pipeline output for auditability. Schema documented in
docs/config.md.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .errors import ParseError, ValidationError
from .llm import BackendConfig, ENDPOINT_ENV
from .memory import MemoryConfig, SimilarityWeights
from .reasoning import ReasoningConfig, ReflectionSettings, ToolUseConfig
from .reflection import ReflectionConfig
from .tools import ToolConfig

MODEL_ENV = "AGENTDRIVER_LLM_MODEL"


def default_config() -> dict:
    return {
        "llm": {
            "kind": "scripted",
            "endpoint": "",
            "model": "gpt-3.5-turbo-0613",
            "temperature": 0.0,
            "max_in_flight": 4,
            "retry_attempts": 3,
            "backoff_start": 1.0,
            "backoff_multiplier": 2.0,
            "timeout": 30.0,
            "script": [],
            "transcript_path": None,
            "record": False,
        },
        "tools": {
            "corridor_half_width": 1.75,
            "collision_threshold": 0.1,
            "collision_margin": 0.5,
            "ego_length": 4.08,
            "ego_width": 1.73,
        },
        "tooluse": {"enabled": True, "budget": 16},
        "memory": {
            "enabled": False,
            "store_path": None,
            "commonsense_enabled": True,
            "commonsense_path": None,
            "top_k": 3,
            "weights": {"ego": 1.0, "goal": 1.0, "history": 1.0},
            "normalize": False,
            "n_extras": 0,
            "history_length": 4,
        },
        "reasoning": {
            "chain_of_thought": True,
            "task_planning": True,
            "n_exemplars": 4,
            "exemplar_seed": 0,
            "exemplars_path": None,
            "prompts_dir": None,
        },
        "reflection": {
            "enabled": True,
            "repulsion_weight": 1.0,
            "kernel_sigma": 1.0,
            "safety_margin": 0.5,
            "occupancy_threshold": 0.1,
            "sample_radius": 5.0,
            "max_iterations": 20,
            "tolerance": 1e-4,
            "damping": 0.5,
            "obstacle_cap": 128,
        },
        "evaluation": {"resolution": 0.5, "convention": "both"},
    }


def merge(base: dict, override: dict) -> dict:
    """Deep merge; override wins, dictionaries merge recursively."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_env(config: dict, env=None) -> dict:
    env = os.environ if env is None else env
    overlay: dict = {"llm": {}}
    if env.get(ENDPOINT_ENV):
        overlay["llm"]["endpoint"] = env[ENDPOINT_ENV]
    if env.get(MODEL_ENV):
        overlay["llm"]["model"] = env[MODEL_ENV]
    return merge(config, overlay)


def apply_dotted_overrides(config: dict, overrides: dict) -> dict:
    """Apply {"llm.kind": "http"}-style flag overrides."""
    out = copy.deepcopy(config)
    for dotted, value in overrides.items():
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def load_config(
    path: str | Path | None = None,
    env=None,
    overrides: dict | None = None,
) -> dict:
    """Resolve the full configuration document with documented precedence."""
    config = default_config()
    if path is not None:
        try:
            file_doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ParseError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_doc, dict):
            raise ValidationError("config", "top-level config must be an object")
        config = merge(config, file_doc)
    config = apply_env(config, env)
    if overrides:
        config = apply_dotted_overrides(config, overrides)
    return config


# typed views ---------------------------------------------------------------


def backend_config(config: dict) -> BackendConfig:
    c = config["llm"]
    return BackendConfig(
        kind=c["kind"],
        endpoint=c["endpoint"],
        model=c["model"],
        temperature=c["temperature"],
        max_in_flight=c["max_in_flight"],
        retry_attempts=c["retry_attempts"],
        backoff_start=c["backoff_start"],
        backoff_multiplier=c["backoff_multiplier"],
        timeout=c["timeout"],
        script=[(entry[0], entry[1]) for entry in c.get("script", [])],
        transcript_path=c.get("transcript_path"),
        replay_exchanges=c.get("replay_exchanges"),
        record=c.get("record", False),
    )


def tool_config(config: dict) -> ToolConfig:
    c = config["tools"]
    return ToolConfig(
        corridor_half_width=c["corridor_half_width"],
        collision_threshold=c["collision_threshold"],
        collision_margin=c["collision_margin"],
        ego_length=c["ego_length"],
        ego_width=c["ego_width"],
    )


def tooluse_config(config: dict) -> ToolUseConfig:
    c = config["tooluse"]
    return ToolUseConfig(enabled=c["enabled"], budget=c["budget"])


def memory_config(config: dict) -> MemoryConfig:
    c = config["memory"]
    w = c["weights"]
    return MemoryConfig(
        enabled=c["enabled"],
        store_path=c.get("store_path"),
        commonsense_path=c.get("commonsense_path"),
        top_k=c["top_k"],
        weights=SimilarityWeights(ego=w["ego"], goal=w["goal"], history=w["history"]),
        normalize=c["normalize"],
        n_extras=c["n_extras"],
        history_length=c["history_length"],
    )


def reasoning_config(config: dict) -> ReasoningConfig:
    c = config["reasoning"]
    return ReasoningConfig(
        chain_of_thought=c["chain_of_thought"],
        task_planning=c["task_planning"],
        n_exemplars=c["n_exemplars"],
        exemplar_seed=c["exemplar_seed"],
        exemplars_path=c.get("exemplars_path"),
        prompts_dir=c.get("prompts_dir"),
    )


def reflection_settings(config: dict) -> ReflectionSettings:
    c = config["reflection"]
    params = ReflectionConfig(
        repulsion_weight=c["repulsion_weight"],
        kernel_sigma=c["kernel_sigma"],
        safety_margin=c["safety_margin"],
        occupancy_threshold=c["occupancy_threshold"],
        sample_radius=c["sample_radius"],
        max_iterations=c["max_iterations"],
        tolerance=c["tolerance"],
        damping=c["damping"],
        obstacle_cap=c["obstacle_cap"],
    )
    return ReflectionSettings(enabled=c["enabled"], params=params)
