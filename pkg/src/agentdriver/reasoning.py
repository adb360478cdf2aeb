"""Per-scene decision loop.

Stages run in a fixed order: tool use -> memory retrieval ->
chain-of-thought reasoning -> task planning -> motion planning ->
self-reflection. Every stage's artifact lands in the PipelineOutput, and
no LLM reply can abort the loop: unparseable reasoning yields empty
lists, an invalid plan string falls back to move_forward_with_constant_speed,
and a trajectory that fails to decode twice falls back to the retrieved
memory trajectory (or a constant-velocity extrapolation), each with a
flag recording what happened.
"""

from __future__ import annotations

import importlib.resources
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MissingGroundTruth, DecodeError, ValidationError
from .llm import ChatTurn, Transcript
from .memory import (
    CommonsenseMemory,
    ExperienceStore,
    MemoryConfig,
    RetrievalResult,
    retrieve,
)
from .reflection import ReflectionConfig, ReflectionReport, reflect
from .scene import SceneSnapshot
from .tools import DEFAULT_REGISTRY, ToolConfig, ToolRegistry, dispatch
from .trajectory import (
    Trajectory,
    constant_velocity_trajectory,
    decode_trajectory,
    encode_trajectory,
)

BEHAVIORS = (
    "move_forward",
    "change_lane_to_left",
    "change_lane_to_right",
    "turn_left",
    "turn_right",
    "stop",
)
SPEEDS = (
    "constant_speed",
    "deceleration",
    "quick_deceleration",
    "deceleration_to_zero",
    "acceleration",
    "quick_acceleration",
)

TOOL_MODULES = ("detection", "prediction", "occupancy", "map")


@dataclass(frozen=True)
class DrivingPlan:
    """Behavior x speed-estimation pair; stop carries no speed."""

    behavior: str
    speed: str | None

    def __post_init__(self) -> None:
        if self.behavior not in BEHAVIORS:
            raise ValidationError("plan.behavior", f"must be one of {BEHAVIORS}")
        if self.behavior == "stop":
            if self.speed is not None:
                raise ValidationError("plan.speed", "stop takes no speed estimation")
        else:
            if self.speed not in SPEEDS:
                raise ValidationError("plan.speed", f"must be one of {SPEEDS}")

    def as_text(self) -> str:
        return self.behavior if self.speed is None else f"{self.behavior}_with_{self.speed}"


def all_plans() -> list[str]:
    """The full 31-string plan vocabulary."""
    plans = [f"{b}_with_{s}" for b in BEHAVIORS if b != "stop" for s in SPEEDS]
    plans.append("stop")
    return plans


def parse_plan(text: str) -> DrivingPlan:
    """Strict plan parser: exactly the 31 vocabulary strings are accepted."""
    token = text.strip()
    if token == "stop":
        return DrivingPlan("stop", None)
    if "_with_" in token:
        behavior, _, speed = token.partition("_with_")
        if behavior in BEHAVIORS and behavior != "stop" and speed in SPEEDS:
            return DrivingPlan(behavior, speed)
    raise ValidationError("plan", f"not a valid driving plan: {token!r}")


FALLBACK_PLAN = DrivingPlan("move_forward", "constant_speed")


@dataclass
class ReasoningResult:
    notable_objects: list[tuple[str, str]] = field(default_factory=list)
    potential_effects: list[str] = field(default_factory=list)
    raw_text: str = ""

    def as_text(self) -> str:
        lines = ["Notable objects:"]
        lines += [f"- {ref}: {desc}" if desc else f"- {ref}" for ref, desc in self.notable_objects]
        lines.append("Potential effects:")
        lines += [f"- {effect}" for effect in self.potential_effects]
        return "\n".join(lines)


_ITEM_PREFIX = re.compile(r"^[-*•]\s*|^\d+[.)]\s*")


def parse_reasoning_reply(text: str) -> ReasoningResult:
    """Extract the two labeled sections; anything unparseable yields empty
    lists with the raw text preserved."""
    result = ReasoningResult(raw_text=text)
    section: str | None = None
    for line in text.splitlines():
        stripped = line.strip()
        lowered = stripped.lower()
        if lowered.startswith("notable objects"):
            section = "objects"
            continue
        if lowered.startswith("potential effects"):
            section = "effects"
            continue
        if not stripped or section is None:
            continue
        item = _ITEM_PREFIX.sub("", stripped)
        if not item:
            continue
        if section == "objects":
            referent, colon, description = item.partition(":")
            result.notable_objects.append(
                (referent.strip(), description.strip()) if colon else (item, "")
            )
        else:
            result.potential_effects.append(item)
    return result


# ---------------------------------------------------------------------------
# prompt templates: versioned files shipped with the package, overridable
# via a prompts_dir in the config.

_PROMPT_FILES = (
    "tool_use_system",
    "chain_of_thought_system",
    "chain_of_thought_user",
    "task_planning_system",
    "task_planning_user",
    "motion_planning_system",
    "motion_planning_user",
    "rerank_user",
)


def load_prompts(prompts_dir: str | None = None) -> dict[str, str]:
    prompts: dict[str, str] = {}
    for name in _PROMPT_FILES:
        if prompts_dir is not None:
            prompts[name] = Path(prompts_dir, f"{name}.txt").read_text(encoding="utf-8")
        else:
            resource = importlib.resources.files("agentdriver").joinpath(f"prompts/{name}.txt")
            prompts[name] = resource.read_text(encoding="utf-8")
    return prompts


def load_exemplar_pool(path: str | None = None) -> list[dict]:
    if path is not None:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    resource = importlib.resources.files("agentdriver").joinpath("prompts/exemplars.json")
    return json.loads(resource.read_text(encoding="utf-8"))


def default_commonsense() -> CommonsenseMemory:
    resource = importlib.resources.files("agentdriver").joinpath("prompts/commonsense.txt")
    return CommonsenseMemory(re.split(r"^---$", resource.read_text(encoding="utf-8"), flags=re.MULTILINE))


def select_exemplars(pool: list[dict], count: int, seed: int, scene_id: str) -> list[dict]:
    """Uniform random draw without replacement, deterministic per scene."""
    if count <= 0 or not pool:
        return []
    rng = random.Random(f"{seed}:{scene_id}")
    return rng.sample(pool, min(count, len(pool)))


def render_exemplars(exemplars: list[dict]) -> str:
    if not exemplars:
        return ""
    parts = []
    for i, ex in enumerate(exemplars, start=1):
        parts.append(
            f"Example {i}:\nScenario: {ex['scenario']}\n"
            f"Notable objects:\n{ex['notable_objects']}\n"
            f"Potential effects:\n{ex['potential_effects']}"
        )
    return "\n\n".join(parts) + "\n\n"


def render_ego_header(snap: SceneSnapshot) -> str:
    ego = snap.ego
    history = ", ".join(f"({p[0]:.2f},{p[1]:.2f})" for p in ego.history)
    return (
        f"Ego state: speed {ego.speed():.2f} m/s, velocity ({ego.velocity[0]:.2f},{ego.velocity[1]:.2f}) m/s, "
        f"acceleration ({ego.acceleration[0]:.2f},{ego.acceleration[1]:.2f}) m/s^2, "
        f"heading {ego.heading:.2f} rad, mission goal {ego.mission_goal}.\n"
        f"Recent history (0.5s spacing, oldest first): {history}"
    )


# ---------------------------------------------------------------------------
# stages


@dataclass
class ToolUseConfig:
    enabled: bool = True
    budget: int = 16  # max LLM rounds across the whole loop


def _says_yes(turn: ChatTurn) -> bool:
    return bool(turn.content) and turn.content.strip().lower().startswith("yes")


def tool_use_loop(
    snap: SceneSnapshot,
    backend,
    registry: ToolRegistry,
    prompts: dict[str, str],
    config: ToolUseConfig,
    transcript: Transcript,
    tool_config: ToolConfig,
) -> str:
    """Module-activation rounds producing the environmental text.

    Every LLM call counts against the round budget; exhausting it truncates
    the loop with a note in the returned text. Tool failures become
    observations, never exceptions.
    """
    header = render_ego_header(snap)
    if not config.enabled:
        return header

    system = ChatTurn(role="system", content=prompts["tool_use_system"])
    intro = ChatTurn(role="user", content=f"Current ego information:\n{header}")
    messages: list[ChatTurn] = [system, intro]
    transcript.append(system, stage="tool_use")
    transcript.append(intro, stage="tool_use")

    observations: list[str] = []
    rounds = 0
    truncated = False
    for module in TOOL_MODULES:
        if rounds >= config.budget:
            truncated = True
            break
        question = ChatTurn(
            role="user",
            content=f"Do you need to activate the {module} module to collect more information? Answer yes or no.",
        )
        messages.append(question)
        transcript.append(question, stage="tool_use")
        turn = backend.complete(messages)
        rounds += 1
        messages.append(turn)
        transcript.append(turn, stage="tool_use")
        if not _says_yes(turn):
            continue

        functions = registry.export_functions(module)
        instruction = ChatTurn(
            role="user",
            content=(
                f"The {module} functions are now available. Call one function at a time to "
                f"collect the information you need; reply 'done' when finished with this module."
            ),
        )
        messages.append(instruction)
        transcript.append(instruction, stage="tool_use")
        while True:
            if rounds >= config.budget:
                truncated = True
                break
            turn = backend.complete(messages, tools=functions)
            rounds += 1
            messages.append(turn)
            transcript.append(turn, stage="tool_use")
            if turn.tool_call is None:
                break
            result = dispatch(snap, turn.tool_call, registry, tool_config)
            observations.append(f"[{turn.tool_call.name}] {result.text}")
            tool_turn = ChatTurn(role="tool", content=result.text, tool_name=turn.tool_call.name)
            messages.append(tool_turn)
            transcript.append(tool_turn, stage="tool_use")
        if truncated:
            break

    env_text = header
    if observations:
        env_text += "\n" + "\n".join(observations)
    if truncated:
        env_text += "\n[tool use truncated: round budget exhausted]"
    return env_text


def chain_of_thought(
    backend,
    env_text: str,
    memory_text: str,
    exemplars: list[dict],
    prompts: dict[str, str],
    transcript: Transcript,
) -> ReasoningResult:
    system = ChatTurn(role="system", content=prompts["chain_of_thought_system"])
    user = ChatTurn(
        role="user",
        content=prompts["chain_of_thought_user"].format(
            exemplars=render_exemplars(exemplars),
            environment=env_text,
            memory=memory_text or "(none)",
        ),
    )
    transcript.append(system, stage="chain_of_thought")
    transcript.append(user, stage="chain_of_thought")
    turn = backend.complete([system, user])
    transcript.append(turn, stage="chain_of_thought")
    return parse_reasoning_reply(turn.content or "")


def task_planning(
    backend,
    env_text: str,
    memory_text: str,
    reasoning: ReasoningResult,
    prompts: dict[str, str],
    transcript: Transcript,
) -> tuple[DrivingPlan, bool]:
    """Returns (plan, fallback_used)."""
    system = ChatTurn(role="system", content=prompts["task_planning_system"])
    user = ChatTurn(
        role="user",
        content=prompts["task_planning_user"].format(
            environment=env_text,
            memory=memory_text or "(none)",
            reasoning=reasoning.as_text(),
        ),
    )
    transcript.append(system, stage="task_planning")
    transcript.append(user, stage="task_planning")
    turn = backend.complete([system, user])
    transcript.append(turn, stage="task_planning")
    try:
        return parse_plan(turn.content or ""), False
    except ValidationError:
        return FALLBACK_PLAN, True


def motion_planning(
    backend,
    env_text: str,
    memory_text: str,
    reasoning: ReasoningResult,
    plan: DrivingPlan,
    prompts: dict[str, str],
    transcript: Transcript,
    fallback: Trajectory,
) -> tuple[Trajectory, bool]:
    """Returns (trajectory, invalid_output).

    A reply that fails to decode gets one corrective retry; a second
    failure falls back to the supplied trajectory and sets the flag.
    """
    system = ChatTurn(role="system", content=prompts["motion_planning_system"])
    user = ChatTurn(
        role="user",
        content=prompts["motion_planning_user"].format(
            environment=env_text,
            memory=memory_text or "(none)",
            reasoning=reasoning.as_text(),
            plan=plan.as_text(),
        ),
    )
    messages = [system, user]
    transcript.append(system, stage="motion_planning")
    transcript.append(user, stage="motion_planning")
    turn = backend.complete(messages)
    transcript.append(turn, stage="motion_planning")
    try:
        return decode_trajectory(turn.content or ""), False
    except DecodeError as first_error:
        correction = ChatTurn(
            role="user",
            content=(
                f"Your reply did not decode ({first_error}). Reply with exactly six "
                f"coordinate pairs like (1.23,0.45), separated by commas, and nothing else."
            ),
        )
        messages += [turn, correction]
        transcript.append(correction, stage="motion_planning")
        retry = backend.complete(messages)
        transcript.append(retry, stage="motion_planning")
        try:
            return decode_trajectory(retry.content or ""), False
        except DecodeError:
            return fallback, True


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class ReasoningConfig:
    chain_of_thought: bool = True
    task_planning: bool = True
    n_exemplars: int = 4
    exemplar_seed: int = 0
    exemplars_path: str | None = None
    prompts_dir: str | None = None


@dataclass
class ReflectionSettings:
    enabled: bool = True
    params: ReflectionConfig = field(default_factory=ReflectionConfig)


@dataclass
class PipelineOutput:
    scene_id: str
    trajectory: Trajectory
    plan: DrivingPlan | None
    reasoning: ReasoningResult | None
    retrieval: RetrievalResult | None
    commonsense_text: str
    env_text: str
    transcript: Transcript
    reflection: ReflectionReport | None
    motion_trajectory: Trajectory
    flags: list[str]
    stages: list[str]
    config: dict = field(default_factory=dict)

    def to_dict(self, transcript_ref: str | None = None) -> dict:
        doc: dict = {
            "scene_id": self.scene_id,
            "trajectory": self.trajectory.to_list(),
            "plan": (
                {"behavior": self.plan.behavior, "speed": self.plan.speed, "text": self.plan.as_text()}
                if self.plan is not None
                else {"skipped": True}
            ),
            "reasoning": (
                {
                    "notable_objects": [[ref, desc] for ref, desc in self.reasoning.notable_objects],
                    "potential_effects": list(self.reasoning.potential_effects),
                    "raw_text": self.reasoning.raw_text,
                }
                if self.reasoning is not None
                else {"skipped": True}
            ),
            "retrieval": (
                {
                    "chosen_scene_id": self.retrieval.chosen.scene_id,
                    "candidates": [
                        {"scene_id": rec.scene_id, "score": score}
                        for rec, score in self.retrieval.candidates
                    ],
                    "rationale": self.retrieval.rerank_rationale,
                    "used_fallback": self.retrieval.used_fallback,
                }
                if self.retrieval is not None
                else {"skipped": True}
            ),
            "reflection": self.reflection.to_dict() if self.reflection is not None else {"skipped": True},
            "motion": {
                "trajectory_before_reflection": self.motion_trajectory.to_list(),
                "text": encode_trajectory(self.motion_trajectory),
            },
            "env_text": self.env_text,
            "commonsense": self.commonsense_text,
            "flags": sorted(self.flags),
            "stages": list(self.stages),
            "config": self.config,
        }
        if transcript_ref is not None:
            doc["transcript_ref"] = transcript_ref
        return doc


@dataclass
class PipelineHandles:
    """Everything a pipeline run needs besides the scene itself."""

    backend: object
    prompts: dict[str, str]
    registry: ToolRegistry = field(default_factory=lambda: DEFAULT_REGISTRY)
    store: ExperienceStore | None = None
    commonsense: CommonsenseMemory | None = None
    exemplar_pool: list[dict] = field(default_factory=list)


def run_pipeline(
    snap: SceneSnapshot,
    handles: PipelineHandles,
    tooluse: ToolUseConfig = ToolUseConfig(),
    memory_config: MemoryConfig = MemoryConfig(enabled=False),
    reasoning_config: ReasoningConfig = ReasoningConfig(),
    reflection_settings: ReflectionSettings = ReflectionSettings(),
    tool_config: ToolConfig = ToolConfig(),
    config_echo: dict | None = None,
) -> PipelineOutput:
    """Run every stage on one scene and collect all artifacts."""
    transcript = Transcript()
    flags: list[str] = []
    stages: list[str] = []

    stages.append("tool_use")
    env_text = tool_use_loop(
        snap, handles.backend, handles.registry, handles.prompts, tooluse, transcript, tool_config
    )

    stages.append("retrieve")
    commonsense_text, retrieval = retrieve(
        handles.store,
        snap,
        handles.backend,
        memory_config,
        handles.commonsense,
        handles.prompts["rerank_user"],
    )
    if retrieval is not None and retrieval.used_fallback:
        flags.append("rerank_fallback")
    memory_text = commonsense_text
    if retrieval is not None:
        memory_text += (
            f"\n\nMost similar past scenario [{retrieval.chosen.scene_id}]: "
            f"{retrieval.chosen.scenario_text}\n"
            f"Its trajectory: {encode_trajectory(retrieval.chosen.trajectory)}"
        )
        memory_text = memory_text.strip()

    stages.append("chain_of_thought")
    if reasoning_config.chain_of_thought:
        exemplars = select_exemplars(
            handles.exemplar_pool, reasoning_config.n_exemplars, reasoning_config.exemplar_seed, snap.scene_id
        )
        reasoning = chain_of_thought(
            handles.backend, env_text, memory_text, exemplars, handles.prompts, transcript
        )
    else:
        reasoning = None

    stages.append("task_planning")
    if reasoning_config.task_planning:
        plan, plan_fallback = task_planning(
            handles.backend,
            env_text,
            memory_text,
            reasoning or ReasoningResult(),
            handles.prompts,
            transcript,
        )
        if plan_fallback:
            flags.append("plan_fallback")
    else:
        plan = None

    stages.append("motion_planning")
    if retrieval is not None:
        fallback = retrieval.chosen.trajectory
    else:
        fallback = constant_velocity_trajectory(snap.ego.velocity)
    motion_traj, invalid_output = motion_planning(
        handles.backend,
        env_text,
        memory_text,
        reasoning or ReasoningResult(),
        plan or FALLBACK_PLAN,
        handles.prompts,
        transcript,
        fallback,
    )
    if invalid_output:
        flags.append("invalid_output")

    stages.append("self_reflection")
    if reflection_settings.enabled:
        final_traj, report = reflect(snap, motion_traj, reflection_settings.params, tool_config)
    else:
        final_traj, report = motion_traj, None

    return PipelineOutput(
        scene_id=snap.scene_id,
        trajectory=final_traj,
        plan=plan,
        reasoning=reasoning,
        retrieval=retrieval,
        commonsense_text=commonsense_text,
        env_text=env_text,
        transcript=transcript,
        reflection=report,
        motion_trajectory=motion_traj,
        flags=flags,
        stages=stages,
        config=config_echo or {},
    )


# ---------------------------------------------------------------------------
# fine-tuning data export


def _sft_reasoning_target(snap: SceneSnapshot) -> str:
    """Template reasoning target from front-corridor detections.

    This is a documented approximation: targets name the nearest forward
    objects and a generic caution per object. Lines avoid parentheses so
    the trajectory codec sees only the trajectory pairs.
    """
    from .geometry import FRONT_RECT, euclidean
    from .tools import detections_in_rect

    nearest = detections_in_rect(snap, FRONT_RECT)[:3]
    obj_lines = [
        f"- {d.object_id}, {d.category}, {euclidean(d.center):.2f} m away at x {d.center[0]:.2f}, y {d.center[1]:.2f}"
        for d in nearest
    ]
    effect_lines = [f"- keep a safe distance to {d.object_id} and adjust speed if it approaches" for d in nearest]
    lines = ["Notable objects:"] + obj_lines + ["Potential effects:"] + effect_lines
    return "\n".join(lines)


SFT_TRAJECTORY_MARKER = "Planned trajectory: "


def sft_pair_for_scene(snap: SceneSnapshot, prompts: dict[str, str]) -> dict:
    """One (prompt, completion) training pair for a ground-truth scene."""
    if snap.gt_trajectory is None:
        raise MissingGroundTruth(f"scene {snap.scene_id!r} has no gt_trajectory")
    header = render_ego_header(snap)
    observations = []
    front = dispatch(snap, _front_detections_call(), DEFAULT_REGISTRY)
    observations.append(f"[get_front_object_detections] {front.text}")
    env_text = header + "\n" + "\n".join(observations)
    prompt = prompts["motion_planning_user"].format(
        environment=env_text,
        memory="(none)",
        reasoning="(to be produced)",
        plan="(to be produced)",
    )
    completion = f"{_sft_reasoning_target(snap)}\n{SFT_TRAJECTORY_MARKER}{encode_trajectory(snap.gt_trajectory)}"
    return {"scene_id": snap.scene_id, "prompt": prompt, "completion": completion}


def _front_detections_call():
    from .tools import ToolCall

    return ToolCall("get_front_object_detections", {})


def export_sft_pairs(scenes: list[SceneSnapshot], prompts: dict[str, str]) -> list[dict]:
    """Training pairs for every scene; raises on the first scene lacking GT."""
    return [sft_pair_for_scene(snap, prompts) for snap in scenes]
