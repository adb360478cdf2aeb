"""Commonsense and experience memory with two-stage retrieval.

Stage 1 scores stored key vectors against the query key with a weighted
inner product S = sum_j Q_j * w_j * K_ij, where the weight of each
component depends only on which block (ego state / goal / history) it
belongs to, and keeps the top-K. Stage 2 asks the LLM to pick the most
relevant of those K records from their text descriptions; an unparseable
reply falls back to the stage-1 leader.

Keys are the concatenation [e | g | h]:
  e = (vx, vy, ax, ay, heading) followed by the scene's can-bus extras,
  g = 3-way one-hot mission goal (go_straight, turn_left, turn_right),
  h = flattened past waypoints (x1, y1, ..., xH, yH), most-recent last.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyStore, LengthMismatch, ParseError, ValidationError
from .scene import HISTORY_LENGTH, EgoState, SceneSnapshot
from .trajectory import Trajectory

STORE_SCHEMA_ID = "agentdriver/memory/1"

EGO_BASE_DIMS = 5  # vx, vy, ax, ay, heading
GOAL_DIMS = 3


@dataclass(frozen=True)
class KeySpec:
    """Configured split (n_e, n_g, n_h) of the key vector."""

    n_extras: int = 0
    history_length: int = HISTORY_LENGTH

    @property
    def n_e(self) -> int:
        return EGO_BASE_DIMS + self.n_extras

    @property
    def n_g(self) -> int:
        return GOAL_DIMS

    @property
    def n_h(self) -> int:
        return 2 * self.history_length

    @property
    def total(self) -> int:
        return self.n_e + self.n_g + self.n_h


@dataclass(frozen=True)
class SimilarityWeights:
    ego: float = 1.0
    goal: float = 1.0
    history: float = 1.0

    def __post_init__(self) -> None:
        if self.ego < 0 or self.goal < 0 or self.history < 0:
            raise ValidationError("weights", "must be nonnegative")
        if self.ego == 0 and self.goal == 0 and self.history == 0:
            raise ValidationError("weights", "at least one weight must be > 0")

    def diagonal(self, spec: KeySpec) -> np.ndarray:
        return np.concatenate(
            [
                np.full(spec.n_e, self.ego),
                np.full(spec.n_g, self.goal),
                np.full(spec.n_h, self.history),
            ]
        )


@dataclass(frozen=True)
class ExperienceRecord:
    key: tuple[float, ...]
    scenario_text: str
    trajectory: Trajectory
    scene_id: str


@dataclass
class RetrievalResult:
    chosen: ExperienceRecord
    candidates: list[tuple[ExperienceRecord, float]]  # descending score
    rerank_rationale: str
    used_fallback: bool = False


def build_key(ego: EgoState, spec: KeySpec) -> np.ndarray:
    """Vectorize an ego state into the [e | g | h] key."""
    if len(ego.can_bus_extras) != spec.n_extras:
        raise LengthMismatch(
            f"can_bus_extras has {len(ego.can_bus_extras)} entries, store expects {spec.n_extras}"
        )
    if len(ego.history) != spec.history_length:
        raise LengthMismatch(
            f"history has {len(ego.history)} waypoints, store expects {spec.history_length}"
        )
    e = [ego.velocity[0], ego.velocity[1], ego.acceleration[0], ego.acceleration[1], ego.heading]
    e.extend(ego.can_bus_extras)
    g = list(ego.goal_one_hot())
    h = [c for p in ego.history for c in p]
    return np.array(e + g + h, dtype=np.float64)


def _normalize_blocks(key: np.ndarray, spec: KeySpec) -> np.ndarray:
    """Optional per-block L2 normalization for scale-invariant scoring."""
    out = key.astype(np.float64).copy()
    bounds = [(0, spec.n_e), (spec.n_e, spec.n_e + spec.n_g), (spec.n_e + spec.n_g, spec.total)]
    for lo, hi in bounds:
        norm = float(np.linalg.norm(out[lo:hi]))
        if norm > 0.0:
            out[lo:hi] /= norm
    return out


class ExperienceStore:
    """Ordered collection of experience records with JSON-lines persistence.

    Reads are safe to share across workers; insert requires exclusive
    access (the pipeline only reads during a run).
    """

    def __init__(self, spec: KeySpec, records: list[ExperienceRecord] | None = None):
        self.spec = spec
        self.records: list[ExperienceRecord] = []
        self._id_counts: dict[str, int] = {}
        for r in records or []:
            self.insert(r)

    def __len__(self) -> int:
        return len(self.records)

    def insert(self, record: ExperienceRecord) -> ExperienceRecord:
        """Append a record; duplicate scene_ids get a deterministic suffix."""
        if len(record.key) != self.spec.total:
            raise LengthMismatch(
                f"key has {len(record.key)} entries, store expects {self.spec.total}"
            )
        count = self._id_counts.get(record.scene_id, 0)
        stored = record
        if count:
            stored = ExperienceRecord(
                key=record.key,
                scenario_text=record.scenario_text,
                trajectory=record.trajectory,
                scene_id=f"{record.scene_id}#{count + 1}",
            )
        self._id_counts[record.scene_id] = count + 1
        self.records.append(stored)
        return stored

    def key_matrix(self) -> np.ndarray:
        return np.array([r.key for r in self.records], dtype=np.float64)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "schema": STORE_SCHEMA_ID,
                "n_extras": self.spec.n_extras,
                "history_length": self.spec.history_length,
            }
            fh.write(json.dumps(header) + "\n")
            for r in self.records:
                fh.write(
                    json.dumps(
                        {
                            "scene_id": r.scene_id,
                            "key": list(r.key),
                            "scenario_text": r.scenario_text,
                            "trajectory": r.trajectory.to_list(),
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path, spec: KeySpec | None = None) -> "ExperienceStore":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        records: list[ExperienceRecord] = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{i + 1}: not valid JSON: {exc}") from exc
            if i == 0 and doc.get("schema") == STORE_SCHEMA_ID:
                if spec is None:
                    spec = KeySpec(
                        n_extras=int(doc.get("n_extras", 0)),
                        history_length=int(doc.get("history_length", HISTORY_LENGTH)),
                    )
                continue
            records.append(
                ExperienceRecord(
                    key=tuple(float(v) for v in doc["key"]),
                    scenario_text=doc["scenario_text"],
                    trajectory=Trajectory.from_list(doc["trajectory"]),
                    scene_id=doc["scene_id"],
                )
            )
        if spec is None:
            spec = KeySpec()
        store = cls(spec)
        # bypass suffixing on load: ids were already disambiguated when stored
        for r in records:
            if len(r.key) != spec.total:
                raise LengthMismatch(f"record {r.scene_id!r} key length {len(r.key)} != {spec.total}")
            store.records.append(r)
            base = r.scene_id.split("#", 1)[0]
            store._id_counts[base] = store._id_counts.get(base, 0) + 1
        return store


def stage1_topk(
    store: ExperienceStore,
    query_key: np.ndarray,
    weights: SimilarityWeights,
    k: int,
    normalize: bool = False,
) -> list[tuple[ExperienceRecord, float]]:
    """Top-K records by weighted inner product, descending, ties by scene_id."""
    if len(store) == 0:
        raise EmptyStore("experience store has no records")
    if k < 1:
        raise ValidationError("k", "must be >= 1")
    query = np.asarray(query_key, dtype=np.float64)
    if query.shape != (store.spec.total,):
        raise LengthMismatch(f"query key length {query.shape} != {store.spec.total}")
    keys = store.key_matrix()
    if normalize:
        query = _normalize_blocks(query, store.spec)
        keys = np.vstack([_normalize_blocks(row, store.spec) for row in keys])
    diag = weights.diagonal(store.spec)
    scores = keys @ (query * diag)
    order = sorted(range(len(store)), key=lambda i: (-scores[i], store.records[i].scene_id))
    return [(store.records[i], float(scores[i])) for i in order[:k]]


_INDEX_RE = re.compile(r"\d+")


def parse_rerank_reply(reply: str, n_candidates: int) -> int | None:
    """First in-range 1-based index in the reply, or None."""
    for token in _INDEX_RE.findall(reply):
        value = int(token)
        if 1 <= value <= n_candidates:
            return value - 1
    return None


def stage2_rerank(
    llm,
    query_scene_text: str,
    candidates: list[tuple[ExperienceRecord, float]],
    prompt_template: str,
) -> RetrievalResult:
    """LLM fuzzy rerank over the stage-1 candidates.

    Single candidates are chosen without an LLM call. Unparseable replies
    fall back to the stage-1 leader and set used_fallback.
    """
    if not candidates:
        raise EmptyStore("no candidates to rerank")
    if len(candidates) == 1:
        return RetrievalResult(
            chosen=candidates[0][0],
            candidates=candidates,
            rerank_rationale="single candidate; chosen without rerank",
        )
    numbered = "\n".join(
        f"{i + 1}. [{rec.scene_id}] {rec.scenario_text}" for i, (rec, _) in enumerate(candidates)
    )
    prompt = prompt_template.format(query=query_scene_text, candidates=numbered, count=len(candidates))
    from .llm import ChatTurn  # local import to avoid a cycle

    reply = llm.complete(
        [
            ChatTurn(role="system", content="You rank past driving scenarios by similarity."),
            ChatTurn(role="user", content=prompt),
        ]
    )
    idx = parse_rerank_reply(reply.content or "", len(candidates))
    if idx is None:
        return RetrievalResult(
            chosen=candidates[0][0],
            candidates=candidates,
            rerank_rationale=f"unparseable rerank reply {reply.content!r}; fell back to stage-1 leader",
            used_fallback=True,
        )
    return RetrievalResult(
        chosen=candidates[idx][0],
        candidates=candidates,
        rerank_rationale=(reply.content or "").strip(),
    )


class CommonsenseMemory:
    """Ordered text blocks (traffic rules, risky behaviors) from a flat file.

    Blocks are separated by lines containing exactly ``---``.
    """

    def __init__(self, blocks: list[str]):
        self.blocks = [b.strip() for b in blocks if b.strip()]

    @classmethod
    def load(cls, path: str | Path) -> "CommonsenseMemory":
        text = Path(path).read_text(encoding="utf-8")
        blocks = re.split(r"^---$", text, flags=re.MULTILINE)
        return cls(blocks)

    def as_text(self) -> str:
        return "\n\n".join(self.blocks)


def scenario_brief(snap: SceneSnapshot) -> str:
    """Deterministic one-paragraph description used as rerank/query text."""
    ego = snap.ego
    parts = [
        f"Ego speed {ego.speed():.2f} m/s, acceleration ({ego.acceleration[0]:.2f},{ego.acceleration[1]:.2f}) m/s^2,"
        f" mission {ego.mission_goal}.",
        f"{len(snap.detections)} detected object(s), {len(snap.predictions)} with predicted trajectories.",
    ]
    nearest = sorted(snap.detections, key=lambda d: (np.hypot(*d.center), d.object_id))[:3]
    if nearest:
        described = "; ".join(
            f"{d.object_id} ({d.category}) at ({d.center[0]:.2f},{d.center[1]:.2f})" for d in nearest
        )
        parts.append(f"Nearest: {described}.")
    return " ".join(parts)


@dataclass
class MemoryConfig:
    enabled: bool = True
    store_path: str | None = None
    commonsense_path: str | None = None
    top_k: int = 3
    weights: SimilarityWeights = field(default_factory=SimilarityWeights)
    normalize: bool = False
    n_extras: int = 0
    history_length: int = HISTORY_LENGTH

    def key_spec(self) -> KeySpec:
        return KeySpec(n_extras=self.n_extras, history_length=self.history_length)


def retrieve(
    store: ExperienceStore | None,
    snap: SceneSnapshot,
    llm,
    config: MemoryConfig,
    commonsense: CommonsenseMemory | None,
    rerank_template: str,
) -> tuple[str, RetrievalResult | None]:
    """Compose key building, stage-1 scoring, and stage-2 rerank.

    Returns (commonsense text, retrieval result); the result is None when
    the experience memory is disabled or has no store configured.
    """
    commonsense_text = commonsense.as_text() if commonsense else ""
    if not config.enabled or store is None:
        return commonsense_text, None
    query_key = build_key(snap.ego, store.spec)
    candidates = stage1_topk(store, query_key, config.weights, config.top_k, config.normalize)
    result = stage2_rerank(llm, scenario_brief(snap), candidates, rerank_template)
    return commonsense_text, result


def record_from_scene(snap: SceneSnapshot, spec: KeySpec) -> ExperienceRecord:
    """Build the store entry for a training scene (requires GT trajectory)."""
    from .errors import MissingGroundTruth

    if snap.gt_trajectory is None:
        raise MissingGroundTruth(f"scene {snap.scene_id!r} has no gt_trajectory")
    key = build_key(snap.ego, spec)
    return ExperienceRecord(
        key=tuple(float(v) for v in key),
        scenario_text=scenario_brief(snap),
        trajectory=snap.gt_trajectory,
        scene_id=snap.scene_id,
    )
