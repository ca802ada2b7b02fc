"""Procedural ground-truth video scenarios.

A scenario is a small rectangular world: objects with fixed unit-norm
appearance prototypes move across an H x W grid, enter after the first
frame (emergence), leave before the last (disappearance), and may be
temporarily covered by another object (occlusion window).  Masks are
axis-aligned rectangles rasterized per frame; frames are 1-indexed.

Object appearance is a prototype vector rather than rendered pixels: it
gives "appearance feature" a precise meaning at desk scale and makes
anchor-to-target feature distances measurable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ScenarioFormatError

SCENARIO_VERSION = 1


@dataclass(frozen=True)
class ScenarioSpec:
    frames: int
    height: int
    width: int
    num_objects: int
    num_classes: int = 3
    emergence_rate: float = 0.0
    disappearance_rate: float = 0.0
    occlusion_rate: float = 0.0
    reentry_rate: float = 0.0
    min_size: int = 3
    max_size: int = 6
    feature_dim: int = 64

    def validate(self) -> None:
        if self.frames < 2:
            raise ConfigError(f"need at least 2 frames, got {self.frames}")
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"grid must be at least 8x8, got {self.height}x{self.width}")
        if self.num_objects < 1:
            raise ConfigError("need at least one object")
        if self.num_objects > self.height * self.width:
            raise ConfigError(
                f"{self.num_objects} objects cannot fit a {self.height}x{self.width} grid"
            )
        for name in ("emergence_rate", "disappearance_rate", "occlusion_rate", "reentry_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if not 1 <= self.min_size <= self.max_size:
            raise ConfigError(f"bad size range [{self.min_size}, {self.max_size}]")
        if self.max_size > min(self.height, self.width) // 2:
            raise ConfigError("max_size too large for the grid")
        if self.num_classes < 1:
            raise ConfigError("need at least one foreground class")


@dataclass
class GtObject:
    id: int
    class_id: int
    birth: int
    death: int
    prototype: np.ndarray              # 1 x C, unit norm
    trajectory: list[tuple[float, float, int, int]]  # (cy, cx, h, w) per alive frame
    masks: list[np.ndarray]            # bool (H, W) per alive frame

    def alive_at(self, t: int) -> bool:
        return self.birth <= t <= self.death

    def mask_at(self, t: int) -> np.ndarray:
        if not self.alive_at(t):
            raise ValueError(f"object {self.id} not alive at frame {t}")
        return self.masks[t - self.birth]


@dataclass
class Scenario:
    frames: int
    height: int
    width: int
    seed: int
    objects: list[GtObject]
    occlusions: list[tuple[int, int, int]] = field(default_factory=list)  # (object id, t0, t1)

    @property
    def feature_dim(self) -> int:
        return self.objects[0].prototype.shape[1]

    def alive_ids(self, t: int) -> list[int]:
        return [o.id for o in self.objects if o.alive_at(t)]

    def object_by_id(self, oid: int) -> GtObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(f"no object with id {oid}")

    def hidden_at(self, oid: int, t: int) -> bool:
        """True while an occlusion window covers the object."""
        return any(o == oid and t0 <= t <= t1 for o, t0, t1 in self.occlusions)

    def validate(self) -> None:
        if self.frames < 2:
            raise ScenarioFormatError(f"frames: need >= 2, got {self.frames}")
        if not self.objects:
            raise ScenarioFormatError("objects: empty object list")
        seen = set()
        for i, o in enumerate(self.objects):
            where = f"objects[{i}]"
            if o.id in seen:
                raise ScenarioFormatError(f"{where}.id: duplicate id {o.id}")
            seen.add(o.id)
            if not 1 <= o.birth <= o.death <= self.frames:
                raise ScenarioFormatError(
                    f"{where}: invalid life interval [{o.birth}, {o.death}] for T={self.frames}"
                )
            n_alive = o.death - o.birth + 1
            if len(o.masks) != n_alive or len(o.trajectory) != n_alive:
                raise ScenarioFormatError(f"{where}: masks/trajectory length != alive span")
            norm = float(np.linalg.norm(o.prototype))
            if abs(norm - 1.0) > 1e-6:
                raise ScenarioFormatError(f"{where}.prototype: norm {norm} is not 1")
            for k, m in enumerate(o.masks):
                if m.shape != (self.height, self.width):
                    raise ScenarioFormatError(f"{where}.masks[{k}]: wrong shape {m.shape}")
                if not m.any():
                    raise ScenarioFormatError(f"{where}.masks[{k}]: empty mask inside life")


def _rect_mask(height, width, cy, cx, h, w) -> np.ndarray:
    r0 = int(round(cy - h / 2.0))
    c0 = int(round(cx - w / 2.0))
    mask = np.zeros((height, width), dtype=bool)
    mask[max(r0, 0):min(r0 + h, height), max(c0, 0):min(c0 + w, width)] = True
    return mask


def _sample_life(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[int, int]:
    T = spec.frames
    birth = 1
    if T >= 3 and rng.random() < spec.emergence_rate:
        birth = int(rng.integers(2, T))          # 2 .. T-1
    death = T
    if T >= 3 and rng.random() < spec.disappearance_rate and birth <= T - 1:
        death = int(rng.integers(birth, T))      # birth .. T-1
    return birth, death


def _make_object(oid, class_id, birth, death, prototype, spec, rng) -> GtObject:
    h = int(rng.integers(spec.min_size, spec.max_size + 1))
    w = int(rng.integers(spec.min_size, spec.max_size + 1))
    cy = float(rng.uniform(h / 2.0, spec.height - h / 2.0))
    cx = float(rng.uniform(w / 2.0, spec.width - w / 2.0))
    vy = float(rng.uniform(-1.5, 1.5))
    vx = float(rng.uniform(-1.5, 1.5))
    trajectory = []
    masks = []
    for _ in range(birth, death + 1):
        trajectory.append((cy, cx, h, w))
        masks.append(_rect_mask(spec.height, spec.width, cy, cx, h, w))
        cy += vy
        cx += vx
        if not h / 2.0 <= cy <= spec.height - h / 2.0:
            vy = -vy
            cy = float(np.clip(cy, h / 2.0, spec.height - h / 2.0))
        if not w / 2.0 <= cx <= spec.width - w / 2.0:
            vx = -vx
            cx = float(np.clip(cx, w / 2.0, spec.width - w / 2.0))
    return GtObject(id=oid, class_id=class_id, birth=birth, death=death,
                    prototype=prototype, trajectory=trajectory, masks=masks)


def _unit_prototype(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(1, dim))
    return v / np.linalg.norm(v)


def generate_scenario(spec: ScenarioSpec, seed: int) -> Scenario:
    """Deterministic world generation from (spec, seed)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    objects = []
    next_id = 0
    for _ in range(spec.num_objects):
        class_id = int(rng.integers(spec.num_classes))
        birth, death = _sample_life(spec, rng)
        proto = _unit_prototype(spec.feature_dim, rng)
        objects.append(_make_object(next_id, class_id, birth, death, proto, spec, rng))
        next_id += 1

    # re-entry: a dead object's lookalike returns later under a fresh id
    if spec.reentry_rate > 0:
        for o in list(objects):
            if o.death <= spec.frames - 2 and rng.random() < spec.reentry_rate:
                birth = int(rng.integers(o.death + 2, spec.frames + 1))
                objects.append(_make_object(next_id, o.class_id, birth, spec.frames,
                                            o.prototype.copy(), spec, rng))
                next_id += 1

    occlusions = []
    if spec.occlusion_rate > 0 and len(objects) >= 2:
        for o in objects:
            if rng.random() < spec.occlusion_rate and o.death - o.birth >= 2:
                t0 = int(rng.integers(o.birth + 1, o.death))
                t1 = min(o.death - 1, t0 + int(rng.integers(1, 3)))
                occlusions.append((o.id, t0, t1))

    scn = Scenario(frames=spec.frames, height=spec.height, width=spec.width,
                   seed=seed, objects=objects, occlusions=occlusions)
    scn.validate()
    return scn


# ---------------------------------------------------------------------------
# serialization: versioned JSON with run-length encoded masks


def mask_to_runs(mask: np.ndarray) -> list[list[int]]:
    """Foreground runs [(start, length), ...] over row-major pixels."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    padded = np.concatenate([[False], flat, [False]])
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def runs_to_mask(runs, height: int, width: int, where: str = "masks") -> np.ndarray:
    flat = np.zeros(height * width, dtype=bool)
    for k, run in enumerate(runs):
        if len(run) != 2:
            raise ScenarioFormatError(f"{where}[{k}]: run must be [start, length]")
        start, length = int(run[0]), int(run[1])
        if length <= 0 or start < 0 or start + length > flat.size:
            raise ScenarioFormatError(f"{where}[{k}]: run [{start}, {length}] out of bounds")
        flat[start:start + length] = True
    return flat.reshape(height, width)


def scenario_to_dict(scn: Scenario) -> dict:
    return {
        "version": SCENARIO_VERSION,
        "T": scn.frames,
        "H": scn.height,
        "W": scn.width,
        "seed": scn.seed,
        "objects": [
            {
                "id": o.id,
                "class": o.class_id,
                "birth": o.birth,
                "death": o.death,
                "prototype": [float(x) for x in o.prototype[0]],
                "trajectory": [[float(cy), float(cx), int(h), int(w)]
                               for cy, cx, h, w in o.trajectory],
                "masks": [mask_to_runs(m) for m in o.masks],
            }
            for o in scn.objects
        ],
        "occlusions": [[oid, t0, t1] for oid, t0, t1 in scn.occlusions],
    }


def scenario_to_bytes(scn: Scenario) -> bytes:
    return (json.dumps(scenario_to_dict(scn), sort_keys=True, indent=1) + "\n").encode()


def _need(payload: dict, key: str, where: str):
    if key not in payload:
        raise ScenarioFormatError(f"{where}: missing field {key!r}")
    return payload[key]


def scenario_from_bytes(raw: bytes) -> Scenario:
    try:
        payload = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ScenarioFormatError(f"not valid JSON: {e}") from e
    if not isinstance(payload, dict):
        raise ScenarioFormatError("top level: expected an object")
    version = _need(payload, "version", "top level")
    if version != SCENARIO_VERSION:
        raise ScenarioFormatError(
            f"version: expected {SCENARIO_VERSION}, got {version!r}")
    T = int(_need(payload, "T", "top level"))
    H = int(_need(payload, "H", "top level"))
    W = int(_need(payload, "W", "top level"))
    seed = int(_need(payload, "seed", "top level"))
    objects = []
    raw_objects = _need(payload, "objects", "top level")
    if not isinstance(raw_objects, list):
        raise ScenarioFormatError("objects: expected a list")
    for i, ro in enumerate(raw_objects):
        where = f"objects[{i}]"
        proto = np.asarray(_need(ro, "prototype", where), dtype=np.float64).reshape(1, -1)
        birth = int(_need(ro, "birth", where))
        death = int(_need(ro, "death", where))
        masks = [runs_to_mask(runs, H, W, where=f"{where}.masks[{k}]")
                 for k, runs in enumerate(_need(ro, "masks", where))]
        trajectory = [(float(c[0]), float(c[1]), int(c[2]), int(c[3]))
                      for c in _need(ro, "trajectory", where)]
        objects.append(GtObject(
            id=int(_need(ro, "id", where)),
            class_id=int(_need(ro, "class", where)),
            birth=birth, death=death, prototype=proto,
            trajectory=trajectory, masks=masks))
    occlusions = [(int(a), int(b), int(c)) for a, b, c in payload.get("occlusions", [])]
    scn = Scenario(frames=T, height=H, width=W, seed=seed,
                   objects=objects, occlusions=occlusions)
    scn.validate()
    return scn


def scenario_digest(scn: Scenario) -> str:
    return hashlib.sha256(scenario_to_bytes(scn)).hexdigest()


def save_scenario(scn: Scenario, path) -> None:
    with open(path, "wb") as fh:
        fh.write(scenario_to_bytes(scn))


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        return scenario_from_bytes(fh.read())
