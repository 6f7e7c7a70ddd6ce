"""Scene configuration: bodies, friction pairings, compliance, noise, loaders."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .compliance import ElasticityModel
from .contact import RigidBody
from .errors import ConfigError
from .geometry import BodyParams, PolygonShape, Pose2

ASSETS = resources.files("contactforge") / "assets"


@dataclass(frozen=True)
class NoiseConfig:
    pose_sigma_m: float = 2e-4
    angle_sigma_rad: float = 2e-3
    wrench_sigma_N: float = 0.05
    seed: int = 0

    def silent(self) -> "NoiseConfig":
        return replace(self, pose_sigma_m=0.0, angle_sigma_rad=0.0, wrench_sigma_N=0.0)

    @property
    def enabled(self) -> bool:
        return max(self.pose_sigma_m, self.angle_sigma_rad, self.wrench_sigma_N) > 0


@dataclass(frozen=True)
class Friction:
    ground_extrinsic: float = 0.5
    ground_grasped: float = 0.5
    grasped_extrinsic: float = 0.5

    def between(self, a: str, b: str) -> float:
        pair = {a, b}
        if pair == {"go", "eo"}:
            return self.grasped_extrinsic
        if "eo" in pair:
            return self.ground_extrinsic
        return self.ground_grasped


@dataclass(frozen=True, eq=False)
class SceneConfig:
    grasped: RigidBody
    extrinsic: Optional[RigidBody]
    model: ElasticityModel
    friction: Friction = Friction()
    ground_y: float = 0.0
    grasp: Pose2 = Pose2()
    noise: NoiseConfig = NoiseConfig(0.0, 0.0, 0.0, 0)
    # plant stiffness relative to the model used for planning and control
    plant_stiffness_scale: float = 1.0
    step_translation_m: float = 2e-3
    step_rotation_rad: float = float(np.deg2rad(1.0))
    contact_tol: float = 1e-4
    source: dict = field(default_factory=dict)

    @property
    def bodies(self) -> dict:
        out = {"go": self.grasped}
        if self.extrinsic is not None:
            out["eo"] = self.extrinsic
        return out

    @property
    def plant_model(self) -> ElasticityModel:
        return self.model.scaled(self.plant_stiffness_scale)

    def with_noise(self, noise: NoiseConfig) -> "SceneConfig":
        return replace(self, noise=noise)


def load_shape(name_or_path) -> PolygonShape:
    """A bundled shape name, a shape file, or an inline {"vertices_m": ...} dict."""
    if isinstance(name_or_path, dict):
        try:
            return PolygonShape(np.array(name_or_path["vertices_m"], dtype=float), name_or_path.get("name", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad inline shape ({exc})") from None
    path = Path(name_or_path)
    if path.suffix != ".json":
        path = ASSETS / "shapes" / f"{name_or_path}.json"
        if not path.is_file():
            raise ConfigError(f"unknown shape {name_or_path!r}")
    doc = json.loads(path.read_text())
    try:
        return PolygonShape(np.array(doc["vertices_m"], dtype=float), doc.get("name", path.stem))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad shape file ({exc})") from None


def shape_names() -> list[str]:
    return sorted(p.name[:-5] for p in (ASSETS / "shapes").iterdir() if p.name.endswith(".json"))


def load_model(spec) -> ElasticityModel:
    """A model name ("bubbles"/"gelslim"), a path to a model file, or a dict with K."""
    if isinstance(spec, dict):
        doc = spec
    else:
        path = Path(spec)
        if path.suffix != ".json":
            path = ASSETS / "models" / f"{spec}.json"
        if not path.is_file():
            raise ConfigError(f"unknown stiffness model {spec!r}")
        doc = json.loads(path.read_text())
    if "K" not in doc:
        raise ConfigError("stiffness model needs a 'K' matrix")
    return ElasticityModel(np.array(doc["K"], dtype=float))


def _body(doc, where) -> RigidBody:
    try:
        shape = load_shape(doc["shape"])
        com = doc.get("com_m")
        com = tuple(shape.centroid()) if com is None else tuple(com)
        return RigidBody(shape, BodyParams(float(doc["mass_kg"]), com, float(doc.get("gravity_m_s2", 9.81))))
    except KeyError as exc:
        raise ConfigError(f"{where}: missing field {exc}") from None


def scene_from_dict(doc: dict) -> SceneConfig:
    if "grasped" not in doc:
        raise ConfigError("scene: missing 'grasped' body")
    ext = doc.get("extrinsic")
    mu = doc.get("mu", {})
    noise = doc.get("noise", {})
    step = doc.get("step_bound", {})
    fr = Friction(**{k: float(v) for k, v in mu.items()})
    for v in (fr.ground_extrinsic, fr.ground_grasped, fr.grasped_extrinsic):
        if v < 0:
            raise ConfigError("friction coefficients must be non-negative")
    return SceneConfig(
        grasped=_body(doc["grasped"], "grasped"),
        extrinsic=None if ext is None else _body(ext, "extrinsic"),
        model=load_model(doc.get("stiffness", "bubbles")),
        friction=fr,
        ground_y=float(doc.get("ground_y_m", 0.0)),
        grasp=Pose2.from_array(doc.get("grasp_offset", [0.0, 0.0, 0.0])),
        noise=NoiseConfig(float(noise.get("pose_sigma_m", 0.0)), float(noise.get("angle_sigma_rad", 0.0)),
                          float(noise.get("wrench_sigma_N", 0.0)), int(noise.get("seed", 0))),
        plant_stiffness_scale=float(doc.get("plant_stiffness_scale", 1.0)),
        step_translation_m=float(step.get("translation_m", 2e-3)),
        step_rotation_rad=float(step.get("rotation_rad", np.deg2rad(1.0))),
        source=doc,
    )


def load_scene(path) -> SceneConfig:
    """Scene from a JSON file, or a bundled scene by name."""
    path = Path(path)
    if path.suffix != ".json":
        path = ASSETS / "scenes" / f"{path}.json"
    if not path.is_file():
        raise ConfigError(f"scene file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return scene_from_dict(doc)


def default_scene(extrinsic: Optional[str] = "hbox", **overrides) -> SceneConfig:
    """Bundled defaults: tall_box grasped object, bubble-sensor stiffness."""
    doc = {
        "grasped": {"shape": "tall_box", "mass_kg": 0.1},
        "extrinsic": None if extrinsic is None else {"shape": extrinsic, "mass_kg": 0.3},
        "mu": {"ground_extrinsic": 1.2, "ground_grasped": 0.5, "grasped_extrinsic": 0.5},
        "stiffness": "bubbles",
    }
    doc.update(overrides)
    return scene_from_dict(doc)
