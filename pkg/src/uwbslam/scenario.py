"""
Scenario files: world, script, noise, simulator and driver sections in YAML.

The ``driver`` section uses the ``DriverConfig`` field names as keys (``min_disp``,
``dep_dist``, ``alpha_r``, ...). Any key error is reported with its dotted
path, YAML syntax errors with their line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .aoa import AnchorRingConfig
from .driver import DriverConfig
from .geometry import Pose2D
from .sim import ClutterDisc, Halt, NoiseConfig, SimConfig, SlipZone, TrajectoryScript, Waypoint, WorldModel


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    world: WorldModel
    script: TrajectoryScript
    noise: NoiseConfig
    driver: DriverConfig
    dt: float = 0.1
    deploy_offset: tuple = (0.0, 2.5)
    seed: int = 0
    aoa_rate_divider: int = 1
    source: Optional[str] = None
    raw: dict = field(default_factory=dict)

    def sim_config(self) -> SimConfig:
        return SimConfig(
            dt=self.dt,
            sensors=tuple(self.driver.radar_sensors),
            ring=self.driver.ring,
            aoa_rate_divider=self.aoa_rate_divider,
        )

    def with_driver(self, **overrides) -> "Scenario":
        d = self.driver.to_dict()
        d.update(overrides)
        return replace(self, driver=DriverConfig.from_dict(d))

    def with_noise(self, **overrides) -> "Scenario":
        return replace(self, noise=replace(self.noise, **overrides))


def _fail(path: str, msg: str):
    raise ScenarioError(f"{path}: {msg}")


def _pair(v, path):
    try:
        a, b = v
        return float(a), float(b)
    except (TypeError, ValueError):
        _fail(path, f"expected two numbers, got {v!r}")


def _check_keys(section: dict, allowed, path: str):
    if not isinstance(section, dict):
        _fail(path, "expected a mapping")
    extra = set(section) - set(allowed)
    if extra:
        _fail(f"{path}.{sorted(extra)[0]}", "unknown key")


def _parse_world(w: dict, seed: int) -> WorldModel:
    _check_keys(w, {"features", "clutter", "walls", "slip_zones", "bounds", "wall_rcs", "tags"}, "world")
    feats, rcs = [], []
    for k, f in enumerate(w.get("features", []) or []):
        p = f"world.features[{k}]"
        if not isinstance(f, (list, tuple)) or len(f) not in (2, 3):
            _fail(p, "expected [x, y] or [x, y, rcs]")
        feats.append((float(f[0]), float(f[1])))
        rcs.append(float(f[2]) if len(f) == 3 else 1.0)
    clutter = []
    for k, c in enumerate(w.get("clutter", []) or []):
        p = f"world.clutter[{k}]"
        _check_keys(c, {"center", "radius", "n", "rcs"}, p)
        clutter.append(ClutterDisc(_pair(c.get("center"), p + ".center"), float(c["radius"]), int(c.get("n", 12)), float(c.get("rcs", 0.4))))
    walls = []
    for k, s in enumerate(w.get("walls", []) or []):
        if not isinstance(s, (list, tuple)) or len(s) != 4:
            _fail(f"world.walls[{k}]", "expected [x1, y1, x2, y2]")
        walls.append([[float(s[0]), float(s[1])], [float(s[2]), float(s[3])]])
    zones = []
    for k, z in enumerate(w.get("slip_zones", []) or []):
        p = f"world.slip_zones[{k}]"
        _check_keys(z, {"center", "radius", "trans_bias", "rot_bias", "heading_rate"}, p)
        zones.append(
            SlipZone(
                _pair(z.get("center"), p + ".center"),
                float(z["radius"]),
                float(z.get("trans_bias", 0.0)),
                float(z.get("rot_bias", 0.0)),
                float(z.get("heading_rate", 0.0)),
            )
        )
    tags = {}
    for k, t in enumerate(w.get("tags", []) or []):
        if not isinstance(t, (list, tuple)) or len(t) != 3:
            _fail(f"world.tags[{k}]", "expected [tag_id, x, y]")
        if int(t[0]) in tags:
            _fail(f"world.tags[{k}]", f"duplicate tag id {t[0]}")
        tags[int(t[0])] = (float(t[1]), float(t[2]))
    bounds = w.get("bounds")
    if bounds is not None:
        if len(bounds) != 4:
            _fail("world.bounds", "expected [xmin, ymin, xmax, ymax]")
        bounds = tuple(float(b) for b in bounds)
    try:
        return WorldModel(
            np.array(feats).reshape(-1, 2),
            np.array(rcs),
            clutter,
            np.array(walls).reshape(-1, 2, 2),
            tags,
            zones,
            float(w.get("wall_rcs", 0.6)),
            seed,
            bounds,
        )
    except ValueError as exc:
        _fail("world", str(exc))


def _parse_script(s: dict) -> TrajectoryScript:
    _check_keys(s, {"start", "turn_rate", "speed", "waypoints"}, "script")
    start = s.get("start", [0.0, 0.0, 0.0])
    if len(start) != 3:
        _fail("script.start", "expected [x, y, theta_deg]")
    speed = float(s.get("speed", 0.05))
    if speed < 0:
        _fail("script.speed", "speed must be non-negative")
    directives = []
    for k, d in enumerate(s.get("waypoints", []) or []):
        p = f"script.waypoints[{k}]"
        if isinstance(d, dict):
            if "halt" in d:
                directives.append(Halt(float(d["halt"])))
                continue
            _check_keys(d, {"x", "y", "speed"}, p)
            directives.append(Waypoint(float(d["x"]), float(d["y"]), float(d.get("speed", speed))))
        elif isinstance(d, (list, tuple)) and len(d) in (2, 3):
            directives.append(Waypoint(float(d[0]), float(d[1]), float(d[2]) if len(d) == 3 else speed))
        else:
            _fail(p, "expected [x, y], [x, y, speed] or {halt: seconds}")
        if directives[-1].speed < 0:
            _fail(p, "speed must be non-negative")
    try:
        return TrajectoryScript(
            Pose2D(float(start[0]), float(start[1]), math.radians(float(start[2]))),
            directives,
            float(s.get("turn_rate", 0.2)),
        )
    except ValueError as exc:
        _fail("script", str(exc))


def _parse_noise(n: dict) -> NoiseConfig:
    if n == "zero":
        return NoiseConfig.zero()
    names = {f.name for f in fields(NoiseConfig)}
    _check_keys(n, names | {"preset"}, "noise")
    base = NoiseConfig.zero() if n.get("preset") == "zero" else NoiseConfig()
    vals = {}
    for k, v in n.items():
        if k == "preset":
            continue
        if k == "ghost_delta":
            vals[k] = _pair(v, "noise.ghost_delta")
        else:
            vals[k] = float(v)
            if k != "rssi_rx_base" and not k.endswith("_bias") and k != "odom_heading_rate" and vals[k] < 0:
                _fail(f"noise.{k}", "must be non-negative")
    if not 0.0 <= vals.get("p_ghost", base.p_ghost) <= 1.0:
        _fail("noise.p_ghost", "probability must lie in [0, 1]")
    return replace(base, **vals)


def _parse_driver(d: dict) -> DriverConfig:
    names = {f.name for f in fields(DriverConfig)}
    _check_keys(d, names, "driver")
    vals = {}
    for k, v in d.items():
        vals[k] = tuple(v) if isinstance(v, list) else v
    try:
        return DriverConfig(**vals)
    except (TypeError, ValueError) as exc:
        _fail("driver", str(exc))


def parse_scenario(doc: dict, name: str = "scenario", source: Optional[str] = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source or name}: top level must be a mapping")
    _check_keys(doc, {"name", "seed", "world", "script", "noise", "driver", "sim"}, "scenario")
    seed = int(doc.get("seed", 0))
    sim = doc.get("sim", {}) or {}
    _check_keys(sim, {"dt", "deploy_offset", "aoa_rate_divider"}, "sim")
    dt = float(sim.get("dt", 0.1))
    if not dt > 0:
        _fail("sim.dt", "must be positive")
    return Scenario(
        name=str(doc.get("name", name)),
        world=_parse_world(doc.get("world", {}) or {}, seed),
        script=_parse_script(doc.get("script", {}) or {}),
        noise=_parse_noise(doc.get("noise", {}) or {}),
        driver=_parse_driver(doc.get("driver", {}) or {}),
        dt=dt,
        deploy_offset=_pair(sim.get("deploy_offset", (0.0, 2.5)), "sim.deploy_offset"),
        seed=seed,
        aoa_rate_divider=int(sim.get("aoa_rate_divider", 1)),
        source=source,
        raw=doc,
    )


def load_scenario(path) -> Scenario:
    """Load a scenario file, or a bundled scenario by bare name."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = bundled_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror or exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "?"
        raise ScenarioError(f"{path}: {where}: {getattr(exc, 'problem', exc)}") from exc
    try:
        return parse_scenario(doc, p.stem, str(p))
    except ScenarioError as exc:
        raise ScenarioError(f"{p}: {exc}") from exc
    except (TypeError, KeyError, ValueError) as exc:
        raise ScenarioError(f"{p}: {exc!r}") from exc


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("uwbslam") / "scenarios" / f"{name}.yaml"))


def bundled_names() -> list:
    root = Path(str(resources.files("uwbslam") / "scenarios"))
    return sorted(p.stem for p in root.glob("*.yaml"))
