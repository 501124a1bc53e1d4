"""Scenario files: schema validation, target translation and canonical dumps."""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControllerParams, ParameterError
from .geometry import PolygonRegion, box_polygon, disk_polygon
from .morphology import WorkspaceModel, epsilon_upper_bound
from .sensor import SensorConfig
from .unicycle import UnicycleParams

ROBOT_MODELS = ("point", "disk", "unicycle")
DATA_DIR = Path(__file__).with_name("data") / "scenarios"


class ScenarioError(ValueError):
    """Validation failure; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors) if not isinstance(errors, str) else [errors]
        super().__init__("; ".join(self.errors))


@dataclass
class ScenarioSpec:
    name: str
    mode: str                       # "known" or "sensor"
    workspace: PolygonRegion | None
    obstacles: list
    start: np.ndarray
    robot: dict
    controller: ControllerParams
    sensor: SensorConfig | None
    unicycle: UnicycleParams | None = None
    resolution: float = 0.0
    seed: int = 0
    dt: float = 1e-3
    budget: int = 1_000_000
    t_max: float = math.inf
    starts: list = field(default_factory=list)
    beta: float | None = None
    convergence_radius: float = 0.0
    waive_checks: bool = False
    note: str = ""
    derived: dict = field(default_factory=dict)

    @property
    def model(self) -> WorkspaceModel:
        return WorkspaceModel(self.workspace, list(self.obstacles), float(self.robot["r"]),
                              float(self.robot["r_s"]))

    @property
    def r_a(self) -> float:
        return float(self.robot["r"]) + float(self.robot["r_s"])

    def with_start(self, start) -> "ScenarioSpec":
        s = copy.copy(self)
        s.start = np.asarray(start, dtype=np.float64)
        s.starts = []
        return s

    def to_json(self) -> dict:
        c = self.controller
        out = {
            "name": self.name,
            "mode": self.mode,
            "note": self.note,
            "unbounded": self.workspace is None,
            "workspace": None if self.workspace is None else self.workspace.to_json(),
            "obstacles": [o.to_json() for o in self.obstacles],
            "start": [float(v) for v in self.start],
            "target": [0.0, 0.0],
            "starts": [[float(a), float(b)] for a, b in self.starts],
            "robot": {k: self.robot[k] for k in sorted(self.robot)},
            "controller": {"kappa_s": c.kappa_s, "kappa_r": c.kappa_r, "alpha": c.alpha,
                           "gamma": c.gamma, "gamma_s": c.gamma_s, "delta": c.delta,
                           "epsilon": c.epsilon, "beta": self.beta},
            "sensor": None if self.sensor is None else {
                "R_s": self.sensor.R_s, "ray_count": self.sensor.ray_count,
                "noise_sigma": self.sensor.noise_sigma},
            "unicycle": None if self.unicycle is None else {
                "nu_max": self.unicycle.nu_max, "omega_max": self.unicycle.omega_max,
                "kappa_nu": self.unicycle.kappa_nu, "kappa_omega": self.unicycle.kappa_omega,
                "n": self.unicycle.n},
            "resolution": self.resolution,
            "seed": self.seed,
            "dt": self.dt,
            "budget": self.budget,
            "t_max": None if not math.isfinite(self.t_max) else self.t_max,
            "convergence_radius": self.convergence_radius,
            "waive_checks": self.waive_checks,
        }
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    def __eq__(self, other):
        return isinstance(other, ScenarioSpec) and self.dumps() == other.dumps()


def _region(obj, shift, errs, where) -> PolygonRegion | None:
    try:
        if "disk" in obj:
            d = obj["disk"]
            c = np.asarray(d["center"], dtype=np.float64) - shift
            return disk_polygon(c, float(d["radius"]), int(d.get("n", 128)))
        if "box" in obj:
            x0, y0, x1, y1 = map(float, obj["box"])
            return box_polygon(x0 - shift[0], y0 - shift[1], x1 - shift[0], y1 - shift[1])
        rings = [np.asarray(r, dtype=np.float64) - shift for r in obj["rings"]]
        for r in rings:
            if r.ndim != 2 or r.shape[1] != 2 or len(r) < 3:
                errs.append(f"{where}: every ring needs >= 3 [x, y] vertices")
                return None
            if not np.all(np.isfinite(r)):
                errs.append(f"{where}: non-finite coordinate")
                return None
        return PolygonRegion(rings)
    except (KeyError, TypeError, ValueError) as exc:
        errs.append(f"{where}: {exc}")
        return None


def _num(d: dict, key: str, errs: list, where: str, default=None, positive=False, allow_none=False):
    v = d.get(key, default)
    if v is None:
        if allow_none:
            return None
        errs.append(f"{where}.{key}: required")
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        errs.append(f"{where}.{key}: must be a finite number")
        return None
    if positive and not v > 0:
        errs.append(f"{where}.{key}: must be > 0")
        return None
    return float(v)


def reshaped_origin_distance(model: WorkspaceModel, alpha: float, resolution: float) -> float:
    """Distance from the target to the reshaped obstacles (grid contour)."""
    from .environment import ModifiedEnvironment

    env = ModifiedEnvironment.build(model, alpha, resolution)
    if len(env.segments) == 0:
        return math.inf
    if env.inside((0.0, 0.0)):
        return 0.0
    return env.distance_to_origin()


def parse_scenario(data: dict, base_name: str = "scenario") -> ScenarioSpec:
    errs: list[str] = []
    if not isinstance(data, dict):
        raise ScenarioError("top level must be a JSON object")
    known_keys = {"name", "mode", "note", "unbounded", "workspace", "obstacles", "start", "target",
                  "starts", "robot", "controller", "sensor", "unicycle", "resolution", "seed",
                  "dt", "budget", "t_max", "convergence_radius", "waive_checks"}
    for k in data:
        if k not in known_keys:
            errs.append(f"unknown key '{k}'")
    target = np.asarray(data.get("target", [0.0, 0.0]), dtype=np.float64)
    if target.shape != (2,):
        errs.append("target: must be [x, y]")
        target = np.zeros(2)
    unbounded = bool(data.get("unbounded", data.get("workspace") is None))
    ws = None
    if not unbounded:
        if data.get("workspace") is None:
            errs.append("workspace: required unless unbounded")
        else:
            ws = _region(data["workspace"], target, errs, "workspace")
    obstacles = []
    for i, o in enumerate(data.get("obstacles", [])):
        r = _region(o, target, errs, f"obstacles[{i}]")
        if r is not None:
            obstacles.append(r)
    try:
        start = np.asarray(data["start"], dtype=np.float64) - target
        if start.shape != (2,) or not np.all(np.isfinite(start)):
            raise ValueError
    except (KeyError, TypeError, ValueError):
        errs.append("start: required [x, y]")
        start = np.zeros(2)
    starts = []
    for s in data.get("starts", []):
        try:
            starts.append(tuple(float(v) for v in np.asarray(s, dtype=np.float64) - target))
        except (TypeError, ValueError):
            errs.append("starts: entries must be [x, y]")

    robot = dict(data.get("robot", {}))
    model_kind = robot.get("model", "disk")
    if model_kind not in ROBOT_MODELS:
        errs.append(f"robot.model: one of {ROBOT_MODELS}")
    r = _num(robot, "r", errs, "robot", default=0.0)
    r_s = _num(robot, "r_s", errs, "robot", default=0.0)
    if r is not None and r < 0:
        errs.append("robot.r: must be >= 0")
    if r_s is not None and r_s < 0:
        errs.append("robot.r_s: must be >= 0")
    if model_kind == "point" and r not in (None, 0.0):
        errs.append("robot.r: a point robot has r = 0")
    theta0 = _num(robot, "theta0", errs, "robot", default=0.0)
    robot_out = {"model": model_kind, "r": r or 0.0, "r_s": r_s or 0.0, "theta0": theta0 or 0.0}
    ra = (r or 0.0) + (r_s or 0.0)
    if ra <= 0:
        errs.append("robot: r + r_s must be > 0")

    mode = data.get("mode", "sensor" if data.get("sensor") else "known")
    if mode not in ("known", "sensor"):
        errs.append("mode: 'known' or 'sensor'")
    c = dict(data.get("controller", {}))
    ks = _num(c, "kappa_s", errs, "controller", positive=True)
    kr = _num(c, "kappa_r", errs, "controller", positive=True)
    alpha = _num(c, "alpha", errs, "controller", positive=True)
    eps = _num(c, "epsilon", errs, "controller", allow_none=True)
    gamma = _num(c, "gamma", errs, "controller", allow_none=True)
    gamma_s = _num(c, "gamma_s", errs, "controller", allow_none=True)
    delta = _num(c, "delta", errs, "controller", allow_none=True)
    beta = _num(c, "beta", errs, "controller", allow_none=True)
    sensor = None
    if data.get("sensor") is not None:
        s = data["sensor"]
        rs = _num(s, "R_s", errs, "sensor", positive=True)
        rc = s.get("ray_count", 360)
        ns = _num(s, "noise_sigma", errs, "sensor", default=0.0)
        if not isinstance(rc, int) or rc < 8:
            errs.append("sensor.ray_count: integer >= 8")
        elif rs is not None and ns is not None:
            sensor = SensorConfig(rs, rc, ns)
    if mode == "sensor" and sensor is None:
        errs.append("sensor: required in sensor mode")
    uni = None
    if model_kind == "unicycle":
        u = data.get("unicycle") or {}
        vals = [_num(u, k, errs, "unicycle", positive=True) for k in ("nu_max", "omega_max")]
        kn = _num(u, "kappa_nu", errs, "unicycle", default=1.0, positive=True)
        kw = _num(u, "kappa_omega", errs, "unicycle", default=1.0, positive=True)
        n = u.get("n", 2)
        if not isinstance(n, int) or n < 1:
            errs.append("unicycle.n: integer >= 1")
        elif None not in vals and kn and kw and alpha is not None:
            uni = UnicycleParams(vals[0], vals[1], kn, kw, n, max(alpha - ra, 1e-12))
    res = _num(data, "resolution", errs, "", default=None, allow_none=True)
    dt = _num(data, "dt", errs, "", default=1e-3, positive=True)
    budget = data.get("budget", 1_000_000)
    if not isinstance(budget, int) or budget < 1:
        errs.append("budget: positive integer")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        errs.append("seed: integer")
    t_max = _num(data, "t_max", errs, "", default=None, allow_none=True)
    conv = _num(data, "convergence_radius", errs, "", default=None, allow_none=True)
    if errs:
        raise ScenarioError(errs)

    if alpha <= ra:
        raise ScenarioError(f"alpha ({alpha}) must exceed r_a ({ra})")
    resolution = res if res else alpha / 20.0
    model = WorkspaceModel(ws, obstacles, r, r_s)
    d0 = reshaped_origin_distance(model, alpha, resolution)
    if not d0 > ra:
        raise ScenarioError(f"target too close to the reshaped obstacles: d0={d0:.6g} <= r_a={ra}")
    eps_h = epsilon_upper_bound(d0, ra) if math.isfinite(d0) else ra
    band = alpha - ra
    if gamma_s is None:
        gamma_s = 0.5 * band
    if gamma is None:
        gamma = 0.75 * band
    if delta is None:
        delta = 0.5 * (d0 - ra) if math.isfinite(d0) else 1.0
    if eps is None:
        eps = 0.5 * eps_h
    params = ControllerParams(ks, kr, alpha, ra, gamma, gamma_s, delta, eps)
    try:
        params.validate(d0 if math.isfinite(d0) else None, eps_h)
    except ParameterError as exc:
        raise ScenarioError(str(exc)) from None
    if sensor is not None:
        try:
            sensor.validate(alpha)
        except ValueError as exc:
            raise ScenarioError(f"sensor: {exc}") from None
    if beta is None:
        beta = 0.5 * (ra + alpha)
    if not ra < beta < alpha:
        raise ScenarioError("beta must satisfy r_a < beta < alpha")
    return ScenarioSpec(
        name=str(data.get("name", base_name)), mode=mode, workspace=ws, obstacles=obstacles,
        start=start, robot=robot_out, controller=params, sensor=sensor, unicycle=uni,
        resolution=resolution, seed=seed, dt=dt, budget=budget,
        t_max=math.inf if t_max is None else t_max, starts=starts, beta=beta,
        convergence_radius=conv if conv else 0.5 * delta,
        waive_checks=bool(data.get("waive_checks", False)), note=str(data.get("note", "")),
        derived={"r_a": ra, "d0": d0, "epsilon_h": eps_h, "delta": delta,
                 "gamma": gamma, "gamma_s": gamma_s, "beta": beta, "resolution": resolution,
                 "target_shift": target.tolist()},
    )


def load_scenario(path) -> ScenarioSpec:
    p = Path(path)
    if not p.exists():
        cand = DATA_DIR / (str(path) if str(path).endswith(".json") else f"{path}.json")
        if cand.exists():
            p = cand
        else:
            raise ScenarioError(f"scenario file not found: {path}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"{p}: invalid JSON ({exc})") from None
    return parse_scenario(data, p.stem)


def dump_scenario(spec: ScenarioSpec, path: str | os.PathLike) -> None:
    Path(path).write_text(spec.dumps(), encoding="utf-8")


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in DATA_DIR.glob("*.json"))
