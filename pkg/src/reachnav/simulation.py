"""Hybrid-time closed loop: flows, localised jumps, logs and metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .controller import (ControllerParams, DirectionPolicy, HybridState, JumpKind,
                         control_input, jump_check, update_law)
from .environment import ModifiedEnvironment
from .geometry import as_point
from .morphology import WorkspaceModel
from .sensor import (EncounterState, SensedBoundary, SensorConfig, identify, ring_track, scan,
                     true_clearance)
from .unicycle import UnicyclePlant, blended_vector

EVENT_TOL = 1e-6
MAX_JUMPS_PER_INSTANT = 2
MAX_AUGMENTS_PER_INSTANT = 4


class SafetyBreach(RuntimeError):
    def __init__(self, msg: str, t: float, x, clearance: float):
        super().__init__(msg)
        self.t = t
        self.x = as_point(x)
        self.clearance = clearance


class HybridEngineError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class HybridTimeStamp:
    t: float
    j: int


CORE_COLUMNS = ("t", "j", "x", "y", "hx", "hy", "m", "clearance", "ux", "uy")


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)
    extra_columns: tuple = ()
    jumps: list = field(default_factory=list)   # (t, j, from, to, hx, hy, kind)
    augments: list = field(default_factory=list)
    rings: list = field(default_factory=list)   # (t, cx, cy, v_r, slack, penetration, held)
    distances: list = field(default_factory=list)  # (t, j, m, d) distance to the boundary used
    breach: dict | None = None

    def add(self, t, j, state: HybridState, clearance, u, extra=()):
        self.rows.append((t, j, state.x[0], state.x[1], state.h[0], state.h[1], state.m,
                          clearance, u[0], u[1], *extra))

    @property
    def columns(self) -> tuple:
        return CORE_COLUMNS + tuple(self.extra_columns)

    def array(self, name: str) -> NDArray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=np.float64)

    def stamps(self) -> list[HybridTimeStamp]:
        return [HybridTimeStamp(r[0], r[1]) for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r])

    def jumps_to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("t", "j", "from_mode", "to_mode", "hx", "hy", "kind"))
            for r in self.jumps:
                w.writerow([_fmt(v) for v in r])

    @classmethod
    def from_csv(cls, path, jumps_path=None) -> "TrajectoryLog":
        with open(path, encoding="utf-8") as fh:
            rd = csv.reader(fh)
            head = next(rd)
            rows = [tuple(_parse(v) for v in r) for r in rd if r]
        log = cls(rows=rows, extra_columns=tuple(head[len(CORE_COLUMNS):]))
        if jumps_path is not None:
            with open(jumps_path, encoding="utf-8") as fh:
                rd = csv.reader(fh)
                next(rd)
                log.jumps = [tuple(_parse(v) for v in r) for r in rd if r]
        return log


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(s: str):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


@dataclass
class ScenarioResult:
    converged: bool
    time_to_converge: float
    jump_count: int
    min_clearance: float
    path_length: float
    final_time: float = 0.0
    steps: int = 0
    min_dwell: float = math.inf
    hit_norms: list = field(default_factory=list)
    breach: bool = False
    waived_checks: bool = False
    convergence_radius: float = 0.0
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v
        return {k: (clean(v) if not isinstance(v, list) else [clean(a) for a in v])
                for k, v in self.__dict__.items()}


class SingleIntegrator:
    dim = 2

    @staticmethod
    def initial(x0) -> NDArray[np.float64]:
        return as_point(x0)

    @staticmethod
    def position(y) -> NDArray[np.float64]:
        return y.copy()

    def prepare(self, y, field_, dt: float):
        return None

    @staticmethod
    def step(y, h: float, field_, cmd) -> NDArray[np.float64]:
        k1 = field_(y)
        k2 = field_(y + 0.5 * h * k1)
        k3 = field_(y + 0.5 * h * k2)
        k4 = field_(y + h * k3)
        return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class StepContext:
    proj: object = None          # callable x -> projection point, None in mode 0
    distance: float = math.nan   # distance to the boundary the controller uses
    dt_cap: float = math.inf


class KnownMapSource:
    """Projection and jump logic from the precomputed reshaped obstacles."""

    sensor = False

    def __init__(self, env: ModifiedEnvironment, params: ControllerParams, policy: DirectionPolicy):
        self.env = env
        self.params = params
        self.policy = policy

    def nearest_point(self, x):
        x = as_point(x)
        from . import kernels
        d, i, t = kernels.nearest_segment(x[0], x[1], self.env.segments)
        s = self.env.segments[i]
        return np.array([s[0] + t * (s[2] - s[0]), s[1] + t * (s[3] - s[1])])

    def distance(self, x) -> float:
        return self.env.distance(x)

    def begin(self, state: HybridState, t: float, log: TrajectoryLog) -> StepContext:
        d = self.env.distance(state.x)
        if state.m == 0:
            if d - self.params.r_a > self.params.gamma:
                self.policy.forget()
            return StepContext(None, d)
        return StepContext(self.nearest_point, d)

    def detect(self, state: HybridState):
        return jump_check(state, self.env, self.params)

    def apply(self, state: HybridState, kind, t: float, log: TrajectoryLog) -> HybridState:
        proj = self.env.project(state.x) if state.m == 0 else None
        if proj is not None:
            return update_law(state, kind, self.policy, proj.point, proj.chain)
        return update_law(state, kind, self.policy)


class SensorSource:
    """Scan-driven projection, virtual rings and jump identification."""

    sensor = True

    def __init__(self, model: WorkspaceModel, cfg: SensorConfig, params: ControllerParams,
                 policy: DirectionPolicy, beta: float | None = None, seed: int = 0):
        self.model = model
        self.cfg = cfg
        self.params = params
        self.policy = policy
        self.beta = 0.5 * (params.r_a + params.alpha) if beta is None else beta
        self.enc = EncounterState(self.beta)
        self.rng = np.random.default_rng(seed)
        self._key = None
        self._boundary = None
        self._memo = None
        self._version = 0
        self.scans = 0

    def boundary_at(self, x) -> SensedBoundary:
        x = as_point(x)
        key = x.tobytes()
        if key != self._key:
            s = scan(x, self.model, self.cfg, self.rng)
            self.scans += 1
            self._boundary = SensedBoundary(s)
            self._key = key
        self._boundary.overlays = self.enc.overlays
        return self._boundary

    def begin(self, state: HybridState, t: float, log: TrajectoryLog) -> StepContext:
        B = self.boundary_at(state.x)
        p = self.params
        if state.m == 0:
            self.enc.ring = None
            proj = B.project(state.x) if not B.empty else None
            d = proj.distance if proj is not None else math.inf
            if d > p.r_a + p.alpha and (self.enc.overlays or self.policy.memory):
                self.enc.overlays.clear()
                self.policy.forget()
                self._version += 1
            return StepContext(None, d)
        ring, proj = ring_track(state.x, B, self.enc.ring)
        self.enc.ring = ring
        self._version += 1
        pen = ring.radius - true_clearance(ring.center, self.model)
        log.rings.append((t, ring.center[0], ring.center[1], ring.radius,
                          ring.slack(state.x, p.r_a), pen, int(ring.held)))
        cap = math.inf
        if ring.held:
            arc = ring.arc
            cap = 0.3 * max(math.hypot(*(state.x - ring.center)), 1e-9) / p.kappa_r

            def proj_fn(x, arc=arc):
                return arc.project(x)[1]
        else:
            def proj_fn(x, B=B):
                return B.nearest_cloud_point(x)[1]
        return StepContext(proj_fn, proj.distance, cap)

    def detect(self, state: HybridState):
        key = (state.x.tobytes(), state.h.tobytes(), state.m, self._version)
        if self._memo is not None and self._memo[0] == key:
            return self._memo[1]
        B = self.boundary_at(state.x)
        if state.m != 0 and self.enc.ring is None:
            raise HybridEngineError("avoidance mode without a ring")
        ev = identify(state, B, self.enc, self.params)
        self._memo = (key, ev)
        return ev

    def apply(self, state: HybridState, ev, t: float, log: TrajectoryLog) -> HybridState:
        self._version += 1
        if ev.kind == "augment":
            self.enc.overlays.append(ev.arc)
            log.augments.append((t, ev.arc.center[0], ev.arc.center[1], ev.arc.radius,
                                 ev.arc.start, ev.arc.width))
            return state
        if ev.jump == JumpKind.LANDING:
            self.enc.ring = ev.ring
            self.enc.gamma = ev.gamma
            self.enc.gamma_s = ev.gamma_s
            pen = ev.ring.radius - true_clearance(ev.ring.center, self.model)
            log.rings.append((t, ev.ring.center[0], ev.ring.center[1], ev.ring.radius,
                              ev.ring.slack(state.x, self.params.r_a), pen, int(ev.ring.held)))
            return update_law(state, ev.jump, self.policy, ev.proj.point, 0)
        self.enc.ring = None
        return update_law(state, ev.jump, self.policy)


def _jump_kind(ev):
    if ev is None:
        return None
    return ev.jump if hasattr(ev, "jump") else ev


def make_field(plant, state: HybridState, ctx: StepContext, params: ControllerParams,
               eta: float | None = None):
    """Vector field for the current mode; the unicycle uses the blended avoidance vector."""
    if state.m == 0:
        ks = params.kappa_s
        return lambda x: -ks * x
    proj = ctx.proj
    if isinstance(plant, UnicyclePlant):
        m, kr, ra = state.m, params.kappa_r, params.r_a
        return lambda x: kr * blended_vector(x, proj(x), m, math.hypot(*(x - proj(x))) - ra, eta)
    h, m = state.h, state.m

    def f(x):
        return control_input(HybridState(x, h, m), proj(x), params)
    return f


def simulate(source, plant, params: ControllerParams, x0, model: WorkspaceModel, dt: float = 1e-3,
             budget: int = 1_000_000, convergence_radius: float | None = None,
             breach_tol: float = 0.0, t_max: float = math.inf,
             raise_on_breach: bool = True) -> TrajectoryLog:
    """Integrate the closed loop until convergence, breach, or budget exhaustion."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    conv = 0.5 * params.delta if convergence_radius is None else convergence_radius
    eta = params.alpha - params.r_a
    y = plant.initial(x0)
    x = plant.position(y)
    state = HybridState(x, x.copy(), 0)
    t, j = 0.0, 0
    log = TrajectoryLog()
    if isinstance(plant, UnicyclePlant):
        log.extra_columns = ("theta", "nu", "omega")
    min_allowed = params.r_a - breach_tol

    def with_x(st, yy):
        return HybridState(plant.position(yy), st.h, st.m)

    for step in range(budget):
        jumps_here, aug_here = 0, 0
        while True:
            ev = source.detect(state)
            if ev is None:
                break
            if getattr(ev, "kind", "jump") == "augment":
                aug_here += 1
                if aug_here > MAX_AUGMENTS_PER_INSTANT:
                    raise HybridEngineError(f"repeated boundary augmentation at t={t}")
                source.apply(state, ev, t, log)
                continue
            kind = _jump_kind(ev)
            new = source.apply(state, ev, t, log)
            log.jumps.append((t, j, state.m, new.m, new.h[0], new.h[1], kind.value))
            j += 1
            jumps_here += 1
            state = new
            if jumps_here > MAX_JUMPS_PER_INSTANT:
                raise HybridEngineError(f"more than {MAX_JUMPS_PER_INSTANT} jumps at t={t}")
        ctx = source.begin(state, t, log)
        log.distances.append((t, j, state.m, ctx.distance))
        field_ = make_field(plant, state, ctx, params, eta)
        u = field_(state.x)
        clr = true_clearance(state.x, model)
        extra = ()
        if isinstance(plant, UnicyclePlant):
            cmd = plant.prepare(y, field_, min(dt, ctx.dt_cap))
            extra = (float(y[2]), cmd[0], cmd[1])
        else:
            cmd = plant.prepare(y, field_, dt)
        log.add(t, j, state, clr, u, extra)
        if state.m == 0 and math.hypot(*state.x) <= conv:
            break
        if t >= t_max:
            break
        h = min(dt, ctx.dt_cap)
        y1 = plant.step(y, h, field_, cmd)
        if source.detect(with_x(state, y1)) is not None:
            lo, hi = 0.0, h
            while hi - lo > EVENT_TOL:
                mid = 0.5 * (lo + hi)
                ym = plant.step(y, mid, field_, cmd)
                if source.detect(with_x(state, ym)) is not None:
                    hi, y1 = mid, ym
                else:
                    lo = mid
            h = hi
        x1 = plant.position(y1)
        clr1 = true_clearance(x1, model)
        if clr1 < min_allowed:
            log.breach = {"t": t + h, "x": x1.tolist(), "clearance": clr1}
            if raise_on_breach:
                raise SafetyBreach(f"clearance {clr1:.6g} below {min_allowed:.6g} at t={t + h:.6g}",
                                   t + h, x1, clr1)
            break
        y = y1
        t += h
        state = with_x(state, y)
    return log


def compute_metrics(log: TrajectoryLog, model: WorkspaceModel, convergence_radius: float,
                    sentinel: float) -> ScenarioResult:
    if not log.rows:
        raise ValueError("empty log")
    xs, ys = log.array("x"), log.array("y")
    m = log.array("m")
    t = log.array("t")
    path = float(np.sum(np.hypot(np.diff(xs), np.diff(ys))))
    clr = log.array("clearance")
    min_clr = float(min(np.min(clr), sentinel))
    final = math.hypot(xs[-1], ys[-1])
    converged = bool(final <= convergence_radius and m[-1] == 0 and log.breach is None)
    jt = [r[0] for r in log.jumps]
    dwell = [b - a for a, b in zip(jt[:-1], jt[1:]) if b > a]
    hits = [math.hypot(r[4], r[5]) for r in log.jumps if r[2] == 0]
    return ScenarioResult(
        converged=converged,
        time_to_converge=float(t[-1]) if converged else math.nan,
        jump_count=len(log.jumps),
        min_clearance=min_clr,
        path_length=path,
        final_time=float(t[-1]),
        steps=len(log.rows),
        min_dwell=min(dwell) if dwell else math.inf,
        hit_norms=hits,
        breach=log.breach is not None,
        convergence_radius=convergence_radius,
    )


class AssumptionFailure(RuntimeError):
    pass


def assumption_report(spec, samples: int = 2000) -> dict:
    """Named assumption checks for a scenario, each mapped to pass/fail."""
    from .morphology import (check_assumption_connectivity, check_assumption_reach,
                             check_modified_connectivity, rasterize)

    model = spec.model
    alpha = spec.controller.alpha
    res = spec.resolution
    mask = rasterize(model, res, margin=2 * alpha + model.r_a + 4 * res)
    out = {"W_{r_a} connected": check_assumption_connectivity(model, res),
           "V_{r_a} connected": check_modified_connectivity(model, alpha, res, mask)}
    if model.obstacles or model.bounded:
        out["reach certificate"] = bool(check_assumption_reach(
            model, alpha, samples=samples, seed=spec.seed, mask=mask))
    return out


def preflight(spec) -> list[str]:
    """Names of the failed assumption checks, phrased as findings."""
    rep = assumption_report(spec)
    msgs = {"W_{r_a} connected": "W_{r_a} disconnected",
            "V_{r_a} connected": "V_{r_a} disconnected",
            "reach certificate": "reach certificate failed"}
    return [msgs[k] for k, ok in rep.items() if not ok]


def run_scenario(spec, start=None, seed: int | None = None,
                 raise_on_breach: bool = False) -> tuple[TrajectoryLog, ScenarioResult]:
    """Build the sources for ``spec``, run one closed-loop episode and score it."""
    seed = spec.seed if seed is None else seed
    notes = []
    if spec.waive_checks:
        notes.append("assumption checks waived")
    else:
        failed = preflight(spec)
        if failed:
            raise AssumptionFailure("; ".join(failed))
    model = spec.model
    params = spec.controller
    policy = DirectionPolicy()
    if spec.mode == "sensor":
        source = SensorSource(model, spec.sensor, params, policy, beta=spec.beta, seed=seed)
        sentinel = spec.sensor.R_s
    else:
        env = ModifiedEnvironment.build(model, params.alpha, spec.resolution)
        source = KnownMapSource(env, params, policy)
        sentinel = 3.0
    if spec.robot.get("model") == "unicycle":
        plant = UnicyclePlant(spec.unicycle, spec.robot.get("theta0", 0.0))
    else:
        plant = SingleIntegrator()
    x0 = spec.start if start is None else as_point(start)
    log = simulate(source, plant, params, x0, model, dt=spec.dt, budget=spec.budget,
                   convergence_radius=spec.convergence_radius,
                   breach_tol=2 * spec.resolution, t_max=spec.t_max,
                   raise_on_breach=raise_on_breach)
    result = compute_metrics(log, model, spec.convergence_radius, sentinel)
    result.waived_checks = bool(spec.waive_checks)
    result.notes = notes
    return log, result
