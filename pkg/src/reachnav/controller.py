"""Hybrid mode logic: control synthesis, region classification, jumps and updates."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .geometry import GeometryError, as_point, signed_angle, wrap_2pi

SEAM_TOL = 1e-9


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerParams:
    kappa_s: float
    kappa_r: float
    alpha: float
    r_a: float
    gamma: float
    gamma_s: float
    delta: float
    epsilon: float

    def validate(self, d0: float | None = None, eps_bound: float | None = None) -> None:
        """Raise ``ParameterError`` naming the first violated inequality."""
        if not self.kappa_s > 0:
            raise ParameterError("kappa_s must be > 0")
        if not self.kappa_r > 0:
            raise ParameterError("kappa_r must be > 0")
        if not 0 < self.gamma_s:
            raise ParameterError("gamma_s must be > 0")
        if not self.gamma_s < self.gamma:
            raise ParameterError("gamma_s must be < gamma")
        if not self.gamma < self.alpha - self.r_a:
            raise ParameterError("gamma must be < alpha - r_a")
        if not self.delta > 0:
            raise ParameterError("delta must be > 0")
        if d0 is not None and not self.delta < d0 - self.r_a:
            raise ParameterError("delta must be < d(0, O^M) - r_a")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be > 0")
        if eps_bound is not None and self.epsilon > eps_bound:
            raise ParameterError("epsilon exceeds Lemma-8 bound")


@dataclass
class HybridState:
    x: NDArray[np.float64]
    h: NDArray[np.float64]
    m: int

    def __post_init__(self):
        self.x = as_point(self.x)
        self.h = as_point(self.h)
        if self.m not in (-1, 0, 1):
            raise ValueError("mode must be -1, 0 or 1")

    def copy(self) -> "HybridState":
        return HybridState(self.x.copy(), self.h.copy(), self.m)


class Region(str, enum.Enum):
    LANDING = "landing"
    EXIT_ALWAYS = "exit_always"
    EXIT_CW = "exit_cw"
    EXIT_CCW = "exit_ccw"
    FAR = "far"


class JumpKind(str, enum.Enum):
    LANDING = "landing"        # mode 0 -> +-1
    LEFT_SHELL = "left_shell"  # +-1 -> 0, outside the avoidance shell
    NEAR_TARGET = "near_target"
    EXIT = "exit"              # +-1 -> 0 through the exit region with progress


def rotation_vector(x, proj, m: int) -> NDArray[np.float64]:
    """Unit normal ``(x - proj)/|x - proj|`` rotated by [[0, m], [-m, 0]]."""
    x = as_point(x)
    proj = as_point(proj)
    n = x - proj
    L = math.hypot(n[0], n[1])
    if L == 0.0:
        raise GeometryError("x coincides with its projection")
    n /= L
    return np.array([m * n[1], -m * n[0]])


def control_input(state: HybridState, proj, params: ControllerParams) -> NDArray[np.float64]:
    if state.m == 0:
        return -params.kappa_s * state.x
    if proj is None:
        raise ValueError("avoidance mode requires a projection")
    return params.kappa_r * rotation_vector(state.x, proj, state.m)


def exit_side(x, proj) -> tuple[bool, bool]:
    """Membership of the wrapped angle from x to (x - proj) in [pi, 2pi] and [0, pi]."""
    x = as_point(x)
    a = wrap_2pi(signed_angle(x, x - as_point(proj)))
    near_zero = a <= SEAM_TOL or a >= 2 * math.pi - SEAM_TOL
    near_pi = abs(a - math.pi) <= SEAM_TOL
    cw = a >= math.pi - SEAM_TOL or near_zero
    ccw = a <= math.pi + SEAM_TOL or near_zero
    return cw or near_pi, ccw or near_pi


def classify_from_projection(x, proj_point, blocked: bool, m: int | None = None) -> Region:
    """Region tag given the projection and the corridor test result."""
    x = as_point(x)
    inner = float(x @ (x - proj_point)) >= 0.0
    if inner and blocked:
        return Region.LANDING
    if not blocked:
        return Region.EXIT_ALWAYS
    cw, ccw = exit_side(x, proj_point)
    if cw and ccw:
        if m == -1:
            return Region.EXIT_CCW
        return Region.EXIT_CW
    return Region.EXIT_CW if cw else Region.EXIT_CCW


def classify_region(x, env, params: ControllerParams, m: int | None = None,
                    proj=None) -> Region:
    """Region tag of ``x`` within the gamma-shell of its nearest reshaped chain.

    ``env`` provides ``project(x)`` and ``segment_blocked(x, chain, r_a)``.
    At seams shared by both directional exit sets the current mode wins.
    """
    if proj is None:
        proj = env.project(x)
    if proj.distance - params.r_a > params.gamma + SEAM_TOL:
        return Region.FAR
    if not proj.unique:
        from .environment import AmbiguousProjection
        raise AmbiguousProjection(f"{len(proj.points)} projection clusters at {as_point(x)}")
    blocked = env.segment_blocked(x, proj.chain, params.r_a)
    return classify_from_projection(x, proj.point, blocked, m)


def jump_check(state: HybridState, env, params: ControllerParams, proj=None) -> JumpKind | None:
    if proj is None:
        proj = env.project(state.x)
    ra = params.r_a
    if state.m == 0:
        if proj.distance - ra > params.gamma_s + SEAM_TOL:
            return None
        if classify_region(state.x, env, params, 0, proj) == Region.LANDING:
            return JumpKind.LANDING
        return None
    if proj.distance - ra >= params.gamma - SEAM_TOL:
        return JumpKind.LEFT_SHELL
    if float(np.hypot(*state.x)) <= params.delta:
        return JumpKind.NEAR_TARGET
    region = classify_region(state.x, env, params, state.m, proj)
    own = Region.EXIT_CW if state.m == 1 else Region.EXIT_CCW
    if region in (Region.EXIT_ALWAYS, own):
        if float(np.hypot(*state.h)) - float(np.hypot(*state.x)) >= params.epsilon - SEAM_TOL:
            return JumpKind.EXIT
    return None


def direction_policy_default(x, proj, chain_id, memory: dict) -> int:
    """Keep the episode's direction for a chain, else turn toward the target side."""
    if chain_id in memory:
        return memory[chain_id]
    x = as_point(x)
    n = x - as_point(proj)
    a = signed_angle(n, -x)
    # antiparallel normal and target bearing is the symmetric tie
    m = 1 if a <= 0 or abs(a) >= math.pi - SEAM_TOL else -1
    memory[chain_id] = m
    return m


@dataclass
class DirectionPolicy:
    """Resolves the set-valued mode choice on landing.

    ``kind="target_side"`` is the default heuristic with per-chain episode
    memory; ``kind="random"`` draws from a seeded generator (still remembering
    the episode choice) and exists for property tests of the set-valued law.
    """

    kind: str = "target_side"
    seed: int = 0
    memory: dict = field(default_factory=dict)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def choose(self, x, proj, chain_id) -> int:
        if self.kind == "random":
            if chain_id not in self.memory:
                self.memory[chain_id] = int(self._rng.choice([-1, 1]))
            return self.memory[chain_id]
        return direction_policy_default(x, proj, chain_id, self.memory)

    def forget(self, chain_id=None) -> None:
        if chain_id is None:
            self.memory.clear()
        else:
            self.memory.pop(chain_id, None)


def update_law(state: HybridState, kind: JumpKind, policy: DirectionPolicy,
               proj=None, chain_id=None) -> HybridState:
    """Jump map: from move-to-target record the hit point and pick a direction."""
    if state.m == 0:
        if kind != JumpKind.LANDING:
            raise ValueError("only a landing jump leaves move-to-target mode")
        m = policy.choose(state.x, proj, chain_id)
        return HybridState(state.x.copy(), state.x.copy(), m)
    return replace(state.copy(), m=0)
