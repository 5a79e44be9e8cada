"""Scenario files: parsing, validation, and run orchestration.

Scenarios are TOML files describing the model constants, the environment,
the follower population (count for the agent-based scale, sample count for
the mean-field scale), the per-leader strategies, the objective and the run
settings.  Unknown keys are errors.  Bundled scenarios (test1a, test1b,
test2, test3a, test3b, plus test1a_uncontrolled) live under
``crowdevac/scenarios``; wall layouts for the tests with obstacles are
reconstructed from the verbal room descriptions, and every dimension is a
plain scenario parameter.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import LeaderStrategy, WaypointPlan
from .env import Environment, Exit, Wall
from .meso import DensityGrid, MfmcConfig, ParticleEnsemble, simulate_meso
from .micro import simulate
from .objective import ObjectiveSpec
from .params import ModelParams
from .state import CrowdState, FollowerState, LeaderState

__all__ = ["Scenario", "load_scenario", "bundled_scenarios", "ScenarioError"]

BUNDLED = ("test1a", "test1a_uncontrolled", "test1b", "test2", "test3a", "test3b")


class ScenarioError(ValueError):
    pass


def _check_keys(block: dict, allowed: set, context: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ScenarioError(f"unknown key(s) {sorted(unknown)} in [{context}]")


def _need(block: dict, key: str, context: str):
    if key not in block:
        raise ScenarioError(f"missing key '{key}' in [{context}]")
    return block[key]


def _vec2(value, context: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (2,):
        raise ScenarioError(f"{context} must be a pair of numbers")
    return arr


@dataclass(frozen=True)
class VelocityLaw:
    law: str = "zero"
    mean: tuple = (0.0, 0.0)
    var: tuple = (0.0, 0.0)
    speed: float = 1.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.law == "zero":
            return np.zeros((n, 2))
        if self.law == "normal":
            std = np.sqrt(np.asarray(self.var, dtype=float))
            return np.asarray(self.mean, dtype=float) + std * rng.standard_normal((n, 2))
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        return self.speed * np.column_stack([np.cos(theta), np.sin(theta)])


@dataclass(frozen=True)
class LeaderSpec:
    aware: bool
    beta: float
    exit: object           # 0-based exit index, "nearest", or "none"
    waypoints: tuple = ()  # ((pos, until), ...) intermediates
    control_speed: float = 1.0


@dataclass(frozen=True)
class RunSpec:
    steps: int = 1000
    record_stride: int = 10
    seed: int = 0
    batch: int = 100
    rho_top: Optional[float] = None
    bandwidth: float = 0.4
    density_stride: int = 0
    grid: Optional[DensityGrid] = None


@dataclass
class Scenario:
    name: str
    params: ModelParams
    env: Environment
    follower_count: int
    sample_count: int
    follower_box: tuple
    velocity_law: VelocityLaw
    leader_box: tuple
    leader_specs: list
    objective: ObjectiveSpec
    run: RunSpec
    raw: dict = field(default_factory=dict, repr=False)

    # ---- construction -----------------------------------------------------

    @property
    def n_leaders(self) -> int:
        return len(self.leader_specs)

    def _leader_mass(self) -> float:
        return self.params.rho_l / self.n_leaders if self.n_leaders else 0.0

    def _strategy_for(self, spec: LeaderSpec, pos: np.ndarray) -> LeaderStrategy:
        if spec.exit == "none":
            return LeaderStrategy(aware=spec.aware, beta=spec.beta, plan=None,
                                  control_speed=spec.control_speed)
        if spec.exit == "nearest":
            d = [float(np.linalg.norm(e.position - pos)) for e in self.env.exits]
            exit_idx = int(np.argmin(d))
        else:
            exit_idx = int(spec.exit)
        stops = list(spec.waypoints) + [(self.env.exits[exit_idx].position, math.inf)]
        return LeaderStrategy(aware=spec.aware, beta=spec.beta,
                              plan=WaypointPlan(tuple(stops)),
                              control_speed=spec.control_speed)

    def _sample_box(self, rng, box, n) -> np.ndarray:
        x0, y0, x1, y1 = box
        return rng.uniform([x0, y0], [x1, y1], size=(n, 2))

    def _build_leaders(self, rng) -> list:
        if not self.n_leaders:
            return []
        pos = self._sample_box(rng, self.leader_box, self.n_leaders)
        mass = self._leader_mass()
        leaders = []
        for k, spec in enumerate(self.leader_specs):
            leaders.append(LeaderState(
                pos[k], np.zeros(2), mass, aware=spec.aware,
                strategy=self._strategy_for(spec, pos[k])))
        return leaders

    def initial_crowd(self, seed=None) -> CrowdState:
        """Sample the microscopic initial state (followers, then leaders)."""
        rng = np.random.default_rng(self.run.seed if seed is None else seed)
        n = self.follower_count
        pos = self._sample_box(rng, self.follower_box, n)
        vel = self.velocity_law.sample(rng, n)
        m = self.params.rho_f / n
        followers = [FollowerState(pos[i], vel[i], m) for i in range(n)]
        return CrowdState(followers, self._build_leaders(rng))

    def initial_meso(self, seed=None):
        """Sample the mean-field initial state: (ensemble, leaders)."""
        rng = np.random.default_rng(self.run.seed if seed is None else seed)
        n = self.sample_count
        pos = self._sample_box(rng, self.follower_box, n)
        vel = self.velocity_law.sample(rng, n)
        ensemble = ParticleEnsemble(pos, vel, number_density=self.params.rho_f)
        leaders = CrowdState([], self._build_leaders(rng))
        return ensemble, leaders

    def mfmc_config(self, batch: Optional[int] = None) -> MfmcConfig:
        rho_top = self.run.rho_top
        if rho_top is None:
            rho_top = self.params.n_top / self.follower_count
        return MfmcConfig(batch_size=batch or self.run.batch, rho_top=rho_top,
                          bandwidth=self.run.bandwidth)

    def default_grid(self) -> DensityGrid:
        if self.run.grid is not None:
            return self.run.grid
        pts = [e.position for e in self.env.exits]
        pts += [w.a for w in self.env.walls] + [w.b for w in self.env.walls]
        x0, y0, x1, y1 = self.follower_box
        pts += [np.array([x0, y0]), np.array([x1, y1])]
        pts = np.array(pts)
        lo = pts.min(axis=0) - 5.0
        hi = pts.max(axis=0) + 5.0
        spacing = 0.5
        nx = int(np.ceil((hi[0] - lo[0]) / spacing)) + 1
        ny = int(np.ceil((hi[1] - lo[1]) / spacing)) + 1
        return DensityGrid((float(lo[0]), float(lo[1])), (spacing, spacing), nx, ny)

    # ---- running -----------------------------------------------------------

    def run_once(self, scale: str = "micro", seed=None, schedule=None,
                 steps: Optional[int] = None, record_stride: Optional[int] = None,
                 batch: Optional[int] = None, density_grid=None,
                 density_stride: Optional[int] = None):
        """One simulation at the requested scale; returns the SimResult."""
        steps = steps if steps is not None else self.run.steps
        stride = record_stride if record_stride is not None else self.run.record_stride
        seed_val = self.run.seed if seed is None else seed
        if scale == "micro":
            state = self.initial_crowd(seed_val)
            return simulate(self.params, self.env, state, schedule=schedule,
                            horizon_steps=steps, record_stride=stride)
        if scale == "meso":
            ens, lead = self.initial_meso(seed_val)
            ds = density_stride if density_stride is not None else self.run.density_stride
            return simulate_meso(
                self.params, self.env, ens, lead, self.mfmc_config(batch),
                schedule=schedule, horizon_steps=steps,
                rng_seed=_seed_int(seed_val), record_stride=stride,
                density_grid=density_grid, density_stride=ds)
        raise ValueError(f"unknown scale {scale!r}")

    def objective_spec(self, steps: Optional[int] = None) -> ObjectiveSpec:
        """Objective with the horizon defaulting to the run length."""
        if steps is None or self.raw.get("objective", {}).get("horizon") is not None:
            return self.objective
        return ObjectiveSpec(kind=self.objective.kind,
                             horizon_T=steps * self.params.dt,
                             desired_masses=self.objective.desired_masses,
                             penalty_time=self.objective.penalty_time)


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


# ---- parsing ---------------------------------------------------------------


def bundled_scenarios() -> tuple:
    return BUNDLED


def _bundled_path(name: str):
    return resources.files("crowdevac").joinpath(f"scenarios/{name}.toml")


def load_scenario(path) -> Scenario:
    """Load and fully validate a scenario file or bundled scenario name."""
    p = Path(str(path))
    if p.exists():
        text = p.read_bytes()
        name_default = p.stem
    elif str(path) in BUNDLED:
        text = _bundled_path(str(path)).read_bytes()
        name_default = str(path)
    else:
        raise ScenarioError(f"scenario not found: {path!r} "
                            f"(bundled: {', '.join(BUNDLED)})")
    try:
        data = tomllib.loads(text.decode("utf-8"))
    except tomllib.TOMLDecodeError as err:
        raise ScenarioError(f"parse error in {path}: {err}") from None
    return _build_scenario(data, name_default)


def _build_scenario(data: dict, name_default: str) -> Scenario:
    _check_keys(data, {"name", "model", "environment", "followers", "leaders",
                       "objective", "run"}, "scenario")
    name = data.get("name", name_default)

    # followers / leaders counts first: the default mass split needs them
    fblock = _need(data, "followers", "scenario")
    _check_keys(fblock, {"count", "samples", "box", "velocity"}, "followers")
    count = int(_need(fblock, "count", "followers"))
    samples = int(fblock.get("samples", 1000))
    if count < 1 or samples < 1:
        raise ScenarioError("followers.count and followers.samples must be >= 1")
    box = tuple(float(v) for v in _need(fblock, "box", "followers"))
    if len(box) != 4 or box[2] <= box[0] or box[3] <= box[1]:
        raise ScenarioError("followers.box must be [xmin, ymin, xmax, ymax]")
    vblock = fblock.get("velocity", {"law": "zero"})
    _check_keys(vblock, {"law", "mean", "var", "speed"}, "followers.velocity")
    law = vblock.get("law", "zero")
    if law not in ("zero", "normal", "sphere"):
        raise ScenarioError("followers.velocity.law must be zero | normal | sphere")
    vlaw = VelocityLaw(
        law=law,
        mean=tuple(float(v) for v in vblock.get("mean", (0.0, 0.0))),
        var=tuple(float(v) for v in vblock.get("var", (0.0, 0.0))),
        speed=float(vblock.get("speed", 1.0)),
    )

    lblock = data.get("leaders", {})
    _check_keys(lblock, {"box", "agents"}, "leaders")
    agents = lblock.get("agents", [])
    leader_box = tuple(float(v) for v in lblock.get("box", box))
    leader_specs = []
    for i, ab in enumerate(agents):
        ctx = f"leaders.agents[{i}]"
        _check_keys(ab, {"aware", "beta", "exit", "waypoints", "control_speed"}, ctx)
        exit_ref = ab.get("exit", "nearest")
        if isinstance(exit_ref, str):
            if exit_ref not in ("nearest", "none"):
                raise ScenarioError(f"{ctx}.exit must be an exit number, "
                                    "'nearest' or 'none'")
        else:
            exit_ref = int(exit_ref) - 1  # files are 1-based
        wps = []
        last_t = 0.0
        for j, wp in enumerate(ab.get("waypoints", [])):
            _check_keys(wp, {"pos", "until"}, f"{ctx}.waypoints[{j}]")
            pos = _vec2(_need(wp, "pos", ctx), f"{ctx}.waypoints[{j}].pos")
            until = float(_need(wp, "until", ctx))
            if until <= last_t:
                raise ScenarioError(f"{ctx}: waypoint times must increase")
            last_t = until
            wps.append((pos, until))
        leader_specs.append(LeaderSpec(
            aware=bool(ab.get("aware", False)),
            beta=float(ab.get("beta", 1.0)),
            exit=exit_ref,
            waypoints=tuple(wps),
            control_speed=float(ab.get("control_speed", 1.0)),
        ))

    # model block, with the mass split defaulting to equal per-agent masses
    mblock = dict(_need(data, "model", "scenario"))
    _check_keys(mblock, {"c_s", "c_tau", "c_r_f", "c_r_l", "c_al_f", "c_al_l",
                         "s2", "r", "gamma", "n_top", "dt", "rho_f", "rho_l"},
                "model")
    n_lead = len(leader_specs)
    if "rho_f" in mblock:
        rho_f = float(mblock.pop("rho_f"))
    elif n_lead:
        rho_f = count / (count + n_lead)
    else:
        rho_f = 1.0
    if "rho_l" in mblock:
        rho_l = float(mblock.pop("rho_l"))
        if rho_f + rho_l != 1.0:
            raise ScenarioError(
                "mass constraint violated: rho_f + rho_l must equal 1 exactly")
    else:
        rho_l = 1.0 - rho_f
    if n_lead == 0 and rho_l != 0.0:
        raise ScenarioError("rho_l must be 0 when the scenario has no leaders")
    if n_lead > 0 and rho_l <= 0.0:
        raise ScenarioError("rho_l must be > 0 when leaders are present")
    try:
        params = ModelParams(rho_f=rho_f, rho_l=rho_l,
                             **{k: (int(v) if k == "n_top" else float(v))
                                for k, v in mblock.items()})
    except ValueError as err:
        raise ScenarioError(f"invalid [model]: {err}") from None

    # environment
    eblock = _need(data, "environment", "scenario")
    _check_keys(eblock, {"deadlock_nudge", "exits", "walls"}, "environment")
    exits = []
    for i, xb in enumerate(_need(eblock, "exits", "environment")):
        ctx = f"environment.exits[{i}]"
        _check_keys(xb, {"pos", "vis_r", "cap_r"}, ctx)
        exits.append(Exit(_vec2(_need(xb, "pos", ctx), f"{ctx}.pos"),
                          float(_need(xb, "vis_r", ctx)),
                          float(_need(xb, "cap_r", ctx))))
    walls = []
    for i, wb in enumerate(eblock.get("walls", [])):
        ctx = f"environment.walls[{i}]"
        _check_keys(wb, {"a", "b", "thick"}, ctx)
        walls.append(Wall(_vec2(_need(wb, "a", ctx), f"{ctx}.a"),
                          _vec2(_need(wb, "b", ctx), f"{ctx}.b"),
                          float(wb.get("thick", 0.3))))
    try:
        env = Environment(tuple(exits), tuple(walls),
                          float(eblock.get("deadlock_nudge", 0.1)))
    except ValueError as err:
        raise ScenarioError(f"invalid [environment]: {err}") from None

    for i, spec in enumerate(leader_specs):
        if isinstance(spec.exit, int) and not 0 <= spec.exit < len(exits):
            raise ScenarioError(f"leaders.agents[{i}].exit out of range")

    # run block
    rblock = dict(data.get("run", {}))
    _check_keys(rblock, {"steps", "record_stride", "seed", "meso"}, "run")
    meso_block = rblock.pop("meso", {})
    _check_keys(meso_block, {"batch", "rho_top", "bandwidth", "density_stride",
                             "grid"}, "run.meso")
    grid = None
    if "grid" in meso_block:
        gb = meso_block["grid"]
        _check_keys(gb, {"origin", "spacing", "dims"}, "run.meso.grid")
        origin = _vec2(_need(gb, "origin", "run.meso.grid"), "grid.origin")
        spacing = _vec2(_need(gb, "spacing", "run.meso.grid"), "grid.spacing")
        dims = _need(gb, "dims", "run.meso.grid")
        grid = DensityGrid((float(origin[0]), float(origin[1])),
                           (float(spacing[0]), float(spacing[1])),
                           int(dims[0]), int(dims[1]))
    run = RunSpec(
        steps=int(rblock.get("steps", 1000)),
        record_stride=int(rblock.get("record_stride", 10)),
        seed=int(rblock.get("seed", 0)),
        batch=int(meso_block.get("batch", 100)),
        rho_top=(float(meso_block["rho_top"]) if "rho_top" in meso_block else None),
        bandwidth=float(meso_block.get("bandwidth", 0.4)),
        density_stride=int(meso_block.get("density_stride", 0)),
        grid=grid,
    )
    if run.steps < 1:
        raise ScenarioError("run.steps must be >= 1")
    if run.batch < 1 or run.batch > samples:
        raise ScenarioError("run.meso.batch must lie in [1, followers.samples]")

    # objective
    oblock = data.get("objective", {})
    _check_keys(oblock, {"kind", "horizon", "desired", "penalty"}, "objective")
    desired = oblock.get("desired")
    if desired is not None:
        desired = tuple(float(v) for v in desired)
        if len(desired) != len(exits):
            raise ScenarioError("objective.desired must list one mass per exit")
    try:
        objective = ObjectiveSpec(
            kind=oblock.get("kind", "min_time"),
            horizon_T=float(oblock.get("horizon", run.steps * params.dt)),
            desired_masses=desired,
            penalty_time=(float(oblock["penalty"]) if "penalty" in oblock else None),
        )
    except ValueError as err:
        raise ScenarioError(f"invalid [objective]: {err}") from None

    return Scenario(
        name=name, params=params, env=env,
        follower_count=count, sample_count=samples,
        follower_box=box, velocity_law=vlaw,
        leader_box=leader_box, leader_specs=leader_specs,
        objective=objective, run=run, raw=data,
    )
