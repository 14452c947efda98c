"""Car-following model core: parameters, states, trajectories, rollouts.

The acceleration law has a free-road term shaped by the speed ratio and an
interaction term shaped by the ratio of desired gap to actual gap. A gap of
``+inf`` encodes "no leader" and makes the interaction term exactly zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InputDomainError, SchemaError, SingularGapError

#: Canonical parameter order used by arrays, CSV columns and JSON payloads.
PARAM_NAMES = ("a_max", "a_comf", "v_des", "d_min", "T", "delta")

TRAJECTORY_COLUMNS = ("t", "v_ego", "v_leader", "gap", "a_obs")


@dataclass(frozen=True)
class ParamSet:
    """Driver parameters: all strictly positive.

    a_max   maximum acceleration, m/s^2
    a_comf  comfortable deceleration, m/s^2
    v_des   desired speed, m/s
    d_min   standstill minimum gap, m
    T       desired time headway, s
    delta   free-road acceleration exponent (dimensionless)
    """

    a_max: float
    a_comf: float
    v_des: float
    d_min: float
    T: float
    delta: float = 4.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise InputDomainError(f"parameter {name!r} is not a number: {value!r}")
            if not math.isfinite(value) or value <= 0.0:
                raise InputDomainError(
                    f"parameter {name!r} must be finite and > 0, got {value!r}"
                )
            object.__setattr__(self, name, value)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, theta) -> "ParamSet":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (len(PARAM_NAMES),):
            raise InputDomainError(f"expected {len(PARAM_NAMES)} parameters, got shape {theta.shape}")
        return cls(*theta)

    def as_dict(self) -> dict:
        return {n: float(getattr(self, n)) for n in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d) -> "ParamSet":
        missing = [n for n in PARAM_NAMES if n not in d]
        if missing:
            raise InputDomainError(f"missing parameters: {missing}")
        return cls(**{n: d[n] for n in PARAM_NAMES})


@dataclass(frozen=True)
class FollowingState:
    """Instantaneous follower state.

    v        follower speed, m/s (>= 0)
    delta_v  speed difference v - v_leader, m/s
    d_front  bumper-to-bumper gap to the leader, m; +inf means no leader
    """

    v: float
    delta_v: float
    d_front: float

    def __post_init__(self):
        v = float(self.v)
        delta_v = float(self.delta_v)
        d_front = float(self.d_front)
        if not math.isfinite(v) or v < 0.0:
            raise InputDomainError(f"speed must be finite and >= 0, got {v!r}")
        if not math.isfinite(delta_v):
            raise InputDomainError(f"delta_v must be finite, got {delta_v!r}")
        if math.isnan(d_front) or d_front <= 0.0:
            raise SingularGapError(
                f"gap must be > 0 (+inf for no leader), got {d_front!r}"
            )
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "delta_v", delta_v)
        object.__setattr__(self, "d_front", d_front)

    @property
    def has_leader(self) -> bool:
        return math.isfinite(self.d_front)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled follower trajectory.

    Columns follow the CSV layout: t, v_ego, v_leader, gap, a_obs. The gap
    is bumper-to-bumper and stays strictly positive at every sample (+inf
    allowed for leaderless stretches). ``gap_collapsed`` marks a rollout
    that stopped early because the next state would have had gap <= 0.
    """

    dt: float
    t: np.ndarray
    v_ego: np.ndarray
    v_leader: np.ndarray
    gap: np.ndarray
    a_obs: np.ndarray
    gap_collapsed: bool = False

    def __post_init__(self):
        dt = float(self.dt)
        if not math.isfinite(dt) or dt <= 0.0:
            raise InputDomainError(f"dt must be finite and > 0, got {dt!r}")
        object.__setattr__(self, "dt", dt)
        arrays = {}
        n = None
        for name in TRAJECTORY_COLUMNS:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1:
                raise InputDomainError(f"column {name!r} must be 1-D")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise InputDomainError(
                    f"column {name!r} has {arr.size} rows, expected {n}"
                )
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        if n:
            expected = arrays["t"][0] + np.arange(n) * self.dt
            if not np.allclose(arrays["t"], expected, rtol=0.0, atol=1e-6 * self.dt):
                raise InputDomainError("timestamps are not uniformly spaced by dt")
            for name in ("v_ego", "v_leader", "a_obs"):
                if not np.all(np.isfinite(arrays[name])):
                    raise InputDomainError(f"column {name!r} contains non-finite values")
            if np.any(np.isnan(arrays["gap"])) or np.any(arrays["gap"] <= 0.0):
                raise SingularGapError("gap must be > 0 at every sample")

    def __len__(self) -> int:
        return self.t.size

    def states(self):
        """(v, delta_v, gap) arrays for one-step prediction at each sample."""
        return self.v_ego, self.v_ego - self.v_leader, self.gap

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
            for i in range(len(self)):
                row = (self.t[i], self.v_ego[i], self.v_leader[i],
                       self.gap[i], self.a_obs[i])
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(TRAJECTORY_COLUMNS):
                raise SchemaError(
                    f"{path}: expected header {','.join(TRAJECTORY_COLUMNS)}, got {header}"
                )
            columns = [[] for _ in TRAJECTORY_COLUMNS]
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(TRAJECTORY_COLUMNS):
                    raise SchemaError(
                        f"{path}: row {lineno}: expected {len(TRAJECTORY_COLUMNS)} fields, got {len(row)}"
                    )
                try:
                    values = [float(x) for x in row]
                except ValueError as exc:
                    raise SchemaError(f"{path}: row {lineno}: {exc}") from None
                for col, value in zip(columns, values):
                    col.append(value)
        t = np.asarray(columns[0], dtype=np.float64)
        dt = float(t[1] - t[0]) if t.size >= 2 else 1.0
        return cls(dt, *[np.asarray(c, dtype=np.float64) for c in columns])


def idm_acceleration(p: ParamSet, s: FollowingState) -> float:
    """Longitudinal acceleration for state ``s`` under parameters ``p``.

    With no leader (``d_front == +inf``) the interaction term is exactly
    zero. The result is never silently non-finite: inputs extreme enough
    to overflow raise instead.
    """
    k = _kernels.ACTIVE
    a = float(k.idm_accel(p.a_max, p.a_comf, p.v_des, p.d_min, p.T, p.delta,
                          s.v, s.delta_v, s.d_front))
    if not math.isfinite(a):
        raise InputDomainError(
            f"acceleration overflowed for v={s.v}, delta_v={s.delta_v}, gap={s.d_front}"
        )
    return a


def desired_gap(p: ParamSet, v: float, delta_v: float) -> float:
    """Desired (unclamped) gap at speed ``v`` and closing speed ``delta_v``.

    May be negative for strongly opening gaps; the acceleration law clamps
    it at zero internally, this helper reports the raw value.
    """
    v = float(v)
    delta_v = float(delta_v)
    if not math.isfinite(v) or v < 0.0:
        raise InputDomainError(f"speed must be finite and >= 0, got {v!r}")
    if not math.isfinite(delta_v):
        raise InputDomainError(f"delta_v must be finite, got {delta_v!r}")
    return p.d_min + v * p.T + v * delta_v / (2.0 * math.sqrt(p.a_max * p.a_comf))


def rollout_follower(p: ParamSet, leader_speeds, init: FollowingState,
                     dt: float, n_steps: int) -> Trajectory:
    """Integrate a follower behind a scripted leader with forward Euler.

    ``leader_speeds`` is a scalar (constant leader) or an array with at
    least ``n_steps`` entries giving the leader speed at each step. Sample
    k of the result is the state after k steps together with the model
    acceleration at that state; ``init.delta_v`` is ignored in favour of
    the profile. Stops early with ``gap_collapsed=True`` when the gap
    would close completely.
    """
    dt = float(dt)
    if not math.isfinite(dt) or dt <= 0.0:
        raise InputDomainError(f"dt must be finite and > 0, got {dt!r}")
    n_steps = int(n_steps)
    if n_steps < 1:
        raise InputDomainError(f"n_steps must be >= 1, got {n_steps}")
    lead = np.asarray(leader_speeds, dtype=np.float64)
    if lead.ndim == 0:
        lead = np.full(n_steps, float(lead))
    elif lead.ndim == 1:
        if lead.size < n_steps:
            raise InputDomainError(
                f"leader profile has {lead.size} entries, need {n_steps}"
            )
        lead = np.ascontiguousarray(lead[:n_steps])
    else:
        raise InputDomainError("leader_speeds must be a scalar or 1-D array")
    if not np.all(np.isfinite(lead)) or np.any(lead < 0.0):
        raise InputDomainError("leader speeds must be finite and >= 0")

    v_out = np.empty(n_steps)
    gap_out = np.empty(n_steps)
    a_out = np.empty(n_steps)
    n, collapsed = _kernels.ACTIVE.rollout(
        p.to_array(), lead, float(init.v), float(init.d_front), dt,
        v_out, gap_out, a_out,
    )
    n = int(n)
    t = np.arange(n) * dt
    return Trajectory(dt, t, v_out[:n].copy(), lead[:n].copy(),
                      gap_out[:n].copy(), a_out[:n].copy(),
                      gap_collapsed=bool(collapsed))


def rmse_objective(obs: Trajectory, p: ParamSet) -> float:
    """RMSE of one-step acceleration predictions at the observed states."""
    if len(obs) == 0:
        raise InputDomainError("cannot evaluate objective on an empty trajectory")
    v, dv, gap = obs.states()
    return float(_kernels.ACTIVE.rmse_one_step(p.to_array(), v, dv, gap, obs.a_obs))


def rollout_rmse_objective(obs: Trajectory, p: ParamSet) -> float:
    """RMSE between observed accelerations and a full re-rollout.

    The rollout starts from the first observed state and is driven by the
    observed leader speeds. Returns +inf when the candidate parameters make
    the simulated gap collapse before the horizon.
    """
    if len(obs) == 0:
        raise InputDomainError("cannot evaluate objective on an empty trajectory")
    init = FollowingState(obs.v_ego[0], obs.v_ego[0] - obs.v_leader[0], obs.gap[0])
    sim = rollout_follower(p, obs.v_leader, init, obs.dt, len(obs))
    if sim.gap_collapsed:
        return math.inf
    return float(np.sqrt(np.mean((obs.a_obs - sim.a_obs) ** 2)))
