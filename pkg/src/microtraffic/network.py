"""Lane-level road networks, road-aligned coordinates and scenario loading.

Lanes are directed polyline centerlines with a width, successor links and
optional same-direction left/right neighbours. The road-aligned frame is
(s, d): arc length along the centerline and signed lateral offset, with d
positive to the left of the travel direction. Heading at a polyline vertex
is taken from the outgoing segment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputDomainError, NetworkError, SchemaError

SCENARIO_KINDS = ("highway", "urban")
_SCENARIO_SUFFIX = ".scenario.json"


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: np.ndarray
    width: float
    successors: tuple = ()
    left: str | None = None
    right: str | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.centerline, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise NetworkError(f"lane {self.id!r}: centerline must be (k, 2) with k >= 2")
        if not np.all(np.isfinite(pts)):
            raise NetworkError(f"lane {self.id!r}: centerline has non-finite points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise NetworkError(f"lane {self.id!r}: centerline has a zero-length segment")
        width = float(self.width)
        if not math.isfinite(width) or width <= 0.0:
            raise NetworkError(f"lane {self.id!r}: width must be finite and > 0")
        cum = np.concatenate(([0.0], np.cumsum(seg_len)))
        object.__setattr__(self, "centerline", pts)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "successors", tuple(self.successors))
        object.__setattr__(self, "_seg", seg)
        object.__setattr__(self, "_seg_len", seg_len)
        object.__setattr__(self, "_cum_s", cum)

    @property
    def length(self) -> float:
        return float(self._cum_s[-1])

    def _segment_index(self, s: float) -> int:
        i = int(np.searchsorted(self._cum_s, s, side="right")) - 1
        return min(max(i, 0), len(self._seg_len) - 1)

    def pose_at(self, s: float, d: float = 0.0, extrapolate: bool = False):
        """Global (x, y, heading) at arc length s, offset d to the left.

        With ``extrapolate=True`` values of s outside [0, length] follow
        the first/last segment's straight continuation.
        """
        if not extrapolate and not -1e-9 <= s <= self.length + 1e-9:
            raise InputDomainError(
                f"lane {self.id!r}: s={s!r} outside [0, {self.length}]"
            )
        i = self._segment_index(s)
        ux, uy = self._seg[i] / self._seg_len[i]
        local = s - self._cum_s[i]
        x = self.centerline[i, 0] + ux * local - uy * d
        y = self.centerline[i, 1] + uy * local + ux * d
        return float(x), float(y), float(math.atan2(uy, ux))

    def project(self, x: float, y: float):
        """(s, d, dist) of the closest centerline point to (x, y).

        ``dist`` is the Euclidean distance to the clamped projection and
        ``d`` carries its sign (left of travel positive). s is clamped to
        [0, length], so points beyond the ends project onto the endpoints
        and their longitudinal overshoot shows up in ``dist``.
        """
        p = np.array([x, y], dtype=np.float64)
        w = p - self.centerline[:-1]
        t = np.einsum("ij,ij->i", w, self._seg) / (self._seg_len ** 2)
        t = np.clip(t, 0.0, 1.0)
        proj = self.centerline[:-1] + t[:, None] * self._seg
        diff = p - proj
        dist2 = np.einsum("ij,ij->i", diff, diff)
        i = int(np.argmin(dist2))
        dist = math.sqrt(float(dist2[i]))
        cross = self._seg[i, 0] * diff[i, 1] - self._seg[i, 1] * diff[i, 0]
        d = dist if cross >= 0.0 else -dist
        s = float(self._cum_s[i] + t[i] * self._seg_len[i])
        return s, d, dist


@dataclass(frozen=True)
class RoadCoord:
    """Road-aligned coordinate: lane, arc length s, lateral offset d."""

    lane_id: str
    s: float
    d: float = 0.0


class RoadNetwork:
    """Validated set of lanes with source/sink annotations."""

    def __init__(self, lanes, sources=(), sinks=()):
        self.lanes: dict[str, Lane] = {}
        for lane in lanes:
            if lane.id in self.lanes:
                raise NetworkError(f"duplicate lane id {lane.id!r}")
            self.lanes[lane.id] = lane
        if not self.lanes:
            raise NetworkError("network has no lanes")
        self.sources = frozenset(sources)
        self.sinks = frozenset(sinks)
        for lane in self.lanes.values():
            for ref in lane.successors:
                if ref not in self.lanes:
                    raise NetworkError(
                        f"lane {lane.id!r}: successor {ref!r} does not exist"
                    )
            for attr in ("left", "right"):
                ref = getattr(lane, attr)
                if ref is not None and ref not in self.lanes:
                    raise NetworkError(
                        f"lane {lane.id!r}: {attr} neighbour {ref!r} does not exist"
                    )
        for name, refs in (("source", self.sources), ("sink", self.sinks)):
            for ref in refs:
                if ref not in self.lanes:
                    raise NetworkError(f"{name} {ref!r} does not exist")
        self._sorted_ids = sorted(self.lanes)

    def __contains__(self, lane_id) -> bool:
        return lane_id in self.lanes

    def shortest_path(self, src: str, dst: str):
        """Fewest-lanes path src -> dst over successor links, or None."""
        for ref in (src, dst):
            if ref not in self.lanes:
                raise NetworkError(f"lane {ref!r} does not exist")
        if src == dst:
            return [src]
        prev = {src: None}
        frontier = [src]
        while frontier:
            nxt = []
            for lane_id in frontier:
                for succ in self.lanes[lane_id].successors:
                    if succ in prev:
                        continue
                    prev[succ] = lane_id
                    if succ == dst:
                        path = [dst]
                        while prev[path[-1]] is not None:
                            path.append(prev[path[-1]])
                        return path[::-1]
                    nxt.append(succ)
            frontier = nxt
        return None

    def lane_group(self, lane_id: str):
        """Same-direction neighbour run containing ``lane_id``, left to right."""
        if lane_id not in self.lanes:
            raise NetworkError(f"lane {lane_id!r} does not exist")
        seen = {lane_id}
        cur = lane_id
        while True:
            left = self.lanes[cur].left
            if left is None or left in seen:
                break
            seen.add(left)
            cur = left
        group = [cur]
        while True:
            right = self.lanes[group[-1]].right
            if right is None or right in group:
                break
            group.append(right)
        return group


def load_network(path) -> RoadNetwork:
    """Load a network JSON file: {lanes: [...], sources: [...], sinks: [...]}."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(payload, dict) or "lanes" not in payload:
        raise SchemaError(f"{path}: expected an object with a 'lanes' list")
    lanes = []
    for entry in payload["lanes"]:
        try:
            lanes.append(Lane(
                id=entry["id"],
                centerline=entry["centerline"],
                width=entry["width"],
                successors=tuple(entry.get("successors", ())),
                left=entry.get("left"),
                right=entry.get("right"),
            ))
        except KeyError as exc:
            raise SchemaError(f"{path}: lane entry missing key {exc}") from None
    try:
        return RoadNetwork(lanes, payload.get("sources", ()), payload.get("sinks", ()))
    except NetworkError as exc:
        raise NetworkError(f"{path}: {exc}") from None


def road_to_global(net: RoadNetwork, rc: RoadCoord):
    """Map a road-aligned coordinate to global (x, y, heading)."""
    if rc.lane_id not in net.lanes:
        raise NetworkError(f"lane {rc.lane_id!r} does not exist")
    return net.lanes[rc.lane_id].pose_at(rc.s, rc.d)


def global_to_road(net: RoadNetwork, x: float, y: float,
                   tol: float = 0.0) -> RoadCoord | None:
    """Road-aligned coordinate on the nearest qualifying lane, else None.

    A lane qualifies when the distance to its centerline is at most
    width/2 + tol; among qualifying lanes the smallest distance wins, with
    ties broken by lane id order.
    """
    best = None
    best_dist = math.inf
    for lane_id in net._sorted_ids:
        lane = net.lanes[lane_id]
        s, d, dist = lane.project(x, y)
        if dist <= lane.width / 2.0 + tol and dist < best_dist:
            best = RoadCoord(lane_id, s, d)
            best_dist = dist
    return best


def is_off_road(net: RoadNetwork, x: float, y: float) -> bool:
    """True when (x, y) is not within any lane's width (closed boundary)."""
    return global_to_road(net, x, y, tol=0.0) is None


@dataclass(frozen=True)
class Scenario:
    """A runnable episode definition: network, demand, sim settings, ego spawn."""

    kind: str
    network: RoadNetwork
    demand: "DemandSpec"
    dt: float
    max_steps: int
    seed: int
    ego_lane: str
    ego_speed: float = 0.0
    ego_start_s: float = 0.0
    source_path: str | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise SchemaError(f"scenario kind must be one of {SCENARIO_KINDS}, got {self.kind!r}")
        dt = float(self.dt)
        if not math.isfinite(dt) or dt <= 0.0:
            raise SchemaError(f"scenario dt must be finite and > 0, got {dt!r}")
        object.__setattr__(self, "dt", dt)
        max_steps = int(self.max_steps)
        if max_steps < 1:
            raise SchemaError(f"scenario max_steps must be >= 1, got {max_steps}")
        object.__setattr__(self, "max_steps", max_steps)
        if self.ego_lane not in self.network.lanes:
            raise SchemaError(f"ego lane {self.ego_lane!r} does not exist")
        lane = self.network.lanes[self.ego_lane]
        start_s = float(self.ego_start_s)
        if not 0.0 <= start_s <= lane.length:
            raise SchemaError(
                f"ego_start_s={start_s!r} outside [0, {lane.length}] on {self.ego_lane!r}"
            )
        object.__setattr__(self, "ego_start_s", start_s)
        speed = float(self.ego_speed)
        if not math.isfinite(speed) or speed < 0.0:
            raise SchemaError(f"ego_speed must be finite and >= 0, got {speed!r}")
        object.__setattr__(self, "ego_speed", speed)
        self.demand.validate_against(self.network)


def _bundled_library() -> Path:
    from importlib.resources import files

    return Path(str(files("microtraffic").joinpath("scenarios")))


def _load_scenario_file(path: Path) -> Scenario:
    from .population import DemandSpec, load_demand

    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from None
    for key in ("kind", "network_file", "dt", "max_steps", "seed"):
        if key not in payload:
            raise SchemaError(f"{path}: missing key {key!r}")
    base = path.parent
    network = load_network(base / payload["network_file"])
    demand_file = payload.get("demand_file")
    demand = load_demand(base / demand_file) if demand_file else DemandSpec((), ())
    ego_lane = payload.get("ego_lane")
    if ego_lane is None:
        candidates = sorted(network.sources) or sorted(network.lanes)
        ego_lane = candidates[0]
    return Scenario(
        kind=payload["kind"],
        network=network,
        demand=demand,
        dt=payload["dt"],
        max_steps=payload["max_steps"],
        seed=int(payload["seed"]),
        ego_lane=ego_lane,
        ego_speed=payload.get("ego_speed", 0.0),
        ego_start_s=payload.get("ego_start_s", 0.0),
        source_path=str(path),
    )


def list_scenarios(kind: str | None = None, library=None):
    """Paths of scenario config files in the library, sorted by name."""
    library = Path(library) if library is not None else _bundled_library()
    out = []
    for p in sorted(library.glob(f"*{_SCENARIO_SUFFIX}")):
        if kind is not None:
            try:
                if json.loads(p.read_text()).get("kind") != kind:
                    continue
            except json.JSONDecodeError:
                continue
        out.append(p)
    return out


def load_scenario(source, rng: np.random.Generator | None = None,
                  library=None) -> Scenario:
    """Load a scenario from an explicit path or pick one of a kind.

    ``source`` is either a path to a scenario config JSON or a kind name
    ("highway"/"urban"), in which case one matching bundled (or ``library``)
    scenario is chosen uniformly with ``rng``.
    """
    path = Path(source)
    if path.is_file():
        return _load_scenario_file(path)
    if str(source) in SCENARIO_KINDS:
        candidates = list_scenarios(str(source), library=library)
        if not candidates:
            raise ConfigurationError(f"no scenarios of kind {source!r} in library")
        rng = np.random.default_rng() if rng is None else rng
        pick = candidates[int(rng.integers(len(candidates)))]
        return _load_scenario_file(pick)
    raise ConfigurationError(
        f"{source!r} is neither a scenario file nor one of {SCENARIO_KINDS}"
    )
