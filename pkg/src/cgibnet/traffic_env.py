"""Traffic Junction gridworld.

Cars follow fixed routes through a junction. Each step a car either stops
(action 0) or advances one cell along its route (action 1). All cars share one
team reward made of three per-car terms:

* a timestep penalty of ``r_tp * age`` for every car on the grid, where ``age``
  counts the steps since the car entered (so waiting gets more expensive the
  longer a car has been around);
* a collision penalty ``r_cp`` for every car that shares its cell with another
  car after movement (checked every step; positions are not changed);
* an exit bonus ``r_eb`` paid once, on the step a car leaves the grid.

Maps are read from the plain-text route tables in ``cgibnet/data/maps``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAP_FORMAT_VERSION = 1
MAP_NAMES = ("easy", "medium", "hard")
EXPECTED_SIZES = {"easy": (4, 20), "medium": (8, 40), "hard": (16, 60)}

PRE_ENTRY, ACTIVE, EXITED = 0, 1, 2
STOP, MOVE = 0, 1
NUM_ACTIONS = 2

TIMESTEP_PENALTY = -1.0
COLLISION_PENALTY = -100.0
EXIT_BONUS = 30.0


@dataclass(frozen=True)
class Route:
    route_id: int
    name: str
    entrance: str
    cells: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class MapSpec:
    name: str
    grid_dims: tuple[int, int]
    num_agents: int
    max_steps: int
    routes: tuple[Route, ...]
    spawn_depth: int = 3

    @property
    def entrances(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, list[int]] = {}
        for route in self.routes:
            out.setdefault(route.entrance, []).append(route.route_id)
        return {k: tuple(v) for k, v in out.items()}

    @property
    def num_cells(self) -> int:
        return self.grid_dims[0] * self.grid_dims[1]

    @property
    def num_routes(self) -> int:
        return len(self.routes)

    @property
    def obs_dim(self) -> int:
        return self.num_cells + self.num_routes + 1

    @property
    def state_dim(self) -> int:
        return self.num_agents * self.obs_dim + 1

    def validate(self) -> None:
        rows, cols = self.grid_dims
        if self.name in EXPECTED_SIZES and (self.num_agents, self.max_steps) != EXPECTED_SIZES[self.name]:
            raise ValueError(f"map {self.name!r}: agents/max_steps must be {EXPECTED_SIZES[self.name]}")
        for route in self.routes:
            cells = route.cells
            if len(cells) <= self.spawn_depth:
                raise ValueError(f"route {route.name} shorter than the spawn depth")
            for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
                if abs(r0 - r1) + abs(c0 - c1) != 1:
                    raise ValueError(f"route {route.name} is not a connected cell path")
            if any(not (0 <= r < rows and 0 <= c < cols) for r, c in cells):
                raise ValueError(f"route {route.name} leaves the grid before its last cell")
            r, c = cells[0]
            if r not in (0, rows - 1) and c not in (0, cols - 1):
                raise ValueError(f"route {route.name} does not start on the border")
            # the move after the last cell must leave the grid
            (rp, cp), (rl, cl) = cells[-2], cells[-1]
            nr, nc = 2 * rl - rp, 2 * cl - cp
            if 0 <= nr < rows and 0 <= nc < cols:
                raise ValueError(f"route {route.name} does not end at the grid edge")
        for entrance, ids in self.entrances.items():
            if len(ids) != 2:
                raise ValueError(f"entrance {entrance} offers {len(ids)} routes, expected 2")
            starts = {self.routes[i].cells[0] for i in ids}
            if len(starts) != 1:
                raise ValueError(f"routes of entrance {entrance} start in different cells")


def parse_map(text: str) -> MapSpec:
    fields: dict[str, list[str]] = {}
    routes: list[Route] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if key == "route":
            if len(rest) < 3:
                raise ValueError(f"line {lineno}: malformed route")
            cells = tuple(tuple(int(v) for v in tok.split(",")) for tok in rest[2:])
            routes.append(Route(len(routes), rest[0], rest[1], cells))  # type: ignore[arg-type]
        else:
            fields[key] = rest
    version = int(fields.get("version", ["0"])[0])
    if version != MAP_FORMAT_VERSION:
        raise ValueError(f"unsupported map format version {version}")
    spec = MapSpec(
        name=fields["name"][0],
        grid_dims=(int(fields["grid"][0]), int(fields["grid"][1])),
        num_agents=int(fields["agents"][0]),
        max_steps=int(fields["max_steps"][0]),
        routes=tuple(routes),
        spawn_depth=int(fields.get("spawn_depth", ["3"])[0]),
    )
    spec.validate()
    return spec


_MAP_CACHE: dict[str, MapSpec] = {}


def load_map(name_or_path: str | Path) -> MapSpec:
    """Load one of the shipped maps by name, or a map file by path."""
    key = str(name_or_path)
    if key in _MAP_CACHE:
        return _MAP_CACHE[key]
    if key in MAP_NAMES:
        text = resources.files("cgibnet").joinpath("data", "maps", f"{key}.txt").read_text()
    else:
        text = Path(key).read_text()
    spec = parse_map(text)
    _MAP_CACHE[key] = spec
    return spec


@dataclass
class CarState:
    route_id: int
    path_index: int
    steps_alive: int = 0
    status: int = PRE_ENTRY


@dataclass
class EnvStep:
    observations: np.ndarray  # (N, obs_dim)
    alive_mask: np.ndarray  # (N,) bool
    shared_reward: float
    done: bool
    global_state: np.ndarray  # (N * obs_dim + 1,)
    reward_terms: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class TrafficJunction:
    """Single Traffic Junction instance. Not thread-safe; use one per worker."""

    def __init__(self, spec: MapSpec | str = "easy",
                 timestep_penalty: float = TIMESTEP_PENALTY,
                 collision_penalty: float = COLLISION_PENALTY,
                 exit_bonus: float = EXIT_BONUS):
        self.spec = load_map(spec) if isinstance(spec, (str, Path)) else spec
        self.r_tp = timestep_penalty
        self.r_cp = collision_penalty
        self.r_eb = exit_bonus
        n = self.spec.num_agents
        max_len = max(len(r.cells) for r in self.spec.routes)
        self._cells = np.full((self.spec.num_routes, max_len), -1, dtype=np.int64)
        self._route_len = np.zeros(self.spec.num_routes, dtype=np.int64)
        cols = self.spec.grid_dims[1]
        for r in self.spec.routes:
            self._route_len[r.route_id] = len(r.cells)
            self._cells[r.route_id, : len(r.cells)] = [a * cols + b for a, b in r.cells]
        self._entrance_names = sorted(self.spec.entrances)
        self.route_id = np.zeros(n, dtype=np.int64)
        self.path_index = np.zeros(n, dtype=np.int64)
        self.steps_alive = np.zeros(n, dtype=np.int64)
        self.status = np.full(n, PRE_ENTRY, dtype=np.int8)
        self.t = 0
        self.done = True

    @property
    def num_agents(self) -> int:
        return self.spec.num_agents

    def cars(self) -> list[CarState]:
        return [CarState(int(r), int(p), int(s), int(st)) for r, p, s, st in
                zip(self.route_id, self.path_index, self.steps_alive, self.status)]

    def reset(self, seed: int) -> EnvStep:
        rng = np.random.default_rng(seed)
        spec = self.spec
        n = spec.num_agents
        entrances = spec.entrances
        for i in range(n):
            name = self._entrance_names[rng.integers(len(self._entrance_names))]
            self.route_id[i] = entrances[name][rng.integers(2)]
            self.path_index[i] = rng.integers(spec.spawn_depth)
        self.steps_alive[:] = 0
        self.status[:] = PRE_ENTRY
        self.t = 0
        self.done = False
        self._spawn()
        return self._make_step(0.0, np.zeros(n), np.zeros(n), np.zeros(n))

    def _positions(self) -> np.ndarray:
        """Flat cell index per car; -1 when the car is not on the grid."""
        pos = np.full(self.num_agents, -1, dtype=np.int64)
        on = self.status == ACTIVE
        pos[on] = self._cells[self.route_id[on], self.path_index[on]]
        return pos

    def _spawn(self) -> None:
        # cars whose start cell is taken keep waiting, free of charge
        occupied = set(self._positions()[self.status == ACTIVE].tolist())
        for i in np.flatnonzero(self.status == PRE_ENTRY):
            cell = int(self._cells[self.route_id[i], self.path_index[i]])
            if cell not in occupied:
                self.status[i] = ACTIVE
                occupied.add(cell)

    def step(self, actions: Sequence[int] | np.ndarray) -> EnvStep:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        if actions.shape[0] != self.num_agents:
            raise ValueError(f"expected {self.num_agents} actions, got {actions.shape[0]}")
        n = self.num_agents
        self.t += 1
        active = self.status == ACTIVE
        self.steps_alive[active] += 1
        tp = np.where(active, self.r_tp * self.steps_alive, 0.0)

        moving = active & (actions == MOVE)
        self.path_index[moving] += 1
        exiting = moving & (self.path_index >= self._route_len[self.route_id])
        self.status[exiting] = EXITED
        eb = np.where(exiting, self.r_eb, 0.0)

        pos = self._positions()
        on = pos >= 0
        counts = np.bincount(pos[on], minlength=self.spec.num_cells)
        collided = on & (counts[np.maximum(pos, 0)] >= 2)
        cp = np.where(collided, self.r_cp, 0.0)

        self._spawn()
        self.done = bool(np.all(self.status == EXITED) or self.t >= self.spec.max_steps)
        reward = float(np.sum(tp) + np.sum(cp) + np.sum(eb))
        return self._make_step(reward, tp, cp, eb)

    def _make_step(self, reward, tp, cp, eb) -> EnvStep:
        obs = self.observations()
        state = np.concatenate([obs.reshape(-1), [self.t / self.spec.max_steps]])
        return EnvStep(
            observations=obs,
            alive_mask=self.status == ACTIVE,
            shared_reward=reward,
            done=self.done,
            global_state=state,
            reward_terms={"timestep": tp, "collision": cp, "exit": eb},
            t=self.t,
        )

    def observations(self) -> np.ndarray:
        """One-hot cell ++ one-hot route ++ age / max_steps, per car.

        Cars that are not on the grid keep only their route one-hot.
        """
        spec = self.spec
        n = spec.num_agents
        obs = np.zeros((n, spec.obs_dim), dtype=np.float64)
        pos = self._positions()
        on = pos >= 0
        obs[np.flatnonzero(on), pos[on]] = 1.0
        waiting = self.status != EXITED
        obs[np.flatnonzero(waiting), spec.num_cells + self.route_id[waiting]] = 1.0
        obs[:, -1] = np.where(on, self.steps_alive / spec.max_steps, 0.0)
        return obs

    def render(self) -> str:
        rows, cols = self.spec.grid_dims
        grid = [["#"] * cols for _ in range(rows)]
        for route in self.spec.routes:
            for r, c in route.cells:
                grid[r][c] = "."
        pos = self._positions()
        counts = np.bincount(pos[pos >= 0], minlength=self.spec.num_cells)
        for i, p in enumerate(pos):
            if p < 0:
                continue
            r, c = divmod(int(p), cols)
            grid[r][c] = "X" if counts[p] > 1 else _car_glyph(i)
        waiting = int(np.sum(self.status == PRE_ENTRY))
        exited = int(np.sum(self.status == EXITED))
        header = f"t={self.t} waiting={waiting} exited={exited}"
        return "\n".join([header] + ["".join(row) for row in grid])


def _car_glyph(i: int) -> str:
    return "0123456789abcdefghijklmnopqrstuvwxyz"[i % 36]


@dataclass
class EpisodeMetrics:
    ret: float
    collisions: int
    success: bool


def episode_metrics(steps: Iterable[EnvStep]) -> EpisodeMetrics:
    """Summarise a finished episode given its EnvSteps (reset step first).

    ``collisions`` counts car-steps that paid the collision penalty.
    """
    steps = list(steps)
    if not steps or not steps[-1].done:
        raise ValueError("episode_metrics needs a complete trajectory ending in done")
    ret = float(sum(s.shared_reward for s in steps[1:]))
    collisions = int(sum(np.count_nonzero(s.reward_terms.get("collision", ())) for s in steps[1:]))
    exits = int(sum(np.count_nonzero(s.reward_terms.get("exit", ())) for s in steps[1:]))
    n = steps[0].alive_mask.shape[0]
    return EpisodeMetrics(ret=ret, collisions=collisions, success=exits == n)


def run_text_episode(map_name: str, seed: int, policy: str = "move", out=sys.stdout) -> EpisodeMetrics:
    """Play one episode with a fixed policy, printing the ASCII grid each step."""
    env = TrafficJunction(map_name)
    steps = [env.reset(seed)]
    print(env.render(), file=out)
    rng = np.random.default_rng(seed)
    while not steps[-1].done:
        if policy == "move":
            actions = np.ones(env.num_agents, dtype=np.int64)
        elif policy == "stop":
            actions = np.zeros(env.num_agents, dtype=np.int64)
        else:
            actions = rng.integers(0, 2, env.num_agents)
        steps.append(env.step(actions))
        print(f"\nreward={steps[-1].shared_reward:+.0f}", file=out)
        print(env.render(), file=out)
    return episode_metrics(steps)
