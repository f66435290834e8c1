"""Synthetic hybrid-grid environment.

A ``GridCase`` holds the static topology plus generator/branch/bus/load
parameters; ``DispatchSim`` advances one day per step: clip the action to
physical boxes and ramp limits, solve an AC power flow (the slack generator
absorbs the active mismatch), then score security, cost and renewable
utilization into the per-step reward

    r = S_b + zeta(S_r) + zeta(S_v) + zeta(-C/C_ref) + omega_R * R

with zeta(x) = e^x - 1 and C_ref the cost of running every thermal unit at
its midpoint.  Episodes end on power-flow divergence, a bus-voltage breach,
the slack generator leaving its box, or the series running out.

Per-unit system: 100 MVA base; branch impedances and thermal (current)
limits are per-unit, generator/load set-points are MW / MVAr.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import RenewableSeries
from .kernels import pf_injections, pf_jacobian

S_BASE_MVA = 100.0
DEFAULT_OMEGA_R = 2.0
DEFAULT_RAMP_RATE = 0.05


class GridError(ValueError):
    pass


# ---------------------------------------------------------------------------
# case data model
# ---------------------------------------------------------------------------

@dataclass
class Bus:
    v_min: float = 0.95
    v_max: float = 1.05


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    limit: float  # thermal current limit, per-unit


@dataclass
class Generator:
    bus: int
    kind: str               # "renewable" | "thermal"
    p_min: float            # MW
    p_max: float            # MW
    q_min: float            # MVAr
    q_max: float            # MVAr
    cost_a: float
    cost_b: float
    cost_c: float
    cost_start: float
    ramp_rate: float = DEFAULT_RAMP_RATE
    v_set: float = 1.0


@dataclass
class Load:
    bus: int
    p: float  # MW, base value
    q: float  # MVAr, base value


# the four generator archetype rows (renewable nameplate is not tabulated;
# 110 MW keeps it on the thermal units' scale)
ARCHETYPES = {
    "renewable": dict(kind="renewable", p_min=0.0, p_max=110.0,
                      cost_a=0.0696, cost_b=26.2438, cost_c=31.67, cost_start=80.0),
    "thermal_a": dict(kind="thermal", p_min=15.0, p_max=110.0,
                      cost_a=0.0285, cost_b=17.82, cost_c=10.15, cost_start=100.0),
    "thermal_b": dict(kind="thermal", p_min=25.0, p_max=128.0,
                      cost_a=0.0109, cost_b=22.9423, cost_c=32.96, cost_start=200.0),
    "thermal_c": dict(kind="thermal", p_min=28.0, p_max=140.0,
                      cost_a=0.0097, cost_b=12.8875, cost_c=58.81, cost_start=880.0),
}


@dataclass
class GridCase:
    buses: list[Bus]
    branches: list[Branch]
    generators: list[Generator]
    loads: list[Load]
    slack_gen: int
    seed: int = 0

    def __post_init__(self):
        n = len(self.buses)
        for br in self.branches:
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n) or br.from_bus == br.to_bus:
                raise GridError(f"branch endpoints out of range: {br}")
            if br.limit <= 0:
                raise GridError("branch thermal limits must be positive")
        for g in self.generators:
            if g.p_min > g.p_max:
                raise GridError(f"generator p_min {g.p_min} > p_max {g.p_max}")
        if not self._connected():
            raise GridError("case graph is not connected")

    def _connected(self) -> bool:
        n = len(self.buses)
        adj = [[] for _ in range(n)]
        for br in self.branches:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == n

    # -- derived sizes -------------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_load(self) -> int:
        return len(self.loads)

    @property
    def renewable_ids(self) -> np.ndarray:
        return np.array([i for i, g in enumerate(self.generators) if g.kind == "renewable"], dtype=int)

    @property
    def thermal_ids(self) -> np.ndarray:
        return np.array([i for i, g in enumerate(self.generators) if g.kind == "thermal"], dtype=int)

    @property
    def n_new(self) -> int:
        return len(self.renewable_ids)

    def p_max_arr(self) -> np.ndarray:
        return np.array([g.p_max for g in self.generators])

    def p_min_arr(self) -> np.ndarray:
        return np.array([g.p_min for g in self.generators])

    # -- persistence -----------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "slack_gen": self.slack_gen,
            "seed": self.seed,
            "buses": [asdict(b) for b in self.buses],
            "branches": [asdict(b) for b in self.branches],
            "generators": [asdict(g) for g in self.generators],
            "loads": [asdict(l) for l in self.loads],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GridCase":
        doc = json.loads(text)
        return cls(
            buses=[Bus(**b) for b in doc["buses"]],
            branches=[Branch(**b) for b in doc["branches"]],
            generators=[Generator(**g) for g in doc["generators"]],
            loads=[Load(**l) for l in doc["loads"]],
            slack_gen=doc["slack_gen"],
            seed=doc.get("seed", 0),
        )

    def case_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def save_case(path, case: GridCase) -> None:
    with open(path, "w") as fh:
        fh.write(case.to_json())


def load_case(path) -> GridCase:
    with open(path) as fh:
        return GridCase.from_json(fh.read())


# ---------------------------------------------------------------------------
# case generation
# ---------------------------------------------------------------------------

def _archetype_counts(n_thermal: int) -> list[int]:
    weights = np.array([12.0, 10.0, 14.0]) / 36.0
    counts = np.floor(weights * n_thermal).astype(int)
    frac = weights * n_thermal - counts
    for i in np.argsort(-frac):
        if counts.sum() >= n_thermal:
            break
        counts[i] += 1
    return list(counts)


def generate_case(seed: int, n_bus: int = 126, n_gen: int = 54,
                  n_branch: int = 185, n_load: int = 91) -> GridCase:
    """Random connected case with archetype generator parameters.

    Branch thermal limits are sized from a nominal dispatch (thermals at
    midpoint, renewables at 45% nameplate) so the default operating region
    is feasible; draws that fail the nominal power flow are retried.
    """
    if n_bus < 2 or n_gen < 1 or n_load < 1:
        raise GridError("need at least 2 buses, 1 generator and 1 load")
    if n_branch < n_bus - 1:
        raise GridError(f"{n_branch} branches cannot connect {n_bus} buses")
    rng = np.random.default_rng(seed)
    n_new = int(round(n_gen * 18 / 54))
    n_thermal = n_gen - n_new
    if n_thermal < 1:
        n_thermal, n_new = 1, n_gen - 1
    for attempt in range(100):
        case = _draw_case(rng, seed, n_bus, n_gen, n_branch, n_load, n_new, n_thermal)
        if case is not None:
            return case
    raise GridError(f"failed to draw a feasible case in 100 attempts (seed {seed})")


def _draw_case(rng, seed, n_bus, n_gen, n_branch, n_load, n_new, n_thermal):
    # random recursive tree + extra chords
    edges = set()
    for i in range(1, n_bus):
        edges.add((int(rng.integers(0, i)), i))
    while len(edges) < n_branch:
        a, b = rng.integers(0, n_bus, size=2)
        if a == b:
            continue
        e = (int(min(a, b)), int(max(a, b)))
        edges.add(e)
    branches = [
        Branch(f, t, r=float(0.25 * x), x=float(x), limit=1.0)
        for (f, t), x in zip(sorted(edges), rng.uniform(0.01, 0.04, size=len(edges)))
    ]

    # generators: slack thermal on bus 0, then renewables, then thermals
    gens: list[Generator] = []

    def mk(arch: str, bus: int) -> Generator:
        a = ARCHETYPES[arch]
        return Generator(bus=bus, q_min=-0.35 * a["p_max"], q_max=0.5 * a["p_max"], **a)

    gen_buses = [0]
    free = list(range(1, n_bus))
    rng.shuffle(free)
    while len(gen_buses) < n_gen:
        gen_buses.append(free.pop() if free else int(rng.integers(1, n_bus)))
    gens.append(mk("thermal_c", 0))
    for i in range(n_new):
        gens.append(mk("renewable", gen_buses[1 + i]))
    counts = _archetype_counts(n_thermal - 1)
    arch_list = ["thermal_a"] * counts[0] + ["thermal_b"] * counts[1] + ["thermal_c"] * counts[2]
    for i, arch in enumerate(arch_list):
        gens.append(mk(arch, gen_buses[1 + n_new + i]))
    slack_gen = 0

    # loads sized so thermals-at-midpoint + 45% renewables puts the slack
    # near 60% of its box
    mid_nonslack = sum(0.5 * (g.p_min + g.p_max) for i, g in enumerate(gens)
                       if g.kind == "thermal" and i != slack_gen)
    renew_nominal = sum(0.45 * g.p_max for g in gens if g.kind == "renewable")
    slack_nominal = gens[slack_gen].p_min + 0.6 * (gens[slack_gen].p_max - gens[slack_gen].p_min)
    total_load = mid_nonslack + renew_nominal + slack_nominal
    candidates = [b for b in range(n_bus) if b not in set(gen_buses)] or list(range(1, n_bus))
    if len(candidates) >= n_load:
        load_buses = rng.choice(candidates, size=n_load, replace=False)
    else:
        load_buses = np.concatenate([candidates, rng.choice(n_bus, size=n_load - len(candidates))])
    w = rng.uniform(0.5, 1.5, size=n_load)
    w = w / w.sum()
    loads = [Load(bus=int(b), p=float(total_load * wi), q=float(0.33 * total_load * wi))
             for b, wi in zip(load_buses, w)]

    case = GridCase(buses=[Bus() for _ in range(n_bus)], branches=branches,
                    generators=gens, loads=loads, slack_gen=slack_gen, seed=seed)

    # size thermal limits off the nominal operating point
    statuses = np.ones(case.n_gen, dtype=int)
    p = np.zeros(case.n_gen)
    for i, g in enumerate(gens):
        if g.kind == "thermal":
            p[i] = 0.5 * (g.p_min + g.p_max)
        else:
            p[i] = 0.45 * g.p_max
    sol = solve_power_flow(case, statuses, p,
                           np.array([l.p for l in loads]), np.array([l.q for l in loads]))
    if not sol.converged:
        return None
    if sol.vm.min() < 0.965 or sol.vm.max() > 1.035:
        return None
    sg = gens[slack_gen]
    if not (sg.p_min + 0.2 * (sg.p_max - sg.p_min) <= sol.slack_p_mw
            <= sg.p_min + 0.9 * (sg.p_max - sg.p_min)):
        return None
    for br, i_nom in zip(case.branches, sol.i_mag):
        br.limit = float(max(2.5 * i_nom, 0.3))
    return case


# ---------------------------------------------------------------------------
# AC power flow (Newton-Raphson, polar form)
# ---------------------------------------------------------------------------

@dataclass
class PowerFlowSolution:
    converged: bool
    iterations: int
    max_mismatch: float
    vm: np.ndarray          # per-unit bus voltage magnitudes
    va: np.ndarray          # radians
    i_mag: np.ndarray       # per-unit branch series current
    p_from: np.ndarray      # per-unit branch active flow at the from end
    q_from: np.ndarray
    p_to: np.ndarray        # per-unit active flow delivered at the to end
    q_to: np.ndarray
    gen_q: np.ndarray       # MVAr per generator
    slack_p_mw: float
    loss_mw: float


def _ybus(case: GridCase) -> tuple[np.ndarray, np.ndarray]:
    n = case.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        ys = 1.0 / complex(br.r, br.x)
        y[br.from_bus, br.from_bus] += ys
        y[br.to_bus, br.to_bus] += ys
        y[br.from_bus, br.to_bus] -= ys
        y[br.to_bus, br.from_bus] -= ys
    return np.ascontiguousarray(y.real), np.ascontiguousarray(y.imag)


def solve_power_flow(case: GridCase, statuses: np.ndarray, p_mw: np.ndarray,
                     load_p: np.ndarray, load_q: np.ndarray,
                     tol: float = 1e-8, max_iter: int = 20) -> PowerFlowSolution:
    """Newton-Raphson from a flat start.

    Buses holding at least one online generator regulate voltage (PV) at the
    generator set-point; the slack generator's bus fixes angle and magnitude
    and absorbs the system active mismatch.  Reactive limits are not
    enforced in the solve; overruns are penalized by the reward instead.
    """
    statuses = np.asarray(statuses, dtype=int)
    p_mw = np.asarray(p_mw, dtype=np.float64)
    if statuses.shape != (case.n_gen,) or p_mw.shape != (case.n_gen,):
        raise GridError("statuses and set-points must have one entry per generator")
    if statuses[case.slack_gen] != 1:
        raise GridError("the slack generator must be online")
    n = case.n_bus
    slack_bus = case.generators[case.slack_gen].bus

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for i, g in enumerate(case.generators):
        if statuses[i] and i != case.slack_gen:
            p_spec[g.bus] += p_mw[i] / S_BASE_MVA
    bus_load_p = np.zeros(n)
    bus_load_q = np.zeros(n)
    for l, lp, lq in zip(case.loads, load_p, load_q):
        bus_load_p[l.bus] += lp / S_BASE_MVA
        bus_load_q[l.bus] += lq / S_BASE_MVA
    p_spec -= bus_load_p
    q_spec -= bus_load_q

    is_pv = np.zeros(n, dtype=bool)
    vm = np.ones(n)
    for i, g in enumerate(case.generators):
        if statuses[i]:
            is_pv[g.bus] = True
            vm[g.bus] = g.v_set
    is_pv[slack_bus] = False
    pv = np.flatnonzero(is_pv)
    pq = np.array([b for b in range(n) if b != slack_bus and not is_pv[b]], dtype=np.int64)
    pvpq = np.array([b for b in range(n) if b != slack_bus], dtype=np.int64)
    va = np.zeros(n)

    g_mat, b_mat = _ybus(case)
    converged = False
    mismatch = math.inf
    it = 0
    try:
        for it in range(max_iter + 1):
            p_calc, q_calc = pf_injections(g_mat, b_mat, vm, va)
            dp = p_spec[pvpq] - p_calc[pvpq]
            dq = q_spec[pq] - q_calc[pq]
            mismatch = max(np.abs(dp).max(initial=0.0), np.abs(dq).max(initial=0.0))
            if mismatch < tol:
                converged = True
                break
            if it == max_iter or not np.isfinite(mismatch):
                break
            jac = pf_jacobian(g_mat, b_mat, vm, va, p_calc, q_calc, pvpq, pq)
            dx = np.linalg.solve(jac, np.concatenate([dp, dq]))
            va[pvpq] += dx[: len(pvpq)]
            vm[pq] += dx[len(pvpq) :]
            if vm.min() < 0.05:
                break
    except np.linalg.LinAlgError:
        converged = False

    v = vm * np.exp(1j * va)
    nb = case.n_branch
    i_mag = np.zeros(nb)
    p_from = np.zeros(nb)
    q_from = np.zeros(nb)
    p_to = np.zeros(nb)
    q_to = np.zeros(nb)
    for j, br in enumerate(case.branches):
        ys = 1.0 / complex(br.r, br.x)
        cur = (v[br.from_bus] - v[br.to_bus]) * ys
        i_mag[j] = abs(cur)
        s_f = v[br.from_bus] * np.conj(cur)
        s_t = v[br.to_bus] * np.conj(cur)
        p_from[j], q_from[j] = s_f.real, s_f.imag
        p_to[j], q_to[j] = s_t.real, s_t.imag

    p_calc, q_calc = pf_injections(g_mat, b_mat, vm, va)
    gen_q = np.zeros(case.n_gen)
    online_by_bus: dict[int, list[int]] = {}
    for i, g in enumerate(case.generators):
        if statuses[i]:
            online_by_bus.setdefault(g.bus, []).append(i)
    for bus, gen_ids in online_by_bus.items():
        q_total = (q_calc[bus] + bus_load_q[bus]) * S_BASE_MVA
        for i in gen_ids:
            gen_q[i] = q_total / len(gen_ids)
    slack_total = (p_calc[slack_bus] + bus_load_p[slack_bus]) * S_BASE_MVA
    others = sum(p_mw[i] for i in online_by_bus.get(slack_bus, []) if i != case.slack_gen)
    slack_p_mw = slack_total - others
    loss_mw = float((p_from - p_to).sum() * S_BASE_MVA)

    return PowerFlowSolution(
        converged=converged, iterations=it, max_mismatch=float(mismatch),
        vm=vm, va=va, i_mag=i_mag, p_from=p_from, q_from=q_from, p_to=p_to, q_to=q_to,
        gen_q=gen_q, slack_p_mw=float(slack_p_mw), loss_mw=loss_mw,
    )


# ---------------------------------------------------------------------------
# objective components
# ---------------------------------------------------------------------------

def zeta(x: float) -> float:
    """Normalization e^x - 1, mapping (-inf, 0] into (-1, 0].

    Floored at -1 + 1e-12: below x ~ -27.6 the true value rounds to -1.0 in
    float64, which would fall out of the documented open range.
    """
    return max(float(math.expm1(x)), -1.0 + 1e-12)


def security_components(case: GridCase, sol: PowerFlowSolution, statuses: np.ndarray):
    """(S_b, S_r, S_v): branch loading score in [0,1], reactive-overrun and
    voltage-overrun penalties (both <= 0)."""
    ratios = np.minimum(sol.i_mag / np.array([br.limit for br in case.branches]), 1.0)
    s_b = float(1.0 - ratios.mean())

    s_r = 0.0
    for i, g in enumerate(case.generators):
        if not statuses[i]:
            continue
        q = sol.gen_q[i]
        if q > g.q_max:
            s_r += (g.q_max - q) / abs(g.q_max)
        elif q < g.q_min:
            s_r += (q - g.q_min) / abs(g.q_min)

    s_v = 0.0
    for k, bus in enumerate(case.buses):
        v = sol.vm[k]
        if v > bus.v_max:
            s_v += 1.0 - v / bus.v_max
        elif v < bus.v_min:
            s_v += v / bus.v_min - 1.0
    return s_b, float(s_r), float(s_v)


def operation_cost(case: GridCase, statuses: np.ndarray, prev_statuses: np.ndarray,
                   p_mw: np.ndarray) -> float:
    """Quadratic fuel cost plus startup charges, thousand currency units."""
    total = 0.0
    for i, g in enumerate(case.generators):
        u, up = int(statuses[i]), int(prev_statuses[i])
        p = float(p_mw[i])
        total += u * (g.cost_a * p * p + g.cost_b * p + g.cost_c)
        total += u * (1 - up) * g.cost_start
    return float(total)


def renewable_utilization(p_renew: np.ndarray, availability: np.ndarray) -> float:
    """Dispatched over available renewable output, clipped to [0, 1]."""
    avail = float(np.sum(availability))
    if avail <= 1e-9:
        return 1.0
    return float(np.clip(np.sum(p_renew) / avail, 0.0, 1.0))


def generator_branch_load(case: GridCase, sol: PowerFlowSolution) -> np.ndarray:
    """Per generator: the worst I/limit ratio over branches at its bus."""
    worst = np.zeros(case.n_bus)
    for j, br in enumerate(case.branches):
        ratio = sol.i_mag[j] / br.limit
        worst[br.from_bus] = max(worst[br.from_bus], ratio)
        worst[br.to_bus] = max(worst[br.to_bus], ratio)
    return np.array([worst[g.bus] for g in case.generators])


# ---------------------------------------------------------------------------
# the simulator
# ---------------------------------------------------------------------------

@dataclass
class RewardBreakdown:
    s_b: float = 0.0
    s_r: float = 0.0
    s_v: float = 0.0
    cost: float = 0.0
    urre: float = 0.0
    zeta_s_r: float = 0.0
    zeta_s_v: float = 0.0
    zeta_cost: float = 0.0
    reward: float = 0.0


@dataclass
class GridState:
    day: int
    statuses: np.ndarray
    p_mw: np.ndarray
    availability: np.ndarray  # MW per renewable unit, capped at nameplate
    load_p: np.ndarray
    load_q: np.ndarray
    solution: PowerFlowSolution


@dataclass
class StepOutcome:
    state: GridState
    reward: RewardBreakdown
    done: bool
    reason: str | None = None


@dataclass
class EpisodeScores:
    steps: int
    security_score: float
    avg_cost: float
    avg_urre: float
    total_reward: float


def episode_scores(records: list[RewardBreakdown]) -> EpisodeScores:
    if not records:
        raise GridError("need at least one step record")
    return EpisodeScores(
        steps=len(records),
        security_score=float(sum(r.s_b + r.zeta_s_r + r.zeta_s_v for r in records)),
        avg_cost=float(np.mean([r.cost for r in records])),
        avg_urre=float(np.mean([r.urre for r in records])),
        total_reward=float(sum(r.reward for r in records)),
    )


class DispatchSim:
    """One environment instance over an immutable case and truth series."""

    def __init__(self, case: GridCase, series: RenewableSeries, seed: int = 0,
                 omega_r: float = DEFAULT_OMEGA_R,
                 load_season_amp: float = 0.04, load_week_amp: float = 0.02):
        if series.num_units != case.n_new:
            raise GridError(
                f"series has {series.num_units} units, case has {case.n_new} renewables")
        self.case = case
        self.series = series
        self.seed = seed
        self.omega_r = omega_r
        rng = np.random.default_rng(seed)
        self._season_phase = rng.uniform(0, 2 * np.pi)
        self._week_phase = rng.uniform(0, 2 * np.pi)
        self._season_amp = load_season_amp
        self._week_amp = load_week_amp
        self._base_p = np.array([l.p for l in case.loads])
        self._base_q = np.array([l.q for l in case.loads])
        self.c_ref = self._reference_cost()

    def _reference_cost(self) -> float:
        total = 0.0
        for g in self.case.generators:
            if g.kind == "thermal":
                p = 0.5 * (g.p_min + g.p_max)
                total += g.cost_a * p * p + g.cost_b * p + g.cost_c
        return total

    def load_at(self, day: int):
        f = 1.0 + self._season_amp * math.sin(2 * math.pi * day / 365.25 + self._season_phase) \
            + self._week_amp * math.sin(2 * math.pi * day / 7.0 + self._week_phase)
        return self._base_p * f, self._base_q * f

    def availability_at(self, day: int) -> np.ndarray:
        caps = np.array([self.case.generators[i].p_max for i in self.case.renewable_ids])
        return np.minimum(self.series.values[day], caps)

    @property
    def last_day(self) -> int:
        return self.series.num_days - 1

    def reset(self, start_day: int) -> GridState:
        if not (0 <= start_day <= self.last_day):
            raise GridError(f"start_day {start_day} outside the series")
        case = self.case
        avail = self.availability_at(start_day)
        statuses = np.ones(case.n_gen, dtype=int)
        p = np.zeros(case.n_gen)
        for i, g in enumerate(case.generators):
            p[i] = 0.5 * (g.p_min + g.p_max) if g.kind == "thermal" else 0.0
        p[case.renewable_ids] = np.minimum(0.45 * case.p_max_arr()[case.renewable_ids], avail)
        load_p, load_q = self.load_at(start_day)
        sol = solve_power_flow(case, statuses, p, load_p, load_q)
        if not sol.converged:
            raise GridError(f"initial power flow failed on day {start_day}")
        p[case.slack_gen] = sol.slack_p_mw
        return GridState(day=start_day, statuses=statuses, p_mw=p, availability=avail,
                         load_p=load_p, load_q=load_q, solution=sol)

    def step(self, state: GridState, action: np.ndarray) -> StepOutcome:
        case = self.case
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (case.n_gen,):
            raise GridError(f"action must have length {case.n_gen}, got shape {action.shape}")
        if not np.all(np.isfinite(action)):
            raise GridError("action contains non-finite entries")
        day = state.day + 1
        if day > self.last_day:
            raise GridError("series exhausted; episode should have ended")

        avail = self.availability_at(day)
        statuses = np.ones(case.n_gen, dtype=int)
        p = np.zeros(case.n_gen)
        renew_pos = {g: k for k, g in enumerate(case.renewable_ids)}
        for i, g in enumerate(case.generators):
            if g.kind == "renewable":
                p[i] = min(max(action[i], 0.0), avail[renew_pos[i]])
                continue
            if i == case.slack_gen:
                p[i] = state.p_mw[i]  # placeholder; realized value comes from the solve
                continue
            if action[i] <= 0.0:
                statuses[i] = 0
                continue
            target = min(max(action[i], g.p_min), g.p_max)
            if state.statuses[i]:
                ramp = g.ramp_rate * g.p_max
                p[i] = state.p_mw[i] + np.clip(target - state.p_mw[i], -ramp, ramp)
            else:
                p[i] = g.p_min  # startup re-enters at minimum output

        load_p, load_q = self.load_at(day)
        sol = solve_power_flow(case, statuses, p, load_p, load_q)
        next_state = GridState(day=day, statuses=statuses, p_mw=p, availability=avail,
                               load_p=load_p, load_q=load_q, solution=sol)
        if not sol.converged:
            return StepOutcome(next_state, RewardBreakdown(), done=True, reason="diverged")
        p[case.slack_gen] = sol.slack_p_mw

        s_b, s_r, s_v = security_components(case, sol, statuses)
        cost = operation_cost(case, statuses, state.statuses, p)
        urre = renewable_utilization(p[case.renewable_ids], avail)
        rb = RewardBreakdown(
            s_b=s_b, s_r=s_r, s_v=s_v, cost=cost, urre=urre,
            zeta_s_r=zeta(s_r), zeta_s_v=zeta(s_v), zeta_cost=zeta(-cost / self.c_ref),
        )
        rb.reward = rb.s_b + rb.zeta_s_r + rb.zeta_s_v + rb.zeta_cost + self.omega_r * rb.urre

        done, reason = False, None
        sg = case.generators[case.slack_gen]
        if np.any(sol.vm < [b.v_min for b in case.buses]) or np.any(sol.vm > [b.v_max for b in case.buses]):
            done, reason = True, "voltage-limit"
        elif not (sg.p_min <= sol.slack_p_mw <= sg.p_max):
            done, reason = True, "slack-limit"
        elif day == self.last_day:
            done, reason = True, "series-exhausted"
        return StepOutcome(next_state, rb, done, reason)
