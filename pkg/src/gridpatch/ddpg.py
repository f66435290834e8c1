"""Actor-critic dispatcher: deterministic policy over grid observations plus
the blended renewable forecast.

State vector layout (offsets grow in this order; each group is scaled by a
case-level constant):

    gen_q           n_gen     generator reactive output / max |q| bound
    bus_v           n_bus     voltage deviation from 1 pu / 0.05
    branch_p_from   n_branch  active flow at from end / max limit
    branch_q_from   n_branch  reactive flow at from end / max limit
    branch_p_to     n_branch  active flow at to end / max limit
    branch_q_to     n_branch  reactive flow at to end / max limit
    branch_ratio    n_branch  current / limit
    branch_i        n_branch  current / max limit
    load_p          n_load    active load / max base load
    load_q          n_load    reactive load / max base load
    grid_loss       1         loss MW / (2% of total base load)
    gen_p           n_gen     active output / p_max
    gen_status      n_gen     on/off
    forecast        days*n_new forecast MW / renewable nameplate (0/1/10 days)

Actions are emitted in [-1, 1] by a tanh head and mapped affinely into each
generator's box ([0, p_max] for renewables, [p_min, p_max] for thermals).
The executed (patched) action is what enters the replay pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .confidence import SnapshotPool, ensemble_forecast
from .dispatcher import NecessityConfig, patch_action
from .forecast import ForecastModel
from .grid import (DispatchSim, GridCase, RewardBreakdown, episode_scores,
                   generator_branch_load)


class AgentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# observations and the state vector
# ---------------------------------------------------------------------------

OBS_GROUPS = [
    "gen_q", "bus_v", "branch_p_from", "branch_q_from", "branch_p_to",
    "branch_q_to", "branch_ratio", "branch_i", "load_p", "load_q",
    "grid_loss", "gen_p", "gen_status",
]


def state_layout(case: GridCase, forecast_days: int) -> list[tuple[str, int, int]]:
    """(name, offset, length) rows of the state vector, in order."""
    sizes = {
        "gen_q": case.n_gen, "bus_v": case.n_bus,
        "branch_p_from": case.n_branch, "branch_q_from": case.n_branch,
        "branch_p_to": case.n_branch, "branch_q_to": case.n_branch,
        "branch_ratio": case.n_branch, "branch_i": case.n_branch,
        "load_p": case.n_load, "load_q": case.n_load,
        "grid_loss": 1, "gen_p": case.n_gen, "gen_status": case.n_gen,
    }
    rows = []
    off = 0
    for name in OBS_GROUPS:
        rows.append((name, off, sizes[name]))
        off += sizes[name]
    if forecast_days:
        rows.append(("forecast", off, forecast_days * case.n_new))
        off += forecast_days * case.n_new
    return rows


def state_dim(case: GridCase, forecast_days: int) -> int:
    name, off, length = state_layout(case, forecast_days)[-1]
    return off + length


class StateScaler:
    """Case-level scale constants for each observation group."""

    def __init__(self, case: GridCase):
        self.case = case
        self.q_scale = max(max(abs(g.q_max), abs(g.q_min)) for g in case.generators)
        self.flow_scale = max(br.limit for br in case.branches)
        self.load_scale = max(l.p for l in case.loads)
        self.loss_scale = max(0.02 * sum(l.p for l in case.loads), 1.0)
        self.p_max = case.p_max_arr()
        renew = case.renewable_ids
        self.forecast_scale = float(self.p_max[renew].max()) if len(renew) else 1.0

    def scale_obs(self, obs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {
            "gen_q": obs["gen_q"] / self.q_scale,
            "bus_v": obs["bus_v"] / 0.05,
            "branch_p_from": obs["branch_p_from"] / self.flow_scale,
            "branch_q_from": obs["branch_q_from"] / self.flow_scale,
            "branch_p_to": obs["branch_p_to"] / self.flow_scale,
            "branch_q_to": obs["branch_q_to"] / self.flow_scale,
            "branch_ratio": obs["branch_ratio"],
            "branch_i": obs["branch_i"] / self.flow_scale,
            "load_p": obs["load_p"] / self.load_scale,
            "load_q": obs["load_q"] / self.load_scale,
            "grid_loss": obs["grid_loss"] / self.loss_scale,
            "gen_p": obs["gen_p"] / self.p_max,
            "gen_status": obs["gen_status"],
        }


def observe(case: GridCase, state) -> dict[str, np.ndarray]:
    """The 13 raw observation groups for one grid state."""
    sol = state.solution
    limits = np.array([br.limit for br in case.branches])
    return {
        "gen_q": sol.gen_q.copy(),
        "bus_v": sol.vm - 1.0,
        "branch_p_from": sol.p_from.copy(),
        "branch_q_from": sol.q_from.copy(),
        "branch_p_to": sol.p_to.copy(),
        "branch_q_to": sol.q_to.copy(),
        "branch_ratio": sol.i_mag / limits,
        "branch_i": sol.i_mag.copy(),
        "load_p": state.load_p.copy(),
        "load_q": state.load_q.copy(),
        "grid_loss": np.array([sol.loss_mw]),
        "gen_p": state.p_mw.copy(),
        "gen_status": state.statuses.astype(np.float64),
    }


def assemble_state(obs: dict[str, np.ndarray], forecast: np.ndarray | None,
                   scaler: StateScaler) -> np.ndarray:
    """Concatenate the scaled groups plus the flattened forecast block."""
    scaled = scaler.scale_obs(obs)
    parts = []
    for name in OBS_GROUPS:
        arr = np.asarray(scaled[name], dtype=np.float64).ravel()
        parts.append(arr)
    if forecast is not None:
        forecast = np.asarray(forecast, dtype=np.float64)
        if forecast.ndim != 2 or forecast.shape[1] != scaler.case.n_new:
            raise AgentError(f"forecast block must be days x {scaler.case.n_new}, got {forecast.shape}")
        parts.append((forecast / scaler.forecast_scale).ravel())
    out = np.concatenate(parts)
    if not np.all(np.isfinite(out)):
        raise AgentError("state vector contains non-finite entries")
    return out


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

def mlp_params(rng, prefix: str, in_dim: int, hidden: int, n_hidden: int, out_dim: int,
               final_scale: float = 1.0) -> dict[str, np.ndarray]:
    p = {}
    d = in_dim
    for i in range(n_hidden):
        lim = math.sqrt(6.0 / (d + hidden))
        p[f"{prefix}.w{i}"] = rng.uniform(-lim, lim, size=(d, hidden))
        p[f"{prefix}.b{i}"] = np.zeros(hidden)
        d = hidden
    lim = final_scale * math.sqrt(6.0 / (d + out_dim))
    p[f"{prefix}.wout"] = rng.uniform(-lim, lim, size=(d, out_dim))
    p[f"{prefix}.bout"] = np.zeros(out_dim)
    return p


def mlp_graph(g: ad.Graph, params: dict, prefix: str, x: ad.Tensor, n_hidden: int,
              trainable: bool, final_tanh: bool) -> ad.Tensor:
    leaf = (lambda n: g.param(n, params[n])) if trainable else (lambda n: g.input(params[n]))
    h = x
    for i in range(n_hidden):
        h = g.relu(g.add(g.matmul(h, leaf(f"{prefix}.w{i}")), leaf(f"{prefix}.b{i}")))
    out = g.add(g.matmul(h, leaf(f"{prefix}.wout")), leaf(f"{prefix}.bout"))
    return g.tanh(out) if final_tanh else out


def mlp_eval(params: dict, prefix: str, x: np.ndarray, n_hidden: int, final_tanh: bool) -> np.ndarray:
    h = np.atleast_2d(x)
    for i in range(n_hidden):
        h = np.maximum(h @ params[f"{prefix}.w{i}"] + params[f"{prefix}.b{i}"], 0.0)
    out = h @ params[f"{prefix}.wout"] + params[f"{prefix}.bout"]
    return np.tanh(out) if final_tanh else out


def soft_update(target: dict[str, np.ndarray], online: dict[str, np.ndarray], tau: float) -> dict:
    """theta' <- tau*theta + (1-tau)*theta', in place on the target dict."""
    if set(target) != set(online):
        raise AgentError("target and online parameter sets differ")
    for k in target:
        if target[k].shape != online[k].shape:
            raise ad.ShapeError("soft-update", [target[k].shape, online[k].shape], k)
        target[k] *= 1.0 - tau
        target[k] += tau * online[k]
    return target


# ---------------------------------------------------------------------------
# transitions and replay
# ---------------------------------------------------------------------------

@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray    # executed set-points, MW, length n_gen
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayPool:
    """Fixed-capacity ring; oldest transitions are evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise AgentError("replay capacity must be positive")
        self.capacity = capacity
        self._buf: list[Transition] = []
        self._next = 0

    def add(self, t: Transition) -> None:
        if len(self._buf) < self.capacity:
            self._buf.append(t)
        else:
            self._buf[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng) -> list[Transition]:
        if batch_size > len(self._buf):
            raise AgentError(f"cannot sample {batch_size} of {len(self._buf)} transitions")
        idx = rng.choice(len(self._buf), size=batch_size, replace=False)
        return [self._buf[i] for i in idx]

    def __len__(self):
        return len(self._buf)


# ---------------------------------------------------------------------------
# the agent
# ---------------------------------------------------------------------------

@dataclass
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    replay_capacity: int = 20000
    noise_start: float = 0.2
    noise_end: float = 0.02
    hidden: int = 128
    n_hidden: int = 2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    warmup: int | None = None   # defaults to batch_size

    def __post_init__(self):
        # gamma = 0 (pure bandit) is allowed for diagnostics
        if not (0.0 <= self.gamma < 1.0):
            raise AgentError(f"gamma must be in [0,1), got {self.gamma}")
        if not (0.0 < self.tau <= 1.0):
            raise AgentError(f"tau must be in (0,1], got {self.tau}")

    @property
    def warmup_size(self) -> int:
        return self.batch_size if self.warmup is None else self.warmup


class Agent:
    """DDPG learner bound to one case (for the action boxes)."""

    def __init__(self, case: GridCase, forecast_days: int = 10,
                 config: AgentConfig | None = None, seed: int = 0):
        self.case = case
        self.cfg = config or AgentConfig()
        self.forecast_days = forecast_days
        self.seed = seed
        self.scaler = StateScaler(case)
        self.state_dim = state_dim(case, forecast_days)
        self.n_gen = case.n_gen
        lo = np.where(np.array([g.kind == "renewable" for g in case.generators]),
                      0.0, case.p_min_arr())
        hi = case.p_max_arr()
        self.box_lo, self.box_hi = lo, hi
        self.box_mid = 0.5 * (lo + hi)
        self.box_half = 0.5 * (hi - lo)
        rng = np.random.default_rng(seed)
        self.actor = mlp_params(rng, "actor", self.state_dim, self.cfg.hidden,
                                self.cfg.n_hidden, self.n_gen, final_scale=0.1)
        self.critic = mlp_params(rng, "critic", self.state_dim + self.n_gen,
                                 self.cfg.hidden, self.cfg.n_hidden, 1, final_scale=0.1)
        self.actor_target = {k: v.copy() for k, v in self.actor.items()}
        self.critic_target = {k: v.copy() for k, v in self.critic.items()}
        self.actor_opt = ad.Adam(self.cfg.actor_lr)
        self.critic_opt = ad.Adam(self.cfg.critic_lr)
        self.replay = ReplayPool(self.cfg.replay_capacity)
        self.rng = np.random.default_rng((seed, 1))
        self.updates = 0

    # -- action mapping ------------------------------------------------------

    def to_box(self, y: np.ndarray) -> np.ndarray:
        return self.box_mid + y * self.box_half

    def to_norm(self, p: np.ndarray) -> np.ndarray:
        return (p - self.box_mid) / self.box_half

    # -- forward surfaces ------------------------------------------------------

    def actor_norm(self, state: np.ndarray) -> np.ndarray:
        """Squashing-head output in [-1, 1], one row per state."""
        out = mlp_eval(self.actor, "actor", state, self.cfg.n_hidden, final_tanh=True)
        return out[0] if np.ndim(state) == 1 else out

    def actor_forward(self, state: np.ndarray) -> np.ndarray:
        """Deterministic policy: set-points inside each generator's box."""
        return self.to_box(self.actor_norm(state))

    def critic_forward(self, state: np.ndarray, action_mw: np.ndarray) -> np.ndarray | float:
        s = np.atleast_2d(np.asarray(state, dtype=np.float64))
        a = np.atleast_2d(np.asarray(action_mw, dtype=np.float64))
        if a.shape != (s.shape[0], self.n_gen):
            raise AgentError(f"action batch must be {(s.shape[0], self.n_gen)}, got {a.shape}")
        x = np.concatenate([s, self.to_norm(a)], axis=1)
        q = mlp_eval(self.critic, "critic", x, self.cfg.n_hidden, final_tanh=False)[:, 0]
        return float(q[0]) if np.ndim(state) == 1 else q

    # -- losses ----------------------------------------------------------------

    def _batch_arrays(self, batch: list[Transition]):
        s = np.stack([t.state for t in batch])
        a = np.stack([t.action for t in batch])
        r = np.array([t.reward for t in batch])
        s2 = np.stack([t.next_state for t in batch])
        done = np.array([t.done for t in batch], dtype=np.float64)
        return s, a, r, s2, done

    def critic_loss(self, batch: list[Transition]):
        """Mean squared TD error against the target networks.

        Returns (graph, loss tensor); terminal transitions drop the bootstrap.
        """
        if not batch:
            raise AgentError("empty batch")
        s, a, r, s2, done = self._batch_arrays(batch)
        a2 = mlp_eval(self.actor_target, "actor", s2, self.cfg.n_hidden, final_tanh=True)
        q2 = mlp_eval(self.critic_target, "critic", np.concatenate([s2, a2], axis=1),
                      self.cfg.n_hidden, final_tanh=False)[:, 0]
        y = r + self.cfg.gamma * (1.0 - done) * q2
        g = ad.Graph()
        x = g.input(np.concatenate([s, self.to_norm(a)], axis=1))
        q = mlp_graph(g, self.critic, "critic", x, self.cfg.n_hidden,
                      trainable=True, final_tanh=False)
        loss = g.mse_loss(q, g.input(y[:, None]))
        return g, loss

    def actor_loss(self, batch: list[Transition]):
        """Negated mean critic value at on-policy actions.

        The critic enters as frozen inputs, so gradients reach only the actor.
        """
        if not batch:
            raise AgentError("empty batch")
        s, *_ = self._batch_arrays(batch)
        g = ad.Graph()
        st = g.input(s)
        a_norm = mlp_graph(g, self.actor, "actor", st, self.cfg.n_hidden,
                           trainable=True, final_tanh=True)
        x = g.concat_cols(st, a_norm)
        q = mlp_graph(g, self.critic, "critic", x, self.cfg.n_hidden,
                      trainable=False, final_tanh=False)
        loss = g.scale(g.mean_all(q), -1.0)
        return g, loss

    def update(self, batch: list[Transition]) -> tuple[float, float]:
        g, closs = self.critic_loss(batch)
        cgrads = g.backward(closs)
        ad.clip_grad_norm(cgrads, 10.0)
        self.critic_opt.step(self.critic, cgrads)

        g, aloss = self.actor_loss(batch)
        agrads = g.backward(aloss)
        ad.clip_grad_norm(agrads, 10.0)
        self.actor_opt.step(self.actor, agrads)

        soft_update(self.actor_target, self.actor, self.cfg.tau)
        soft_update(self.critic_target, self.critic, self.cfg.tau)
        self.updates += 1
        return float(closs.value), float(aloss.value)

    # -- persistence -------------------------------------------------------------

    _PARAM_SETS = (("online/", "actor"), ("online/", "critic"),
                   ("target/", "actor_target"), ("target/", "critic_target"))

    def save(self, path) -> None:
        params = {}
        for prefix, attr in self._PARAM_SETS:
            for k, v in getattr(self, attr).items():
                params[prefix + attr + "/" + k] = v
        meta = {
            "kind": "agent",
            "forecast_days": self.forecast_days,
            "seed": self.seed,
            "state_dim": self.state_dim,
            "n_gen": self.n_gen,
            "config": {k: getattr(self.cfg, k) for k in self.cfg.__dataclass_fields__},
        }
        ad.save_checkpoint(path, params, meta)

    @classmethod
    def load(cls, path, case: GridCase) -> "Agent":
        params, meta = ad.load_checkpoint(path)
        if meta.get("kind") != "agent":
            raise AgentError(f"{path} is not an agent checkpoint")
        agent = cls(case, meta["forecast_days"], AgentConfig(**meta["config"]), seed=meta["seed"])
        if agent.state_dim != meta["state_dim"]:
            raise AgentError("checkpoint state size does not match the case")
        for prefix, attr in cls._PARAM_SETS:
            d = getattr(agent, attr)
            head = prefix + attr + "/"
            for k, v in params.items():
                if k.startswith(head):
                    d[k[len(head):]] = v
        return agent


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

@dataclass
class StepTrace:
    day: int
    reward: RewardBreakdown
    kept: list[int]
    weights: list[float] | None
    forecast_rmse: float | None
    done_reason: str | None


@dataclass
class EpisodeRecord:
    start_day: int
    steps: int
    total_reward: float
    security_score: float
    avg_cost: float
    avg_urre: float
    done_reason: str | None
    trace: list[StepTrace] = field(default_factory=list)


def run_episode(sim: DispatchSim, agent: Agent, model: ForecastModel,
                necessity: NecessityConfig, start_day: int, *,
                train: bool = False, noise_sigma: float = 0.0, mu: float = 5.0,
                max_steps: int | None = None, collect_trace: bool = False) -> EpisodeRecord:
    """One episode of the decision loop.

    Per step: blend the forecast, assemble the state, query the actor (plus
    exploration noise when training), patch the proposal through the
    necessity mechanism, advance the simulator, store the transition, and,
    when training, update both networks and their targets from a replay batch.
    """
    case = sim.case
    state = sim.reset(start_day)
    pool = SnapshotPool()
    series = sim.series.values

    def forecast_block(day: int, counter: int):
        if agent.forecast_days == 0:
            return None, None
        out, recs = ensemble_forecast(day, pool, model, series[: day + 1], mu=mu, rel_t0=counter)
        return out[: agent.forecast_days], recs

    def block_rmse(day: int, block):
        if block is None or day + len(block) >= series.shape[0]:
            return None
        truth = series[day + 1 : day + 1 + len(block)]
        return float(np.sqrt(np.mean((block - truth) ** 2)))

    counter = 0
    block, recs = forecast_block(state.day, counter)
    s = assemble_state(observe(case, state), block, agent.scaler)
    rewards: list[RewardBreakdown] = []
    trace: list[StepTrace] = []
    reason = None
    while True:
        y = agent.actor_norm(s)
        if train and noise_sigma > 0:
            y = np.clip(y + agent.rng.normal(0.0, noise_sigma, size=y.shape), -1.0, 1.0)
        proposal = agent.to_box(y)
        prev = state.p_mw
        util = np.divide(prev, case.p_max_arr())
        branch_load = generator_branch_load(case, state.solution)
        patched, kept = patch_action(prev, proposal, util, branch_load, necessity)
        fcst_rmse = block_rmse(state.day, block) if collect_trace else None
        step_weights = [r.weight for r in recs] if recs else None
        out = sim.step(state, patched)
        rewards.append(out.reward)
        counter += 1
        if out.done:
            s_next = np.zeros_like(s)
            reason = out.reason
        else:
            block, recs = forecast_block(out.state.day, counter)
            s_next = assemble_state(observe(case, out.state), block, agent.scaler)
        agent.replay.add(Transition(s, patched.copy(), out.reward.reward, s_next, out.done))
        if train and len(agent.replay) >= agent.cfg.warmup_size:
            batch = agent.replay.sample(agent.cfg.batch_size, agent.rng)
            agent.update(batch)
        if collect_trace:
            trace.append(StepTrace(day=out.state.day, reward=out.reward, kept=kept,
                                   weights=step_weights, forecast_rmse=fcst_rmse,
                                   done_reason=out.reason))
        state = out.state
        s = s_next
        if out.done or (max_steps is not None and len(rewards) >= max_steps):
            break
    sc = episode_scores(rewards)
    return EpisodeRecord(start_day=start_day, steps=sc.steps, total_reward=sc.total_reward,
                         security_score=sc.security_score, avg_cost=sc.avg_cost,
                         avg_urre=sc.avg_urre, done_reason=reason, trace=trace)


def random_policy_episode(sim: DispatchSim, agent: Agent, necessity: NecessityConfig,
                          start_day: int, rng, max_steps: int | None = None) -> EpisodeRecord:
    """Baseline: uniform random proposals in the action box, same patching."""
    case = sim.case
    state = sim.reset(start_day)
    rewards = []
    reason = None
    while True:
        proposal = agent.to_box(rng.uniform(-1.0, 1.0, size=case.n_gen))
        util = np.divide(state.p_mw, case.p_max_arr())
        branch_load = generator_branch_load(case, state.solution)
        patched, _ = patch_action(state.p_mw, proposal, util, branch_load, necessity)
        out = sim.step(state, patched)
        rewards.append(out.reward)
        state = out.state
        if out.done:
            reason = out.reason
            break
        if max_steps is not None and len(rewards) >= max_steps:
            break
    sc = episode_scores(rewards)
    return EpisodeRecord(start_day=start_day, steps=sc.steps, total_reward=sc.total_reward,
                         security_score=sc.security_score, avg_cost=sc.avg_cost,
                         avg_urre=sc.avg_urre, done_reason=reason)


def train_agent(sim: DispatchSim, model: ForecastModel, agent: Agent,
                necessity: NecessityConfig, episodes: int, *,
                start_lo: int, start_hi: int, mu: float = 5.0,
                max_steps: int | None = None, seed: int = 0,
                log_hook=None) -> list[EpisodeRecord]:
    """Online training over seeded random start days in [start_lo, start_hi]."""
    if start_hi < start_lo:
        raise AgentError("empty start-day range")
    rng = np.random.default_rng((seed, 77))
    records = []
    for ep in range(episodes):
        frac = ep / max(episodes - 1, 1)
        sigma = agent.cfg.noise_start + frac * (agent.cfg.noise_end - agent.cfg.noise_start)
        start = int(rng.integers(start_lo, start_hi + 1))
        rec = run_episode(sim, agent, model, necessity, start, train=True,
                          noise_sigma=sigma, mu=mu, max_steps=max_steps)
        records.append(rec)
        if log_hook is not None:
            log_hook(ep, rec)
    return records
