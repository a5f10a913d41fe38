"""Multi-agent learners: local DQN agents, the periodic global agent, baselines.

Algorithms:

* ``MAGAR``     local DQN agents on individual rewards; every ``t_q`` slots a
                global agent with one head per local agent dictates the joint
                action and learns from the system energy efficiency with a
                summed (value-decomposition) target.
* ``MADQN``     local DQN agents sharing the system energy efficiency reward.
* ``MADQN-LR``  local DQN agents on individual rewards, no global agent.
* ``QLEARNING`` tabular Q-learning on individual rewards.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .channel import sample_channel
from .env import BSRules, Environment, JointState, SurfaceRules, constraint_violations
from .nn import Adam, MomentumSGD, QNetwork, ReplayBuffer, snapshot_target, td_loss_and_gradient
from .scenario import Geometry, RngStreams, ScenarioConfig, sample_user_positions

log = logging.getLogger(__name__)

ALGORITHMS = ("MAGAR", "MADQN", "MADQN-LR", "QLEARNING")
BASELINES = ("ES", "MS", "RIS", "NONE")
POLICIES = ("ALL_ON", "HALF_ON", "OPTIMIZED")


@dataclass(frozen=True)
class Hyperparams:
    t_q: int = 20
    epsilon: float = 0.3
    learning_rate: float = 0.1  # tabular update weight
    discount: float = 0.9
    slots: int = 200
    episodes: int = 400
    hidden: tuple[int, ...] = (128, 128)
    step_size: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "momentum"  # or "adam"
    max_grad_norm: float | None = 10.0
    batch_size: int = 64
    replay_capacity: int = 100_000
    target_every: int = 100
    refade: bool = True
    power_floor_watt: float = 1e-3
    beta_step: float = 0.1
    phase_levels: int = 16
    bs_step_frac: float = 0.1
    reward_scale: float | None = None  # None: 1 / (bandwidth * total users)
    init: str = "he"  # or "zero"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.t_q < 1:
            raise ValueError("t_q must be positive")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")
        if self.slots < 1 or self.episodes < 1:
            raise ValueError("need at least one slot and one episode")
        if self.optimizer not in ("momentum", "adam"):
            raise ValueError(f"optimizer must be 'momentum' or 'adam', got {self.optimizer!r}")
        if self.init not in ("he", "zero"):
            raise ValueError(f"init must be 'he' or 'zero', got {self.init!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def arbitrate(t: int, local_actions, global_action, t_q: int):
    """Global agent acts on slots that are multiples of ``t_q``."""
    if t_q <= 0:
        raise ValueError("t_q must be positive")
    return global_action if t % t_q == 0 else local_actions


def select_action(qvalues: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; ties go to the lowest index."""
    q = np.asarray(qvalues)
    if len(q) == 0:
        raise ValueError("empty action catalogue")
    if rng.random() < epsilon:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def tabular_update(qtable: dict, s, a: int, r: float, s2, learning_rate: float,
                   discount: float, n_actions: int) -> dict:
    """Blend Q(s, a) toward ``r + discount * max Q(s2, .)``; unseen rows are zero."""
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    row = qtable.get(s)
    if row is None:
        row = qtable[s] = np.zeros(n_actions)
    nxt = qtable.get(s2)
    best = 0.0 if nxt is None else float(nxt.max())
    row[a] = (1 - learning_rate) * row[a] + learning_rate * (r + discount * best)
    return qtable


def global_target(next_head_q: Sequence[np.ndarray], reward, discount: float):
    """Global reward plus the discounted sum of each head's best next value.

    Each element of ``next_head_q`` is one head's Q-values, shape (A,) or (B, A).
    """
    total = sum(np.max(q, axis=-1) for q in next_head_q)
    return reward + discount * total


@dataclass
class TrainRecord:
    episode: int
    slot: int
    algorithm: str
    agent_rewards: tuple[float, ...]
    global_reward: float
    rate: float
    power: float
    ee: float
    actions: tuple[int, ...]
    by_global: bool = False
    violations: int = 0


@dataclass
class TrainResult:
    records: list[TrainRecord]
    status: str = "ok"
    diagnostic: str = ""
    global_executions: list[int] = field(default_factory=list)  # per episode

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def window_mean(records: Sequence[TrainRecord], which: str = "last", frac: float = 0.1,
                attr: str = "global_reward") -> float:
    """Mean of ``attr`` over the first or last ``frac`` of logged slots."""
    if not records:
        return float("nan")
    n = max(1, math.ceil(frac * len(records)))
    chunk = records[-n:] if which == "last" else records[:n]
    return float(np.mean([getattr(r, attr) for r in chunk]))


def make_rules(config: ScenarioConfig, hyper: Hyperparams, baseline: str = "ES",
               policy: str = "OPTIMIZED", rng: np.random.Generator | None = None):
    """Surface/BS rules for an architecture baseline and an on-off policy."""
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline {baseline!r}")
    if policy not in POLICIES:
        raise ValueError(f"unknown on-off policy {policy!r}")
    n = config.n_elements
    surfaces = []
    for _ in range(config.v_surfaces):
        if baseline == "NONE":
            alpha = (0,) * n
        elif policy == "ALL_ON":
            alpha = (1,) * n
        elif policy == "HALF_ON":
            gen = rng if rng is not None else np.random.default_rng(0)
            on = np.zeros(n, int)
            on[gen.choice(n, n // 2, replace=False)] = 1
            alpha = tuple(int(x) for x in on)
        else:
            alpha = None
        mode = "ES" if baseline == "NONE" else baseline
        surfaces.append(SurfaceRules(n, mode=mode, alpha_fixed=alpha, beta_step=hyper.beta_step,
                                     phase_levels=hyper.phase_levels))
    bs = BSRules(config.m_antennas, config.users_per_region, config.p_max_watt, hyper.bs_step_frac)
    return surfaces, bs


def _optimizer(net: QNetwork, hyper: Hyperparams):
    if hyper.optimizer == "adam":
        return Adam(net, hyper.step_size, max_grad_norm=hyper.max_grad_norm)
    return MomentumSGD(net, hyper.step_size, hyper.momentum, hyper.max_grad_norm)


def _init_rng(hyper: Hyperparams, rng: RngStreams):
    return rng["weights"] if hyper.init == "he" else None


class DQNAgent:
    def __init__(self, in_dim: int, n_actions: int, hyper: Hyperparams, rng: RngStreams):
        self.net = QNetwork([in_dim, *hyper.hidden, n_actions], _init_rng(hyper, rng))
        self.target = snapshot_target(self.net)
        self.opt = _optimizer(self.net, hyper)
        buf_rng = np.random.default_rng(int(rng["replay"].integers(2 ** 63)))
        self.buffer = ReplayBuffer(hyper.replay_capacity, in_dim, buf_rng)
        self.hyper = hyper

    def q(self, s: np.ndarray) -> np.ndarray:
        return self.net(s)

    def learn(self) -> float | None:
        h = self.hyper
        if len(self.buffer) < h.batch_size:
            return None
        loss, grads = td_loss_and_gradient(self.net, self.target, self.buffer.sample(h.batch_size),
                                           h.discount)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite TD loss {loss}")
        self.opt.step(grads)
        if self.net.steps % h.target_every == 0:
            self.target = snapshot_target(self.net)
        return loss


class GlobalAgent:
    """Shared trunk with one output head per local agent."""

    def __init__(self, in_dim: int, head_sizes: Sequence[int], hyper: Hyperparams, rng: RngStreams):
        self.head_sizes = list(head_sizes)
        self.offsets = np.concatenate([[0], np.cumsum(self.head_sizes)[:-1]]).astype(int)
        self.net = QNetwork([in_dim, *hyper.hidden, int(sum(head_sizes))], _init_rng(hyper, rng))
        self.target = snapshot_target(self.net)
        self.opt = _optimizer(self.net, hyper)
        buf_rng = np.random.default_rng(int(rng["replay"].integers(2 ** 63)))
        self.buffer = ReplayBuffer(hyper.replay_capacity, in_dim, buf_rng,
                                   action_shape=(len(head_sizes),))
        self.hyper = hyper

    def heads(self, q: np.ndarray) -> list[np.ndarray]:
        return [q[..., o:o + n] for o, n in zip(self.offsets, self.head_sizes)]

    def act(self, s: np.ndarray, epsilon: float, rng: np.random.Generator) -> list[int]:
        return [select_action(h, epsilon, rng) for h in self.heads(self.net(s))]

    def learn(self) -> float | None:
        h = self.hyper
        if len(self.buffer) < h.batch_size:
            return None
        b = self.buffer.sample(h.batch_size)
        psi = global_target(self.heads(self.target(b.next_states)), b.rewards, h.discount)
        loss, grads = self.net.regression_loss_and_gradient(b.states, b.actions + self.offsets, psi)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite global loss {loss}")
        self.opt.step(grads)
        if self.net.steps % h.target_every == 0:
            self.target = snapshot_target(self.net)
        return loss


def train(config: ScenarioConfig, hyper: Hyperparams, algorithm: str, rng: RngStreams | int,
          baseline: str = "ES", policy: str = "OPTIMIZED", geometry: Geometry | None = None,
          check_constraints: bool = False) -> TrainResult:
    """Run ``hyper.episodes`` episodes of ``hyper.slots`` slots and log every slot.

    Channels are redrawn at each episode start (unless ``refade`` is off) and
    every agent restarts from its initial lattice point.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if not isinstance(rng, RngStreams):
        rng = RngStreams(rng)
    surface_rules, bs_rules = make_rules(config, hyper, baseline, policy, rng["onoff"])
    if geometry is None:
        geometry = sample_user_positions(config, rng)
    scale = hyper.reward_scale or 1.0 / (config.bandwidth_hz * config.total_users)
    explore = rng["exploration"]

    env = Environment(config, geometry, sample_channel(geometry, config, rng), surface_rules,
                      bs_rules, hyper.power_floor_watt)
    catalogues = env.catalogues()
    n_agents = env.n_agents
    dims = [env.rules(a).feature_dim for a in range(n_agents)]

    tabular = algorithm == "QLEARNING"
    if tabular:
        tables: list[dict] = [{} for _ in range(n_agents)]
    else:
        agents = [DQNAgent(dims[a], len(catalogues[a]), hyper, rng) for a in range(n_agents)]
    glob = GlobalAgent(sum(dims), [len(c) for c in catalogues], hyper, rng) if algorithm == "MAGAR" else None
    shared_reward = algorithm == "MADQN"

    records: list[TrainRecord] = []
    executions: list[int] = []
    try:
        for ep in range(hyper.episodes):
            if ep > 0 and hyper.refade:
                env.realization = sample_channel(geometry, config, rng)
            state = env.initial_state()
            thetas = env.thetas(state)
            feats = [env.features(state, a) for a in range(n_agents)]
            n_global = 0
            for t in range(hyper.slots):
                if tabular:
                    keys = [env.agent_lattice(state, a).key() for a in range(n_agents)]
                    local = [select_action(tables[a].get(keys[a], np.zeros(len(catalogues[a]))),
                                           hyper.epsilon, explore) for a in range(n_agents)]
                else:
                    local = [select_action(agents[a].q(feats[a]), hyper.epsilon, explore)
                             for a in range(n_agents)]
                by_global = False
                if glob is not None and t % hyper.t_q == 0:
                    gfeat = np.concatenate(feats)
                    chosen = arbitrate(t, local, glob.act(gfeat, hyper.epsilon, explore), hyper.t_q)
                    by_global = True
                    n_global += 1
                else:
                    chosen = local

                nxt = state
                for a in range(n_agents):
                    nxt = env.apply(nxt, a, catalogues[a][chosen[a]])
                local_r = env.local_rewards(state, nxt, thetas)
                thetas_next = env.thetas(nxt)
                snap = env.snapshot(nxt, thetas_next)
                feats_next = [env.features(nxt, a) for a in range(n_agents)]
                violations = len(constraint_violations(env, nxt)) if check_constraints else 0

                agent_r = np.full(n_agents, snap.ee) if shared_reward else local_r
                if tabular:
                    keys_next = [env.agent_lattice(nxt, a).key() for a in range(n_agents)]
                    for a in range(n_agents):
                        tabular_update(tables[a], keys[a], chosen[a], agent_r[a] * scale, keys_next[a],
                                       hyper.learning_rate, hyper.discount, len(catalogues[a]))
                else:
                    for a in range(n_agents):
                        agents[a].buffer.push(feats[a], chosen[a], agent_r[a] * scale, feats_next[a])
                        agents[a].learn()
                if glob is not None:
                    if by_global:
                        glob.buffer.push(np.concatenate(feats), chosen, snap.ee * scale,
                                         np.concatenate(feats_next))
                    glob.learn()

                records.append(TrainRecord(
                    episode=ep, slot=t, algorithm=algorithm,
                    agent_rewards=tuple(float(x) for x in agent_r),
                    global_reward=snap.ee, rate=snap.rate, power=snap.power, ee=snap.ee,
                    actions=tuple(int(c) for c in chosen), by_global=by_global,
                    violations=violations,
                ))
                state, thetas, feats = nxt, thetas_next, feats_next
            executions.append(n_global)
    except FloatingPointError as exc:
        log.error("run diverged: %s", exc)
        return TrainResult(records, status="diverged", diagnostic=str(exc), global_executions=executions)
    return TrainResult(records, global_executions=executions)

