"""DQN controller that picks which transformer layers to run for an environment.

Actions are (encoder mask, decoder mask) pairs of non-empty layer subsets.
Index ``i`` maps to ``enc = i // M + 1`` and ``dec = i % M + 1`` where
``M = 2**L - 1``; for L = 4 that gives 225 actions. With a per-stack minimum
above one layer, the masks below the minimum are removed and the remaining
pairs keep the same order.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import channel as ch
from .model import LayerMask, LinkBudget, ModelConfig, forward_end_to_end
from .numerics import autodiff as ad
from .numerics import rng as rngmod
from .numerics.optim import AdamW, ParamStore, cosine_lr
from .train import link_budget, normalize_env


@dataclass(frozen=True)
class DqnConfig:
    state_dim: int = 5
    hidden: int = 128
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 1e-3
    eps_init: float = 1.0
    eps_min: float = 0.01
    eps_decay: float = 0.995
    replay_capacity: int = 100_000
    batch: int = 128
    per_alpha: float = 0.6
    per_beta: float = 0.4
    lambda_mse: float = 1.0
    lambda_layer: float = 0.005
    l_min_per_stack: int = 1
    episodes: int = 3000
    # blocks pushed through the AE per episode; the reward uses their mean MSE
    blocks_per_episode: int = 8
    train_snr_grid: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    deploy_threshold: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("dqn.gamma must be in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("dqn.tau must be in (0, 1]")
        if not 0 <= self.eps_min <= self.eps_init <= 1:
            raise ValueError("dqn.eps_min must not exceed dqn.eps_init, both in [0, 1]")
        if not 0 < self.eps_decay <= 1:
            raise ValueError("dqn.eps_decay must be in (0, 1]")
        for name in ("per_alpha", "per_beta"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"dqn.{name} must be in [0, 1]")
        for name in ("state_dim", "hidden", "replay_capacity", "batch", "episodes", "blocks_per_episode",
                     "l_min_per_stack"):
            if getattr(self, name) < 1:
                raise ValueError(f"dqn.{name} must be >= 1")
        if self.lr <= 0 or self.lambda_mse < 0 or self.lambda_layer < 0 or self.deploy_threshold < 0:
            raise ValueError("dqn.lr must be positive; reward weights and deploy_threshold >= 0")
        if not self.train_snr_grid:
            raise ValueError("dqn.train_snr_grid must not be empty")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_snr_grid"] = list(self.train_snr_grid)
        return d


class ActionSpace:
    def __init__(self, layers: int = 4, l_min: int = 1):
        if not 1 <= l_min <= layers:
            raise ValueError("per-stack minimum must lie in [1, layers]")
        self.layers = layers
        self.l_min = l_min
        subsets = [m for m in range(1, 1 << layers) if bin(m).count("1") >= l_min]
        self.pairs = [(e, d) for e in subsets for d in subsets]
        self._index = {p: i for i, p in enumerate(self.pairs)}
        self.active = np.array([bin(e).count("1") + bin(d).count("1") for e, d in self.pairs])

    def __len__(self) -> int:
        return len(self.pairs)

    def mask(self, index: int) -> LayerMask:
        e, d = self.pairs[int(index)]
        return LayerMask(e, d, self.layers)

    def index(self, mask: LayerMask) -> int:
        return self._index[(mask.enc, mask.dec)]

    @property
    def full_index(self) -> int:
        return self.index(LayerMask.full(self.layers))


# ---------------------------------------------------------------------------
# Q-network


def init_q(cfg: DqnConfig, n_actions: int, rng: np.random.Generator) -> ParamStore:
    sizes = [cfg.state_dim, cfg.hidden, cfg.hidden, n_actions]
    P = ParamStore()
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        P.add(f"q{i}.W", rng.normal(0.0, math.sqrt(2.0 / a) if i < 2 else 1.0 / math.sqrt(a), (a, b)))
        P.add(f"q{i}.b", np.zeros((1, b)))
    return P


def q_forward(P, states) -> ad.Tensor:
    """Action values, shape ``(batch, n_actions)``; ReLU MLP."""
    x = ad.as_tensor(np.atleast_2d(np.asarray(states.data if isinstance(states, ad.Tensor) else states,
                                              dtype=np.float64)))
    n = sum(1 for k in P if k.endswith(".W"))
    for i in range(n):
        x = ad.add(ad.matmul(x, P[f"q{i}.W"]), P[f"q{i}.b"])
        if i < n - 1:
            x = ad.relu(x)
    return x


def q_values(P, states) -> np.ndarray:
    return q_forward(P, states).data


def select_action(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    q = np.asarray(q).reshape(-1)
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def reward(mse, active_layers, cfg: DqnConfig):
    return -(cfg.lambda_mse * np.asarray(mse) + cfg.lambda_layer * np.asarray(active_layers))


# ---------------------------------------------------------------------------
# prioritized replay


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    priority: float = 1.0


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, state_dim: int = 5):
        if capacity < 1:
            raise ValueError("replay capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.priorities = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        if not t.priority > 0:
            raise ValueError("priority must be positive")
        i = self.pos
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.priorities[i] = t.priority
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def max_priority(self) -> float:
        return float(self.priorities[: self.size].max()) if self.size else 1.0

    def sample(self, n: int, rng: np.random.Generator, alpha: float, beta: float):
        """Indices drawn with probability ``p_i^alpha / sum``, plus max-normalized IS weights."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        p = self.priorities[: self.size] ** alpha
        probs = p / p.sum()
        idx = rng.choice(self.size, size=n, replace=True, p=probs)
        w = (self.size * probs[idx]) ** (-beta)
        w /= w.max()
        return idx, w

    def update_priorities(self, idx: np.ndarray, td: np.ndarray) -> None:
        self.priorities[idx] = np.abs(td) + 1e-3


def per_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator, cfg: DqnConfig):
    idx, w = buffer.sample(n, rng, cfg.per_alpha, cfg.per_beta)
    batch = (buffer.states[idx], buffer.actions[idx], buffer.rewards[idx], buffer.next_states[idx])
    return idx, batch, w


def td_targets(Q_target, rewards, next_states, gamma: float) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if gamma == 0.0:
        return r.copy()
    return r + gamma * q_values(Q_target, next_states).max(axis=1)


def td_loss(Q, states, actions, targets, weights) -> tuple[ad.Tensor, np.ndarray]:
    """Importance-weighted mean squared TD error and the raw TD errors."""
    q_sa = ad.take_rows(q_forward(Q, states), actions)
    diff = ad.sub(q_sa, np.asarray(targets, dtype=np.float64)[:, None])
    w = np.asarray(weights, dtype=np.float64)[:, None]
    loss = ad.scale(ad.total(ad.mul(ad.square(diff), w)), 1.0 / len(targets))
    return loss, diff.data[:, 0].copy()


def td_update(Q, Q_target, batch, weights, cfg: DqnConfig, opt: AdamW, lr: float | None = None):
    states, actions, rewards, next_states = batch
    y = td_targets(Q_target, rewards, next_states, cfg.gamma)
    Q.zero_grad()
    loss, td = td_loss(Q, states, actions, y, weights)
    ad.backward(loss)
    opt.step(Q, lr=lr)
    return float(loss.data), td


def soft_update(Q: ParamStore, Q_target: ParamStore, tau: float) -> None:
    for name, t in Q_target.items():
        if tau == 1.0:
            t.data = Q[name].data.copy()
        elif tau > 0.0:
            t.data = tau * Q[name].data + (1.0 - tau) * t.data


def epsilon_at(episode: int, cfg: DqnConfig) -> float:
    return max(cfg.eps_min, cfg.eps_init * cfg.eps_decay**episode)


# ---------------------------------------------------------------------------
# training against a frozen autoencoder


@dataclass
class DqnResult:
    Q: ParamStore
    log_rows: list[tuple[int, float, float, float, float]]
    actions: ActionSpace
    wall_time_s: float

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r[2] for r in self.log_rows])


def evaluate_mask(ae, model_cfg: ModelConfig, mask: LayerMask, bits, states, h, noise, link: LinkBudget):
    res = forward_end_to_end(ae, model_cfg, bits, states, h, link, mask.enc_layers, mask.dec_layers, noise=noise)
    return res.block_mse


def train_dqn(
    ae: ParamStore,
    model_cfg: ModelConfig,
    cfg: DqnConfig,
    mean_h: float,
    consts: ch.ChannelConstants | None = None,
) -> DqnResult:
    """Length-1 episodes: state from a fresh env, one action, MSE-based reward.

    The next state is the environment that starts the following episode.
    Each episode runs ``blocks_per_episode`` blocks under the same env at an
    SNR drawn from ``train_snr_grid``.
    """
    consts = consts or ch.ChannelConstants()
    space = ActionSpace(model_cfg.layers, cfg.l_min_per_stack)
    seed = cfg.seed
    Q = init_q(cfg, len(space), rngmod.stream(seed, rngmod.INIT + 1))
    Q_target = Q.copy()
    opt = AdamW(lr=cfg.lr, weight_decay=0.0)
    buf = ReplayBuffer(cfg.replay_capacity, cfg.state_dim)
    links = {snr: link_budget(snr, mean_h, consts) for snr in cfg.train_snr_grid}

    def env_for(ep):
        return ch.sample_env(rngmod.stream(seed, rngmod.DQN + 2 * ep))

    rows = []
    t0 = time.perf_counter()
    env = env_for(0)
    state = normalize_env(env)
    for ep in range(cfg.episodes):
        g = rngmod.stream(seed, rngmod.DQN + 2 * ep + 1)
        eps = epsilon_at(ep, cfg)
        a = select_action(q_values(Q, state), eps, g)
        mask = space.mask(a)
        snr = cfg.train_snr_grid[int(g.integers(len(cfg.train_snr_grid)))]
        n = cfg.blocks_per_episode
        bits = g.integers(0, 2, size=(n, model_cfg.N)).astype(np.float64)
        envs = ch.EnvBatch.from_envs([env] * n)
        h = np.asarray(ch.sample_channel(g, envs, consts).h, dtype=np.float64)
        noise = g.standard_normal((n, model_cfg.K))
        states = np.repeat(state[None, :], n, axis=0)
        mse = float(np.mean(evaluate_mask(ae, model_cfg, mask, bits, states, h, noise, links[snr])))
        r = float(reward(mse, mask.active, cfg))

        next_env = env_for(ep + 1)
        next_state = normalize_env(next_env)
        buf.add(Transition(state, a, r, next_state, buf.max_priority()))
        loss = float("nan")
        if len(buf) >= cfg.batch:
            idx, batch, w = per_sample(buf, cfg.batch, g, cfg)
            lr = cosine_lr(ep, cfg.episodes, cfg.lr)
            loss, td = td_update(Q, Q_target, batch, w, cfg, opt, lr)
            buf.update_priorities(idx, td)
            soft_update(Q, Q_target, cfg.tau)
        rows.append((ep, eps, r, float(mask.active), loss))
        env, state = next_env, next_state
    return DqnResult(Q, rows, space, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# deployment


@dataclass
class DeploySelector:
    """Greedy mask choice, re-evaluated only when the state moves.

    A cached decision is kept until some normalized state component differs
    from the cached state by more than ``threshold``.
    """

    Q: ParamStore
    space: ActionSpace
    threshold: float = 0.1
    evaluations: int = 0
    _state: np.ndarray | None = field(default=None, repr=False)
    _action: int = -1

    def select(self, state) -> LayerMask:
        s = np.asarray(state, dtype=np.float64).reshape(-1)
        if self._state is None or np.max(np.abs(s - self._state)) > self.threshold:
            self._action = int(np.argmax(q_values(self.Q, s)))
            self._state = s.copy()
            self.evaluations += 1
        return self.space.mask(self._action)


def deploy_select(state, Q: ParamStore, space: ActionSpace | None = None) -> LayerMask:
    space = space or ActionSpace()
    return space.mask(int(np.argmax(q_values(Q, state))))
