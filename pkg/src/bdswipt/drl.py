"""Actor-critic (DDPG) allocator: geometry in, AP modes and power splits out.

The agent sees the normalized x/y coordinates of every node and emits one raw
vector of M(1 + K + J) logits.  ``map_action`` turns it into an Allocation that
meets the per-AP power budget by construction.

Training reward: harvested power spans several decades across geometries, so
the learner sees sum-HE divided by a per-scenario reference and a violation
penalty of lambda_se / phi_max in the same units.  ``env_step`` itself returns
the exact reward in watts.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .metrics import evaluate
from .precoding import Allocation
from .sca import reference_energy
from .scattering import dft_matrix
from .system_model import SystemConfig, channel_statistics, make_scenario

EVAL_SEED_BASE = 900_000


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------- environment


def map_action(raw, cfg: SystemConfig) -> Allocation:
    """Sigmoid and binarize modes (ties go to I-AP); softmax IR and ER power logits per AP."""
    raw = np.asarray(raw, dtype=float)
    M, K, J = cfg.M, cfg.K, cfg.J
    if raw.shape != (M * (1 + K + J),):
        raise ValueError(f"action must have {M * (1 + K + J)} entries, got {raw.shape}")
    modes = raw[:M]
    a = (1.0 / (1.0 + np.exp(-modes)) >= 0.5).astype(float)
    logits_I = raw[M : M + M * K].reshape(M, K)
    logits_E = raw[M + M * K :].reshape(M, J)
    return Allocation(a, _softmax(logits_I), _softmax(logits_E))


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


@dataclass
class StepInfo:
    sum_he: float
    violated: bool
    train_reward: float


class MdpEnv:
    """Geometry is redrawn on ``reset`` and held for the T steps of an episode."""

    def __init__(self, cfg: SystemConfig, T: int = 50, theta=None):
        self.cfg = cfg
        self.T = T
        self.theta = dft_matrix(cfg.N).theta if theta is None else np.asarray(getattr(theta, "theta", theta))
        self.state_dim = 2 * (cfg.M + 1) + 2 * (cfg.K + cfg.J)
        self.action_dim = cfg.M * (1 + cfg.K + cfg.J)
        self.stats = None
        self.state = None
        self.h_ref = 1.0
        self.t = 0

    def reset(self, scenario_seed: int) -> np.ndarray:
        scen = make_scenario(self.cfg, scenario_seed)
        self.stats = channel_statistics(scen.ls, scen.geo, self.theta, scen.plan, self.cfg)
        self.h_ref = reference_energy(self.stats, self.cfg)
        self.state = scen.geo.state_vector()
        self.t = 0
        return self.state.copy()

    def step(self, action: Allocation):
        if self.stats is None:
            raise RuntimeError("call reset before step")
        cfg = self.cfg
        rep = evaluate(self.stats, action, cfg)
        violated = bool(np.any(rep.sinr < cfg.sinr_min_vec))
        reward = rep.sum_he - cfg.lambda_se * float(violated)
        train = rep.sum_he / self.h_ref - (cfg.lambda_se / cfg.phi_max) * float(violated)
        self.t += 1
        return self.state.copy(), reward, StepInfo(rep.sum_he, violated, train)


def env_step(env: MdpEnv, action: Allocation):
    next_state, reward, _ = env.step(action)
    return next_state, reward


# ---------------------------------------------------------------- learner pieces


@dataclass
class DdpgHyper:
    episodes: int = 200
    steps: int = 50
    batch: int = 128
    gamma: float = 0.99
    tau_soft: float = 1e-3
    lr_actor: float = 1e-4
    lr_critic: float = 5e-3
    buffer_capacity: int = 100_000
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    actor_hidden: tuple = (128, 64, 32)
    critic_hidden: tuple = (128, 64)
    action_scale: float = 3.0  # tanh output times this gives the raw logits

    def validate(self) -> None:
        if min(self.episodes, self.steps, self.batch, self.buffer_capacity) < 1:
            raise ValueError("episode, step, batch and buffer sizes must be positive")
        if not (0 <= self.gamma < 1 and 0 < self.tau_soft <= 1):
            raise ValueError("need 0 <= gamma < 1 and 0 < tau_soft <= 1")
        if min(self.lr_actor, self.lr_critic, self.action_scale) <= 0:
            raise ValueError("learning rates and action scale must be positive")


class ReplayBuffer:
    """Fixed-capacity FIFO ring of (s, a, r, s') tuples."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim), dtype=np.float32)
        self.a = np.zeros((capacity, action_dim), dtype=np.float32)
        self.r = np.zeros(capacity, dtype=np.float32)
        self.s2 = np.zeros((capacity, state_dim), dtype=np.float32)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, s, a, r, s2) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self._size, size=n)
        return (torch.from_numpy(self.s[idx]), torch.from_numpy(self.a[idx]),
                torch.from_numpy(self.r[idx]), torch.from_numpy(self.s2[idx]))


class OUNoise:
    def __init__(self, dim: int, theta: float, sigma: float, rng: np.random.Generator):
        self.theta, self.sigma, self.rng = theta, sigma, rng
        self.x = np.zeros(dim)

    def reset(self) -> None:
        self.x[:] = 0.0

    def sample(self) -> np.ndarray:
        self.x += -self.theta * self.x + self.sigma * self.rng.standard_normal(self.x.shape)
        return self.x.copy()


def _mlp(sizes: Sequence[int], out_act: Optional[nn.Module]) -> nn.Sequential:
    layers: list = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    if out_act is not None:
        layers.append(out_act)
    return nn.Sequential(*layers)


class Actor(nn.Module):
    def __init__(self, state_dim: int, action_dim: int, hidden: Sequence[int]):
        super().__init__()
        self.net = _mlp([state_dim, *hidden, action_dim], nn.Tanh())

    def forward(self, s):
        return self.net(s)


class Critic(nn.Module):
    def __init__(self, state_dim: int, action_dim: int, hidden: Sequence[int]):
        super().__init__()
        self.net = _mlp([state_dim + action_dim, *hidden, 1], None)

    def forward(self, s, a):
        return self.net(torch.cat([s, a], dim=-1)).squeeze(-1)


def soft_update(target: nn.Module, online: nn.Module, tau: float) -> None:
    with torch.no_grad():
        for pt, po in zip(target.parameters(), online.parameters()):
            pt.mul_(1.0 - tau).add_(po, alpha=tau)


def param_distance(a: nn.Module, b: nn.Module) -> float:
    with torch.no_grad():
        return float(torch.sqrt(sum(torch.sum((pa - pb) ** 2) for pa, pb in zip(a.parameters(), b.parameters()))))


@dataclass
class TraceEntry:
    episode: int
    mean_reward: float  # training units
    violation_rate: float


@dataclass
class PolicyBundle:
    actor: Actor
    critic: Critic
    actor_target: Actor
    critic_target: Critic
    hyper: DdpgHyper
    cfg: SystemConfig
    buffer: Optional[ReplayBuffer] = None
    noise: Optional[OUNoise] = None
    reward_trace: list = field(default_factory=list)
    first_episode: list = field(default_factory=list)  # raw actions of episode 0

    @property
    def state_dim(self) -> int:
        return self.actor.net[0].in_features

    @property
    def action_dim(self) -> int:
        return self.actor.net[-2].out_features

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "mean_reward", "violation_rate"])
            for e in self.reward_trace:
                w.writerow([e.episode, repr(e.mean_reward), repr(e.violation_rate)])

    def to_json(self) -> str:
        def dump(net: nn.Module) -> dict:
            return {k: {"shape": list(v.shape), "data": v.detach().double().ravel().tolist()}
                    for k, v in net.state_dict().items()}

        hyper = asdict(self.hyper)
        return json.dumps({
            "hyper": hyper,
            "cfg": self.cfg.to_dict(),
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "actor": dump(self.actor),
            "critic": dump(self.critic),
            "actor_target": dump(self.actor_target),
            "critic_target": dump(self.critic_target),
            "reward_trace": [asdict(e) for e in self.reward_trace],
        })

    @classmethod
    def from_json(cls, text: str) -> "PolicyBundle":
        data = json.loads(text)
        hyper = DdpgHyper(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data["hyper"].items()})
        cfg = SystemConfig.from_dict(data["cfg"])
        sd, ad = data["state_dim"], data["action_dim"]

        def load(net: nn.Module, blob: dict) -> nn.Module:
            net.load_state_dict({k: torch.tensor(v["data"], dtype=torch.float32).reshape(v["shape"])
                                 for k, v in blob.items()})
            return net

        return cls(
            actor=load(Actor(sd, ad, hyper.actor_hidden), data["actor"]),
            critic=load(Critic(sd, ad, hyper.critic_hidden), data["critic"]),
            actor_target=load(Actor(sd, ad, hyper.actor_hidden), data["actor_target"]),
            critic_target=load(Critic(sd, ad, hyper.critic_hidden), data["critic_target"]),
            hyper=hyper,
            cfg=cfg,
            reward_trace=[TraceEntry(**e) for e in data["reward_trace"]],
        )


def _snapshot(net: nn.Module) -> list:
    return [p.detach().clone() for p in net.parameters()]


def _same(net: nn.Module, snap: list) -> bool:
    return all(torch.equal(p, q) for p, q in zip(net.parameters(), snap))


def _update(bundle: PolicyBundle, opt_a, opt_c, batch, check: bool) -> float:
    h = bundle.hyper
    s, a, r, s2 = batch
    if check:
        snaps = (_snapshot(bundle.actor_target), _snapshot(bundle.critic_target))
    with torch.no_grad():
        y = r + h.gamma * bundle.critic_target(s2, bundle.actor_target(s2))
    loss_c = torch.mean((bundle.critic(s, a) - y) ** 2)
    if not torch.isfinite(loss_c):
        raise TrainingDivergedError(f"critic loss is not finite ({float(loss_c)})")
    opt_c.zero_grad()
    loss_c.backward()
    opt_c.step()
    loss_a = -bundle.critic(s, bundle.actor(s)).mean()
    opt_a.zero_grad()
    loss_a.backward()
    opt_a.step()
    if check and not (_same(bundle.actor_target, snaps[0]) and _same(bundle.critic_target, snaps[1])):
        raise AssertionError("target networks changed during a gradient step")
    soft_update(bundle.actor_target, bundle.actor, h.tau_soft)
    soft_update(bundle.critic_target, bundle.critic, h.tau_soft)
    return float(loss_c.detach())


def train_scenario_seed(seed: int, episode: int) -> int:
    return seed * 100_000 + episode


def train_ddpg(env: MdpEnv, hyper: Optional[DdpgHyper] = None, seed: int = 0,
               check_invariants: bool = False) -> PolicyBundle:
    hyper = hyper or DdpgHyper()
    hyper.validate()
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 61])
    sd, ad = env.state_dim, env.action_dim
    actor = Actor(sd, ad, hyper.actor_hidden)
    critic = Critic(sd, ad, hyper.critic_hidden)
    bundle = PolicyBundle(
        actor=actor,
        critic=critic,
        actor_target=copy.deepcopy(actor),
        critic_target=copy.deepcopy(critic),
        hyper=hyper,
        cfg=env.cfg,
        buffer=ReplayBuffer(hyper.buffer_capacity, sd, ad),
        noise=OUNoise(ad, hyper.ou_theta, hyper.ou_sigma, rng),
    )
    opt_a = torch.optim.Adam(actor.parameters(), lr=hyper.lr_actor)
    opt_c = torch.optim.Adam(critic.parameters(), lr=hyper.lr_critic)
    for ep in range(hyper.episodes):
        s = env.reset(train_scenario_seed(seed, ep))
        bundle.noise.reset()
        rewards, viol = [], 0
        for _ in range(hyper.steps):
            with torch.no_grad():
                u = actor(torch.as_tensor(s, dtype=torch.float32)).numpy().astype(float)
            u = np.clip(u + bundle.noise.sample(), -1.0, 1.0)
            if ep == 0:
                bundle.first_episode.append(u.copy())
            s2, _, info = env.step(map_action(hyper.action_scale * u, env.cfg))
            bundle.buffer.push(s, u, info.train_reward, s2)
            rewards.append(info.train_reward)
            viol += info.violated
            if len(bundle.buffer) >= hyper.batch:
                _update(bundle, opt_a, opt_c, bundle.buffer.sample(rng, hyper.batch), check_invariants)
            s = s2
        bundle.reward_trace.append(TraceEntry(ep, float(np.mean(rewards)), viol / hyper.steps))
    return bundle


def act(policy: PolicyBundle, state) -> Allocation:
    with torch.no_grad():
        u = policy.actor(torch.as_tensor(np.asarray(state), dtype=torch.float32)).numpy().astype(float)
    return map_action(policy.hyper.action_scale * u, policy.cfg)


def random_policy(cfg: SystemConfig, seed: int, action_scale: float = 3.0) -> Callable:
    """Uniform raw actions over the same box the actor can reach."""
    rng = np.random.default_rng([seed, 62])
    dim = cfg.M * (1 + cfg.K + cfg.J)
    return lambda state: map_action(action_scale * rng.uniform(-1.0, 1.0, size=dim), cfg)


@dataclass
class EvalResult:
    rewards: np.ndarray  # exact reward (W) per scenario
    sum_he: np.ndarray
    violated: np.ndarray

    @property
    def mean_reward(self) -> float:
        return float(self.rewards.mean())


def evaluate_policy(env: MdpEnv, policy: Callable, n_scenarios: int = 100,
                    seed_base: int = EVAL_SEED_BASE) -> EvalResult:
    """One decision per held-out scenario, scored by the exact reward."""
    rewards, hes, viol = [], [], []
    for i in range(n_scenarios):
        s = env.reset(seed_base + i)
        _, r, info = env.step(policy(s))
        rewards.append(r)
        hes.append(info.sum_he)
        viol.append(info.violated)
    return EvalResult(np.array(rewards), np.array(hes), np.array(viol))


def smoothed(values: Sequence[float], window: int = 20) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    window = max(1, min(window, v.size))
    return np.convolve(v, np.ones(window) / window, mode="valid")


def desk_config(**overrides) -> SystemConfig:
    base = dict(M=6, K=2, J=2, L=16, N=16, prf_e=1)
    base.update(overrides)
    return SystemConfig(**base)
