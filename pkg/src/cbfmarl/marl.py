"""Parameter-shared PPO for the intersection environment.

One tanh MLP actor maps an agent observation to the mean and log-std of a
diagonal Gaussian; samples are squashed through tanh and scaled into the
actuation box. A centralized critic maps the concatenation of all agents'
observations (agent-id order) to a scalar value shared by every agent's
advantage stream. Networks, backprop and Adam are implemented directly on
numpy arrays: the models are tiny and this keeps training bit-reproducible
for a fixed seed on a fixed machine.
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(RuntimeError):
    """Raised when training produces non-finite losses or parameters."""


@dataclass(frozen=True)
class PpoConfig:
    """PPO hyperparameters (rollout length counts agent-steps)."""

    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 10
    minibatch_size: int = 512
    rollout_steps: int = 4096
    total_env_steps: int = 200_000
    episode_horizon: int = 600
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden_size: int = 64
    log_std_init: float = -0.5
    target_kl: float = 0.02      # early-stop actor epochs past 1.5x this; 0 off
    anneal: bool = True          # decay lr and entropy bonus linearly to zero


# ---------------------------------------------------------------------------
# tiny MLP with explicit backprop
# ---------------------------------------------------------------------------


class Mlp:
    """Two-hidden-layer (by default) tanh network with a linear output."""

    def __init__(self, sizes, rng: np.random.Generator | None = None,
                 out_scale: float = 1.0):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for k in range(len(sizes) - 1):
            fan_in, fan_out = sizes[k], sizes[k + 1]
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))
                if k == len(sizes) - 2:
                    w *= out_scale
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray, keep_cache: bool = False):
        """Batched forward pass; cache holds layer inputs for backprop."""
        h = np.asarray(x, float)
        cache = [h] if keep_cache else None
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k != last:
                h = np.tanh(h)
            if keep_cache:
                cache.append(h)
        return (h, cache) if keep_cache else h

    def backward(self, cache, dout: np.ndarray):
        """Gradients of sum(dout * output) w.r.t. parameters and input."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = np.asarray(dout, float)
        for k in range(len(self.weights) - 1, -1, -1):
            inp = cache[k]
            grads_w[k] = inp.T @ delta
            grads_b[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (1.0 - inp * inp)
        return grads_w, grads_b

    def params(self):
        return self.weights + self.biases

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray) -> None:
        k = 0
        for p in self.params():
            p[...] = vec[k:k + p.size].reshape(p.shape)
            k += p.size


class Adam:
    """Adam over a list of parameter arrays, with global-norm clipping."""

    def __init__(self, params, lr: float, max_grad_norm: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.max_norm = max_grad_norm
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads) -> None:
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
        if not math.isfinite(norm):
            raise NumericalError("non-finite gradient norm")
        scale = self.max_norm / norm if norm > self.max_norm else 1.0
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m[...] = self.b1 * m + (1.0 - self.b1) * g
            v[...] = self.b2 * v + (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------


@dataclass
class PolicyParams:
    """Actor + critic networks and the actuation box they map into."""

    actor: Mlp
    critic: Mlp
    act_low: np.ndarray
    act_high: np.ndarray
    obs_dim: int
    n_agents: int

    @property
    def act_center(self) -> np.ndarray:
        return 0.5 * (self.act_low + self.act_high)

    @property
    def act_half(self) -> np.ndarray:
        return 0.5 * (self.act_high - self.act_low)


def init_policy(obs_dim: int, n_agents: int, act_low, act_high,
                config: PpoConfig, seed: int) -> PolicyParams:
    rng = np.random.default_rng(seed)
    h = config.hidden_size
    actor = Mlp([obs_dim, h, h, 4], rng, out_scale=0.01)
    actor.biases[-1][2:] = config.log_std_init
    critic = Mlp([obs_dim * n_agents, h, h, 1], rng, out_scale=0.01)
    return PolicyParams(actor, critic, np.asarray(act_low, float),
                        np.asarray(act_high, float), obs_dim, n_agents)


def policy_forward(params: PolicyParams, obs: np.ndarray):
    """Distribution parameters for a batch of observations: (mean, log_std),
    log_std clipped to a sane range. Zero weights give mean 0 => actions at
    the box center after squashing."""
    out = params.actor.forward(np.atleast_2d(obs))
    mean = out[:, :2]
    log_std = np.clip(out[:, 2:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def _squash(params: PolicyParams, z: np.ndarray) -> np.ndarray:
    return params.act_center + params.act_half * np.tanh(z)


def log_prob(params: PolicyParams, obs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Log density of the squashed action identified by its pre-squash
    sample z, including the tanh/scale change-of-variables terms."""
    mean, log_std = policy_forward(params, obs)
    z = np.atleast_2d(z)
    std = np.exp(log_std)
    base = -0.5 * ((z - mean) / std) ** 2 - log_std - 0.5 * _LOG_2PI
    squash = np.log1p(-np.tanh(z) ** 2 + 1e-12) + np.log(params.act_half)
    return (base - squash).sum(axis=1)


def sample_actions(params: PolicyParams, obs: np.ndarray,
                   rng: np.random.Generator):
    """Stochastic actions for a batch of observations.

    Returns (actions in the box, pre-squash samples, log-probs).
    """
    mean, log_std = policy_forward(params, obs)
    z = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return _squash(params, z), z, log_prob(params, obs, z)


def mean_actions(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    """Deterministic (squashed mean) actions used for evaluation."""
    mean, _ = policy_forward(params, obs)
    return _squash(params, mean)


def value(params: PolicyParams, joint_obs: np.ndarray) -> np.ndarray:
    """Centralized value of joint observations (batch, n_agents*obs_dim)."""
    return params.critic.forward(np.atleast_2d(joint_obs))[:, 0]


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------


def compute_gae(rewards: np.ndarray, values: np.ndarray, next_values: np.ndarray,
                dones: np.ndarray, truncs: np.ndarray, discount: float,
                lam: float):
    """Generalized advantage estimation over (T, N) agent streams.

    values/next_values are the centralized critic outputs per env step
    (T,); dones flags per-agent respawns (no bootstrap across), truncs
    flags episode-horizon cuts (bootstrap, but stop accumulation).
    Returns (advantages (T, N), returns (T, N)).
    """
    T, N = rewards.shape
    adv = np.zeros((T, N))
    carry = np.zeros(N)
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + discount * next_values[t] * not_done - values[t]
        carry = delta + discount * lam * not_done * (1.0 - truncs[t]) * carry
        adv[t] = carry
    returns = adv + values[:, None]
    return adv, returns


# ---------------------------------------------------------------------------
# PPO update
# ---------------------------------------------------------------------------


@dataclass
class RolloutBuffer:
    """One rollout of T env steps for N agents."""

    obs: np.ndarray             # (T, N, obs_dim)
    z: np.ndarray               # (T, N, 2) pre-squash samples
    logp: np.ndarray            # (T, N)
    rewards: np.ndarray         # (T, N)
    dones: np.ndarray           # (T, N)
    truncs: np.ndarray          # (T,)
    joint_obs: np.ndarray       # (T, N*obs_dim)
    values: np.ndarray          # (T,)
    next_values: np.ndarray     # (T,)


@dataclass
class UpdateStats:
    actor_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float


def ppo_update(params: PolicyParams, opt_actor: Adam, opt_critic: Adam,
               buf: RolloutBuffer, config: PpoConfig,
               rng: np.random.Generator, anneal: float = 1.0) -> UpdateStats:
    """Clipped-surrogate PPO epochs over one rollout.

    anneal scales the entropy bonus (the training loop scales the learning
    rates with the same factor). Actor epochs stop early once the mean
    approximate KL to the rollout policy passes 1.5x target_kl; critic
    epochs always run in full.
    """
    T, N = buf.rewards.shape
    adv, rets = compute_gae(buf.rewards, buf.values, buf.next_values,
                            buf.dones, buf.truncs, config.discount,
                            config.gae_lambda)
    flat_obs = buf.obs.reshape(T * N, -1)
    flat_z = buf.z.reshape(T * N, 2)
    flat_logp = buf.logp.reshape(T * N)
    flat_adv = adv.reshape(T * N)
    flat_adv = (flat_adv - flat_adv.mean()) / (flat_adv.std() + 1e-8)

    n_actor = T * N
    n_critic = T
    mb_actor = min(config.minibatch_size, n_actor)
    mb_critic = max(1, mb_actor // N)
    stats = UpdateStats(0.0, 0.0, 0.0, 0.0)
    n_batches = 0
    actor_done = False

    for _ in range(config.epochs):
        epoch_kl = 0.0
        epoch_batches = 0
        order = rng.permutation(n_actor) if not actor_done else None
        for start in (() if actor_done else range(0, n_actor, mb_actor)):
            idx = order[start:start + mb_actor]
            B = idx.size
            mbo = flat_obs[idx]
            mbz = flat_z[idx]
            out, cache = params.actor.forward(mbo, keep_cache=True)
            mean = out[:, :2]
            raw_ls = out[:, 2:]
            gate = ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)).astype(float)
            log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
            std = np.exp(log_std)
            zn = (mbz - mean) / std
            base = (-0.5 * zn ** 2 - log_std - 0.5 * _LOG_2PI).sum(axis=1)
            squash = (np.log1p(-np.tanh(mbz) ** 2 + 1e-12)
                      + np.log(params.act_half)).sum(axis=1)
            logp_new = base - squash
            ratio = np.exp(logp_new - flat_logp[idx])
            a = flat_adv[idx]
            unclipped = ratio * a
            clipped = np.clip(ratio, 1.0 - config.clip_ratio,
                              1.0 + config.clip_ratio) * a
            take_unclipped = (unclipped <= clipped).astype(float)
            # d(-surrogate)/d logp: flows only through the unclipped branch
            dlogp = -(take_unclipped * ratio * a) / B
            dmean = dlogp[:, None] * (zn / std)
            dlogstd = dlogp[:, None] * (zn * zn - 1.0)
            # entropy bonus of the pre-squash Gaussian: sum(log_std) + const
            dlogstd -= config.entropy_coef * anneal / B
            dout = np.concatenate([dmean, dlogstd * gate], axis=1)
            gw, gb = params.actor.backward(cache, dout)
            opt_actor.step(gw + gb)

            surr = np.minimum(unclipped, clipped)
            stats.actor_loss += float(-surr.mean())
            stats.entropy += float((log_std + 0.5 * (_LOG_2PI + 1.0)).sum(1).mean())
            stats.clip_fraction += float((take_unclipped < 0.5).mean())
            epoch_kl += float(((ratio - 1.0) - np.log(ratio + 1e-12)).mean())
            epoch_batches += 1
            n_batches += 1
        if (not actor_done and config.target_kl > 0 and epoch_batches
                and epoch_kl / epoch_batches > 1.5 * config.target_kl):
            actor_done = True

        vorder = rng.permutation(n_critic)
        for start in range(0, n_critic, mb_critic):
            idx = vorder[start:start + mb_critic]
            B = idx.size
            vout, vcache = params.critic.forward(buf.joint_obs[idx],
                                                 keep_cache=True)
            err = vout[:, 0][:, None] - rets[idx]          # (B, N)
            dv = (config.value_coef * 2.0 * err.sum(axis=1) / (B * N))[:, None]
            gw, gb = params.critic.backward(vcache, dv)
            opt_critic.step(gw + gb)
            stats.value_loss += float(config.value_coef * (err ** 2).mean())

    k = max(1, n_batches)
    stats.actor_loss /= k
    stats.entropy /= k
    stats.clip_fraction /= k
    stats.value_loss /= max(1, config.epochs * math.ceil(n_critic / mb_critic))
    if not (math.isfinite(stats.actor_loss) and math.isfinite(stats.value_loss)):
        raise NumericalError("non-finite loss")
    return stats


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class CurvePoint:
    env_steps: int
    episodes: int
    mean_episode_reward: float   # per-agent episode return, averaged
    mean_step_reward: float      # per agent-step mean over the last rollout
    actor_loss: float
    value_loss: float
    entropy: float


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list = field(default_factory=list)
    env_steps: int = 0


def collect_rollout(env, params: PolicyParams, config: PpoConfig,
                    rng: np.random.Generator, seed_stream, state: dict
                    ) -> RolloutBuffer:
    """Step the environment for one rollout, handling the episode horizon
    (bootstrapped truncation: value of the pre-reset obs is kept)."""
    N = env.n_agents
    T = max(1, config.rollout_steps // N)
    obs_dim = env.obs_dim
    obs = state["obs"]
    buf = RolloutBuffer(
        obs=np.zeros((T, N, obs_dim)), z=np.zeros((T, N, 2)),
        logp=np.zeros((T, N)), rewards=np.zeros((T, N)),
        dones=np.zeros((T, N)), truncs=np.zeros(T),
        joint_obs=np.zeros((T, N * obs_dim)), values=np.zeros(T),
        next_values=np.zeros(T))

    for t in range(T):
        joint = obs.reshape(-1)
        buf.obs[t] = obs
        buf.joint_obs[t] = joint
        buf.values[t] = value(params, joint)[0]
        actions, z, lp = sample_actions(params, obs, rng)
        buf.z[t] = z
        buf.logp[t] = lp
        nobs, rewards, events, info = env.step(actions)
        buf.rewards[t] = [rb.total for rb in rewards]
        buf.dones[t] = info["resets"].astype(float)
        state["ep_reward"] += buf.rewards[t]
        state["ep_len"] += 1
        if state["ep_len"] >= config.episode_horizon:
            buf.truncs[t] = 1.0
            buf.next_values[t] = value(params, nobs.reshape(-1))[0]
            state["episode_returns"].append(float(state["ep_reward"].mean()))
            state["ep_reward"][:] = 0.0
            state["ep_len"] = 0
            nobs = env.reset(int(next(seed_stream)))
        obs = nobs

    # bootstrap the tail and fill next_values from the following step
    tail = value(params, obs.reshape(-1))[0]
    for t in range(T):
        if buf.truncs[t] == 0.0:
            buf.next_values[t] = buf.values[t + 1] if t + 1 < T else tail
    state["obs"] = obs
    return buf


def train(env, config: PpoConfig, seed: int,
          progress=None) -> TrainResult:
    """Run PPO on an IntersectionEnv until total_env_steps.

    Deterministic for a fixed (env config, seed) in single-worker mode. The
    optional ``progress`` callback receives each CurvePoint.
    """
    root = np.random.default_rng(seed)
    init_seed = int(root.integers(2 ** 31))
    act_rng = np.random.default_rng(int(root.integers(2 ** 31)))
    shuffle_rng = np.random.default_rng(int(root.integers(2 ** 31)))
    env_seed_root = np.random.default_rng(int(root.integers(2 ** 31)))

    def seed_stream():
        while True:
            yield env_seed_root.integers(2 ** 31)
    seeds = seed_stream()

    params = init_policy(env.obs_dim, env.n_agents, env.params.input_low,
                         env.params.input_high, config, init_seed)
    opt_a = Adam(params.actor.params(), config.learning_rate,
                 config.max_grad_norm)
    opt_c = Adam(params.critic.params(), config.learning_rate,
                 config.max_grad_norm)

    obs = env.reset(int(next(seeds)))
    state = {"obs": obs, "ep_reward": np.zeros(env.n_agents), "ep_len": 0,
             "episode_returns": []}
    result = TrainResult(params)
    T = max(1, config.rollout_steps // env.n_agents)
    n_updates = max(1, config.total_env_steps // T)

    for upd in range(n_updates):
        frac = 1.0 - upd / n_updates if config.anneal else 1.0
        opt_a.lr = config.learning_rate * frac
        opt_c.lr = config.learning_rate * frac
        buf = collect_rollout(env, params, config, act_rng, seeds, state)
        stats = ppo_update(params, opt_a, opt_c, buf, config, shuffle_rng,
                           anneal=frac)
        result.env_steps += T
        eps = state["episode_returns"]
        point = CurvePoint(
            env_steps=result.env_steps,
            episodes=len(eps),
            mean_episode_reward=float(np.mean(eps[-10:])) if eps else 0.0,
            mean_step_reward=float(buf.rewards.mean()),
            actor_loss=stats.actor_loss,
            value_loss=stats.value_loss,
            entropy=stats.entropy)
        result.curve.append(point)
        if progress is not None:
            progress(point)
    return result


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_policy(path, params: PolicyParams, meta: dict | None = None) -> None:
    """Versioned npz checkpoint with a JSON meta record."""
    arrays = {}
    for tag, net in (("actor", params.actor), ("critic", params.critic)):
        for k, w in enumerate(net.weights):
            arrays[f"{tag}_w{k}"] = w
        for k, b in enumerate(net.biases):
            arrays[f"{tag}_b{k}"] = b
    arrays["act_low"] = params.act_low
    arrays["act_high"] = params.act_high
    doc = dict(meta or {})
    # structural fields always win over caller-provided metadata
    doc.update({"version": CHECKPOINT_VERSION, "obs_dim": params.obs_dim,
                "n_agents": params.n_agents,
                "actor_sizes": params.actor.sizes,
                "critic_sizes": params.critic.sizes})
    arrays["meta_json"] = np.frombuffer(
        json.dumps(doc, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_policy(path) -> tuple[PolicyParams, dict]:
    """Load a checkpoint; raises ValueError on version mismatch."""
    try:
        data = np.load(path)
    except (OSError, zipfile.BadZipFile) as e:
        raise FileNotFoundError(f"cannot read checkpoint {path}: {e}") from None
    meta = json.loads(bytes(data["meta_json"]).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    actor = Mlp(meta["actor_sizes"])
    critic = Mlp(meta["critic_sizes"])
    for tag, net in (("actor", actor), ("critic", critic)):
        for k in range(len(net.weights)):
            net.weights[k] = data[f"{tag}_w{k}"].astype(float)
            net.biases[k] = data[f"{tag}_b{k}"].astype(float)
    params = PolicyParams(actor, critic, data["act_low"].astype(float),
                          data["act_high"].astype(float),
                          int(meta["obs_dim"]), int(meta["n_agents"]))
    return params, meta
