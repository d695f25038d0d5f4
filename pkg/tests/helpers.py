"""Independent oracles and toy environments shared by the test modules."""

from __future__ import annotations

import struct
from collections import deque

import numpy as np

from olive.env import Env, EnvSpec


def reachable_graph(env, limit: int = 100_000):
    """Explore every state reachable from reset with save/restore.

    Returns ``(root, edges)`` where ``edges[s]`` lists ``(action, reward, s', terminal)``.
    """
    env.reset()
    root = env.save()
    edges, queue = {}, deque([root])
    while queue:
        s = queue.popleft()
        if s in edges:
            continue
        edges[s] = []
        env.restore(s)
        if env.terminal:
            continue
        for a in range(env.spec.action_count):
            env.restore(s)
            res = env.step(a)
            nxt = env.save()
            edges[s].append((a, res.reward, nxt, res.terminal))
            if nxt not in edges:
                queue.append(nxt)
        if len(edges) > limit:
            raise RuntimeError("state space too large for the oracle")
    return root, edges


def optimal_return(env, horizon: int = 400) -> float:
    """Best undiscounted return within ``horizon`` steps, by finite-horizon value iteration."""
    root, edges = reachable_graph(env)
    value = {s: 0.0 for s in edges}
    for _ in range(horizon):
        new = {}
        for s, out in edges.items():
            new[s] = max((r + (0.0 if term else value[n]) for _, r, n, term in out), default=0.0)
        if new == value:
            break
        value = new
    return value[root]


def shortest_plan(env, goal) -> list[int] | None:
    """Breadth-first action sequence from reset to the first state where ``goal(env)`` holds."""
    env.reset()
    start = env.save()
    parent = {start: None}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        env.restore(s)
        if goal(env):
            plan = []
            while parent[s] is not None:
                s, a = parent[s]
                plan.append(a)
            return plan[::-1]
        if env.terminal:
            continue
        for a in range(env.spec.action_count):
            env.restore(s)
            env.step(a)
            n = env.save()
            if n not in parent:
                parent[n] = (s, a)
                queue.append(n)
    return None


class BanditEnv(Env):
    """One decision with fixed per-action rewards, then terminal."""

    magic = b"BND1"

    def __init__(self, rewards):
        super().__init__()
        self.rewards = list(rewards)
        self.spec = EnvSpec("bandit", len(self.rewards), 1)
        self.chosen = -1

    def _reset(self):
        self.chosen = -1

    def _step(self, a):
        self.chosen = a
        return float(self.rewards[a]), True

    def _pack(self):
        return struct.pack("<i", self.chosen)

    def _unpack(self, body):
        (self.chosen,) = struct.unpack("<i", body)

    def render(self):
        img = np.zeros((32, 32), dtype=np.uint8)
        if self.chosen >= 0:
            img[self.chosen * 4 : self.chosen * 4 + 4, :4] = 255
        return img


class PathEnv(Env):
    """A single forced path: every action moves one step; rewards[t] paid on step t."""

    magic = b"PTH1"

    def __init__(self, rewards, n_actions: int = 2):
        super().__init__()
        self.rewards = list(rewards)
        self.spec = EnvSpec("path", n_actions, len(self.rewards))
        self.t = 0

    def _reset(self):
        self.t = 0

    def _step(self, a):
        r = self.rewards[self.t]
        self.t += 1
        return float(r), self.t == len(self.rewards)

    def _pack(self):
        return struct.pack("<i", self.t)

    def _unpack(self, body):
        (self.t,) = struct.unpack("<i", body)

    def render(self):
        img = np.zeros((32, 32), dtype=np.uint8)
        img[(self.t // 8) * 4 : (self.t // 8) * 4 + 4, (self.t % 8) * 4 : (self.t % 8) * 4 + 4] = 255
        return img


class TerminalEnv(BanditEnv):
    """Terminal immediately at reset."""

    def reset(self):
        res = super().reset()
        self.terminal = True
        return type(res)(res.screen, 0.0, True, 0)


def vae_gradient_errors(probes: int = 100, seed: int = 0, eps: float = 1e-4):
    """Tape gradients of the full VAE loss against central differences on 32x32 inputs.

    Probes are random (parameter, entry) pairs cycling over every parameter
    tensor.  A probe whose perturbation flips some ReLU on/off pattern sits on
    a kink where the central difference is not an estimate of the derivative;
    it is replaced by a fresh draw.  Returns ``(errors, skipped)``.
    """
    from olive import autodiff as ad
    from olive.autodiff import Tape
    from olive.env import ThemedRooms
    from olive.vae import BinaryVAE, elbo_terms

    rng = np.random.default_rng(seed)
    model = BinaryVAE(16, rng, channels=(4, 6), dtype=np.float64)
    for p in model.parameters():
        p.data = p.data + 0.05 * rng.standard_normal(p.shape)
    env = ThemedRooms(8, 4)
    x = model.prepare(np.stack([env.render_state(1, 2, 3, 0), env.render_state(2, 5, 1, 3)])).astype(np.float64)
    noise = rng.logistic(size=(2, 16))

    patterns = []
    relu = ad.relu

    def recording_relu(a):
        out = relu(a)
        patterns.append((np.asarray(out.data) > 0).tobytes())
        return out

    def loss_at():
        patterns.clear()
        ad.relu = recording_relu
        try:
            value = float(elbo_terms(model, x, 0.8, 0.3, noise)[0].data)
        finally:
            ad.relu = relu
        return value, tuple(patterns)

    with Tape() as tape:
        loss, _, _ = elbo_terms(model, x, 0.8, 0.3, noise)
    tape.backward(loss)
    names = list(model.params)
    errors, skipped, k = {}, 0, 0
    while len(errors) < probes:
        name = names[k % len(names)]
        p = model.params[name]
        idx = tuple(int(rng.integers(d)) for d in p.shape)
        old = p.data[idx]
        p.data[idx] = old + eps
        hi, pat_hi = loss_at()
        p.data[idx] = old - eps
        lo, pat_lo = loss_at()
        p.data[idx] = old
        if pat_hi != pat_lo:
            skipped += 1
            continue
        k += 1
        num = (hi - lo) / (2 * eps)
        ana = p.grad[idx]
        errors[(name, idx)] = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
    return errors, skipped


def chi2_sf_even(x: float, df: int) -> float:
    """Upper tail of chi^2 with an even number of degrees of freedom (closed form)."""
    import math

    if df % 2:
        raise ValueError("closed form needs even df")
    half = x / 2
    term, total = 1.0, 1.0
    for i in range(1, df // 2):
        term *= half / i
        total += term
    return math.exp(-half) * total
