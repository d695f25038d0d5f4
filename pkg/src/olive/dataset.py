"""Screen-dataset curation: random-k, uncertainty-ranked top-k, and reservoir sampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .vae import score_uncertainty

MODES = ("passive", "active", "reservoir")
_HEADER = struct.Struct("<IIII")


@dataclass
class DatasetConfig:
    k: int = 500
    cap: int = 15000
    mode: str = "passive"
    score_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown dataset mode {self.mode!r}")
        if self.k < 0 or self.cap < 1 or self.k > self.cap:
            raise ValueError("need 0 <= k <= cap and cap >= 1")


def select_passive(screens: Sequence[np.ndarray], k: int, rng: np.random.Generator) -> list[int]:
    """Indices of ``k`` screens drawn uniformly without replacement (all if fewer)."""
    n = len(screens)
    if k <= 0 or n == 0:
        return []
    if n <= k:
        return list(range(n))
    return sorted(int(i) for i in rng.choice(n, size=k, replace=False))


bootstrap_first_episode = select_passive


def select_active(screens: Sequence[np.ndarray], k: int, model, tau: float, beta: float,
                  seed: int = 0, prior: float = 0.5) -> list[int]:
    """Indices of the ``k`` highest-loss screens under ``model``.

    Byte-identical screens are collapsed onto their first occurrence before
    ranking; the sort is stable, so equal scores keep the earliest step.
    """
    if k <= 0 or len(screens) == 0:
        return []
    first: dict[bytes, int] = {}
    for i, s in enumerate(screens):
        first.setdefault(np.ascontiguousarray(s).tobytes(), i)
    unique = list(first.values())
    if len(unique) <= k:
        return unique
    scores = score_uncertainty(np.stack([screens[i] for i in unique]), model, tau, beta, seed, prior)
    order = np.argsort(-scores, kind="stable")[:k]
    return [unique[i] for i in order]


def reservoir_update(stream: Iterable, cap: int, rng: np.random.Generator,
                     reservoir: list | None = None, seen: int = 0) -> tuple[list, int]:
    """Algorithm R.  Continues an existing ``reservoir`` that has already seen ``seen`` items.

    Returns ``(reservoir, seen)`` so a stream can be fed in several pieces.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    reservoir = [] if reservoir is None else reservoir
    for item in stream:
        seen += 1
        if len(reservoir) < cap:
            reservoir.append(item)
        else:
            j = int(rng.integers(seen))
            if j < cap:
                reservoir[j] = item
    return reservoir, seen


@dataclass
class ScreenDataset:
    """Append-only screen store with per-screen (episode, step) provenance."""

    cap: int
    screens: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def __len__(self):
        return len(self.screens)

    @property
    def room(self) -> int:
        return self.cap - len(self.screens)

    def extend(self, screens: Sequence[np.ndarray], episode: int, steps: Sequence[int]) -> int:
        """Append as many of ``screens`` as fit; returns the number added."""
        take = min(self.room, len(screens))
        for s, step in zip(screens[:take], steps[:take]):
            self.screens.append(np.asarray(s, dtype=np.uint8))
            self.provenance.append((episode, int(step)))
        return take

    def add_episode(self, screens: Sequence[np.ndarray], episode: int, config: DatasetConfig,
                    rng: np.random.Generator, model=None, tau: float = 0.5, beta: float = 1e-4,
                    k: int | None = None) -> int:
        """Select up to ``k`` (default ``config.k``) screens from one episode and append them."""
        k = min(config.k if k is None else k, self.room)
        if config.mode == "active" and model is not None:
            idx = select_active(screens, k, model, tau, beta, config.score_seed)
        else:
            idx = select_passive(screens, k, rng)
        return self.extend([screens[i] for i in idx], episode, idx)

    def top_up(self, screens: Sequence[np.ndarray], episode: int, config: DatasetConfig,
               rng: np.random.Generator, model=None, tau: float = 0.5, beta: float = 1e-4) -> int:
        """Fill the remaining room from one episode's screens (the budget-tail rule).

        Screens already taken from this episode are skipped.
        """
        taken = {step for ep, step in self.provenance if ep == episode}
        rest = [i for i in range(len(screens)) if i not in taken]
        k = min(self.room, len(rest))
        sub = [screens[i] for i in rest]
        if config.mode == "active" and model is not None:
            idx = select_active(sub, k, model, tau, beta, config.score_seed)
            # dedup can return fewer than k; fill with the remaining screens in order
            if len(idx) < k:
                chosen = set(idx)
                idx = idx + [i for i in range(len(sub)) if i not in chosen][: k - len(idx)]
        else:
            idx = select_passive(sub, k, rng)
        return self.extend([sub[i] for i in idx], episode, [rest[i] for i in idx])

    def array(self) -> np.ndarray:
        if not self.screens:
            return np.zeros((0, 0, 0), dtype=np.uint8)
        return np.stack(self.screens)


def save_dataset(screens: Sequence[np.ndarray], path) -> None:
    """Header (count, width, height, channels) as LE uint32, then packed uint8 pixels."""
    arr = np.asarray(screens, dtype=np.uint8)
    if arr.ndim != 3:
        raise ValueError("expected an (N, H, W) stack of screens")
    n, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(n, w, h, 1))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_dataset(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated dataset header")
    n, w, h, c = _HEADER.unpack_from(raw)
    if c != 1:
        raise ValueError(f"{path}: only single-channel screens are supported")
    body = raw[_HEADER.size:]
    if len(body) != n * w * h:
        raise ValueError(f"{path}: expected {n * w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(n, h, w).copy()
