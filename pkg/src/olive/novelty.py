"""Width-based novelty: depth-indexed CLOSE lists and breadth-first IW(w)."""

from __future__ import annotations

from collections import deque

import numpy as np

INF_DEPTH = np.iinfo(np.int64).max


class CloseList:
    """Per-depth records of achieved width-w conditions.

    For w=1 a condition is a single atom and each depth holds one bitset over
    the F atoms.  For w=2 each depth holds an F x F bitset over atom pairs
    (upper triangle).  ``first_depth`` caches, per condition, the shallowest
    depth at which it was recorded, so a lookup against ``C^{<=D}`` is a
    comparison instead of a union over depths.
    """

    def __init__(self, n_atoms: int, width: int = 1):
        if width not in (1, 2):
            raise ValueError("only widths 1 and 2 are supported")
        self.n_atoms, self.width = n_atoms, width
        self.layers: list[np.ndarray] = []
        shape = (n_atoms,) if width == 1 else (n_atoms, n_atoms)
        self.first_depth = np.full(shape, INF_DEPTH, dtype=np.int64)

    def clear(self) -> None:
        self.layers.clear()
        self.first_depth.fill(INF_DEPTH)

    def conditions(self, z: np.ndarray):
        """Index expression selecting the size-w conditions satisfied by ``z``."""
        atoms = np.flatnonzero(z)
        if self.width == 1:
            return atoms
        i, j = np.triu_indices(len(atoms), k=1)
        return atoms[i], atoms[j]

    def layer(self, depth: int) -> np.ndarray:
        while len(self.layers) <= depth:
            self.layers.append(np.zeros(self.first_depth.shape, dtype=bool))
        return self.layers[depth]

    def add(self, z: np.ndarray, depth: int) -> None:
        if depth < 0:
            raise ValueError("depth must be >= 0")
        cond = self.conditions(z)
        self.layer(depth)[cond] = True
        np.minimum.at(self.first_depth, cond, depth)

    def is_novel(self, z: np.ndarray, depth: int, strict: bool = False) -> bool:
        """True iff some condition of ``z`` is absent from every ``C^d`` with ``d <= depth``.

        With ``strict`` the comparison is against ``d < depth`` instead.
        """
        if len(z) != self.n_atoms:
            raise ValueError(f"feature vector has {len(z)} atoms, expected {self.n_atoms}")
        seen = self.first_depth[self.conditions(z)]
        if seen.size == 0:
            return False
        return bool((seen >= depth).any()) if strict else bool((seen > depth).any())


def is_novel_and_update(z: np.ndarray, depth: int, close: CloseList) -> bool:
    """Depth-specific novelty check; registers ``z`` at ``depth`` when it is novel."""
    novel = close.is_novel(z, depth)
    if novel:
        close.add(z, depth)
    return novel


def iw_search(env, extractor, width: int = 1, budget: int = 10_000):
    """Breadth-first IW(w) from the environment's current state.

    Nodes whose novelty exceeds ``width`` under a single flat CLOSE list are
    pruned.  Returns ``(best_return, plan, stats)`` where the return is the
    undiscounted reward sum along ``plan``; stats counts ``generated`` and
    ``expanded`` nodes and ``sim_calls``.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    root_state = env.save()
    root_screen = env.render()
    close = CloseList(extractor.size, width)
    z = extractor(root_screen)
    close.add(z, 0)
    queue = deque([(root_state, (), 0.0)])
    best_return, best_plan = 0.0, ()
    generated = expanded = calls = 0
    n_actions = env.spec.action_count
    while queue and calls < budget:
        state, plan, ret = queue.popleft()
        expanded += 1
        for a in range(n_actions):
            if calls >= budget:
                break
            env.restore(state)
            res = env.step(a)
            calls += 1
            generated += 1
            child_ret = ret + res.reward
            child_plan = plan + (a,)
            if child_ret > best_return:
                best_return, best_plan = child_ret, child_plan
            zc = extractor(res.screen)
            if not close.is_novel(zc, 0):
                continue
            close.add(zc, 0)
            if not res.terminal:
                queue.append((env.save(), child_plan, child_ret))
    env.restore(root_state)
    return best_return, list(best_plan), {"generated": generated, "expanded": expanded, "sim_calls": calls}
