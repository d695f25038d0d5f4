"""Deterministic pixel-rendered environments with cloneable state.

Screens are ``uint8`` arrays of shape ``(32, 32)`` whose intensity is
``value / 255``.  Every rendered value is one of eight quantized levels.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

SCREEN_SIZE = 32
CELL = 4
N_LEVELS = 8

# level k -> 8-bit value; intensity k/7 rounded to the 8-bit grid
LEVELS = np.array([round(k * 255 / (N_LEVELS - 1)) for k in range(N_LEVELS)], dtype=np.uint8)


class EnvUsageError(ValueError):
    """Raised for invalid actions or stepping a finished episode."""


class EnvStateError(ValueError):
    """Raised when restoring a state that does not belong to this environment."""


@dataclass(frozen=True)
class EnvSpec:
    name: str
    action_count: int
    horizon: int


@dataclass(frozen=True)
class StepResult:
    screen: np.ndarray
    reward: float
    terminal: bool
    sim_calls_consumed: int = 1


def screen_intensity(screen: np.ndarray) -> np.ndarray:
    return screen.astype(np.float64) / 255.0


def write_pgm(path, screen: np.ndarray) -> None:
    """Write a screen as a binary PGM (P5, maxval 255)."""
    screen = np.ascontiguousarray(screen, dtype=np.uint8)
    h, w = screen.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(screen.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or int(parts[3]) != 255:
        raise EnvStateError(f"{path}: not an 8-bit P5 PGM")
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4][: w * h], dtype=np.uint8)
    return data.reshape(h, w).copy()


class Env:
    """Base class.  Subclasses implement ``_reset``, ``_step``, ``_pack``, ``_unpack``."""

    spec: EnvSpec
    magic: bytes = b"ENV0"

    def __init__(self, risk_aversion: float = 1.0):
        if risk_aversion < 1.0:
            raise EnvUsageError("risk_aversion must be >= 1")
        self.risk_aversion = risk_aversion
        self.sim_calls = 0
        self.terminal = False

    def reset(self) -> StepResult:
        self._reset()
        self.terminal = False
        return StepResult(self.render(), 0.0, False, 0)

    def step(self, action: int) -> StepResult:
        if self.terminal:
            raise EnvUsageError("step() called on a terminal state")
        if not 0 <= action < self.spec.action_count:
            raise EnvUsageError(f"action {action} out of range [0, {self.spec.action_count})")
        self.sim_calls += 1
        reward, terminal = self._step(int(action))
        if reward < 0:
            reward *= self.risk_aversion
        self.terminal = terminal
        return StepResult(self.render(), float(reward), terminal, 1)

    def save(self) -> bytes:
        return self.magic + self._pack() + (b"\x01" if self.terminal else b"\x00")

    def restore(self, state: bytes) -> None:
        if not isinstance(state, (bytes, bytearray)) or state[:4] != self.magic:
            raise EnvStateError(f"state does not belong to {type(self).__name__}")
        body, flag = state[4:-1], state[-1:]
        if flag not in (b"\x00", b"\x01"):
            raise EnvStateError("corrupt state: bad terminal flag")
        try:
            self._unpack(bytes(body))
        except struct.error as exc:
            raise EnvStateError(f"corrupt state: {exc}") from None
        self.terminal = flag == b"\x01"

    def render(self) -> np.ndarray:
        raise NotImplementedError

    def _reset(self) -> None:
        raise NotImplementedError

    def _step(self, action: int) -> tuple[float, bool]:
        raise NotImplementedError

    def _pack(self) -> bytes:
        raise NotImplementedError

    def _unpack(self, body: bytes) -> None:
        raise NotImplementedError


class ChainMDP(Env):
    """1-D corridor; reaching the last cell pays 1 and ends the episode.

    Actions: 0 = LEFT, 1 = RIGHT.
    """

    LEFT, RIGHT = 0, 1
    magic = b"CHN1"
    _fmt = struct.Struct("<HH")

    def __init__(self, length: int = 5, risk_aversion: float = 1.0):
        super().__init__(risk_aversion)
        if not 2 <= length <= SCREEN_SIZE:
            raise EnvUsageError(f"ChainMDP length must be in [2, {SCREEN_SIZE}]")
        self.length = length
        self.spec = EnvSpec(f"chain:L={length}", 2, 4 * length)
        self.cell_w = min(CELL, SCREEN_SIZE // length)
        self.pos = 0

    def _reset(self):
        self.pos = 0

    def _step(self, action):
        if action == self.RIGHT:
            self.pos = min(self.pos + 1, self.length - 1)
        else:
            self.pos = max(self.pos - 1, 0)
        if self.pos == self.length - 1:
            return 1.0, True
        return 0.0, False

    def _pack(self):
        return self._fmt.pack(self.length, self.pos)

    def _unpack(self, body):
        length, pos = self._fmt.unpack(body)
        if length != self.length or pos >= length:
            raise EnvStateError("state from a different ChainMDP")
        self.pos = pos

    def render(self) -> np.ndarray:
        return render_chain(self.length, self.pos)


def render_chain(length: int, pos: int) -> np.ndarray:
    cw = min(CELL, SCREEN_SIZE // length)
    img = np.full((SCREEN_SIZE, SCREEN_SIZE), LEVELS[0], dtype=np.uint8)
    top = 12
    img[top : top + CELL, : cw * length] = LEVELS[1]
    img[top : top + CELL, cw * (length - 1) : cw * length] = LEVELS[4]
    img[top : top + CELL, cw * pos : cw * (pos + 1)] = LEVELS[7]
    return img


# Background textures, one per theme.  Each is a function of (row, col)
# returning a level index; all have period dividing CELL so tiles are uniform.
def _texture(theme: int) -> np.ndarray:
    y, x = np.mgrid[0:SCREEN_SIZE, 0:SCREEN_SIZE]
    patterns = [
        lambda: np.zeros_like(x),
        lambda: np.where((x + y) % 2 == 0, 0, 2),
        lambda: np.where((y // 2) % 2 == 0, 1, 3),
        lambda: np.where((x // 2) % 2 == 0, 0, 3),
        lambda: np.where(((x // 2) + (y // 2)) % 2 == 0, 4, 1),
        lambda: np.where((x + 2 * y) % 4 < 2, 2, 4),
        lambda: np.full_like(x, 4),
        lambda: np.where(x % 2 == 0, 3, 1),
    ]
    return LEVELS[patterns[theme]()]


# (wall, gem, hazard, door_closed, door_open) level indices per theme
_PALETTES = [
    (1, 5, 3, 2, 6),
    (3, 6, 4, 1, 5),
    (0, 5, 6, 2, 4),
    (1, 6, 2, 5, 4),
    (2, 6, 0, 3, 5),
    (0, 6, 1, 3, 5),
    (2, 0, 6, 1, 5),
    (5, 4, 6, 2, 0),
]
N_THEMES = len(_PALETTES)


@dataclass(frozen=True)
class RoomLayout:
    gems: tuple[tuple[int, int], ...]
    hazards: frozenset
    start: tuple[int, int]
    door: tuple[int, int]


def _reachable(size: int, start, blocked) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (r + dr, c + dc)
            if 0 <= nxt[0] < size and 0 <= nxt[1] < size and nxt not in blocked and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def make_layout(size: int, room: int, n_gems: int, n_hazards: int, seed: int) -> RoomLayout:
    start, door = (0, 0), (size - 1, size - 1)
    rng = np.random.default_rng([seed, size, room])
    cells = [(r, c) for r in range(size) for c in range(size) if (r, c) not in (start, door)]
    if n_gems + n_hazards > len(cells):
        raise EnvUsageError("too many gems/hazards for the room size")
    while True:
        pick = rng.choice(len(cells), size=n_gems + n_hazards, replace=False)
        chosen = [cells[i] for i in pick]
        gems = tuple(sorted(chosen[:n_gems]))
        hazards = frozenset(chosen[n_gems:])
        reach = _reachable(size, start, hazards)
        if door in reach and all(g in reach for g in gems):
            return RoomLayout(gems, hazards, start, door)


class GemRooms(Env):
    """N sequential GxG rooms.

    Gems pay +1 and vanish.  Hazards pay -1 and end the episode.  The door in
    the far corner opens once every gem in the room is collected; stepping on
    the open door pays +1 and moves to the next room (or ends the episode in
    the last room).  Actions: 0 up, 1 down, 2 left, 3 right.
    """

    MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
    magic = b"GEM1"
    _fmt = struct.Struct("<HHHHHHI")

    def __init__(self, size: int = 6, rooms: int = 1, gems: int = 3, hazards: int = 2,
                 layout_seed: int = 0, risk_aversion: float = 1.0):
        super().__init__(risk_aversion)
        if not 2 <= size <= SCREEN_SIZE // CELL:
            raise EnvUsageError(f"room size must be in [2, {SCREEN_SIZE // CELL}]")
        if rooms < 1:
            raise EnvUsageError("need at least one room")
        if gems > 32:
            raise EnvUsageError("at most 32 gems per room")
        self.size, self.rooms = size, rooms
        self.n_gems, self.n_hazards = gems, hazards
        self.layout_seed = layout_seed
        self.layouts = [make_layout(size, i, gems, hazards, layout_seed) for i in range(rooms)]
        self.spec = EnvSpec(self._name(), 4, 200)
        self._backgrounds = [self._background(i) for i in range(rooms)]
        self.room = 0
        self.row, self.col = self.layouts[0].start
        self.mask = 0

    def _name(self):
        return f"gem_rooms:G={self.size},N={self.rooms}"

    def theme(self, room: int) -> int:
        return 0

    def _background(self, room: int) -> np.ndarray:
        theme = self.theme(room)
        wall = _PALETTES[theme][0]
        img = _texture(theme).copy()
        span = self.size * CELL
        img[span:, :] = LEVELS[wall]
        img[:, span:] = LEVELS[wall]
        return img

    def _reset(self):
        self.room = 0
        self.row, self.col = self.layouts[0].start
        self.mask = 0

    def _step(self, action):
        layout = self.layouts[self.room]
        dr, dc = self.MOVES[action]
        r, c = self.row + dr, self.col + dc
        if not (0 <= r < self.size and 0 <= c < self.size):
            return 0.0, False
        self.row, self.col = r, c
        if (r, c) in layout.hazards:
            return -1.0, True
        full = (1 << len(layout.gems)) - 1
        if (r, c) in layout.gems:
            bit = 1 << layout.gems.index((r, c))
            if not self.mask & bit:
                self.mask |= bit
                return 1.0, False
            return 0.0, False
        if (r, c) == layout.door and self.mask == full:
            if self.room == self.rooms - 1:
                return 1.0, True
            self.room += 1
            self.row, self.col = self.layouts[self.room].start
            self.mask = 0
            return 1.0, False
        return 0.0, False

    def _pack(self):
        return self._fmt.pack(self.size, self.rooms, self.layout_seed, self.room, self.row, self.col, self.mask)

    def _unpack(self, body):
        size, rooms, seed, room, row, col, mask = self._fmt.unpack(body)
        if (size, rooms, seed) != (self.size, self.rooms, self.layout_seed) or room >= rooms:
            raise EnvStateError("state from a different room layout")
        self.room, self.row, self.col, self.mask = room, row, col, mask

    def render(self) -> np.ndarray:
        return self.render_state(self.room, self.row, self.col, self.mask)

    def render_state(self, room: int, row: int, col: int, mask: int) -> np.ndarray:
        """Render an arbitrary (room, position, collected-gems) configuration."""
        layout = self.layouts[room]
        _, gem_l, haz_l, closed_l, open_l = _PALETTES[self.theme(room)]
        img = self._backgrounds[room].copy()
        for r, c in layout.hazards:
            img[r * CELL : (r + 1) * CELL, c * CELL : (c + 1) * CELL] = LEVELS[haz_l]
        for i, (r, c) in enumerate(layout.gems):
            if not mask & (1 << i):
                img[r * CELL + 1 : r * CELL + 3, c * CELL + 1 : c * CELL + 3] = LEVELS[gem_l]
        r, c = layout.door
        full = (1 << len(layout.gems)) - 1
        if mask == full:
            img[r * CELL : (r + 1) * CELL, c * CELL : (c + 1) * CELL] = LEVELS[open_l]
        else:
            cell = img[r * CELL : (r + 1) * CELL, c * CELL : (c + 1) * CELL]
            cell[[0, -1], :] = LEVELS[closed_l]
            cell[:, [0, -1]] = LEVELS[closed_l]
        img[row * CELL : (row + 1) * CELL, col * CELL : (col + 1) * CELL] = LEVELS[7]
        return img


class ThemedRooms(GemRooms):
    """GemRooms where each room has its own background texture and sprite palette."""

    magic = b"THM1"

    def __init__(self, size: int = 8, rooms: int = 4, gems: int = 3, hazards: int = 2,
                 layout_seed: int = 0, risk_aversion: float = 1.0):
        if rooms > N_THEMES:
            raise EnvUsageError(f"ThemedRooms supports at most {N_THEMES} rooms")
        super().__init__(size, rooms, gems, hazards, layout_seed, risk_aversion)

    def _name(self):
        return f"themed_rooms:G={self.size},N={self.rooms}"

    def theme(self, room: int) -> int:
        return room


_ENV_KEYS = {
    "chain": (ChainMDP, {"L": "length", "ra": "risk_aversion"}),
    "gem_rooms": (GemRooms, {"G": "size", "N": "rooms", "gems": "gems", "hazards": "hazards",
                             "seed": "layout_seed", "ra": "risk_aversion"}),
    "themed_rooms": (ThemedRooms, {"G": "size", "N": "rooms", "gems": "gems", "hazards": "hazards",
                                   "seed": "layout_seed", "ra": "risk_aversion"}),
}


def make_env(descriptor: str) -> Env:
    """Build an environment from ``name:key=value,...`` (e.g. ``themed_rooms:G=8,N=4``)."""
    name, _, params = descriptor.strip().partition(":")
    if name not in _ENV_KEYS:
        raise EnvUsageError(f"unknown environment {name!r}; choose from {sorted(_ENV_KEYS)}")
    cls, keys = _ENV_KEYS[name]
    kwargs = {}
    for item in filter(None, (p.strip() for p in params.split(","))):
        key, sep, value = item.partition("=")
        if not sep or key.strip() not in keys:
            raise EnvUsageError(f"bad parameter {item!r} for {name}")
        target = keys[key.strip()]
        kwargs[target] = float(value) if target == "risk_aversion" else int(value)
    return cls(**kwargs)
