"""The cooperative game over feature-map positions.

Players are the spatial positions (i, j) of the last-conv feature map, shared
across channels. The worth of a coalition S is the model's probability of the
target class when every position outside S is replaced by a baseline value
(per-channel spatial mean by default). Scoring goes through a pluggable
oracle: either the in-process tail of a loaded network, or an external child
process speaking newline-delimited JSON over stdio:

    request   {"id": u64, "op": "score", "class": int,
               "map": {"shape": [C,h,w], "data": [floats]}}
    response  {"id": u64, "prob": float}  or  {"id": u64, "error": string}
    handshake: engine sends {"op":"hello","version":1}; the adapter replies
               {"version":1,"classes":K,"map_shape":[C,h,w]}.

Requests may be pipelined; responses may arrive out of order (matched by id).
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import OracleError, ShapeError
from .model import NetworkSplit, forward_tail
from .tensor import Tensor

__all__ = [
    "PlayerSet",
    "Coalition",
    "Game",
    "InProcessOracle",
    "ExternalOracle",
    "make_game",
    "mask_map",
    "worth",
    "worth_batch",
    "worth_chain",
    "BASELINE_MODES",
]

BASELINE_MODES = ("per-channel", "global")

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class PlayerSet:
    """The h x w grid of players; index <-> (i, j) is the row-major bijection."""

    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ShapeError(f"player grid must be at least 1x1, got {self.h}x{self.w}")

    @property
    def n(self) -> int:
        return self.h * self.w

    def index(self, i: int, j: int) -> int:
        if not (0 <= i < self.h and 0 <= j < self.w):
            raise ShapeError(f"position ({i},{j}) outside {self.h}x{self.w} grid")
        return i * self.w + j

    def position(self, p: int) -> tuple[int, int]:
        if not 0 <= p < self.n:
            raise ShapeError(f"player {p} outside 0..{self.n - 1}")
        return divmod(p, self.w)


@dataclass(frozen=True)
class Coalition:
    """A subset of players, stored as a bitset (bit p set means player p in S)."""

    mask: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ShapeError(f"coalition needs at least 1 player slot, got n={self.n}")
        if not 0 <= self.mask < (1 << self.n):
            raise ShapeError(f"bitmask {self.mask:#x} does not fit {self.n} players")

    @classmethod
    def empty(cls, n: int) -> "Coalition":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls((1 << n) - 1, n)

    @classmethod
    def from_players(cls, players, n: int) -> "Coalition":
        mask = 0
        for p in players:
            if not 0 <= p < n:
                raise ShapeError(f"player {p} outside 0..{n - 1}")
            mask |= 1 << p
        return cls(mask, n)

    def contains(self, p: int) -> bool:
        return bool((self.mask >> p) & 1)

    def with_player(self, p: int) -> "Coalition":
        return Coalition(self.mask | (1 << p), self.n)

    def without_player(self, p: int) -> "Coalition":
        return Coalition(self.mask & ~(1 << p), self.n)

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    def players(self) -> tuple[int, ...]:
        return tuple(p for p in range(self.n) if (self.mask >> p) & 1)


# --- scoring backends -------------------------------------------------------


class InProcessOracle:
    """Scores feature maps through the tail of a loaded network."""

    picklable = True

    def __init__(self, net: NetworkSplit):
        self.net = net
        self.map_shape = net.feature_shape
        self.num_classes = net.num_classes
        # the gap->dense->softmax tail is affine in the map up to the softmax,
        # which makes prefix chains cheap (see score_chain)
        kinds = tuple(l.kind for l in net.tail_layers)
        self._affine_tail = kinds == ("gap", "dense", "softmax")

    def _check_class(self, target_class: int) -> None:
        if not 0 <= target_class < self.num_classes:
            raise ValueError(
                f"class {target_class} outside 0..{self.num_classes - 1}"
            )

    def score(self, feature_map: Tensor, target_class: int) -> float:
        self._check_class(target_class)
        return float(forward_tail(self.net, feature_map).array[target_class])

    def score_batch(self, maps: list[Tensor], target_class: int) -> list[float]:
        return [self.score(m, target_class) for m in maps]

    def score_chain(self, feature_map, baseline, order, target_class):
        """Worths along the prefix chain of ``order``, or None if no fast path.

        When the tail is exactly gap -> dense -> softmax, adding player p to a
        coalition shifts the pooled vector by (A[:,p] - baseline)/n, so the
        logits along a permutation are a base vector plus a running sum of
        per-player deltas. One matrix product and a cumulative sum replace
        n+1 tail forwards.
        """
        if not self._affine_tail:
            return None
        self._check_class(target_class)
        a = feature_map.array
        c, h, w = a.shape
        n = h * w
        dense_name = next(l.name for l in self.net.tail_layers if l.kind == "dense")
        wt, bias = self.net.weights[dense_name]
        wmat = wt.array
        base = baseline.array
        # pooled vector of the all-baseline map, same mean arithmetic as the tail
        g0 = np.broadcast_to(base[:, None, None], a.shape).mean(axis=(1, 2))
        z0 = wmat @ g0 + bias.array
        deltas = wmat @ ((a.reshape(c, n) - base[:, None]) / n)  # (K, n)
        logits = np.empty((n + 1, z0.size))
        logits[0] = z0
        logits[1:] = z0 + np.cumsum(deltas[:, order].T, axis=0)
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        return logits[:, target_class]


class ExternalOracle:
    """Scores feature maps via a child process speaking the wire protocol.

    Requests are pipelined; a background thread collects responses and matches
    them to waiters by id, so out-of-order replies are fine.
    """

    picklable = False

    def __init__(self, cmd: list[str], timeout: float = 120.0):
        self._timeout = timeout
        try:
            self._proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
            )
        except OSError as exc:
            raise OracleError(f"could not start oracle {cmd!r}: {exc}")
        self._write_lock = threading.Lock()
        self._cond = threading.Condition()
        self._results: dict[int, dict] = {}
        self._next_id = 0
        self._closed = False
        self._eof: OracleError | None = None

        # handshake happens before the reader thread owns stdout
        self._write_line({"op": "hello", "version": PROTOCOL_VERSION})
        line = self._proc.stdout.readline()
        if not line:
            raise OracleError("oracle exited before completing the handshake")
        try:
            hello = json.loads(line)
        except json.JSONDecodeError as exc:
            raise OracleError(f"malformed handshake line: {exc}")
        if hello.get("version") != PROTOCOL_VERSION:
            raise OracleError(f"oracle protocol version {hello.get('version')!r}, expected {PROTOCOL_VERSION}")
        try:
            self.num_classes = int(hello["classes"])
            self.map_shape = tuple(int(d) for d in hello["map_shape"])
        except (KeyError, TypeError, ValueError):
            raise OracleError(f"handshake missing classes/map_shape: {hello!r}")
        if len(self.map_shape) != 3:
            raise OracleError(f"handshake map_shape must be [C,h,w], got {hello['map_shape']!r}")
        self.split = hello.get("split")

        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _write_line(self, obj: dict) -> None:
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"oracle pipe closed while writing: {exc}")

    def _read_loop(self) -> None:
        stream = self._proc.stdout
        while True:
            line = stream.readline()
            if not line:
                break
            try:
                msg = json.loads(line)
                rid = int(msg["id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                # a response we cannot attribute poisons every waiter
                with self._cond:
                    self._eof = OracleError(f"unparseable oracle response: {line.strip()!r}")
                    self._cond.notify_all()
                return
            with self._cond:
                self._results[rid] = msg
                self._cond.notify_all()
        with self._cond:
            if self._eof is None:
                self._eof = OracleError("oracle closed its output stream")
            self._cond.notify_all()

    def score(self, feature_map: Tensor, target_class: int) -> float:
        return self.score_batch([feature_map], target_class)[0]

    def score_batch(self, maps: list[Tensor], target_class: int) -> list[float]:
        if self._closed:
            raise OracleError("oracle already closed")
        if not maps:
            return []
        for i, m in enumerate(maps):
            if m.shape != self.map_shape:
                raise OracleError(
                    f"map shape {m.shape} does not match oracle map_shape {self.map_shape}",
                    index=i,
                )
        with self._write_lock:
            ids = list(range(self._next_id, self._next_id + len(maps)))
            self._next_id += len(maps)
            for rid, m in zip(ids, maps):
                self._write_line({
                    "id": rid,
                    "op": "score",
                    "class": int(target_class),
                    "map": {"shape": list(m.shape), "data": m.data.tolist()},
                })

        out: list[float] = [0.0] * len(maps)
        pending = set(ids)
        with self._cond:
            while pending:
                got = [rid for rid in pending if rid in self._results]
                for rid in got:
                    pending.discard(rid)
                if not pending:
                    break
                if self._eof is not None:
                    raise OracleError(str(self._eof), index=ids.index(min(pending)))
                if not got and not self._cond.wait(self._timeout):
                    raise OracleError(
                        f"oracle timed out after {self._timeout}s with {len(pending)} responses outstanding",
                        index=ids.index(min(pending)),
                    )
            responses = {rid: self._results.pop(rid) for rid in ids}
        for i, rid in enumerate(ids):
            msg = responses[rid]
            if "error" in msg:
                raise OracleError(f"oracle error: {msg['error']}", index=i)
            try:
                out[i] = float(msg["prob"])
            except (KeyError, TypeError, ValueError):
                raise OracleError(f"oracle response missing prob: {msg!r}", index=i)
        return out

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> "ExternalOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# --- the game ----------------------------------------------------------------


@dataclass(frozen=True)
class Game:
    """An n-player cooperative game over feature-map positions.

    ``baseline`` holds the per-channel replacement value for absent players
    (length C). Instances are immutable; worth calls may run concurrently.
    """

    feature_map: Tensor
    baseline: Tensor
    target_class: int
    oracle: object
    players: PlayerSet

    @property
    def n_players(self) -> int:
        return self.players.n


def make_game(
    feature_map: Tensor,
    target_class: int,
    oracle,
    baseline: str = "per-channel",
) -> Game:
    """Build the game; the baseline is the feature map's spatial mean.

    ``baseline`` selects per-channel means (default) or one global scalar
    shared by all channels.
    """
    if feature_map.ndim != 3:
        raise ShapeError(f"feature map must be CxHxW, got {feature_map.shape}")
    shape = getattr(oracle, "map_shape", None)
    if shape is not None and tuple(shape) != feature_map.shape:
        raise ShapeError(f"feature map {feature_map.shape} does not match oracle map_shape {tuple(shape)}")
    classes = getattr(oracle, "num_classes", None)
    if classes is not None and not 0 <= target_class < classes:
        raise ValueError(f"class {target_class} outside 0..{classes - 1}")
    if target_class < 0:
        raise ValueError(f"class index must be non-negative, got {target_class}")
    if baseline not in BASELINE_MODES:
        raise ValueError(f"baseline must be one of {BASELINE_MODES}, got {baseline!r}")
    a = feature_map.array
    if baseline == "per-channel":
        base = a.mean(axis=(1, 2))
    else:
        base = np.full(a.shape[0], a.mean())
    return Game(
        feature_map=feature_map,
        baseline=Tensor.from_array(base),
        target_class=target_class,
        oracle=oracle,
        players=PlayerSet(a.shape[1], a.shape[2]),
    )


def _coalition_grid(game: Game, coalition: Coalition) -> np.ndarray:
    ps = game.players
    if coalition.n != ps.n:
        raise ShapeError(f"coalition over {coalition.n} players does not fit grid of {ps.n}")
    bits = (coalition.mask >> np.arange(ps.n)) & 1
    return bits.astype(bool).reshape(ps.h, ps.w)


def mask_map(game: Game, coalition: Coalition) -> Tensor:
    """Keep positions in the coalition, replace the rest with the baseline."""
    keep = _coalition_grid(game, coalition)
    a = game.feature_map.array
    out = np.where(keep[None, :, :], a, game.baseline.array[:, None, None])
    return Tensor.from_array(out)


def worth(game: Game, coalition: Coalition) -> float:
    """Probability of the target class on the masked feature map."""
    return game.oracle.score(mask_map(game, coalition), game.target_class)


def worth_batch(game: Game, coalitions: list[Coalition]) -> list[float]:
    """Element-wise worth; any element failure fails the batch with its index."""
    maps = [mask_map(game, s) for s in coalitions]
    return game.oracle.score_batch(maps, game.target_class)


def worth_chain(game: Game, order) -> np.ndarray:
    """Worths of the n+1 prefixes of ``order`` (empty set first, then adding
    one player at a time). The masked map is updated incrementally, so the
    cost is n+1 oracle evaluations, not n+1 rebuilds."""
    ps = game.players
    order = np.asarray(order, dtype=np.intp)
    if sorted(order.tolist()) != list(range(ps.n)):
        raise ShapeError(f"order must be a permutation of 0..{ps.n - 1}")

    fast = getattr(game.oracle, "score_chain", None)
    if fast is not None:
        chain = fast(game.feature_map, game.baseline, order, game.target_class)
        if chain is not None:
            return np.asarray(chain, dtype=np.float64)

    a = game.feature_map.array
    work = np.broadcast_to(game.baseline.array[:, None, None], a.shape).copy()
    maps = [Tensor.from_array(work.copy())]
    for p in order:
        i, j = divmod(int(p), ps.w)
        work[:, i, j] = a[:, i, j]
        maps.append(Tensor.from_array(work.copy()))
    return np.asarray(game.oracle.score_batch(maps, game.target_class), dtype=np.float64)
