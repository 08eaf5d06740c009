"""Coalitions as bit masks and memoized cooperative games.

A coalition over ``d`` players (feature indices ``0 .. d-1``) is a plain
integer whose bit ``j`` is set when player ``j`` is a member.  The hard cap
is 64 players; procedures that enumerate all ``2**d`` coalitions refuse to
run beyond 20 players.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Iterator

import numpy as np

from .exceptions import DimensionError

MAX_PLAYERS = 64
EXHAUSTIVE_PLAYER_CAP = 20


def check_player_count(d: int, cap: int = MAX_PLAYERS) -> int:
    d = int(d)
    if not 1 <= d <= cap:
        raise DimensionError(f"player count must be in [1, {cap}], got {d}")
    return d


def full_coalition(d: int) -> int:
    """Mask of the grand coalition over ``d`` players."""
    return (1 << check_player_count(d)) - 1


def coalition_of(members: Iterable[int], d: int | None = None) -> int:
    """Build a mask from an iterable of player indices."""
    mask = 0
    for j in members:
        j = int(j)
        if j < 0 or (d is not None and j >= d):
            raise DimensionError(f"player index {j} out of range")
        mask |= 1 << j
    return mask


def members_of(mask: int) -> tuple[int, ...]:
    """Sorted player indices contained in a mask."""
    out = []
    m = int(mask)
    while m:
        low = m & -m
        out.append(low.bit_length() - 1)
        m ^= low
    return tuple(out)


def coalition_size(mask: int) -> int:
    return int(mask).bit_count()


def check_coalition(mask: int, d: int) -> int:
    mask = int(mask)
    if mask < 0 or mask >= (1 << d):
        raise DimensionError(f"coalition {mask:#x} is not a subset of {d} players")
    return mask


def popcount_array(masks: np.ndarray) -> np.ndarray:
    """Vectorized population count for arrays of masks."""
    return np.bitwise_count(masks.astype(np.uint64)).astype(np.int64)


def coalitions_all(d: int) -> np.ndarray:
    """All ``2**d`` coalition masks, ordered by size then by mask value.

    Refuses to enumerate beyond 20 players.
    """
    d = check_player_count(d, cap=EXHAUSTIVE_PLAYER_CAP)
    masks = np.arange(1 << d, dtype=np.int64)
    sizes = popcount_array(masks)
    order = np.lexsort((masks, sizes))
    return masks[order]


def submasks(mask: int) -> Iterator[int]:
    """Every subset of ``mask`` including the empty set and ``mask`` itself."""
    mask = int(mask)
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def permutation_chain(perm: np.ndarray) -> list[int]:
    """Nested coalition masks visited by an ordering, from empty to full."""
    chain = [0]
    mask = 0
    for j in perm:
        mask |= 1 << int(j)
        chain.append(mask)
    return chain


class CoalitionGame:
    """A memoized set function ``v: coalitions -> reals``.

    ``evaluate`` is called at most once per coalition, even under
    concurrent access from several worker threads: the first caller for a
    coalition computes it while later callers block until the value (or
    the error) is available.  ``eval_counter`` counts distinct evaluations
    and therefore never exceeds ``2**d``.
    """

    def __init__(self, d: int, evaluate: Callable[[int], float]):
        self.d = check_player_count(d)
        self._evaluate = evaluate
        self._cache: dict[int, float] = {}
        self._errors: dict[int, BaseException] = {}
        self._inflight: dict[int, threading.Event] = {}
        self._lock = threading.Lock()
        self._eval_counter = 0

    @classmethod
    def from_table(cls, values) -> "CoalitionGame":
        """Game backed by a dense array of length ``2**d`` indexed by mask."""
        table = np.asarray(values, dtype=np.float64).ravel()
        n = table.shape[0]
        d = n.bit_length() - 1
        if n < 2 or (1 << d) != n:
            raise DimensionError(f"table length {n} is not a power of two >= 2")
        return cls(d, lambda mask: float(table[mask]))

    @property
    def eval_counter(self) -> int:
        with self._lock:
            return self._eval_counter

    @property
    def full_mask(self) -> int:
        return (1 << self.d) - 1

    def value(self, coalition: int) -> float:
        mask = check_coalition(coalition, self.d)
        with self._lock:
            if mask in self._cache:
                return self._cache[mask]
            if mask in self._errors:
                raise self._errors[mask]
            event = self._inflight.get(mask)
            if event is None:
                event = threading.Event()
                self._inflight[mask] = event
                owner = True
            else:
                owner = False
        if not owner:
            event.wait()
            with self._lock:
                if mask in self._errors:
                    raise self._errors[mask]
                return self._cache[mask]
        try:
            result = float(self._evaluate(mask))
        except BaseException as exc:
            with self._lock:
                self._errors[mask] = exc
                del self._inflight[mask]
            event.set()
            raise
        with self._lock:
            self._cache[mask] = result
            self._eval_counter += 1
            del self._inflight[mask]
        event.set()
        return result

    def values_dense(self) -> np.ndarray:
        """Evaluate every coalition; mask-indexed array of length ``2**d``."""
        if self.d > EXHAUSTIVE_PLAYER_CAP:
            raise DimensionError(
                f"dense evaluation needs d <= {EXHAUSTIVE_PLAYER_CAP}, got {self.d}"
            )
        out = np.empty(1 << self.d, dtype=np.float64)
        for mask in range(1 << self.d):
            out[mask] = self.value(mask)
        return out
