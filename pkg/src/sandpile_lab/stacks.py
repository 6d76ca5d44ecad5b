"""Deterministic per-site instruction streams.

Each site carries an infinite i.i.d. sequence of +-1 move instructions.
Sites inside a block hold a single stream; transit sites hold two
decorated streams (``LEFT`` and ``RIGHT``) consumed according to which
side the currently hot block lies on.  Streams are generated lazily from
``(master_seed, site, orientation)`` by a counter-based generator, so a
replica can be replayed exactly without storing tapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigError, LayoutError
from .layout import LEFT, RIGHT, SINGLE, BlockLayout

_ORIENTS = (SINGLE, LEFT, RIGHT)


def _keys_for_range(seed: int, lo: int, hi: int, domain: int) -> np.ndarray:
    n = hi - lo
    keys = np.empty((n, 3), dtype=np.uint64)
    for idx in range(n):
        site = lo + idx
        for o in _ORIENTS:
            keys[idx, o] = rng.stream_key(seed, domain, site, o)
    return keys


@dataclass
class StackSet:
    """Instruction streams for every site of ``[lo, hi)``."""

    lo: int
    hi: int
    master_seed: int
    layout: BlockLayout | None = None
    domain: int = rng.DOMAIN_INSTRUCTIONS
    keys: np.ndarray = field(init=False)
    consumed: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ConfigError(f"empty stack interval [{self.lo}, {self.hi})")
        self.keys = _keys_for_range(self.master_seed, self.lo, self.hi, self.domain)
        self.consumed = np.zeros((self.hi - self.lo, 3), dtype=np.int64)

    # --- site classification -------------------------------------------
    def _check(self, site: int, orientation: int) -> int:
        if not (self.lo <= site < self.hi):
            raise LayoutError(f"site {site} outside stack interval [{self.lo}, {self.hi})")
        if orientation not in _ORIENTS:
            raise LayoutError(f"unknown orientation {orientation}")
        if self.layout is not None:
            if self.layout.is_block_site(site):
                if orientation != SINGLE:
                    raise LayoutError(f"site {site} is a block site; it has only a single stream")
            elif orientation == SINGLE:
                raise LayoutError(f"site {site} is a transit site; use LEFT or RIGHT")
        return site - self.lo

    def has_stream(self, site: int, orientation: int) -> bool:
        if not (self.lo <= site < self.hi) or orientation not in _ORIENTS:
            return False
        if self.layout is None:
            return orientation == SINGLE
        if self.layout.is_block_site(site):
            return orientation == SINGLE
        return orientation in (LEFT, RIGHT)

    # --- draws -----------------------------------------------------------
    def draw(self, site: int, orientation: int = SINGLE) -> int:
        """Next unused instruction of the stream; increments its counter."""
        idx = self._check(site, orientation)
        j = int(self.consumed[idx, orientation])
        self.consumed[idx, orientation] = j + 1
        return rng.stream_bit(int(self.keys[idx, orientation]), j)

    def instruction(self, site: int, orientation: int, index: int) -> int:
        """Pure replay of instruction ``index`` (does not consume)."""
        idx = self._check(site, orientation)
        return rng.stream_bit(int(self.keys[idx, orientation]), index)

    def instructions(self, site: int, orientation: int, count: int, start: int = 0) -> np.ndarray:
        """Replay ``count`` instructions in bulk (no consumption)."""
        idx = self._check(site, orientation)
        return rng.stream_bits_np(int(self.keys[idx, orientation]), start, count)

    def consumed_at(self, site: int, orientation: int = SINGLE) -> int:
        idx = self._check(site, orientation)
        return int(self.consumed[idx, orientation])

    # --- growth (nested-interval bootstrap) ------------------------------
    def extend(self, lo: int, hi: int, layout: BlockLayout | None = None) -> None:
        """Grow the covered interval, preserving all consumed counts."""
        lo = min(lo, self.lo)
        hi = max(hi, self.hi)
        if layout is not None:
            self.layout = layout
        if lo == self.lo and hi == self.hi:
            return
        keys = _keys_for_range(self.master_seed, lo, hi, self.domain)
        consumed = np.zeros((hi - lo, 3), dtype=np.int64)
        off = self.lo - lo
        consumed[off : off + (self.hi - self.lo)] = self.consumed
        self.lo, self.hi = lo, hi
        self.keys, self.consumed = keys, consumed


def create_stacks(interval: tuple[int, int], layout: BlockLayout | None, seed: int) -> StackSet:
    """Streams for every site of the half-open ``interval``.

    With a layout, the interval must sit inside the layout's closed
    working domain so every site classifies as block or transit.
    """
    lo, hi = interval
    if layout is not None and (lo < layout.lo or hi > layout.hi + 1):
        raise ConfigError(
            f"stack interval [{lo}, {hi}) not contained in layout domain "
            f"[{layout.lo}, {layout.hi}]"
        )
    return StackSet(lo, hi, seed, layout)


def stacks_for_layout(layout: BlockLayout, seed: int) -> StackSet:
    """Streams for the interior of a layout's working domain."""
    return StackSet(layout.lo + 1, layout.hi, seed, layout)
