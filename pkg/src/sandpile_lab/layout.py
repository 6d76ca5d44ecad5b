"""Block/transit geometry of the renormalized lattice.

A layout places ``n`` blocks of width ``a`` (so ``a + 1`` sites each) with
period ``K`` on the integers: block ``i`` occupies
``[origin + i*K, origin + i*K + a]``.  The open working domain is
``(origin - K + a, origin + n*K)``; its two endpoints absorb particles.
Everything between blocks is transit region.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

# Stream orientations.
SINGLE = 0
LEFT = 1
RIGHT = 2

ORIENTATION_NAMES = {SINGLE: "single", LEFT: "left", RIGHT: "right"}


@dataclass(frozen=True)
class BlockLayout:
    a: int
    K: int
    n: int
    origin: int = 0

    def __post_init__(self):
        if self.a <= 0:
            raise ConfigError(f"block width must be positive, got a={self.a}")
        if self.K < self.a + 2:
            raise ConfigError(
                f"block period K={self.K} must exceed block width a={self.a} "
                "by at least 2 (transit regions must be nonempty)"
            )
        if self.n < 1:
            raise ConfigError(f"need at least one block, got n={self.n}")

    @property
    def k_is_default(self) -> bool:
        """True when K is the canonical fourth-power coupling."""
        return self.K == self.a**4

    # domain ------------------------------------------------------------
    @property
    def lo(self) -> int:
        """Left absorbing endpoint of the working domain."""
        return self.origin - self.K + self.a

    @property
    def hi(self) -> int:
        """Right absorbing endpoint of the working domain."""
        return self.origin + self.n * self.K

    @property
    def interior(self) -> range:
        return range(self.lo + 1, self.hi)

    # blocks -------------------------------------------------------------
    def block_left(self, i: int) -> int:
        return self.origin + i * self.K

    def block_right(self, i: int) -> int:
        return self.origin + i * self.K + self.a

    def block_sites(self, i: int) -> range:
        return range(self.block_left(i), self.block_right(i) + 1)

    def block_of(self, x: int) -> int:
        """Block index containing site x, or -1 for transit sites."""
        r = (x - self.origin) % self.K
        i = (x - self.origin) // self.K
        if 0 <= r <= self.a and 0 <= i < self.n:
            return i
        return -1

    def is_block_site(self, x: int) -> bool:
        return self.block_of(x) >= 0

    def in_domain(self, x: int) -> bool:
        return self.lo < x < self.hi

    # emission targets ----------------------------------------------------
    def left_target(self, i: int) -> int:
        """Site whose arrival ends a hot run of block i on the left."""
        return self.origin + (i - 1) * self.K + self.a

    def right_target(self, i: int) -> int:
        return self.origin + (i + 1) * self.K

    def with_blocks(self, n: int) -> "BlockLayout":
        return BlockLayout(self.a, self.K, n, self.origin)

    def describe(self) -> dict:
        return {
            "a": self.a,
            "K": self.K,
            "n": self.n,
            "origin": self.origin,
            "k_override": not self.k_is_default,
        }
