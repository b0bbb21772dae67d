"""Split a token grid into src and dst sets.

Four schemes are supported:

- alternating: dst tokens at odd flat indices. On even widths this puts dst
  in regular columns, which is exactly the failure mode the other schemes
  exist to avoid; it is kept as the reference behavior.
- strided(sy, sx): dst at positions with y % sy == 0 and x % sx == 0,
  anchored at (0, 0), giving a dst fraction of 1/(sy*sx) up to edge effects.
- random(f): exactly round(f * N) dst tokens drawn without replacement.
- rand_tile(ty, tx): the grid is tiled into ty x tx regions (edge tiles may
  be smaller) and one dst token is drawn uniformly in each tile.

For the random schemes, `batch_fix` (default on) draws the randomness once
per (step, layer) and reuses it for every batch element. This keeps paired
guidance batches aligned: both elements always get the same dst mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import GridShape
from .rng import StreamRng

_KINDS = ("alternating", "strided", "random", "rand_tile")


class PartitionError(ValueError):
    """The scheme cannot produce a valid partition for this grid."""


@dataclass(frozen=True)
class PartitionScheme:
    kind: str
    sy: int = 2
    sx: int = 2
    ty: int = 2
    tx: int = 2
    dst_frac: float = 0.25
    batch_fix: bool = True

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise PartitionError(f"unknown partition kind {self.kind!r}")
        if self.kind == "strided" and (self.sy < 1 or self.sx < 1):
            raise PartitionError(f"strides must be >= 1, got {self.sy}x{self.sx}")
        if self.kind == "rand_tile" and (self.ty < 1 or self.tx < 1):
            raise PartitionError(f"tile dims must be >= 1, got {self.ty}x{self.tx}")
        if self.kind == "random" and not 0.0 < self.dst_frac < 1.0:
            raise PartitionError(f"dst fraction must be in (0, 1), got {self.dst_frac}")

    @classmethod
    def alternating(cls, batch_fix: bool = True) -> "PartitionScheme":
        return cls("alternating", batch_fix=batch_fix)

    @classmethod
    def strided(cls, sy: int, sx: int, batch_fix: bool = True) -> "PartitionScheme":
        return cls("strided", sy=sy, sx=sx, batch_fix=batch_fix)

    @classmethod
    def random(cls, dst_frac: float, batch_fix: bool = True) -> "PartitionScheme":
        return cls("random", dst_frac=dst_frac, batch_fix=batch_fix)

    @classmethod
    def rand_tile(cls, ty: int, tx: int, batch_fix: bool = True) -> "PartitionScheme":
        return cls("rand_tile", ty=ty, tx=tx, batch_fix=batch_fix)

    def with_batch_fix(self, batch_fix: bool) -> "PartitionScheme":
        return replace(self, batch_fix=batch_fix)

    def spec_string(self) -> str:
        """Stable string form, matching the CLI flag syntax."""
        if self.kind == "alternating":
            return "alt"
        if self.kind == "strided":
            return f"strided:{self.sy}x{self.sx}"
        if self.kind == "random":
            return f"rand:{self.dst_frac:g}"
        if self.ty == 2 and self.tx == 2:
            return "rand2x2"
        return f"randtile:{self.ty}x{self.tx}"

    @classmethod
    def parse(cls, text: str, batch_fix: bool = True) -> "PartitionScheme":
        """Parse the CLI syntax: alt | strided:SYxSX | rand:F | rand2x2."""
        text = text.strip()
        if text == "alt":
            return cls.alternating(batch_fix)
        if text == "rand2x2":
            return cls.rand_tile(2, 2, batch_fix)
        if text.startswith("strided:"):
            try:
                sy, sx = (int(p) for p in text[len("strided:"):].split("x"))
            except ValueError:
                raise PartitionError(f"bad stride syntax {text!r}, expected strided:SYxSX")
            return cls.strided(sy, sx, batch_fix)
        if text.startswith("rand:"):
            try:
                frac = float(text[len("rand:"):])
            except ValueError:
                raise PartitionError(f"bad random syntax {text!r}, expected rand:F")
            return cls.random(frac, batch_fix)
        raise PartitionError(
            f"unknown partition {text!r}, expected alt | strided:SYxSX | rand:F | rand2x2"
        )


@dataclass(frozen=True)
class PartitionPlan:
    """Per-batch-element dst mask over the tokens of a grid."""

    shape: GridShape
    scheme: PartitionScheme
    dst_mask: np.ndarray  # (batch, tokens) bool, True = dst
    dst_count: int

    def __post_init__(self):
        mask = np.asarray(self.dst_mask, dtype=bool)
        mask = mask.copy()
        mask.flags.writeable = False
        object.__setattr__(self, "dst_mask", mask)

    def dst_indices(self, element: int) -> np.ndarray:
        return np.flatnonzero(self.dst_mask[element])

    def src_indices(self, element: int) -> np.ndarray:
        return np.flatnonzero(~self.dst_mask[element])

    def packed_masks(self) -> tuple[bytes, ...]:
        """One packed-bit blob per batch element, for trace storage."""
        return tuple(np.packbits(self.dst_mask[b]).tobytes() for b in range(self.shape.batch))


def expected_dst_count(shape: GridShape, scheme: PartitionScheme) -> int:
    """Analytic dst-set size, used for capacity validation and reporting."""
    n = shape.tokens
    if scheme.kind == "alternating":
        return n // 2
    if scheme.kind == "strided":
        return math.ceil(shape.height / scheme.sy) * math.ceil(shape.width / scheme.sx)
    if scheme.kind == "random":
        return round(scheme.dst_frac * n)
    return math.ceil(shape.height / scheme.ty) * math.ceil(shape.width / scheme.tx)


def _alternating_mask(shape: GridShape) -> np.ndarray:
    return (np.arange(shape.tokens) % 2) == 1


def _strided_mask(shape: GridShape, scheme: PartitionScheme) -> np.ndarray:
    ys = np.arange(shape.height) % scheme.sy == 0
    xs = np.arange(shape.width) % scheme.sx == 0
    return np.outer(ys, xs).reshape(-1)


def _random_mask(shape: GridShape, scheme: PartitionScheme, gen: np.random.Generator) -> np.ndarray:
    n = shape.tokens
    k = round(scheme.dst_frac * n)
    if k < 1 or k > n - 1:
        raise PartitionError(
            f"random dst count {k} leaves an empty src or dst set on {n} tokens"
        )
    mask = np.zeros(n, dtype=bool)
    mask[gen.choice(n, size=k, replace=False)] = True
    return mask


def _rand_tile_mask(shape: GridShape, scheme: PartitionScheme, gen: np.random.Generator) -> np.ndarray:
    mask = np.zeros(shape.tokens, dtype=bool)
    for y0 in range(0, shape.height, scheme.ty):
        for x0 in range(0, shape.width, scheme.tx):
            th = min(scheme.ty, shape.height - y0)
            tw = min(scheme.tx, shape.width - x0)
            pick = int(gen.integers(th * tw))
            y, x = y0 + pick // tw, x0 + pick % tw
            mask[shape.flat_index(y, x)] = True
    return mask


def make_partition(
    shape: GridShape,
    scheme: PartitionScheme,
    rng: StreamRng,
    step: int = 0,
    layer: int = 0,
) -> PartitionPlan:
    """Build the dst mask for every batch element.

    Deterministic in (shape, scheme, rng.seed, step, layer). With batch_fix
    on, the random draw happens once and is replicated, so the plan restricted
    to any batch prefix equals the plan built for that smaller batch.
    """
    def draw(gen):
        if scheme.kind == "random":
            return _random_mask(shape, scheme, gen)
        return _rand_tile_mask(shape, scheme, gen)

    if scheme.kind == "alternating":
        base = _alternating_mask(shape)
        masks = np.broadcast_to(base, (shape.batch, shape.tokens)).copy()
    elif scheme.kind == "strided":
        base = _strided_mask(shape, scheme)
        masks = np.broadcast_to(base, (shape.batch, shape.tokens)).copy()
    elif scheme.batch_fix:
        base = draw(rng.stream("partition", step, layer))
        masks = np.broadcast_to(base, (shape.batch, shape.tokens)).copy()
    else:
        gen = rng.stream("partition", step, layer)
        masks = np.stack([draw(gen) for _ in range(shape.batch)])

    counts = masks.sum(axis=1)
    if counts.min() < 1 or counts.max() > shape.tokens - 1:
        raise PartitionError(
            f"scheme {scheme.spec_string()} leaves an empty src or dst set on {shape}"
        )
    return PartitionPlan(shape, scheme, masks, int(counts[0]))


def dst_fraction(plan: PartitionPlan) -> float:
    """dst tokens as a fraction of all tokens, per batch element."""
    return plan.dst_count / plan.shape.tokens
