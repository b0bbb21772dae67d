"""Apply and invert token merging, plus the prune mode used for contrast.

Merging replaces each dst token and the src tokens matched to it with their
arithmetic mean; unmerging copies the merged value back to every original
position of the group. Group sums are accumulated in double precision in
ascending original-index order and divided once, then cast back to float32.
That makes the mean of identical members exactly reproduce the member value,
and makes every merged value bit-deterministic.

Prune mode keeps the same surviving token set but leaves survivors untouched
and writes zero vectors at the removed positions on restore.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .matching import MergePlan
from .tensor import DTYPE, ShapeError

MODE_MERGE = "merge"
MODE_PRUNE = "prune"


@dataclass(frozen=True)
class MergedTokens:
    """Reduced token set produced by apply_merge / the prune reducer.

    `group_ids` maps every original token index to its merged row;
    `representatives` maps each merged row back to the surviving original
    index (the dst token for merged groups, the token itself otherwise).
    Rows are ordered by ascending representative index.
    """

    values: np.ndarray  # (merged_token_count, channels) float32
    group_sizes: np.ndarray  # (merged_token_count,) int64
    origin: MergePlan
    group_ids: np.ndarray  # (n_tokens,) int64
    representatives: np.ndarray  # (merged_token_count,) int64
    mode: str = MODE_MERGE

    def __post_init__(self):
        if int(self.group_sizes.sum()) != self.origin.n_tokens:
            raise ShapeError("group sizes must cover every original token exactly once")

    @property
    def merged_token_count(self) -> int:
        return self.values.shape[0]

    def members(self, row: int) -> np.ndarray:
        """Original token indices belonging to a merged row, ascending."""
        return np.flatnonzero(self.group_ids == row)

    def with_values(self, values: np.ndarray) -> "MergedTokens":
        values = np.asarray(values, dtype=DTYPE)
        if values.shape[0] != self.merged_token_count:
            raise ShapeError(
                f"expected {self.merged_token_count} rows, got {values.shape[0]}"
            )
        return replace(self, values=values)


def _grouping(plan: MergePlan) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(representatives, group_ids, group_sizes) for a plan."""
    n = plan.n_tokens
    target = np.arange(n, dtype=np.int64)
    if plan.r:
        target[plan.edges[:, 0]] = plan.edges[:, 1]
    representatives = np.setdiff1d(np.arange(n, dtype=np.int64), plan.edges[:, 0])
    group_ids = np.searchsorted(representatives, target)
    group_sizes = np.bincount(group_ids, minlength=representatives.size).astype(np.int64)
    return representatives, group_ids, group_sizes


def _check_shape(x: np.ndarray, plan: MergePlan) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[0] != plan.n_tokens:
        raise ShapeError(f"expected ({plan.n_tokens}, channels) tokens, got {x.shape}")
    return x


def apply_merge(x, plan: MergePlan) -> MergedTokens:
    """Merge the planned src tokens into their dst groups by group mean."""
    x = _check_shape(x, plan)
    representatives, group_ids, group_sizes = _grouping(plan)
    sums = np.zeros((representatives.size, x.shape[1]), dtype=np.float64)
    np.add.at(sums, group_ids, x.astype(np.float64))
    values = (sums / group_sizes[:, None]).astype(DTYPE)
    return MergedTokens(values, group_sizes, plan, group_ids, representatives, MODE_MERGE)


def prune_reduce(x, plan: MergePlan) -> MergedTokens:
    """Drop the planned src tokens, keeping survivors unchanged."""
    x = _check_shape(x, plan)
    representatives, group_ids, group_sizes = _grouping(plan)
    return MergedTokens(
        x[representatives].copy(), group_sizes, plan, group_ids, representatives, MODE_PRUNE
    )


def apply_unmerge(merged: MergedTokens) -> np.ndarray:
    """Restore the original token count.

    Merge mode duplicates each group's value to all of its original
    positions; prune mode writes zeros at removed positions instead.
    """
    if merged.mode == MODE_MERGE:
        return merged.values[merged.group_ids].copy()
    out = np.zeros((merged.origin.n_tokens, merged.values.shape[1]), dtype=DTYPE)
    out[merged.representatives] = merged.values
    return out


def apply_prune(x, plan: MergePlan) -> np.ndarray:
    """Round trip of prune mode: survivors unchanged, removed positions zero."""
    return apply_unmerge(prune_reduce(x, plan))


def reduce_tokens(x, plan: MergePlan, mode: str = MODE_MERGE) -> MergedTokens:
    """Uniform entry point for the block wrapper: merge or prune reduction."""
    if mode == MODE_MERGE:
        return apply_merge(x, plan)
    if mode == MODE_PRUNE:
        return prune_reduce(x, plan)
    raise ValueError(f"unknown reduction mode {mode!r}")
