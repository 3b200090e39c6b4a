"""Connected components, dominant-region selection, and interior points.

Labeling is run-based two-pass union-find: foreground runs are extracted per
row, runs in adjacent rows are merged when they touch under the chosen
connectivity, and components are assembled from the union-find roots. This is
linear in pixel count and independent of traversal order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BinMask


@dataclass(frozen=True)
class Component:
    """A contiguous foreground region.

    `runs` holds horizontal runs as (row, col_start, col_end), col_end
    inclusive, sorted by (row, col_start).
    """

    id: int
    area: int
    bbox: tuple[int, int, int, int]
    runs: tuple[tuple[int, int, int], ...]

    def mask_window(self) -> np.ndarray:
        """Boolean array of the component within its bounding box."""
        r0, c0, r1, c1 = self.bbox
        win = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
        for row, a, b in self.runs:
            win[row - r0, a - c0 : b - c0 + 1] = True
        return win

    def pixels(self) -> list[tuple[int, int]]:
        return [(row, c) for row, a, b in self.runs for c in range(a, b + 1)]


@dataclass(frozen=True)
class RegionPolicy:
    """Filter for dominant regions: keep area >= max(abs_area_min, rel_area_min * largest)."""

    rel_area_min: float = 0.25
    abs_area_min: int = 10
    max_regions: int = 3

    def __post_init__(self) -> None:
        if not 0.0 <= self.rel_area_min <= 1.0:
            raise ValueError("rel_area_min must be in [0, 1]")
        if self.abs_area_min < 1:
            raise ValueError("abs_area_min must be >= 1")
        if self.max_regions < 1:
            raise ValueError("max_regions must be >= 1")


class _UnionFind:
    def __init__(self) -> None:
        self.parent: list[int] = []

    def make(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _row_runs(row_bits: np.ndarray) -> list[tuple[int, int]]:
    # runs of consecutive True as (start, end) inclusive
    padded = np.empty(row_bits.size + 2, dtype=bool)
    padded[0] = padded[-1] = False
    padded[1:-1] = row_bits
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def label_components(m: BinMask, connectivity: int = 8) -> list[Component]:
    """Partition the foreground of a mask into connected components.

    Returns components sorted by area descending, ties by (row_min, col_min)
    ascending; ids are assigned in that order. Empty mask gives [].
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    bits = m.bits
    uf = _UnionFind()
    # per row: list of (col_start, col_end, run_id)
    prev: list[tuple[int, int, int]] = []
    run_rows: list[tuple[int, int, int, int]] = []  # (row, start, end, run_id)
    reach = 1 if connectivity == 8 else 0
    for r in range(bits.shape[0]):
        cur: list[tuple[int, int, int]] = []
        j = 0
        for a, b in _row_runs(bits[r]):
            rid = uf.make()
            cur.append((a, b, rid))
            run_rows.append((r, a, b, rid))
            # advance over previous-row runs that end before our window
            while j < len(prev) and prev[j][1] < a - reach:
                j += 1
            k = j
            while k < len(prev) and prev[k][0] <= b + reach:
                uf.union(rid, prev[k][2])
                k += 1
            # the last overlapping prev run may also touch the next cur run
            if k > j:
                j = k - 1
        prev = cur

    groups: dict[int, list[tuple[int, int, int]]] = {}
    for r, a, b, rid in run_rows:
        groups.setdefault(uf.find(rid), []).append((r, a, b))

    comps = []
    for runs in groups.values():
        runs.sort()
        area = sum(b - a + 1 for _, a, b in runs)
        r0 = runs[0][0]
        r1 = runs[-1][0]
        c0 = min(a for _, a, _ in runs)
        c1 = max(b for _, _, b in runs)
        comps.append((area, r0, c0, r1, c1, runs))
    comps.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [
        Component(id=i, area=area, bbox=(r0, c0, r1, c1), runs=tuple(runs))
        for i, (area, r0, c0, r1, c1, runs) in enumerate(comps)
    ]


def select_regions(comps: list[Component], policy: RegionPolicy) -> list[Component]:
    """Keep dominant components per policy; input must be sorted area-descending."""
    if not comps:
        return []
    threshold = max(policy.abs_area_min, policy.rel_area_min * comps[0].area)
    kept = [c for c in comps if c.area >= threshold]
    return kept[: policy.max_regions]


def _l1_distance_window(inside: np.ndarray) -> np.ndarray:
    """Exact city-block distance to the nearest False cell of a padded window.

    `inside` must carry a False border ring so that everything beyond the
    window (including the image exterior) acts as a distance-0 source.
    """
    big = inside.shape[0] + inside.shape[1] + 2
    dist = np.where(inside, big, 0).astype(np.int64)
    cols = np.arange(inside.shape[1], dtype=np.int64)
    # forward pass: top-left to bottom-right
    for r in range(inside.shape[0]):
        if r > 0:
            np.minimum(dist[r], dist[r - 1] + 1, out=dist[r])
        # left-to-right running min via the d[c] - c accumulate trick
        dist[r] = np.minimum.accumulate(dist[r] - cols) + cols
        rev = dist[r][::-1]
        dist[r] = (np.minimum.accumulate(rev - cols) + cols)[::-1]
    # backward pass: bottom-up
    for r in range(inside.shape[0] - 2, -1, -1):
        np.minimum(dist[r], dist[r + 1] + 1, out=dist[r])
        dist[r] = np.minimum.accumulate(dist[r] - cols) + cols
        rev = dist[r][::-1]
        dist[r] = (np.minimum.accumulate(rev - cols) + cols)[::-1]
    return dist


def innermost_point(c: Component, mask_dims: tuple[int, int]) -> tuple[int, int]:
    """Component pixel maximizing city-block distance to the component's complement.

    The image exterior counts as complement, so the result is well defined
    even for components spanning the whole mask. Ties break by smallest row,
    then smallest column. `mask_dims` is (height, width).
    """
    r0, c0, r1, c1 = c.bbox
    h, w = mask_dims
    if not (0 <= r0 and r1 < h and 0 <= c0 and c1 < w):
        raise ValueError("component does not fit inside mask_dims")
    win = c.mask_window()
    padded = np.zeros((win.shape[0] + 2, win.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = win
    dist = _l1_distance_window(padded)
    dist[~padded] = -1
    flat = int(np.argmax(dist))  # first max in row-major order = (row, col) tie-break
    pr, pc = divmod(flat, dist.shape[1])
    return (pr - 1 + r0, pc - 1 + c0)


def bbox_of(c: Component) -> tuple[int, int, int, int]:
    """Tight inclusive (row_min, col_min, row_max, col_max) of a component."""
    if c.area < 1:
        raise ValueError("component must have area >= 1")
    return c.bbox
