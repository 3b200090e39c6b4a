"""Ground-truth-backed prompt answering, bit-compatible with the host's mock.

This is an independent implementation of the documented oracle behavior:

  box prompt    gt clipped to the box expanded by `dilate` on every side;
                the mean one-sided gap between the expanded box and the
                captured content, beyond an 8-pixel tolerance, widens the
                noise band
  point prompt  union of gt components containing each positive (or the
                nearest component within Chebyshev distance 5, distance
                ties resolved toward the component that sorts first by
                area descending then bbox top-left), minus any component
                containing a negative
  noise         within the outward ring of width (flip_band + extra) around
                the result, each pixel flips with probability noise_rate;
                the flip coin for (seed, row, col) is
                splitmix64(splitmix64(seed) XOR (row << 32 | col)) / 2^64

Components use 8-connectivity. Multiple prompts are answered independently
(noise included) and unioned.
"""

from __future__ import annotations

import numpy as np

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

SNAP_RADIUS = 5


def _mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + _GOLD) & _M64
        z = ((z ^ (z >> np.uint64(30))) * _M1) & _M64
        z = ((z ^ (z >> np.uint64(27))) * _M2) & _M64
        return z ^ (z >> np.uint64(31))


def _coin(seed: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    base = _mix(np.asarray([np.uint64(seed % (1 << 64))], dtype=np.uint64))[0]
    key = (rows.astype(np.uint64) << np.uint64(32)) | cols.astype(np.uint64)
    return _mix(base ^ key).astype(np.float64) / float(1 << 64)


def label_grid(gt: np.ndarray) -> np.ndarray:
    """8-connected component ids, ordered by area desc then bbox top-left.

    Background is -1. Plain scanline flood fill; deliberately unrelated to
    the host implementation so equivalence tests compare two code paths.
    """
    h, w = gt.shape
    raw = np.full((h, w), -1, dtype=np.int64)
    comps = []
    next_id = 0
    for sr in range(h):
        for sc in range(w):
            if not gt[sr, sc] or raw[sr, sc] >= 0:
                continue
            stack = [(sr, sc)]
            raw[sr, sc] = next_id
            area = 0
            rmin = rmax = sr
            cmin = cmax = sc
            while stack:
                r, c = stack.pop()
                area += 1
                rmin = min(rmin, r)
                rmax = max(rmax, r)
                cmin = min(cmin, c)
                cmax = max(cmax, c)
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        nr, nc = r + dr, c + dc
                        if 0 <= nr < h and 0 <= nc < w and gt[nr, nc] and raw[nr, nc] < 0:
                            raw[nr, nc] = next_id
                            stack.append((nr, nc))
            comps.append((area, rmin, cmin, next_id))
            next_id += 1
    order = sorted(range(len(comps)), key=lambda i: (-comps[i][0], comps[i][1], comps[i][2]))
    remap = np.full(len(comps) + 1, -1, dtype=np.int64)
    for new_id, old_idx in enumerate(order):
        remap[comps[old_idx][3]] = new_id
    out = np.full((h, w), -1, dtype=np.int64)
    fg = raw >= 0
    out[fg] = remap[raw[fg]]
    return out


def _snap(grid: np.ndarray, r: int, c: int) -> int:
    if grid[r, c] >= 0:
        return int(grid[r, c])
    h, w = grid.shape
    best_d, best_id = None, -1
    for rr in range(max(0, r - SNAP_RADIUS), min(h, r + SNAP_RADIUS + 1)):
        for cc in range(max(0, c - SNAP_RADIUS), min(w, c + SNAP_RADIUS + 1)):
            cid = grid[rr, cc]
            if cid < 0:
                continue
            d = max(abs(rr - r), abs(cc - c))
            if best_d is None or (d, cid) < (best_d, best_id):
                best_d, best_id = d, int(cid)
    return best_id if best_d is not None and best_d <= SNAP_RADIUS else -1


def _dilate(bits: np.ndarray, k: int) -> np.ndarray:
    out = bits.copy()
    for _ in range(k):
        nxt = out.copy()
        nxt[1:, :] |= out[:-1, :]
        nxt[:-1, :] |= out[1:, :]
        nxt[:, 1:] |= out[:, :-1]
        nxt[:, :-1] |= out[:, 1:]
        nxt[1:, 1:] |= out[:-1, :-1]
        nxt[1:, :-1] |= out[:-1, 1:]
        nxt[:-1, 1:] |= out[1:, :-1]
        nxt[:-1, :-1] |= out[1:, 1:]
        out = nxt
    return out


def _noise(result: np.ndarray, band: int, rate: float, seed: int) -> np.ndarray:
    if rate <= 0.0:
        return result
    ring = _dilate(result, band) & ~result
    rows, cols = np.nonzero(ring)
    if rows.size == 0:
        return result
    flip = _coin(seed, rows, cols) < rate
    out = result.copy()
    out[rows[flip], cols[flip]] ^= True
    return out


def answer_prompt(gt: np.ndarray, prompt: dict, fidelity: dict) -> np.ndarray:
    """One prompt record -> one boolean mask (noise applied)."""
    h, w = gt.shape
    dilate = int(fidelity.get("dilate", 0))
    rate = float(fidelity.get("noise_rate", 0.0))
    band = int(fidelity.get("flip_band", 1))
    seed = int(fidelity.get("seed", 0))
    extra = 0
    if prompt.get("type") == "box":
        r0, c0 = int(prompt["r0"]), int(prompt["c0"])
        r1, c1 = int(prompt["r1"]), int(prompt["c1"])
        if not (0 <= r0 <= r1 < h and 0 <= c0 <= c1 < w):
            raise ValueError(f"box out of bounds for {h}x{w} mask")
        r0, c0 = max(0, r0 - dilate), max(0, c0 - dilate)
        r1, c1 = min(h - 1, r1 + dilate), min(w - 1, c1 + dilate)
        result = np.zeros_like(gt)
        result[r0 : r1 + 1, c0 : c1 + 1] = gt[r0 : r1 + 1, c0 : c1 + 1]
        hit_r = np.flatnonzero(result.any(axis=1))
        hit_c = np.flatnonzero(result.any(axis=0))
        if hit_r.size:
            gaps = (hit_r[0] - r0) + (r1 - hit_r[-1]) + (hit_c[0] - c0) + (c1 - hit_c[-1])
            extra = max(0, int(gaps // 4) - 8)
    elif prompt.get("type") == "points":
        grid = label_grid(gt)
        keep = set()
        for r, c in prompt.get("positives", []):
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError("positive point out of bounds")
            cid = _snap(grid, int(r), int(c))
            if cid >= 0:
                keep.add(cid)
        for r, c in prompt.get("negatives", []):
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError("negative point out of bounds")
            cid = grid[int(r), int(c)]
            if cid >= 0:
                keep.discard(int(cid))
        result = np.isin(grid, sorted(keep)) if keep else np.zeros_like(gt)
    else:
        raise ValueError(f"unknown prompt type {prompt.get('type')!r}")
    return _noise(result, band + extra, rate, seed)


def answer_prompts(gt: np.ndarray, prompts: list[dict], fidelity: dict) -> np.ndarray:
    if not prompts:
        raise ValueError("request carries no prompts")
    out = np.zeros_like(gt)
    for p in prompts:
        out |= answer_prompt(gt, p, fidelity)
    return out
