"""Segmentation backends.

Two abstractions live here:
  - a coarse segmenter: a 6-feature logistic pixel classifier trained on the
    gold subset, standing in for a full segmentation network
  - a promptable segmenter: either the in-process mock oracle (derives its
    answer from hidden ground truth, degraded by a tunable fidelity), or an
    external sidecar process speaking the newline-delimited JSON protocol

The mock oracle's noise is a pure function of (seed, row, col) so any
conforming sidecar can reproduce it bit-exactly; see rng.pixel_uniform.
"""

from __future__ import annotations

import base64
import json
import subprocess
import threading
import time
from dataclasses import dataclass
from queue import Empty, Queue

import numpy as np

from .errors import BackendError
from .prompts import BoxPrompt, PointPrompt, Prompt
from .raster import (
    BinMask,
    GrayImage,
    ProbMask,
    image_to_png_bytes,
    mask_from_png_bytes,
)
from .regions import label_components
from .rng import pixel_uniform

FEATURE_COUNT = 6
SNAP_RADIUS = 5  # positives snap to the nearest gt component within this many pixels


# ---------------------------------------------------------------------------
# coarse segmenter


@dataclass(frozen=True)
class PixelClassifier:
    """Logistic model over standardized per-pixel features."""

    weights: tuple[float, ...]
    bias: float
    feature_means: tuple[float, ...]
    feature_stds: tuple[float, ...]
    epoch_losses: tuple[float, ...] = ()  # training telemetry, not identity

    def __post_init__(self) -> None:
        for name in ("weights", "feature_means", "feature_stds"):
            vals = getattr(self, name)
            if len(vals) != FEATURE_COUNT:
                raise ValueError(f"{name} must have {FEATURE_COUNT} entries")
            if not all(np.isfinite(v) for v in vals):
                raise ValueError(f"{name} must be finite")
        if not np.isfinite(self.bias):
            raise ValueError("bias must be finite")
        if any(s <= 0 for s in self.feature_stds):
            raise ValueError("feature_stds must be positive")

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights),
            "bias": self.bias,
            "feature_means": list(self.feature_means),
            "feature_stds": list(self.feature_stds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PixelClassifier":
        return cls(
            weights=tuple(d["weights"]),
            bias=float(d["bias"]),
            feature_means=tuple(d["feature_means"]),
            feature_stds=tuple(d["feature_stds"]),
        )


def _box_sums(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Clamped-window box sums and window pixel counts, window (2k+1)^2."""
    h, w = x.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(x, axis=0), axis=1, out=ii[1:, 1:])
    r0 = np.clip(np.arange(h) - k, 0, h)
    r1 = np.clip(np.arange(h) + k + 1, 0, h)
    c0 = np.clip(np.arange(w) - k, 0, w)
    c1 = np.clip(np.arange(w) + k + 1, 0, w)
    sums = (
        ii[np.ix_(r1, c1)] - ii[np.ix_(r0, c1)] - ii[np.ix_(r1, c0)] + ii[np.ix_(r0, c0)]
    )
    counts = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return sums, counts.astype(np.float64)


def feature_map(img: GrayImage) -> np.ndarray:
    """Per-pixel features, shape (h*w, 6).

    Columns: intensity, 3x3 mean, 5x5 std (windows clamped at borders),
    |row - h/2|/h, |col - w/2|/w, constant 1.
    """
    x = img.pixels
    h, w = x.shape
    s3, n3 = _box_sums(x, 1)
    mean3 = s3 / n3
    s5, n5 = _box_sums(x, 2)
    sq5, _ = _box_sums(x * x, 2)
    var5 = np.maximum(sq5 / n5 - (s5 / n5) ** 2, 0.0)
    std5 = np.sqrt(var5)
    rows = np.abs(np.arange(h) - h / 2.0) / h
    cols = np.abs(np.arange(w) - w / 2.0) / w
    pos_r = np.broadcast_to(rows[:, None], (h, w))
    pos_c = np.broadcast_to(cols[None, :], (h, w))
    ones = np.ones((h, w))
    return np.stack(
        [x.ravel(), mean3.ravel(), std5.ravel(), pos_r.ravel(), pos_c.ravel(), ones.ravel()],
        axis=1,
    )


def pixel_features(img: GrayImage, row: int, col: int) -> np.ndarray:
    """Feature vector of a single pixel (see feature_map for the layout)."""
    if not (0 <= row < img.height and 0 <= col < img.width):
        raise ValueError(f"pixel ({row}, {col}) out of bounds")
    return feature_map(img)[row * img.width + col]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_loss_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # mean of (1-y)*z + log(1 + exp(-z)), stable for any z
    return float(np.mean((1.0 - y) * z + np.logaddexp(0.0, -z)))


def fit_classifier(
    gold: list[tuple[GrayImage, BinMask]],
    epochs: int = 60,
    learn_rate: float = 1.0,
    seed: int = 0,
    l2: float = 0.2,
) -> PixelClassifier:
    """Fit the logistic pixel classifier by full-batch gradient descent.

    The training set is a balanced subsample per image: every foreground
    pixel plus an equal-count background sample (seeded). A small ridge
    penalty (l2, weights only) keeps few-image fits from chasing their
    sample's quirks. Steps that would increase the objective are retried
    with a halved rate, so the recorded per-epoch objective (log-loss plus
    penalty) is non-increasing. Deterministic given (gold, seed).
    """
    if not gold:
        raise ValueError("fit_classifier requires at least one gold pair")
    rng = np.random.default_rng(seed)
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    total_fg = total_bg = 0
    for img, mask in gold:
        if img.pixels.shape != mask.bits.shape:
            raise ValueError("image and mask dimensions differ")
        bits = mask.bits.ravel()
        fg_idx = np.flatnonzero(bits)
        bg_idx = np.flatnonzero(~bits)
        total_fg += fg_idx.size
        total_bg += bg_idx.size
        if fg_idx.size == 0 or bg_idx.size == 0:
            continue
        take = min(fg_idx.size, bg_idx.size)
        bg_pick = np.sort(rng.choice(bg_idx, size=take, replace=False))
        feats = feature_map(img)
        xs.append(feats[fg_idx])
        ys.append(np.ones(fg_idx.size))
        xs.append(feats[bg_pick])
        ys.append(np.zeros(take))
    if total_fg == 0 or total_bg == 0:
        raise ValueError("degenerate training data: only one class present")
    X = np.concatenate(xs, axis=0)
    y = np.concatenate(ys, axis=0)

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    Xs = (X - mu) / sd

    w = np.zeros(FEATURE_COUNT)
    b = 0.0
    lr = float(learn_rate)
    z = Xs @ w + b
    p = _sigmoid(z)
    loss = _log_loss_from_logits(z, y) + 0.5 * l2 * float(w @ w)
    losses = [loss]
    n = y.size
    for _ in range(epochs):
        gw = Xs.T @ (p - y) / n + l2 * w
        gb = float(np.mean(p - y))
        improved = False
        for _attempt in range(30):
            w2 = w - lr * gw
            b2 = b - lr * gb
            z2 = Xs @ w2 + b2
            loss2 = _log_loss_from_logits(z2, y) + 0.5 * l2 * float(w2 @ w2)
            if loss2 <= loss:
                improved = True
                break
            lr *= 0.5
        if improved:
            w, b, loss = w2, b2, loss2
            p = _sigmoid(z2)
        losses.append(loss)

    return PixelClassifier(
        weights=tuple(w.tolist()),
        bias=b,
        feature_means=tuple(mu.tolist()),
        feature_stds=tuple(sd.tolist()),
        epoch_losses=tuple(losses),
    )


def predict_coarse(model: PixelClassifier, img: GrayImage) -> ProbMask:
    """Per-pixel logistic foreground probability."""
    feats = feature_map(img)
    mu = np.asarray(model.feature_means)
    sd = np.asarray(model.feature_stds)
    z = (feats - mu) / sd @ np.asarray(model.weights) + model.bias
    return ProbMask(_sigmoid(z).reshape(img.pixels.shape))


# ---------------------------------------------------------------------------
# promptable segmenter: mock oracle


@dataclass(frozen=True)
class OracleFidelity:
    """How faithfully the mock promptable backend reproduces ground truth.

    dilate: box prompts accept this much slack around the box.
    noise_rate: probability that a pixel in the boundary band flips.
    flip_band: half-width (Chebyshev) of the boundary band.
    """

    dilate: int = 0
    noise_rate: float = 0.0
    flip_band: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dilate < 0:
            raise ValueError("dilate must be >= 0")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must be in [0, 1]")
        if self.flip_band < 1:
            raise ValueError("flip_band must be >= 1")

    def to_dict(self) -> dict:
        return {
            "dilate": self.dilate,
            "noise_rate": self.noise_rate,
            "flip_band": self.flip_band,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OracleFidelity":
        return cls(
            dilate=int(d["dilate"]),
            noise_rate=float(d["noise_rate"]),
            flip_band=int(d["flip_band"]),
            seed=int(d["seed"]),
        )


FIDELITY_PRESETS = {
    "medsam-like": OracleFidelity(dilate=4, noise_rate=0.05, flip_band=2, seed=0),
    "sam-like": OracleFidelity(dilate=12, noise_rate=0.20, flip_band=6, seed=0),
    "perfect": OracleFidelity(dilate=0, noise_rate=0.0, flip_band=1, seed=0),
}


def _dilate_once(bits: np.ndarray) -> np.ndarray:
    out = bits.copy()
    out[1:, :] |= bits[:-1, :]
    out[:-1, :] |= bits[1:, :]
    out[:, 1:] |= bits[:, :-1]
    out[:, :-1] |= bits[:, 1:]
    out[1:, 1:] |= bits[:-1, :-1]
    out[1:, :-1] |= bits[:-1, 1:]
    out[:-1, 1:] |= bits[1:, :-1]
    out[:-1, :-1] |= bits[1:, 1:]
    return out


def _cheb_dilate(bits: np.ndarray, k: int) -> np.ndarray:
    out = bits
    for _ in range(k):
        out = _dilate_once(out)
    return out


def boundary_band(bits: np.ndarray, k: int) -> np.ndarray:
    """The outward ring of width k (Chebyshev) around a mask's boundary.

    The band sits outside the predicted region: flips there model the
    over-segmentation that imprecise prompts cause in real promptable
    backends. An empty mask has no boundary, hence no band.
    """
    return _cheb_dilate(bits, k) & ~bits


def apply_band_noise(
    bits: np.ndarray, fid: OracleFidelity, extra_band: int = 0
) -> np.ndarray:
    """Flip band pixels independently with probability noise_rate.

    Flips are a pure function of (fid.seed, row, col), reproducible by any
    backend implementation. extra_band widens the ring for prompts that were
    loose around their target.
    """
    if fid.noise_rate <= 0.0:
        return bits
    band = boundary_band(bits, fid.flip_band + extra_band)
    rows, cols = np.nonzero(band)
    if rows.size == 0:
        return bits
    u = pixel_uniform(fid.seed, rows, cols)
    flip = u < fid.noise_rate
    out = bits.copy()
    out[rows[flip], cols[flip]] ^= True
    return out


SLACK_TOLERANCE = 8  # px of box slack a backend absorbs before masks degrade


def _box_slack(box: tuple[int, int, int, int], result: np.ndarray) -> int:
    """Mean one-sided gap between a (dilated) box and its content, minus the
    slack a backend tolerates.

    A box much larger than its target marks an uninformative prompt; the
    caller widens the noise band by the excess. Returns 0 for empty results
    and for boxes that fit their target within the tolerance.
    """
    rows = np.flatnonzero(result.any(axis=1))
    cols = np.flatnonzero(result.any(axis=0))
    if rows.size == 0:
        return 0
    r0, c0, r1, c1 = box
    gaps = (
        (rows[0] - r0)
        + (r1 - rows[-1])
        + (cols[0] - c0)
        + (c1 - cols[-1])
    )
    return max(0, int(gaps // 4) - SLACK_TOLERANCE)


def _check_point(pt: tuple[int, int], gt: BinMask) -> None:
    r, c = pt
    if not (0 <= r < gt.height and 0 <= c < gt.width):
        raise ValueError(f"prompt point {pt} out of bounds")


def _component_grid(gt: BinMask) -> tuple[np.ndarray, int]:
    comps = label_components(gt, connectivity=8)
    grid = np.full(gt.bits.shape, -1, dtype=np.int64)
    for comp in comps:
        for row, a, b in comp.runs:
            grid[row, a : b + 1] = comp.id
    return grid, len(comps)


def _snap_component(grid: np.ndarray, pt: tuple[int, int]) -> int:
    """Component id at pt, or the nearest one within SNAP_RADIUS (Chebyshev).

    Distance ties break toward the component earlier in the sorted order
    (larger area, then upper-left bbox), i.e. the smaller id.
    """
    r, c = pt
    if grid[r, c] >= 0:
        return int(grid[r, c])
    h, w = grid.shape
    r0, r1 = max(0, r - SNAP_RADIUS), min(h, r + SNAP_RADIUS + 1)
    c0, c1 = max(0, c - SNAP_RADIUS), min(w, c + SNAP_RADIUS + 1)
    win = grid[r0:r1, c0:c1]
    rr, cc = np.nonzero(win >= 0)
    if rr.size == 0:
        return -1
    dist = np.maximum(np.abs(rr + r0 - r), np.abs(cc + c0 - c))
    dmin = dist.min()
    if dmin > SNAP_RADIUS:
        return -1
    labels = win[rr, cc][dist == dmin]
    return int(labels.min())


def oracle_prompted(gt: BinMask, prompt: Prompt, fid: OracleFidelity) -> BinMask:
    """Mock promptable segmenter: answers from ground truth, degraded by fid.

    Box prompt: gt clipped to the box dilated by fid.dilate; the looser the
    box sits around what it captured, the wider the noise band (slack/4
    extra pixels), emulating prompt sensitivity. Point prompt: union of gt
    components containing (or snapped within 5 px to) each positive, minus
    components containing a negative. Outward boundary noise is applied to
    the result.
    """
    extra_band = 0
    if isinstance(prompt, BoxPrompt):
        if not (prompt.row_max < gt.height and prompt.col_max < gt.width):
            raise ValueError(f"box {prompt} out of bounds")
        r0 = max(0, prompt.row_min - fid.dilate)
        c0 = max(0, prompt.col_min - fid.dilate)
        r1 = min(gt.height - 1, prompt.row_max + fid.dilate)
        c1 = min(gt.width - 1, prompt.col_max + fid.dilate)
        result = np.zeros_like(gt.bits)
        result[r0 : r1 + 1, c0 : c1 + 1] = gt.bits[r0 : r1 + 1, c0 : c1 + 1]
        extra_band = _box_slack((r0, c0, r1, c1), result)
    elif isinstance(prompt, PointPrompt):
        for pt in prompt.positives + prompt.negatives:
            _check_point(pt, gt)
        grid, n_comps = _component_grid(gt)
        selected: set[int] = set()
        for pt in prompt.positives:
            cid = _snap_component(grid, pt)
            if cid >= 0:
                selected.add(cid)
        vetoed = {int(grid[r, c]) for r, c in prompt.negatives if grid[r, c] >= 0}
        keep = selected - vetoed
        result = np.isin(grid, sorted(keep)) if keep else np.zeros_like(gt.bits)
    else:
        raise TypeError(f"unsupported prompt type {type(prompt).__name__}")
    return BinMask(apply_band_noise(result, fid, extra_band))


# ---------------------------------------------------------------------------
# backend dispatch


@dataclass(frozen=True)
class BackendConfig:
    """Which promptable segmenter to use.

    kind "mock_oracle": in-process oracle; requires fidelity.
    kind "external": sidecar subprocess; requires command. fidelity, when
    set, is forwarded in requests so oracle-emulating sidecars can reproduce
    the mock bit-exactly.
    """

    kind: str
    fidelity: OracleFidelity | None = None
    command: tuple[str, ...] | None = None
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if self.kind == "mock_oracle":
            if self.fidelity is None:
                raise ValueError("mock_oracle backend requires fidelity")
            if self.command is not None:
                raise ValueError("mock_oracle backend takes no command")
        elif self.kind == "external":
            if not self.command:
                raise ValueError("external backend requires a command")
            if self.timeout <= 0:
                raise ValueError("timeout must be positive")
        else:
            raise ValueError(f"unknown backend kind {self.kind!r}")

    def label(self) -> str:
        if self.kind == "mock_oracle":
            fid = self.fidelity
            for name, preset in FIDELITY_PRESETS.items():
                if (preset.dilate, preset.noise_rate, preset.flip_band) == (
                    fid.dilate,
                    fid.noise_rate,
                    fid.flip_band,
                ):
                    return f"mock[{name}]"
            return f"mock[d{fid.dilate},n{fid.noise_rate}]"
        return f"external[{self.command[0]}]"


@dataclass(frozen=True)
class GtHandle:
    """Oracle-only access to an image's hidden ground truth."""

    image_id: str
    mask: BinMask | None = None


def prompt_to_wire(p: Prompt) -> dict:
    if isinstance(p, BoxPrompt):
        return {"type": "box", "r0": p.row_min, "c0": p.col_min, "r1": p.row_max, "c1": p.col_max}
    return {
        "type": "points",
        "positives": [[r, c] for r, c in p.positives],
        "negatives": [[r, c] for r, c in p.negatives],
    }


def wire_to_prompt(d: dict) -> Prompt:
    if d.get("type") == "box":
        return BoxPrompt(int(d["r0"]), int(d["c0"]), int(d["r1"]), int(d["c1"]))
    if d.get("type") == "points":
        return PointPrompt(
            positives=tuple((int(r), int(c)) for r, c in d["positives"]),
            negatives=tuple((int(r), int(c)) for r, c in d.get("negatives", [])),
        )
    raise BackendError(f"unknown prompt record {d!r}")


class SidecarClient:
    """Serialized line-protocol client for one sidecar process.

    Responses may arrive in any order; they are matched to requests by id.
    """

    def __init__(self, command: tuple[str, ...], timeout: float = 30.0):
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as e:
            raise BackendError(f"failed to launch sidecar {command!r}: {e}") from e
        self._queue: Queue = Queue()
        self._stash: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._seq = 0
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        hello = self._next_message(self.timeout)
        if not (isinstance(hello, dict) and hello.get("ready") is True):
            self.close()
            raise BackendError(f"sidecar handshake failed: {hello!r}")
        self.name = str(hello.get("name", ""))

    def _read_loop(self) -> None:
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                self._queue.put(json.loads(line))
            except json.JSONDecodeError:
                self._queue.put({"error": f"undecodable sidecar line: {line[:80]}"})
        self._queue.put(None)  # EOF sentinel

    def _next_message(self, timeout: float) -> dict:
        try:
            msg = self._queue.get(timeout=timeout)
        except Empty:
            raise BackendError(f"sidecar timed out after {timeout}s") from None
        if msg is None:
            raise BackendError("sidecar closed its output stream")
        return msg

    def request(self, payload: dict) -> dict:
        """Send one request and wait for the response with a matching id."""
        with self._lock:
            rid = payload["id"]
            try:
                self._proc.stdin.write(json.dumps(payload, separators=(",", ":")) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise BackendError(f"sidecar pipe broken: {e}") from e
            if rid in self._stash:
                return self._stash.pop(rid)
            deadline = time.monotonic() + self.timeout
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BackendError(f"sidecar timed out after {self.timeout}s")
                msg = self._next_message(remaining)
                if msg.get("id") == rid:
                    return msg
                if "id" in msg:
                    self._stash[str(msg["id"])] = msg

    def next_id(self) -> str:
        with self._lock:
            self._seq += 1
            return f"req-{self._seq}"

    def close(self) -> None:
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)
        except Exception:
            self._proc.kill()

    def __enter__(self) -> "SidecarClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


_client_pool: dict[tuple[str, ...], SidecarClient] = {}
_pool_lock = threading.Lock()


def _pooled_client(cfg: BackendConfig) -> SidecarClient:
    with _pool_lock:
        client = _client_pool.get(cfg.command)
        if client is None or client._proc.poll() is not None:
            client = SidecarClient(cfg.command, cfg.timeout)
            _client_pool[cfg.command] = client
        client.timeout = cfg.timeout
        return client


def close_backends() -> None:
    """Shut down all pooled sidecar processes."""
    with _pool_lock:
        for client in _client_pool.values():
            client.close()
        _client_pool.clear()


def predict_prompted(
    backend: BackendConfig,
    img: GrayImage,
    prompts: list[Prompt],
    gt_handle: GtHandle | None = None,
) -> BinMask:
    """Run the promptable segmenter on a prompt list; results are unioned."""
    if not prompts:
        raise ValueError("predict_prompted requires at least one prompt")
    if backend.kind == "mock_oracle":
        if gt_handle is None or gt_handle.mask is None:
            raise BackendError("mock_oracle backend requires a gt_handle with a mask")
        gt = gt_handle.mask
        if gt.bits.shape != img.pixels.shape:
            raise BackendError("gt dimensions do not match image")
        out = np.zeros_like(gt.bits)
        for p in prompts:
            out |= oracle_prompted(gt, p, backend.fidelity).bits
        return BinMask(out)

    client = _pooled_client(backend)
    payload = {
        "id": client.next_id(),
        "op": "predict_prompted",
        "image_png_b64": base64.b64encode(image_to_png_bytes(img)).decode("ascii"),
        "prompts": [prompt_to_wire(p) for p in prompts],
    }
    if gt_handle is not None:
        payload["image_id"] = gt_handle.image_id
    if backend.fidelity is not None:
        payload["fidelity"] = backend.fidelity.to_dict()
    resp = client.request(payload)
    if "error" in resp:
        raise BackendError(f"sidecar error: {resp['error']}")
    if "mask_png_b64" not in resp:
        raise BackendError(f"sidecar protocol violation: {sorted(resp)}")
    mask = mask_from_png_bytes(base64.b64decode(resp["mask_png_b64"]))
    if mask.bits.shape != img.pixels.shape:
        raise BackendError("sidecar mask dimensions do not match image")
    return mask
