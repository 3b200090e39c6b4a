"""Wrapper for an actual promptable segmentation checkpoint.

Loads lazily on the first request so the protocol handshake stays fast. The
checkpoint convention follows the segment-anything predictor API: boxes as
XYXY, point labels 1/0 for positive/negative, output binarized at 0.5.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

from .server import RequestError


class RealCheckpointBackend:
    def __init__(self, checkpoint: str, device: str = "cpu", model_type: str = "vit_b"):
        self.checkpoint = checkpoint
        self.device = device
        self.model_type = model_type
        self._predictor = None

    def _ensure_loaded(self):
        if self._predictor is not None:
            return self._predictor
        try:
            from segment_anything import SamPredictor, sam_model_registry
        except ImportError:
            raise RequestError(
                "real mode needs the segment-anything package and a checkpoint; "
                "install it or run with --mode echo_oracle"
            ) from None
        try:
            sam = sam_model_registry[self.model_type](checkpoint=self.checkpoint)
        except (FileNotFoundError, KeyError, RuntimeError) as e:
            raise RequestError(f"cannot load checkpoint {self.checkpoint!r}: {e}") from None
        sam.to(device=self.device)
        self._predictor = SamPredictor(sam)
        return self._predictor

    def predict(self, request: dict) -> np.ndarray:
        predictor = self._ensure_loaded()
        try:
            raw = base64.b64decode(request["image_png_b64"], validate=True)
            with Image.open(io.BytesIO(raw)) as im:
                rgb = np.asarray(im.convert("RGB"))
        except Exception as e:
            raise RequestError(f"undecodable image: {e}") from None
        prompts = request.get("prompts")
        if not isinstance(prompts, list) or not prompts:
            raise RequestError("request carries no prompts")
        predictor.set_image(rgb)
        out = np.zeros(rgb.shape[:2], dtype=bool)
        for p in prompts:
            if p.get("type") == "box":
                box = np.array([p["c0"], p["r0"], p["c1"], p["r1"]])
                masks, _, _ = predictor.predict(box=box[None, :], multimask_output=False)
            elif p.get("type") == "points":
                pos = [(c, r) for r, c in p.get("positives", [])]
                neg = [(c, r) for r, c in p.get("negatives", [])]
                coords = np.array(pos + neg, dtype=np.float64)
                labels = np.array([1] * len(pos) + [0] * len(neg))
                masks, _, _ = predictor.predict(
                    point_coords=coords, point_labels=labels, multimask_output=False
                )
            else:
                raise RequestError(f"unknown prompt type {p.get('type')!r}")
            out |= np.asarray(masks[0], dtype=np.float64) >= 0.5
        return out
