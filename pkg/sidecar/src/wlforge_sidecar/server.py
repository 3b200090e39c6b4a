"""Line-protocol server: one JSON request per stdin line, one response out.

The process never dies on bad input; undecodable lines get an error response
with id "?". Responses are written in processing order; clients match them
by id, not position.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .oracle import answer_prompts


class RequestError(Exception):
    """Problem with a single request; reported, never fatal."""


def load_gt(gt_root: str, image_id: str) -> np.ndarray:
    if not image_id:
        raise RequestError("echo mode requires an image_id field")
    if "/" in image_id or "\\" in image_id or image_id in (".", ".."):
        raise RequestError(f"suspicious image_id {image_id!r}")
    path = Path(gt_root) / f"{image_id}.png"
    try:
        with Image.open(path) as im:
            im.load()
    except FileNotFoundError:
        raise RequestError(f"no ground truth for {image_id!r}") from None
    except OSError as e:
        raise RequestError(f"unreadable ground truth for {image_id!r}: {e}") from None
    if im.mode != "L":
        raise RequestError(f"ground truth for {image_id!r} is not 8-bit grayscale")
    arr = np.asarray(im, dtype=np.uint8)
    if ((arr != 0) & (arr != 255)).any():
        raise RequestError(f"ground truth for {image_id!r} has non-binary pixels")
    return arr == 255


def decode_image_dims(image_png_b64: str) -> tuple[int, int]:
    try:
        raw = base64.b64decode(image_png_b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            return im.height, im.width
    except Exception as e:
        raise RequestError(f"undecodable image_png_b64: {e}") from None


def encode_mask(bits: np.ndarray) -> str:
    buf = io.BytesIO()
    arr = np.where(bits, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class EchoOracleBackend:
    """Replays hidden ground truth through the documented oracle model."""

    def __init__(self, gt_root: str):
        self.gt_root = gt_root

    def predict(self, request: dict) -> np.ndarray:
        gt = load_gt(self.gt_root, str(request.get("image_id", "")))
        if "image_png_b64" in request:
            dims = decode_image_dims(request["image_png_b64"])
            if dims != gt.shape:
                raise RequestError(
                    f"image is {dims[0]}x{dims[1]} but ground truth is "
                    f"{gt.shape[0]}x{gt.shape[1]}"
                )
        prompts = request.get("prompts")
        if not isinstance(prompts, list) or not prompts:
            raise RequestError("request carries no prompts")
        fidelity = request.get("fidelity") or {}
        if not isinstance(fidelity, dict):
            raise RequestError("fidelity must be an object")
        try:
            return answer_prompts(gt, prompts, fidelity)
        except (KeyError, TypeError, ValueError) as e:
            raise RequestError(f"bad prompt record: {e}") from None


def handle_line(line: str, backend) -> dict:
    try:
        request = json.loads(line)
    except json.JSONDecodeError:
        return {"id": "?", "error": "undecodable request line"}
    if not isinstance(request, dict):
        return {"id": "?", "error": "request must be a JSON object"}
    rid = str(request.get("id", "?"))
    op = request.get("op")
    if op != "predict_prompted":
        return {"id": rid, "error": f"unsupported op {op!r}"}
    try:
        mask = backend.predict(request)
    except RequestError as e:
        return {"id": rid, "error": str(e)}
    except Exception as e:  # never crash the loop on one request
        return {"id": rid, "error": f"internal error: {type(e).__name__}: {e}"}
    return {"id": rid, "mask_png_b64": encode_mask(mask)}


def serve(stdin, stdout, backend, name: str) -> None:
    """Handshake, then answer every request line until EOF."""
    stdout.write(json.dumps({"ready": True, "name": name}) + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        stdout.write(json.dumps(handle_line(line, backend), separators=(",", ":")) + "\n")
        stdout.flush()
