"""Scriptable stand-in sidecar for client-protocol tests.

Behaviors (first argv):
  echo-box     answer with gt & box computed from a --gt mask (noise-free)
  reorder      prepend a decoy response with a different id
  malformed    emit one garbage line before each real response
  silent       handshake, then never respond
  no-handshake exit immediately
"""

import base64
import json
import sys


def _reply(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main() -> int:
    behavior = sys.argv[1] if len(sys.argv) > 1 else "echo-box"
    if behavior == "no-handshake":
        return 0
    _reply({"ready": True, "name": f"fake-{behavior}"})
    if behavior == "silent":
        for _ in sys.stdin:
            pass
        return 0

    import numpy as np
    from PIL import Image
    import io

    gt_path = sys.argv[sys.argv.index("--gt") + 1] if "--gt" in sys.argv else None

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if behavior == "malformed":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            _reply({"id": "?", "error": "bad json"})
            continue
        rid = req.get("id", "?")
        if behavior == "reorder":
            _reply({"id": f"decoy-{rid}", "error": "unmatched decoy"})
        gt = np.asarray(Image.open(gt_path)) == 255
        out = np.zeros_like(gt)
        for p in req.get("prompts", []):
            if p.get("type") == "box":
                r0, c0, r1, c1 = p["r0"], p["c0"], p["r1"], p["c1"]
                out[r0 : r1 + 1, c0 : c1 + 1] |= gt[r0 : r1 + 1, c0 : c1 + 1]
        buf = io.BytesIO()
        Image.fromarray(np.where(out, 255, 0).astype(np.uint8), mode="L").save(
            buf, format="PNG"
        )
        _reply({"id": rid, "mask_png_b64": base64.b64encode(buf.getvalue()).decode()})
    return 0


if __name__ == "__main__":
    sys.exit(main())
