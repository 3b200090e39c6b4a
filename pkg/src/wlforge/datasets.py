"""Dataset manifests, gold-subset sampling, and the synthetic corpus generator.

A manifest is newline-delimited JSON: a header record {name, root, version}
followed by one record per entry. Entries carry a label kind (gold / weak /
unlabeled / test); weak entries additionally carry provenance describing how
their mask was produced.

Ground truth for entries demoted to "unlabeled" stays on disk under
hidden_gt/ and is reachable only through hidden_gt_path(), never through the
manifest entries themselves; training code that consumes manifests therefore
cannot see it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError
from .raster import BinMask, GrayImage, save_mask

LABEL_KINDS = ("gold", "weak", "unlabeled", "test")
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Provenance:
    strategy: str
    prompt_mode: str
    backend: str
    fidelity_preset: str
    config_hash: str
    filter_reason: str


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: str
    mask_path: str | None
    label_kind: str
    provenance: Provenance | None = None

    def __post_init__(self) -> None:
        if self.label_kind not in LABEL_KINDS:
            raise ManifestError(f"unknown label_kind {self.label_kind!r} for {self.id!r}")
        if self.label_kind in ("gold", "test", "weak") and not self.mask_path:
            raise ManifestError(f"{self.label_kind} entry {self.id!r} requires mask_path")
        if self.label_kind == "unlabeled" and self.mask_path:
            raise ManifestError(f"unlabeled entry {self.id!r} must not carry mask_path")
        if self.label_kind == "weak" and self.provenance is None:
            raise ManifestError(f"weak entry {self.id!r} requires provenance")


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    root: str
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        ids = [e.id for e in self.entries]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate entry ids: {dupes}")

    def of_kind(self, kind: str) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.label_kind == kind)

    def resolve(self, rel: str, manifest_dir: str | Path | None = None) -> Path:
        root = Path(self.root)
        if not root.is_absolute() and manifest_dir is not None:
            root = Path(manifest_dir) / root
        return root / rel

    def image_file(self, entry: ManifestEntry, manifest_dir: str | Path | None = None) -> Path:
        return self.resolve(entry.image_path, manifest_dir)

    def mask_file(self, entry: ManifestEntry, manifest_dir: str | Path | None = None) -> Path:
        if entry.mask_path is None:
            raise ManifestError(f"entry {entry.id!r} has no mask")
        return self.resolve(entry.mask_path, manifest_dir)

    def hidden_gt_path(self, entry_id: str, manifest_dir: str | Path | None = None) -> Path:
        """Explicit oracle/audit handle; not part of any entry record."""
        return self.resolve(f"hidden_gt/{entry_id}.png", manifest_dir)


def _entry_to_record(e: ManifestEntry) -> dict:
    rec: dict = {"id": e.id, "image_path": e.image_path, "label_kind": e.label_kind}
    if e.mask_path is not None:
        rec["mask_path"] = e.mask_path
    if e.provenance is not None:
        rec["provenance"] = asdict(e.provenance)
    return rec


def save_manifest(m: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    lines = [json.dumps({"name": m.name, "root": m.root, "version": MANIFEST_VERSION})]
    lines.extend(json.dumps(_entry_to_record(e)) for e in m.entries)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path, strict: bool = False) -> DatasetManifest:
    """Parse and validate a manifest; strict additionally checks files exist."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"empty manifest: {path}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestError(f"malformed manifest header: {path}: {e}") from e
    if not isinstance(header, dict) or "name" not in header or "root" not in header:
        raise ManifestError(f"manifest header must carry name and root: {path}")
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {header.get('version')!r}: {path}")
    entries = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"malformed record at {path}:{i}: {e}") from e
        prov = rec.get("provenance")
        try:
            entries.append(
                ManifestEntry(
                    id=str(rec["id"]),
                    image_path=str(rec["image_path"]),
                    mask_path=rec.get("mask_path"),
                    label_kind=str(rec["label_kind"]),
                    provenance=Provenance(**prov) if prov is not None else None,
                )
            )
        except (KeyError, TypeError) as e:
            raise ManifestError(f"bad record at {path}:{i}: {e}") from e
    manifest = DatasetManifest(name=header["name"], root=header["root"], entries=tuple(entries))
    if strict:
        mdir = path.parent
        for e in manifest.entries:
            img = manifest.image_file(e, mdir)
            if not img.is_file():
                raise ManifestError(f"missing image file {img} for entry {e.id!r}")
            if e.mask_path is not None and not manifest.mask_file(e, mdir).is_file():
                raise ManifestError(f"missing mask file for entry {e.id!r}")
    return manifest


def select_gold(
    m: DatasetManifest, n: int, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Split the labeled training pool into n gold entries and an unlabeled rest.

    The rest keeps manifest order but loses its mask paths; ground truth for
    those entries remains reachable only via hidden_gt_path(). Sampling takes
    the first n of a seeded permutation, so for a fixed seed the subsets are
    nested across n: gold-count sweeps compare growing training sets instead
    of resampled ones. Deterministic per seed.
    """
    pool = [e for e in m.entries if e.label_kind == "gold"]
    if n > len(pool):
        raise ManifestError(f"requested {n} gold entries but pool has {len(pool)}")
    rng = np.random.default_rng(seed)
    picked = set(rng.permutation(len(pool))[:n].tolist())
    gold_entries = tuple(e for i, e in enumerate(pool) if i in picked)
    rest_entries = tuple(
        replace(e, mask_path=None, label_kind="unlabeled")
        for i, e in enumerate(pool)
        if i not in picked
    )
    gold = DatasetManifest(name=f"{m.name}[gold{n}]", root=m.root, entries=gold_entries)
    rest = DatasetManifest(name=f"{m.name}[rest]", root=m.root, entries=rest_entries)
    return gold, rest


def assemble_augmented(
    gold: DatasetManifest, weak_entries: list[ManifestEntry]
) -> DatasetManifest:
    """Concatenate gold entries with accepted weak entries."""
    for e in weak_entries:
        if e.label_kind != "weak" or e.provenance is None:
            raise ManifestError(f"augmentation entry {e.id!r} is not a weak-labeled entry")
        if e.provenance.filter_reason != "ok":
            raise ManifestError(
                f"weak entry {e.id!r} was rejected ({e.provenance.filter_reason})"
            )
    gold_ids = {e.id for e in gold.entries}
    clash = sorted(gold_ids & {e.id for e in weak_entries})
    if clash:
        raise ManifestError(f"id collision between gold and weak entries: {clash}")
    name = f"{gold.name}+weak{len(weak_entries)}"
    return DatasetManifest(
        name=name, root=gold.root, entries=gold.entries + tuple(weak_entries)
    )


# ---------------------------------------------------------------------------
# synthetic corpus

# Scene noise splits into a shared per-scene component and per-pixel white
# noise (each pixel's marginal stays Gaussian with std noise_sigma). The
# shared part models acquisition-level brightness variation: it is what makes
# tiny gold subsets genuinely unrepresentative, so model quality grows with
# training-set size the way it does on real label-scarce corpora.
SCENE_NOISE_SHARE = 0.88


@dataclass(frozen=True)
class SynthConfig:
    """Procedural single-target scenes: bright blobs on a noisy background."""

    width: int = 128
    height: int = 128
    n_lesions: tuple[int, int] = (1, 1)
    radius_frac: tuple[float, float] = (0.26, 0.38)
    contrast: float = 0.2
    bg_level: float = 0.35
    noise_sigma: float = 0.16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not (0 <= self.n_lesions[0] <= self.n_lesions[1]):
            raise ValueError("n_lesions range is empty or negative")
        if not (0 < self.radius_frac[0] <= self.radius_frac[1]):
            raise ValueError("radius_frac range is empty or non-positive")
        max_r = self.radius_frac[1] * min(self.width, self.height)
        if 2 * max_r >= min(self.width, self.height):
            raise ValueError("radius range exceeds image: lesions cannot fit")

    def to_dict(self) -> dict:
        return asdict(self)


def generate_scene(cfg: SynthConfig, scene_seed: int) -> tuple[GrayImage, BinMask]:
    """One synthetic scene; deterministic per (cfg.seed, scene_seed)."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, scene_seed)))
    h, w = cfg.height, cfg.width
    base = np.full((h, w), cfg.bg_level, dtype=np.float64)
    gt = np.zeros((h, w), dtype=bool)
    k = int(rng.integers(cfg.n_lesions[0], cfg.n_lesions[1] + 1))
    min_dim = min(w, h)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(k):
        a = rng.uniform(cfg.radius_frac[0], cfg.radius_frac[1]) * min_dim
        b = rng.uniform(cfg.radius_frac[0], cfg.radius_frac[1]) * min_dim
        theta = rng.uniform(0.0, np.pi)
        margin = max(a, b)
        cy = rng.uniform(margin, h - 1 - margin)
        cx = rng.uniform(margin, w - 1 - margin)
        ct, st = np.cos(theta), np.sin(theta)
        dx = xx - cx
        dy = yy - cy
        u = (dx * ct + dy * st) / a
        v = (-dx * st + dy * ct) / b
        inside = u * u + v * v <= 1.0
        gt |= inside
        base[inside] = cfg.bg_level + cfg.contrast
    shared = rng.normal(0.0, SCENE_NOISE_SHARE * cfg.noise_sigma)
    white = np.sqrt(1.0 - SCENE_NOISE_SHARE**2) * cfg.noise_sigma
    noisy = base + shared + rng.normal(0.0, white, size=(h, w))
    return GrayImage(np.clip(noisy, 0.0, 1.0)), BinMask(gt)


def generate_dataset(
    cfg: SynthConfig, n_train: int, n_test: int, out_dir: str | Path
) -> DatasetManifest:
    """Write a synthetic corpus and its manifest under out_dir.

    Train entries are gold-labeled; ground truth is also copied under
    hidden_gt/ so entries later demoted to unlabeled stay auditable. Reruns
    with the same config produce byte-identical files.
    """
    out = Path(out_dir)
    for sub in ("images", "masks", "hidden_gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_train + n_test):
        sid = f"scene_{i:04d}"
        img, gt = generate_scene(cfg, scene_seed=i)
        arr8 = np.round(img.pixels * 255.0).astype(np.uint8)
        Image.fromarray(arr8, mode="L").save(out / "images" / f"{sid}.png", format="PNG")
        save_mask(gt, out / "masks" / f"{sid}.png")
        save_mask(gt, out / "hidden_gt" / f"{sid}.png")
        kind = "gold" if i < n_train else "test"
        entries.append(
            ManifestEntry(
                id=sid,
                image_path=f"images/{sid}.png",
                mask_path=f"masks/{sid}.png",
                label_kind=kind,
            )
        )
    manifest = DatasetManifest(name="synthetic", root=".", entries=tuple(entries))
    save_manifest(manifest, out / "manifest.jsonl")
    return manifest
