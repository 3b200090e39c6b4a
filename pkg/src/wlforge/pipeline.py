"""End-to-end weak-label pipeline and experiment sweeps.

One run walks, per seed: gold selection, coarse-model fit, baseline
evaluation, coarse prediction over the unlabeled pool, prompt construction,
promptable-backend invocation, degenerate-mask filtering, augmentation,
refit, and test evaluation. Sweeps re-run the pipeline across gold counts,
backend fidelities, or prompt strategies and pool the rows.

Everything is deterministic given (config, seeds): per-image work uses seeds
derived from stable ids, so since results do not depend on scheduling,
--jobs only changes wall time.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audit import audit
from .datasets import (
    DatasetManifest,
    ManifestEntry,
    Provenance,
    assemble_augmented,
    load_manifest,
    save_manifest,
    select_gold,
)
from .errors import ConfigError, PipelineError
from .prompts import PromptSpec, build_prompts
from .quality import EvalRow, accept_weak_label, evaluate
from .raster import (
    BinMask,
    GrayImage,
    ProbMask,
    binarize,
    load_image,
    load_mask,
    save_mask,
)
from .regions import RegionPolicy
from .rng import derive_seed
from .segmenter import (
    BackendConfig,
    FIDELITY_PRESETS,
    GtHandle,
    OracleFidelity,
    PixelClassifier,
    fit_classifier,
    predict_coarse,
    predict_prompted,
)

EVAL_MODES = ("auto_none", "box", "points")
EVAL_BINARIZE_TAU = 0.5  # threshold for turning coarse probabilities into predictions
PROB_QUANT = 65535  # coarse maps are quantized to the on-disk 16-bit grid before prompting


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 60
    learn_rate: float = 1.0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learn_rate <= 0:
            raise ConfigError("learn_rate must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str
    n_gold: int = 5
    n_weak_targets: tuple[int, ...] = (0, 25, 50, 100)
    prompt_spec: PromptSpec = field(default_factory=PromptSpec)
    backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(
            kind="mock_oracle", fidelity=FIDELITY_PRESETS["medsam-like"]
        )
    )
    tau_filter: float = 0.97
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval_prompt_modes: tuple[str, ...] = ("box", "points")
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs/out"

    def __post_init__(self) -> None:
        if self.n_gold < 1:
            raise ConfigError("n_gold must be >= 1")
        if list(self.n_weak_targets) != sorted(self.n_weak_targets):
            raise ConfigError("n_weak_targets must be sorted ascending")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        for m in self.eval_prompt_modes:
            if m not in EVAL_MODES:
                raise ConfigError(f"unknown eval prompt mode {m!r}")
        if not self.eval_prompt_modes:
            raise ConfigError("eval_prompt_modes must be nonempty")


@dataclass
class RunRecord:
    stage_seconds: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(
        default_factory=lambda: {
            "attempted": 0,
            "coarse_empty": 0,
            "filtered_over_fg": 0,
            "filtered_over_bg": 0,
            "accepted": 0,
        }
    )
    config_hash: str = ""

    def add_time(self, stage: str, seconds: float) -> None:
        self.stage_seconds[stage] = self.stage_seconds.get(stage, 0.0) + seconds

    def reconciled(self) -> bool:
        c = self.counts
        return (
            c["accepted"] + c["coarse_empty"] + c["filtered_over_fg"] + c["filtered_over_bg"]
            == c["attempted"]
        )


# ---------------------------------------------------------------------------
# config (de)serialization


def config_to_dict(cfg: PipelineConfig) -> dict:
    d = {
        "dataset": cfg.dataset,
        "n_gold": cfg.n_gold,
        "n_weak_targets": list(cfg.n_weak_targets),
        "prompt_spec": {
            "mode": cfg.prompt_spec.mode,
            "strategy": cfg.prompt_spec.strategy,
            "binarize_tau": cfg.prompt_spec.binarize_tau,
            "policy": {
                "rel_area_min": cfg.prompt_spec.policy.rel_area_min,
                "abs_area_min": cfg.prompt_spec.policy.abs_area_min,
                "max_regions": cfg.prompt_spec.policy.max_regions,
            },
            "neg_count": cfg.prompt_spec.neg_count,
            "neg_tau": cfg.prompt_spec.neg_tau,
            "neg_min_sep": cfg.prompt_spec.neg_min_sep,
            "box_pad": cfg.prompt_spec.box_pad,
            "seed": cfg.prompt_spec.seed,
            "split_point_prompts": cfg.prompt_spec.split_point_prompts,
        },
        "backend": {
            "kind": cfg.backend.kind,
            "fidelity": cfg.backend.fidelity.to_dict() if cfg.backend.fidelity else None,
            "command": list(cfg.backend.command) if cfg.backend.command else None,
            "timeout": cfg.backend.timeout,
        },
        "tau_filter": cfg.tau_filter,
        "trainer": {"epochs": cfg.trainer.epochs, "learn_rate": cfg.trainer.learn_rate},
        "eval_prompt_modes": list(cfg.eval_prompt_modes),
        "seeds": list(cfg.seeds),
        "out_dir": cfg.out_dir,
    }
    return d


def config_hash(cfg: PipelineConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _take(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def config_from_dict(d: dict) -> PipelineConfig:
    _take(
        d,
        {
            "dataset",
            "n_gold",
            "n_weak_targets",
            "prompt_spec",
            "backend",
            "tau_filter",
            "trainer",
            "eval_prompt_modes",
            "seeds",
            "out_dir",
        },
        "config",
    )
    if "dataset" not in d:
        raise ConfigError("config requires a dataset manifest path")
    kwargs: dict = {"dataset": d["dataset"]}
    if "prompt_spec" in d:
        ps = dict(d["prompt_spec"])
        _take(
            ps,
            {
                "mode",
                "strategy",
                "binarize_tau",
                "policy",
                "neg_count",
                "neg_tau",
                "neg_min_sep",
                "box_pad",
                "seed",
                "split_point_prompts",
            },
            "prompt_spec",
        )
        if "policy" in ps:
            pol = dict(ps["policy"])
            _take(pol, {"rel_area_min", "abs_area_min", "max_regions"}, "policy")
            ps["policy"] = RegionPolicy(**pol)
        kwargs["prompt_spec"] = PromptSpec(**ps)
    if "backend" in d:
        be = dict(d["backend"])
        _take(be, {"kind", "fidelity", "command", "timeout", "fidelity_preset"}, "backend")
        fid = None
        if be.get("fidelity_preset") is not None:
            name = be.pop("fidelity_preset")
            if name not in FIDELITY_PRESETS:
                raise ConfigError(f"unknown fidelity preset {name!r}")
            fid = FIDELITY_PRESETS[name]
        elif be.get("fidelity") is not None:
            fd = dict(be["fidelity"])
            _take(fd, {"dilate", "noise_rate", "flip_band", "seed"}, "fidelity")
            fid = OracleFidelity.from_dict(fd)
        be.pop("fidelity", None)
        kwargs["backend"] = BackendConfig(
            kind=be.get("kind", "mock_oracle"),
            fidelity=fid,
            command=tuple(be["command"]) if be.get("command") else None,
            timeout=float(be.get("timeout", 30.0)),
        )
    if "trainer" in d:
        tr = dict(d["trainer"])
        _take(tr, {"epochs", "learn_rate"}, "trainer")
        kwargs["trainer"] = TrainerConfig(**tr)
    for key in ("n_gold", "tau_filter", "out_dir"):
        if key in d:
            kwargs[key] = d[key]
    for key in ("n_weak_targets", "eval_prompt_modes", "seeds"):
        if key in d:
            kwargs[key] = tuple(d[key])
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from e


def load_config(path: str | Path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {path}: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError(f"config must be a JSON object: {path}")
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# pipeline


def _quantize(p: ProbMask) -> ProbMask:
    # match the 16-bit on-disk representation so staged CLI runs reproduce
    # in-memory runs bit-exactly
    return ProbMask(np.round(p.probs * PROB_QUANT) / PROB_QUANT)


@dataclass
class _WeakAttempt:
    entry: ManifestEntry
    reason: str
    mask: BinMask | None


class _Corpus:
    """Loaded views of one dataset manifest, with caching."""

    def __init__(self, manifest_path: str | Path):
        self.path = Path(manifest_path)
        self.dir = self.path.parent
        self.manifest = load_manifest(self.path)
        self._images: dict[str, GrayImage] = {}
        self._lock = threading.Lock()

    def image(self, entry: ManifestEntry) -> GrayImage:
        with self._lock:
            img = self._images.get(entry.id)
        if img is None:
            img = load_image(self.manifest.image_file(entry, self.dir))
            with self._lock:
                self._images[entry.id] = img
        return img

    def mask(self, entry: ManifestEntry) -> BinMask:
        return load_mask(self.manifest.mask_file(entry, self.dir))

    def hidden_gt(self, entry_id: str) -> BinMask:
        return load_mask(self.manifest.hidden_gt_path(entry_id, self.dir))


def run_pipeline(
    cfg: PipelineConfig,
    jobs: int | None = None,
    fitter=fit_classifier,
) -> tuple[list[EvalRow], RunRecord]:
    """Execute the full loop for every (seed, prompt mode, weak target).

    `fitter` must match fit_classifier's signature; it exists so tests can
    substitute degenerate coarse models.
    """
    jobs = jobs or os.cpu_count() or 1
    record = RunRecord(config_hash=config_hash(cfg))
    corpus = _Corpus(cfg.dataset)
    dataset_name = corpus.manifest.name
    out = Path(cfg.out_dir)
    (out / "weak_labels").mkdir(parents=True, exist_ok=True)
    (out / "manifests").mkdir(parents=True, exist_ok=True)

    test_entries = corpus.manifest.of_kind("test")
    if not test_entries:
        raise PipelineError("stage 0: dataset has no test entries")
    audit.set_tag("eval-load")
    test_imgs = [corpus.image(e) for e in test_entries]
    test_gts = [corpus.mask(e) for e in test_entries]
    audit.set_tag("")

    point_modes = [m for m in cfg.eval_prompt_modes if m in ("box", "points")]
    rows: list[EvalRow] = []

    def eval_model(model: PixelClassifier) -> tuple[float, float]:
        preds = [
            binarize(predict_coarse(model, img), EVAL_BINARIZE_TAU) for img in test_imgs
        ]
        mean_dice, mean_iou, _ = evaluate(preds, test_gts)
        return mean_dice, mean_iou

    for seed in cfg.seeds:
        t0 = time.perf_counter()
        gold_m, rest_m = select_gold(corpus.manifest, cfg.n_gold, seed)
        record.add_time("1_select_gold", time.perf_counter() - t0)

        t0 = time.perf_counter()
        audit.set_tag("train-load")
        gold_pairs = [(corpus.image(e), corpus.mask(e)) for e in gold_m.entries]
        audit.set_tag("")
        model0 = fitter(gold_pairs, cfg.trainer.epochs, cfg.trainer.learn_rate, seed)
        record.add_time("2_fit_gold", time.perf_counter() - t0)

        t0 = time.perf_counter()
        base_dice, base_iou = eval_model(model0)
        record.add_time("3_baseline_eval", time.perf_counter() - t0)
        for mode in cfg.eval_prompt_modes:
            rows.append(
                EvalRow(
                    dataset=dataset_name,
                    n_gold=cfg.n_gold,
                    n_weak=0,
                    prompt_mode=mode,
                    strategy=cfg.prompt_spec.strategy,
                    backend=cfg.backend.label(),
                    mean_dice=base_dice,
                    mean_iou=base_iou,
                    n_test=len(test_entries),
                    seed=seed,
                )
            )

        if not point_modes or max(cfg.n_weak_targets, default=0) == 0:
            continue

        t0 = time.perf_counter()
        audit.set_tag("stage4-7")
        pool = list(rest_m.entries)
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            coarse_maps = list(
                ex.map(lambda e: _quantize(predict_coarse(model0, corpus.image(e))), pool)
            )
        record.add_time("4_coarse_predict", time.perf_counter() - t0)

        refit_jobs: list[tuple[str, int]] = []
        refit_data: dict[str, tuple[list[ManifestEntry], list]] = {}
        for mode in point_modes:
            spec = replace(cfg.prompt_spec, mode=mode)
            t0 = time.perf_counter()
            audit.set_tag("stage4-7")

            def attempt(args: tuple[ManifestEntry, ProbMask]) -> _WeakAttempt:
                entry, coarse = args
                img = corpus.image(entry)
                prompts = build_prompts(coarse, img, spec)
                if prompts is None:
                    return _WeakAttempt(entry, "empty_coarse", None)
                backend = cfg.backend
                if backend.fidelity is not None:
                    per_image = replace(
                        backend.fidelity,
                        seed=derive_seed("oracle", backend.fidelity.seed, entry.id),
                    )
                    backend = replace(backend, fidelity=per_image)
                handle = GtHandle(image_id=entry.id)
                if backend.kind == "mock_oracle":
                    handle = GtHandle(image_id=entry.id, mask=corpus.hidden_gt(entry.id))
                mask = predict_prompted(backend, img, prompts, handle)
                verdict = accept_weak_label(mask, cfg.tau_filter)
                return _WeakAttempt(entry, verdict.reason, mask)

            with ThreadPoolExecutor(max_workers=jobs) as ex:
                attempts = list(ex.map(attempt, zip(pool, coarse_maps)))
            audit.set_tag("")
            record.add_time("5-7_weaklabel", time.perf_counter() - t0)

            t0 = time.perf_counter()
            cell = f"s{seed}_{mode}"
            weak_dir = out / "weak_labels" / cell
            weak_dir.mkdir(parents=True, exist_ok=True)
            prov_base = Provenance(
                strategy=spec.strategy,
                prompt_mode=mode,
                backend=cfg.backend.label(),
                fidelity_preset=cfg.backend.label(),
                config_hash=record.config_hash,
                filter_reason="ok",
            )
            accepted_entries: list[ManifestEntry] = []
            attempt_entries: list[ManifestEntry] = []
            for a in attempts:
                record.counts["attempted"] += 1
                if a.reason == "ok":
                    record.counts["accepted"] += 1
                    # weak masks live under the run dir, recorded absolute
                    mask_path = str((weak_dir / f"{a.entry.id}.png").resolve())
                    save_mask(a.mask, mask_path)
                    weak_entry = ManifestEntry(
                        id=a.entry.id,
                        image_path=a.entry.image_path,
                        mask_path=mask_path,
                        label_kind="weak",
                        provenance=prov_base,
                    )
                    accepted_entries.append(weak_entry)
                    attempt_entries.append(weak_entry)
                else:
                    key = {
                        "empty_coarse": "coarse_empty",
                        "over_foreground": "filtered_over_fg",
                        "over_background": "filtered_over_bg",
                    }[a.reason]
                    record.counts[key] += 1
                    attempt_entries.append(
                        ManifestEntry(
                            id=a.entry.id,
                            image_path=a.entry.image_path,
                            mask_path=None,
                            label_kind="unlabeled",
                            provenance=replace(prov_base, filter_reason=a.reason),
                        )
                    )
            attempts_manifest = DatasetManifest(
                name=f"{dataset_name}[attempts:{cell}]",
                root=str(corpus.dir.resolve()),
                entries=tuple(attempt_entries),
            )
            save_manifest(attempts_manifest, out / "manifests" / f"attempts_{cell}.manifest")
            record.add_time("7_filter_write", time.perf_counter() - t0)

            targets = [w for w in cfg.n_weak_targets if w > 0]
            max_target = max(targets, default=0)
            t0 = time.perf_counter()
            for n_weak in targets:
                chosen = accepted_entries[:n_weak]
                augmented = assemble_augmented(gold_m, chosen)
                save_manifest(
                    replace(augmented, root=str(corpus.dir.resolve())),
                    out / "manifests" / f"augmented_{cell}_w{n_weak}.manifest",
                )
            record.add_time("9_assemble", time.perf_counter() - t0)

            t0 = time.perf_counter()
            audit.set_tag("train-load")
            weak_pairs = [
                (corpus.image(e), load_mask(e.mask_path))
                for e in accepted_entries[:max_target]
            ]
            audit.set_tag("")
            record.add_time("10_train_load", time.perf_counter() - t0)
            refit_jobs.extend((mode, n_weak) for n_weak in targets)
            refit_data[mode] = (accepted_entries, weak_pairs)

        # refits across (mode, target) are independent; run them in parallel
        t0 = time.perf_counter()

        def refit(job: tuple[str, int]) -> PixelClassifier:
            mode, n_weak = job
            _, pairs = refit_data[mode]
            return fitter(
                gold_pairs + pairs[:n_weak], cfg.trainer.epochs, cfg.trainer.learn_rate, seed
            )

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            models = list(ex.map(refit, refit_jobs))
        record.add_time("10_refit", time.perf_counter() - t0)

        t0 = time.perf_counter()
        for (mode, n_weak), model1 in zip(refit_jobs, models):
            accepted_entries, _ = refit_data[mode]
            n_actual = min(n_weak, len(accepted_entries))
            mean_dice, mean_iou = eval_model(model1)
            rows.append(
                EvalRow(
                    dataset=dataset_name,
                    n_gold=cfg.n_gold,
                    n_weak=n_actual,
                    prompt_mode=mode,
                    strategy=cfg.prompt_spec.strategy,
                    backend=cfg.backend.label(),
                    mean_dice=mean_dice,
                    mean_iou=mean_iou,
                    n_test=len(test_entries),
                    seed=seed,
                    short_weak=n_actual < n_weak,
                )
            )
        record.add_time("11_eval", time.perf_counter() - t0)

    return rows, record


# ---------------------------------------------------------------------------
# sweeps


def run_gold_sweep(
    cfg: PipelineConfig, gold_counts: list[int], jobs: int | None = None
) -> list[EvalRow]:
    """Paired (gold-only, gold+weak) rows for each gold count."""
    if not gold_counts:
        raise ConfigError("gold_counts must be nonempty")
    weak = max(cfg.n_weak_targets, default=0)
    if weak == 0:
        raise ConfigError("gold sweep requires a nonzero weak target")
    rows: list[EvalRow] = []
    for count in gold_counts:
        sub = replace(
            cfg,
            n_gold=count,
            n_weak_targets=(0, weak),
            out_dir=str(Path(cfg.out_dir) / f"gold_{count}"),
        )
        r, _ = run_pipeline(sub, jobs=jobs)
        rows.extend(r)
    return rows


def run_fidelity_sweep(
    cfg: PipelineConfig, presets: list[OracleFidelity], jobs: int | None = None
) -> list[EvalRow]:
    """One pipeline run per backend fidelity, fixed seeds."""
    if not presets:
        raise ConfigError("presets must be nonempty")
    if cfg.backend.kind != "mock_oracle":
        raise ConfigError("fidelity sweep requires the mock_oracle backend")
    rows: list[EvalRow] = []
    for i, preset in enumerate(presets):
        sub = replace(
            cfg,
            backend=replace(cfg.backend, fidelity=preset),
            out_dir=str(Path(cfg.out_dir) / f"fidelity_{i}"),
        )
        r, _ = run_pipeline(sub, jobs=jobs)
        rows.extend(r)
    return rows


def run_strategy_comparison(cfg: PipelineConfig, jobs: int | None = None) -> list[EvalRow]:
    """Rows for the default and both baseline input-selection strategies."""
    rows: list[EvalRow] = []
    for strategy in ("coarse", "darkest", "full_box"):
        sub = replace(
            cfg,
            prompt_spec=replace(cfg.prompt_spec, strategy=strategy),
            out_dir=str(Path(cfg.out_dir) / f"strategy_{strategy}"),
        )
        r, _ = run_pipeline(sub, jobs=jobs)
        rows.extend(r)
    return rows


# ---------------------------------------------------------------------------
# reporting

CSV_COLUMNS = (
    "dataset",
    "n_gold",
    "n_weak",
    "prompt_mode",
    "strategy",
    "backend",
    "seed",
    "mean_dice",
    "mean_iou",
    "n_test",
)


def emit_report(rows: list[EvalRow], record: RunRecord, out_dir: str | Path) -> dict[str, Path]:
    """Write rows.csv, report.md, and run.json; returns the paths."""
    if not rows:
        raise PipelineError("emit_report requires at least one row")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    csv_path = out / "rows.csv"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow(
            [
                r.dataset,
                r.n_gold,
                r.n_weak,
                r.prompt_mode,
                r.strategy,
                r.backend,
                r.seed,
                repr(r.mean_dice),
                repr(r.mean_iou),
                r.n_test,
            ]
        )
    csv_path.write_text(buf.getvalue(), encoding="utf-8")

    md_path = out / "report.md"
    md_path.write_text(_markdown_report(rows, record), encoding="utf-8")

    json_path = out / "run.json"
    json_path.write_text(
        json.dumps(
            {
                "config_hash": record.config_hash,
                "counts": record.counts,
                "stage_seconds": {k: round(v, 4) for k, v in sorted(record.stage_seconds.items())},
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return {"rows": csv_path, "report": md_path, "run": json_path}


def _markdown_report(rows: list[EvalRow], record: RunRecord) -> str:
    lines = ["# Weak-label run report", ""]
    lines.append(f"config hash: `{record.config_hash}`")
    lines.append("")
    groups: dict[tuple, list[EvalRow]] = {}
    for r in rows:
        groups.setdefault((r.dataset, r.strategy, r.backend, r.n_gold), []).append(r)
    for (dataset, strategy, backend, n_gold), grp in groups.items():
        modes = sorted({r.prompt_mode for r in grp}, key=EVAL_MODES.index)
        weaks = sorted({r.n_weak for r in grp})
        lines.append(
            f"## {dataset} | strategy={strategy} | backend={backend} | gold={n_gold}"
        )
        lines.append("")
        lines.append("| # weak | " + " | ".join(modes) + " |")
        lines.append("|" + "---|" * (len(modes) + 1))
        for w in weaks:
            cells = []
            for mode in modes:
                vals = [r.mean_dice for r in grp if r.n_weak == w and r.prompt_mode == mode]
                cells.append(f"{sum(vals) / len(vals):.4f}" if vals else "-")
            lines.append(f"| {w} | " + " | ".join(cells) + " |")
        lines.append("")
    c = record.counts
    lines.append("## Weak-label verdicts")
    lines.append("")
    lines.append(
        f"attempted {c['attempted']}, accepted {c['accepted']}, "
        f"coarse-empty {c['coarse_empty']}, over-foreground {c['filtered_over_fg']}, "
        f"over-background {c['filtered_over_bg']}"
    )
    lines.append("")
    return "\n".join(lines)
