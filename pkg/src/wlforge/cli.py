"""Command-line surface: one command per pipeline stage plus full runs.

Stage commands communicate only through on-disk artifacts (manifests, PNGs,
model JSON), so long batch runs are resumable and auditable. Exit codes:
0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import datasets, pipeline, prompts, quality, raster, segmenter
from .errors import WlforgeError
from .rng import derive_seed

ENV_SEED = "WLFORGE_SEED"


def _default_seed() -> int:
    return int(os.environ.get(ENV_SEED, "0"))


def _echo_dry(actions: list[str]) -> None:
    click.echo("[dry-run] no files written")
    for a in actions:
        click.echo(f"[dry-run] would {a}")


def _load_cfg(config: str | None, seed: int | None, out: str | None, backend: str | None):
    if config is None:
        raise click.UsageError("--config is required for this command")
    cfg = pipeline.load_config(config)
    if seed is not None:
        cfg = replace(cfg, seeds=(seed,))
    if out is not None:
        cfg = replace(cfg, out_dir=out)
    if backend is not None:
        if backend in segmenter.FIDELITY_PRESETS:
            cfg = replace(
                cfg,
                backend=segmenter.BackendConfig(
                    kind="mock_oracle", fidelity=segmenter.FIDELITY_PRESETS[backend]
                ),
            )
        else:
            cfg = replace(
                cfg,
                backend=segmenter.BackendConfig(
                    kind="external", command=tuple(backend.split())
                ),
            )
    return cfg


@click.group()
def cli() -> None:
    """Weak-label generation toolkit."""


@cli.command("synth-gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--n-train", default=130, show_default=True)
@click.option("--n-test", default=30, show_default=True)
@click.option("--width", default=128, show_default=True)
@click.option("--height", default=128, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--contrast", default=0.6, show_default=True)
@click.option("--bg-level", default=0.2, show_default=True)
@click.option("--noise-sigma", default=0.05, show_default=True)
@click.option("--lesions", default="1,2", show_default=True, help="min,max lesion count")
@click.option("--radius", default="0.12,0.25", show_default=True, help="min,max radius fraction")
@click.option("--dry-run", is_flag=True)
def synth_gen(out, n_train, n_test, width, height, seed, contrast, bg_level, noise_sigma, lesions, radius, dry_run):
    """Generate a synthetic corpus with images, masks, and a manifest."""
    lo, hi = (int(v) for v in lesions.split(","))
    rlo, rhi = (float(v) for v in radius.split(","))
    cfg = datasets.SynthConfig(
        width=width,
        height=height,
        n_lesions=(lo, hi),
        radius_frac=(rlo, rhi),
        contrast=contrast,
        bg_level=bg_level,
        noise_sigma=noise_sigma,
        seed=seed if seed is not None else _default_seed(),
    )
    if dry_run:
        _echo_dry([f"write {n_train + n_test} scenes under {out}"])
        return
    manifest = datasets.generate_dataset(cfg, n_train, n_test, out)
    click.echo(f"wrote {len(manifest.entries)} entries under {out}")


@cli.command("select-gold")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--n", "n", required=True, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--out-gold", required=True, type=click.Path())
@click.option("--out-rest", required=True, type=click.Path())
@click.option("--dry-run", is_flag=True)
def select_gold_cmd(manifest_path, n, seed, out_gold, out_rest, dry_run):
    """Split a labeled pool into a gold subset and an unlabeled rest."""
    seed = seed if seed is not None else _default_seed()
    if dry_run:
        _echo_dry([f"write gold manifest {out_gold}", f"write rest manifest {out_rest}"])
        return
    m = datasets.load_manifest(manifest_path)
    root = str(Path(manifest_path).parent.resolve())
    gold, rest = datasets.select_gold(m, n, seed)
    datasets.save_manifest(replace(gold, root=root), out_gold)
    datasets.save_manifest(replace(rest, root=root), out_rest)
    click.echo(f"gold: {len(gold.entries)} entries, rest: {len(rest.entries)} entries")


def _load_pairs(manifest_path: str):
    m = datasets.load_manifest(manifest_path)
    mdir = Path(manifest_path).parent
    pairs = []
    for e in m.entries:
        if e.mask_path is None:
            continue
        pairs.append(
            (raster.load_image(m.image_file(e, mdir)), raster.load_mask(m.mask_file(e, mdir)))
        )
    return pairs


@cli.command("coarse-fit")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=60, show_default=True)
@click.option("--learn-rate", default=1.0, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--dry-run", is_flag=True)
def coarse_fit(manifest_path, out, epochs, learn_rate, seed, dry_run):
    """Fit the coarse pixel classifier on every labeled entry of a manifest."""
    seed = seed if seed is not None else _default_seed()
    if dry_run:
        _echo_dry([f"fit classifier and write {out}"])
        return
    pairs = _load_pairs(manifest_path)
    model = segmenter.fit_classifier(pairs, epochs, learn_rate, seed)
    Path(out).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")
    click.echo(f"fitted on {len(pairs)} pairs, final loss {model.epoch_losses[-1]:.4f}")


@cli.command("coarse-predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--dry-run", is_flag=True)
def coarse_predict(model_path, image_path, out, dry_run):
    """Predict a coarse probability map for one image."""
    if dry_run:
        _echo_dry([f"write probability map {out}"])
        return
    model = segmenter.PixelClassifier.from_dict(json.loads(Path(model_path).read_text()))
    prob = segmenter.predict_coarse(model, raster.load_image(image_path))
    raster.save_prob(prob, out)
    click.echo(f"wrote {out}")


def _spec_from_flags(mode, strategy, tau, seed) -> prompts.PromptSpec:
    return prompts.PromptSpec(mode=mode, strategy=strategy, binarize_tau=tau, seed=seed)


@cli.command("prompt")
@click.option("--coarse", "coarse_path", type=click.Path(exists=True))
@click.option("--image", "image_path", type=click.Path(exists=True))
@click.option("--mode", default="box", type=click.Choice(prompts.MODES))
@click.option("--strategy", default="coarse", type=click.Choice(prompts.STRATEGIES))
@click.option("--tau", default=0.5, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", type=click.Path())
@click.option("--dry-run", is_flag=True)
def prompt_cmd(coarse_path, image_path, mode, strategy, tau, seed, out, dry_run):
    """Build prompts from a coarse probability map (or from the image for baselines)."""
    seed = seed if seed is not None else _default_seed()
    if strategy == "coarse" and coarse_path is None:
        raise click.UsageError("--coarse is required for the coarse strategy")
    if strategy != "coarse" and image_path is None:
        raise click.UsageError("--image is required for baseline strategies")
    if dry_run:
        _echo_dry([f"write prompts {out or '(stdout)'}"])
        return
    spec = _spec_from_flags(mode, strategy, tau, seed)
    if strategy == "coarse":
        coarse = raster.load_prob(coarse_path)
        img = (
            raster.load_image(image_path)
            if image_path
            else raster.GrayImage(coarse.probs.copy())
        )
    else:
        img = raster.load_image(image_path)
        coarse = raster.ProbMask(img.pixels.copy())
    built = prompts.build_prompts(coarse, img, spec)
    if built is None:
        click.echo("filtered: empty_coarse")
        return
    records = [segmenter.prompt_to_wire(p) for p in built]
    text = json.dumps(records, indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {len(records)} prompts to {out}")
    else:
        click.echo(text, nl=False)


@cli.command("weaklabel")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", type=click.Path(exists=True), help="hidden gt for the mock oracle")
@click.option("--image-id", default=None, help="id forwarded to external backends")
@click.option("--fidelity-preset", default="medsam-like", type=click.Choice(sorted(segmenter.FIDELITY_PRESETS)))
@click.option("--backend", "backend_cmd", default=None, help="external sidecar command")
@click.option("--seed", default=None, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--dry-run", is_flag=True)
def weaklabel(image_path, prompts_path, gt_path, image_id, fidelity_preset, backend_cmd, seed, out, dry_run):
    """Run the promptable backend on stored prompts and write the weak mask."""
    seed = seed if seed is not None else _default_seed()
    if dry_run:
        _echo_dry([f"write weak mask {out}"])
        return
    img = raster.load_image(image_path)
    plist = [segmenter.wire_to_prompt(d) for d in json.loads(Path(prompts_path).read_text())]
    image_id = image_id or Path(image_path).stem
    base_fid = segmenter.FIDELITY_PRESETS[fidelity_preset]
    fid = replace(base_fid, seed=pipeline_seed_for(base_fid.seed, image_id))
    if backend_cmd:
        backend = segmenter.BackendConfig(
            kind="external", command=tuple(backend_cmd.split()), fidelity=fid
        )
        handle = segmenter.GtHandle(image_id=image_id)
    else:
        if gt_path is None:
            raise click.UsageError("--gt is required for the mock oracle backend")
        backend = segmenter.BackendConfig(kind="mock_oracle", fidelity=fid)
        handle = segmenter.GtHandle(image_id=image_id, mask=raster.load_mask(gt_path))
    mask = segmenter.predict_prompted(backend, img, plist, handle)
    raster.save_mask(mask, out)
    click.echo(f"wrote {out}")


def pipeline_seed_for(fidelity_seed: int, image_id: str) -> int:
    """Per-image oracle seed; must match the pipeline's derivation."""
    return derive_seed("oracle", fidelity_seed, image_id)


@cli.command("filter")
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--tau", default=0.97, show_default=True)
def filter_cmd(mask_path, tau):
    """Print the acceptance verdict for a weak mask."""
    verdict = quality.accept_weak_label(raster.load_mask(mask_path), tau)
    click.echo(
        f"{'accepted' if verdict.accepted else 'rejected'}: {verdict.reason}"
        f" (foreground fraction {verdict.fg_fraction:.5f})"
    )


@cli.command("assemble")
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True))
@click.option("--attempts", "attempts_path", required=True, type=click.Path(exists=True))
@click.option("--n", "n_weak", required=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--dry-run", is_flag=True)
def assemble(gold_path, attempts_path, n_weak, out, dry_run):
    """Combine a gold manifest with the first N accepted weak labels."""
    if dry_run:
        _echo_dry([f"write augmented manifest {out}"])
        return
    gold = datasets.load_manifest(gold_path)
    attempts = datasets.load_manifest(attempts_path)
    weak = [e for e in attempts.entries if e.label_kind == "weak"][:n_weak]
    augmented = datasets.assemble_augmented(gold, weak)
    datasets.save_manifest(replace(augmented, root=gold.root), out)
    click.echo(f"wrote {out} with {len(augmented.entries)} entries ({len(weak)} weak)")


@cli.command("evaluate")
@click.option("--pred-dir", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
def evaluate_cmd(pred_dir, manifest_path):
    """Mean dice/iou of <pred-dir>/<id>.png against a manifest's test masks."""
    m = datasets.load_manifest(manifest_path)
    mdir = Path(manifest_path).parent
    preds, gts = [], []
    for e in m.of_kind("test"):
        preds.append(raster.load_mask(Path(pred_dir) / f"{e.id}.png"))
        gts.append(raster.load_mask(m.mask_file(e, mdir)))
    if not preds:
        raise WlforgeError("manifest has no test entries")
    mean_dice, mean_iou, _ = quality.evaluate(preds, gts)
    click.echo(f"n={len(preds)} mean_dice={mean_dice:.4f} mean_iou={mean_iou:.4f}")


def _run_and_report(cfg, rows, record):
    paths = pipeline.emit_report(rows, record, cfg.out_dir)
    click.echo(f"wrote {paths['rows']}, {paths['report']}, {paths['run']}")


@cli.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--out", default=None, type=click.Path())
@click.option("--backend", default=None)
@click.option("--jobs", default=None, type=int)
@click.option("--dry-run", is_flag=True)
def pipeline_cmd(config_path, seed, out, backend, jobs, dry_run):
    """Run the full weak-label pipeline per the config file."""
    cfg = _load_cfg(config_path, seed, out, backend)
    if dry_run:
        click.echo(f"config hash: {pipeline.config_hash(cfg)}")
        _echo_dry(
            [
                f"run seeds {list(cfg.seeds)} x weak targets {list(cfg.n_weak_targets)}"
                f" x modes {list(cfg.eval_prompt_modes)}",
                f"write reports under {cfg.out_dir}",
            ]
        )
        return
    rows, record = pipeline.run_pipeline(cfg, jobs=jobs)
    _run_and_report(cfg, rows, record)


@cli.command("sweep-gold")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--counts", required=True, help="comma-separated gold counts")
@click.option("--jobs", default=None, type=int)
@click.option("--out", default=None, type=click.Path())
@click.option("--dry-run", is_flag=True)
def sweep_gold(config_path, counts, jobs, out, dry_run):
    """Ablate the number of gold labels at a fixed weak target."""
    cfg = _load_cfg(config_path, None, out, None)
    count_list = [int(v) for v in counts.split(",")]
    if dry_run:
        click.echo(f"config hash: {pipeline.config_hash(cfg)}")
        _echo_dry([f"sweep gold counts {count_list}"])
        return
    rows = pipeline.run_gold_sweep(cfg, count_list, jobs=jobs)
    record = pipeline.RunRecord(config_hash=pipeline.config_hash(cfg))
    _run_and_report(cfg, rows, record)


@cli.command("sweep-fidelity")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--presets", default="medsam-like,sam-like", show_default=True)
@click.option("--jobs", default=None, type=int)
@click.option("--out", default=None, type=click.Path())
@click.option("--dry-run", is_flag=True)
def sweep_fidelity(config_path, presets, jobs, out, dry_run):
    """Compare backend fidelity presets."""
    cfg = _load_cfg(config_path, None, out, None)
    names = [p.strip() for p in presets.split(",") if p.strip()]
    unknown = [n for n in names if n not in segmenter.FIDELITY_PRESETS]
    if unknown:
        raise click.UsageError(f"unknown fidelity presets: {unknown}")
    fids = [segmenter.FIDELITY_PRESETS[n] for n in names]
    if dry_run:
        click.echo(f"config hash: {pipeline.config_hash(cfg)}")
        _echo_dry([f"sweep fidelities {names}"])
        return
    rows = pipeline.run_fidelity_sweep(cfg, fids, jobs=jobs)
    record = pipeline.RunRecord(config_hash=pipeline.config_hash(cfg))
    _run_and_report(cfg, rows, record)


@cli.command("compare-strategies")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--jobs", default=None, type=int)
@click.option("--out", default=None, type=click.Path())
@click.option("--dry-run", is_flag=True)
def compare_strategies(config_path, jobs, out, dry_run):
    """Compare coarse, darkest-pixel, and full-box input selection."""
    cfg = _load_cfg(config_path, None, out, None)
    if dry_run:
        click.echo(f"config hash: {pipeline.config_hash(cfg)}")
        _echo_dry(["run strategies coarse, darkest, full_box"])
        return
    rows = pipeline.run_strategy_comparison(cfg, jobs=jobs)
    record = pipeline.RunRecord(config_hash=pipeline.config_hash(cfg))
    _run_and_report(cfg, rows, record)


def print_verdict_stats(manifest: datasets.DatasetManifest) -> str:
    """Per-filter-reason counts for a manifest of weak-label attempts."""
    if not manifest.entries:
        return "no weak-label records"
    with_prov = [e for e in manifest.entries if e.provenance is not None]
    if not with_prov:
        raise WlforgeError("manifest has entries but no provenance records")
    counts: dict[str, int] = {}
    for e in with_prov:
        counts[e.provenance.filter_reason] = counts.get(e.provenance.filter_reason, 0) + 1
    width = max(len(r) for r in counts)
    lines = [f"{'reason'.ljust(width)}  count", f"{'-' * width}  -----"]
    for reason in sorted(counts):
        lines.append(f"{reason.ljust(width)}  {counts[reason]:5d}")
    lines.append(f"{'total'.ljust(width)}  {len(with_prov):5d}")
    return "\n".join(lines)


@cli.command("report")
@click.option("--attempts", "attempts_path", required=True, type=click.Path(exists=True))
def report_cmd(attempts_path):
    """Print weak-label verdict statistics from an attempts manifest."""
    click.echo(print_verdict_stats(datasets.load_manifest(attempts_path)))


def parse_and_dispatch(argv: list[str] | None = None) -> int:
    """Run the CLI; returns 0 (ok), 1 (usage error), or 2 (runtime failure)."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as e:
        e.show(file=sys.stderr)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 2
    except WlforgeError as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except (ValueError, KeyError) as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except OSError as e:
        click.echo(f"i/o error: {e}", err=True)
        return 2


def main() -> int:
    return parse_and_dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
