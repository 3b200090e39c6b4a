import json
from dataclasses import replace
from pathlib import Path

import pytest

from wlforge.audit import audit
from wlforge.datasets import SynthConfig, generate_dataset
from wlforge.errors import ConfigError, PipelineError
from wlforge.pipeline import (
    PipelineConfig,
    RunRecord,
    TrainerConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    emit_report,
    load_config,
    run_fidelity_sweep,
    run_gold_sweep,
    run_pipeline,
    run_strategy_comparison,
)
from wlforge.quality import EvalRow
from wlforge.segmenter import (
    BackendConfig,
    FIDELITY_PRESETS,
    OracleFidelity,
    PixelClassifier,
)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(width=48, height=48, seed=11)
    generate_dataset(cfg, n_train=16, n_test=4, out_dir=root)
    return root / "manifest.jsonl"


def _cfg(manifest, out, **over) -> PipelineConfig:
    base = dict(
        dataset=str(manifest),
        n_gold=3,
        n_weak_targets=(0, 4),
        trainer=TrainerConfig(epochs=25, learn_rate=1.0),
        eval_prompt_modes=("box", "points"),
        seeds=(0,),
        out_dir=str(out),
    )
    base.update(over)
    return PipelineConfig(**base)


# --- config --------------------------------------------------------------------


def test_config_dict_roundtrip(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "o")
    back = config_from_dict(config_to_dict(cfg))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_config_unknown_keys_rejected(small_corpus):
    d = config_to_dict(_cfg(small_corpus, "o"))
    d["surprise"] = 1
    with pytest.raises(ConfigError, match="surprise"):
        config_from_dict(d)
    d2 = config_to_dict(_cfg(small_corpus, "o"))
    d2["prompt_spec"]["bogus"] = 2
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict(d2)


def test_config_file_load(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "o")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config_to_dict(cfg)))
    assert load_config(path) == cfg


def test_config_fidelity_preset_name(small_corpus):
    d = config_to_dict(_cfg(small_corpus, "o"))
    d["backend"] = {"kind": "mock_oracle", "fidelity_preset": "sam-like"}
    cfg = config_from_dict(d)
    assert cfg.backend.fidelity == FIDELITY_PRESETS["sam-like"]


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(dataset="x", n_gold=0)
    with pytest.raises(ConfigError):
        PipelineConfig(dataset="x", n_weak_targets=(50, 25))
    with pytest.raises(ConfigError):
        PipelineConfig(dataset="x", seeds=())
    with pytest.raises(ConfigError):
        PipelineConfig(dataset="x", eval_prompt_modes=("boxes",))


# --- run_pipeline --------------------------------------------------------------


def test_pipeline_rows_and_counts(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "run")
    rows, record = run_pipeline(cfg, jobs=2)
    # per seed: 2 baseline rows + 2 modes x 1 nonzero target
    assert len(rows) == 4
    assert record.reconciled()
    assert record.counts["attempted"] == 13 * 2  # pool of 13 per mode
    base = [r for r in rows if r.n_weak == 0]
    assert len(base) == 2
    assert base[0].mean_dice == base[1].mean_dice  # modes coincide at 0 weak
    for r in rows:
        assert r.n_test == 4
    out = tmp_path / "run"
    assert (out / "weak_labels" / "s0_box").is_dir()
    assert list((out / "manifests").glob("attempts_*.manifest"))
    assert list((out / "manifests").glob("augmented_*_w4.manifest"))


def test_pipeline_weak_target_zero_only(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "r0", n_weak_targets=(0,))
    rows, record = run_pipeline(cfg)
    assert len(rows) == 2 and all(r.n_weak == 0 for r in rows)
    assert record.counts["attempted"] == 0


def test_pipeline_determinism_across_jobs(small_corpus, tmp_path):
    cfg1 = _cfg(small_corpus, tmp_path / "j1", seeds=(0, 1))
    cfg2 = replace(cfg1, out_dir=str(tmp_path / "j4"))
    rows1, rec1 = run_pipeline(cfg1, jobs=1)
    rows2, rec2 = run_pipeline(cfg2, jobs=4)
    emit_report(rows1, rec1, cfg1.out_dir)
    emit_report(rows2, rec2, cfg2.out_dir)
    csv1 = (tmp_path / "j1" / "rows.csv").read_bytes()
    csv2 = (tmp_path / "j4" / "rows.csv").read_bytes()
    assert csv1 == csv2
    pngs1 = sorted(p.relative_to(tmp_path / "j1") for p in (tmp_path / "j1").rglob("*.png"))
    pngs2 = sorted(p.relative_to(tmp_path / "j4") for p in (tmp_path / "j4").rglob("*.png"))
    assert pngs1 == pngs2 and pngs1
    for rel in pngs1:
        assert (tmp_path / "j1" / rel).read_bytes() == (tmp_path / "j4" / rel).read_bytes()


def _blind_fitter(gold, epochs, learn_rate, seed) -> PixelClassifier:
    # predicts ~0 probability everywhere -> empty coarse masks
    return PixelClassifier(
        weights=(0.0,) * 6,
        bias=-40.0,
        feature_means=(0.0,) * 6,
        feature_stds=(1.0,) * 6,
    )


def test_pipeline_empty_coarse_still_emits_baseline(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "blind", eval_prompt_modes=("box",))
    rows, record = run_pipeline(cfg, fitter=_blind_fitter)
    assert record.counts["coarse_empty"] == 13  # whole pool filtered
    assert record.counts["accepted"] == 0
    assert record.reconciled()
    base = [r for r in rows if r.n_weak == 0 and not r.short_weak]
    assert len(base) == 1  # the baseline row survives
    assert not [r for r in rows if r.n_weak != 0]  # no weak labels to train on
    short = [r for r in rows if r.short_weak]
    assert len(short) == 1 and short[0].n_weak == 0  # target row flags the shortfall


def test_pipeline_hidden_gt_firewall(small_corpus, tmp_path):
    audit.reset()
    audit.enabled = True
    try:
        cfg = _cfg(small_corpus, tmp_path / "fw")
        run_pipeline(cfg, jobs=2)

        def is_hidden(p: str) -> bool:
            return "hidden_gt" in Path(p).parts

        train_reads = [p for tag, p in audit.events if tag == "train-load"]
        assert train_reads, "training loads must be audited"
        assert not [p for p in train_reads if is_hidden(p)]
        # the oracle (stage 4-7 region) is the only place hidden gt is read
        hidden_tags = {tag for tag, p in audit.events if is_hidden(p)}
        assert hidden_tags == {"stage4-7"}
    finally:
        audit.enabled = False
        audit.reset()


def test_pipeline_gold_entries_unchanged(small_corpus, tmp_path):
    from wlforge.datasets import load_manifest, select_gold

    cfg = _cfg(small_corpus, tmp_path / "gld", eval_prompt_modes=("box",))
    run_pipeline(cfg)
    manifest = load_manifest(small_corpus)
    gold, _ = select_gold(manifest, cfg.n_gold, 0)
    aug_path = next((tmp_path / "gld" / "manifests").glob("augmented_s0_box_w*.manifest"))
    aug = load_manifest(aug_path)
    assert aug.entries[: len(gold.entries)] == gold.entries


def test_pipeline_missing_test_entries(tmp_path):
    corpus = tmp_path / "nt"
    generate_dataset(SynthConfig(width=48, height=48, seed=3), 6, 0, corpus)
    cfg = _cfg(corpus / "manifest.jsonl", tmp_path / "out")
    with pytest.raises(PipelineError, match="test"):
        run_pipeline(cfg)


# --- sweeps ---------------------------------------------------------------------


def test_gold_sweep_shapes(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "gs", eval_prompt_modes=("box",))
    rows = run_gold_sweep(cfg, [2, 3], jobs=2)
    # per count: 1 baseline + 1 weak-target row
    assert len(rows) == 4
    assert {r.n_gold for r in rows} == {2, 3}
    for count in (2, 3):
        pair = [r for r in rows if r.n_gold == count]
        assert {r.n_weak for r in pair} == {0, 4}


def test_gold_sweep_requires_counts(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "gs2")
    with pytest.raises(ConfigError):
        run_gold_sweep(cfg, [])
    with pytest.raises(ConfigError):
        run_gold_sweep(replace(cfg, n_weak_targets=(0,)), [2])


def test_fidelity_sweep_labels_and_errors(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "fs", eval_prompt_modes=("box",))
    rows = run_fidelity_sweep(
        cfg, [FIDELITY_PRESETS["medsam-like"], FIDELITY_PRESETS["sam-like"]], jobs=2
    )
    backends = {r.backend for r in rows}
    assert backends == {"mock[medsam-like]", "mock[sam-like]"}
    with pytest.raises(ConfigError):
        run_fidelity_sweep(cfg, [])
    ext = replace(
        cfg, backend=BackendConfig(kind="external", command=("true",))
    )
    with pytest.raises(ConfigError):
        run_fidelity_sweep(ext, [OracleFidelity()])


def test_strategy_comparison_rows(small_corpus, tmp_path):
    cfg = _cfg(small_corpus, tmp_path / "sc", eval_prompt_modes=("box",))
    rows = run_strategy_comparison(cfg, jobs=2)
    assert {r.strategy for r in rows} == {"coarse", "darkest", "full_box"}


# --- emit_report ----------------------------------------------------------------


def _row(**over):
    base = dict(
        dataset="synthetic",
        n_gold=5,
        n_weak=0,
        prompt_mode="box",
        strategy="coarse",
        backend="mock[medsam-like]",
        mean_dice=0.30591234,
        mean_iou=0.25,
        n_test=30,
        seed=0,
    )
    base.update(over)
    return EvalRow(**base)


def test_emit_report_single_row(tmp_path):
    record = RunRecord(config_hash="cafe")
    paths = emit_report([_row()], record, tmp_path)
    lines = paths["rows"].read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == "dataset,n_gold,n_weak,prompt_mode,strategy,backend,seed,mean_dice,mean_iou,n_test"
    assert lines[1].startswith("synthetic,5,0,box,coarse,mock[medsam-like],0,0.30591234,")


def test_emit_report_grid_shape_and_precision(tmp_path):
    rows = [
        _row(n_weak=w, prompt_mode=m, mean_dice=0.1 * i)
        for i, (w, m) in enumerate(
            (w, m) for w in (0, 25, 50) for m in ("box", "points")
        )
    ]
    record = RunRecord(config_hash="beef")
    paths = emit_report(rows, record, tmp_path)
    text = paths["report"].read_text()
    grid_lines = [ln for ln in text.splitlines() if ln.startswith("| ")]
    # header + 3 weak counts
    assert len(grid_lines) == 4
    for ln in grid_lines[1:]:
        for cell in ln.split("|")[2:-1]:
            float(cell.strip())
            assert len(cell.strip().split(".")[1]) == 4


def test_emit_report_empty_rows(tmp_path):
    with pytest.raises(PipelineError):
        emit_report([], RunRecord(), tmp_path)


def test_run_json_contents(tmp_path):
    record = RunRecord(config_hash="f00d")
    record.counts["attempted"] = 5
    record.counts["accepted"] = 5
    paths = emit_report([_row()], record, tmp_path)
    data = json.loads(paths["run"].read_text())
    assert data["config_hash"] == "f00d"
    assert data["counts"]["attempted"] == 5
