"""wlforge: auto-generate weak segmentation labels from coarse-model prompts."""

from .datasets import (
    DatasetManifest,
    ManifestEntry,
    Provenance,
    SynthConfig,
    assemble_augmented,
    generate_dataset,
    generate_scene,
    load_manifest,
    save_manifest,
    select_gold,
)
from .errors import (
    BackendError,
    ConfigError,
    ManifestError,
    PipelineError,
    RasterIOError,
    WlforgeError,
)
from .pipeline import (
    PipelineConfig,
    RunRecord,
    TrainerConfig,
    emit_report,
    load_config,
    run_fidelity_sweep,
    run_gold_sweep,
    run_pipeline,
    run_strategy_comparison,
)
from .prompts import (
    BoxPrompt,
    PointPrompt,
    Prompt,
    PromptSpec,
    build_prompts,
    darkest_prompt,
    full_image_box,
    sample_negatives,
)
from .quality import (
    EvalRow,
    FilterVerdict,
    accept_weak_label,
    dice,
    evaluate,
    iou,
    pixel_accuracy,
)
from .raster import (
    BinMask,
    GrayImage,
    ProbMask,
    binarize,
    coverage,
    load_image,
    load_mask,
    load_prob,
    resize_image,
    resize_mask,
    save_mask,
    save_prob,
)
from .regions import (
    Component,
    RegionPolicy,
    bbox_of,
    innermost_point,
    label_components,
    select_regions,
)
from .segmenter import (
    FIDELITY_PRESETS,
    BackendConfig,
    GtHandle,
    OracleFidelity,
    PixelClassifier,
    fit_classifier,
    oracle_prompted,
    pixel_features,
    predict_coarse,
    predict_prompted,
)

__version__ = "0.1.0"
