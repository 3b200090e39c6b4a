import pytest

from wlforge.datasets import SynthConfig, generate_dataset


@pytest.fixture(scope="session")
def bench_corpus(tmp_path_factory):
    """The desk-scale benchmark corpus: 128x128, 130 train / 30 test."""
    root = tmp_path_factory.mktemp("bench")
    generate_dataset(SynthConfig(seed=0), n_train=130, n_test=30, out_dir=root)
    return root / "manifest.jsonl"
