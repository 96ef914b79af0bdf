import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rau_emotion import data  # noqa: E402


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """23 images per class, seed 7, split 75/25 (119 train / 42 test)."""
    root = tmp_path_factory.mktemp("synth")
    manifest = data.synth_generate(23, 7, root)
    split = data.split_dataset(manifest, 0.75, 7)
    data.write_manifest(split, root / "manifest.split.tsv")
    return split
