import pytest

from hcrnet.data import load_idx
from hcrnet.synth import make_idx_corpus


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """2000/1000 stroke-digit IDX corpus used by the end-to-end checks."""
    root = tmp_path_factory.mktemp("desk-corpus")
    paths = make_idx_corpus(str(root), 2000, 1000, seed=42)
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    return train, test
