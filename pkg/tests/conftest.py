import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from labelerhot import synth  # noqa: E402
from labelerhot.consensus import EventIndex  # noqa: E402

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """Default synthetic dataset (24 train + 6 test recordings), seed 0."""
    out = tmp_path_factory.mktemp("dataset")
    synth.generate_dataset(synth.DatasetConfig(), 0, out)
    return out


@pytest.fixture(scope="session")
def train_manifest(dataset_dir):
    from labelerhot.signal_model import load_manifest

    return load_manifest(dataset_dir / "train" / "manifest.json")


@pytest.fixture(scope="session")
def test_manifest(dataset_dir):
    from labelerhot.signal_model import load_manifest

    return load_manifest(dataset_dir / "test" / "manifest.json")


@pytest.fixture(scope="session")
def train_index(train_manifest):
    return EventIndex(train_manifest, train_manifest.load_annotations())


@pytest.fixture(scope="session")
def test_index(test_manifest):
    return EventIndex(test_manifest, test_manifest.load_annotations())


TINY = synth.DatasetConfig(
    synth=synth.SynthConfig(duration=40.0, n_channels=4, event_rate=25.0),
    n_train=6,
    n_test=2,
    n_blocks=3,
    extra_test_labelers={"L4": [0]},
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small dataset for end-to-end runs: 6 train, 2 test recordings of 40 s."""
    out = tmp_path_factory.mktemp("tiny")
    synth.generate_dataset(TINY, 3, out)
    return out


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
