import json
from dataclasses import replace

import numpy as np
import pytest

from labelerhot.consensus import EventIndex, sample_scenario
from labelerhot.signal_model import EventClass, Recording, load_manifest, validate_manifest
from labelerhot.synth import (
    NOISELESS,
    DatasetConfig,
    GroundTruthEvent,
    LabelerStyle,
    SynthConfig,
    dataset_digest,
    default_styles,
    generate_dataset,
    generate_recording,
    simulate_labeler,
)

SMALL = SynthConfig(duration=20.0, n_channels=2)


def test_zero_rate_gives_background_only():
    rec, events = generate_recording(replace(SMALL, event_rate=0.0), seed=1)
    assert events == []
    assert rec.samples.shape == (2, 20 * 256)
    assert np.all(np.isfinite(rec.samples))


def test_same_seed_bit_identical():
    a, ea = generate_recording(SMALL, seed=5)
    b, eb = generate_recording(SMALL, seed=5)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert ea == eb
    c, _ = generate_recording(SMALL, seed=6)
    assert c.samples.tobytes() != a.samples.tobytes()


def test_event_count_follows_poisson_mean():
    cfg = SynthConfig(duration=600.0, n_channels=1, event_rate=6.0)
    counts = [len(generate_recording(cfg, seed=s)[1]) for s in range(100)]
    # mean of 100 Poisson(60) draws lies within 3 standard errors of 60
    assert abs(np.mean(counts) - 60) <= 3 * np.sqrt(60 / 100)
    assert all(abs(c - 60) <= 5 * np.sqrt(60) for c in counts)


def test_class_mix_within_binomial_tolerance():
    cfg = SynthConfig(duration=600.0, n_channels=4, event_rate=40.0)
    events = [e for s in range(3) for e in generate_recording(cfg, seed=s)[1]]
    n = len(events)
    for name, p in cfg.class_mix.items():
        k = sum(e.event_class is EventClass.parse(name) for e in events)
        assert abs(k - n * p) <= 4 * np.sqrt(n * p * (1 - p)), name


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(class_mix={"spike": 0.5, "slow_wave": 0.4})
    with pytest.raises(ValueError):
        SynthConfig(class_mix={"norm": 1.0})
    with pytest.raises(ValueError):
        SynthConfig(fs=0)
    cfg = SynthConfig.from_dict(json.loads(json.dumps(SynthConfig().to_dict())))
    assert cfg == SynthConfig()


def _flat_recording(duration=10.0, fs=256):
    return Recording("r", fs, ("C0",), np.zeros((1, int(duration * fs))))


def _truth(classes, start=1.0, step=0.8, dur=0.25, snr=10.0):
    return [
        GroundTruthEvent("C0", start + i * step, dur, c, amplitude=100.0, snr=snr)
        for i, c in enumerate(classes)
    ]


def test_noiseless_labeler_reproduces_truth():
    rec = _flat_recording()
    truth = _truth([EventClass.SPIKE, EventClass.SLOW_WAVE, EventClass.SHARP_WAVE])
    anns = simulate_labeler(truth, NOISELESS, rec, seed=0)
    events = [a for a in anns if a.event_class is not EventClass.NORM]
    assert [(a.t_start, a.t_end, a.event_class) for a in events] == [
        (round(e.t_start * 256) / 256, round(e.t_end * 256) / 256, e.event_class) for e in truth
    ]
    # everything else is negative filler of at most 2 s, tiling [0, 10)
    edges = sorted((a.t_start, a.t_end) for a in anns)
    assert edges[0][0] == 0.0 and edges[-1][1] == 10.0
    assert all(b[0] == a[1] for a, b in zip(edges, edges[1:]))
    assert all(a.t_end - a.t_start <= 2.0 for a in anns)


def test_zero_recall_gives_only_negative_tiling():
    rec = _flat_recording()
    style = LabelerStyle(default_recall=0.0)
    anns = simulate_labeler(_truth([EventClass.SPIKE] * 5), style, rec, seed=0)
    assert not any(a.positive for a in anns)
    assert sum(a.t_end - a.t_start for a in anns) == pytest.approx(10.0)


def test_recall_binomial_interval():
    rec = _flat_recording(duration=1000.0, fs=64)
    truth = _truth([EventClass.SPIKE] * 1000, start=0.5, step=0.9, dur=0.05)
    style = LabelerStyle(default_recall=0.7)
    anns = simulate_labeler(truth, style, rec, seed=3)
    kept = sum(a.event_class is EventClass.SPIKE for a in anns)
    assert 660 <= kept <= 740


def test_min_snr_and_confusion():
    rec = _flat_recording()
    truth = _truth([EventClass.SPIKE, EventClass.SPIKE], snr=1.0)
    assert not any(
        a.positive for a in simulate_labeler(truth, LabelerStyle(min_snr=2.0), rec, seed=0)
    )
    style = LabelerStyle(confusion={"slow_wave": {"sharp_wave": 1.0}})
    anns = simulate_labeler(_truth([EventClass.SLOW_WAVE]), style, rec, seed=0)
    assert [a.event_class for a in anns if a.event_class is not EventClass.NORM] == [
        EventClass.SHARP_WAVE
    ]


def test_style_validation():
    with pytest.raises(ValueError):
        LabelerStyle(recall={"spike": 1.5})
    with pytest.raises(ValueError):
        LabelerStyle(confusion={"spike": {"spike": 0.5}})
    assert set(default_styles()) == {"L1", "L2", "L3", "L4"}


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    cfg = DatasetConfig(
        synth=replace(SMALL, duration=30.0),
        n_train=2,
        n_test=2,
        n_blocks=2,
        block_seconds=10.0,
        extra_test_labelers={"L4": [0]},
    )
    out = tmp_path_factory.mktemp("small")
    generate_dataset(cfg, 11, out)
    return cfg, out


def test_dataset_layout_and_coverage(small_dataset):
    _, out = small_dataset
    train = load_manifest(out / "train" / "manifest.json")
    test = load_manifest(out / "test" / "manifest.json")
    assert [e.id for e in train.recordings] == ["train_000", "train_001"]
    assert [lab.name for lab in test.labeler_set] == ["L1", "L2", "L3", "L4"]
    assert test.entry("test_000").labelers == ("L1", "L2", "L3", "L4")
    assert test.entry("test_001").labelers == ("L1", "L2", "L3")
    for m in (train, test):
        rep = validate_manifest(m, m.load_annotations())
        assert rep.ok, rep.lines()[:5]


def test_dataset_regeneration_is_identical(small_dataset, tmp_path):
    cfg, out = small_dataset
    generate_dataset(cfg, 11, tmp_path)
    assert dataset_digest(tmp_path) == dataset_digest(out)
    generate_dataset(cfg, 12, tmp_path / "other")
    assert dataset_digest(tmp_path / "other") != dataset_digest(out)


def test_default_dataset_shape(train_manifest, test_manifest):
    assert len(train_manifest.recordings) == 24
    assert len(test_manifest.recordings) == 6
    assert train_manifest.K == 3


def test_two_labelers_cannot_feed_consensus_scenarios(tmp_path):
    cfg = DatasetConfig(
        synth=replace(SMALL, duration=30.0),
        n_train=2,
        n_test=1,
        n_blocks=2,
        train_labelers=("L1", "L2"),
        extra_test_labelers={},
    )
    train, _ = generate_dataset(cfg, 1, tmp_path)
    index = EventIndex(train, train.load_annotations())
    with pytest.raises(ValueError, match="3-labeler consensus"):
        sample_scenario(index, "A", 0, 0, K=2, n_rec=1, n_pos=1, n_neg=1)
