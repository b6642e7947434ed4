import json
import math

import numpy as np
import pytest

from bevplan.dataset import (
    DatasetError,
    Sample,
    build_dataset,
    generate_samples,
    load_manifest,
    load_sample,
    load_split,
    make_sample,
    valid_t_range,
)
from bevplan.gridio import read_pgm, write_pgm
from bevplan.ogm import GridSpec
from bevplan.planner import PlannerConfig
from bevplan.presets import (
    POSITION_SCALE,
    PresetError,
    assemble_dataset,
    get_preset,
    planner_config,
)
from bevplan.scene import NoiseParams, SceneConfig, generate_scene, substream

FAST = SceneConfig(n_vehicles_range=(0, 2))


@pytest.fixture(scope="module")
def scene():
    return generate_scene(31, FAST)


@pytest.fixture(scope="module")
def sample(scene):
    return make_sample(scene, 10)


# ---------------------------------------------------------------------------
# gridio


def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    mask = np.round(rng.random((45, 80)) * 255) / 255
    write_pgm(tmp_path / "m.pgm", mask)
    back = read_pgm(tmp_path / "m.pgm")
    np.testing.assert_allclose(back, mask, atol=1e-12)


def test_pgm_quantization_bound(tmp_path):
    mask = np.random.default_rng(1).random((20, 20))
    write_pgm(tmp_path / "m.pgm", mask)
    assert np.abs(read_pgm(tmp_path / "m.pgm") - mask).max() <= 0.5 / 255 + 1e-12


# ---------------------------------------------------------------------------
# samples


def test_sample_relative_coordinates(sample):
    np.testing.assert_array_equal(sample.past[-1], 0.0)
    assert sample.past.shape == (6, 2)
    assert sample.future.shape == (6, 2)


def test_sample_destination_consistency(sample):
    r, alpha = sample.dest
    assert r >= 0 and -math.pi < alpha <= math.pi
    cart = np.array([r * math.cos(alpha), r * math.sin(alpha)])
    np.testing.assert_allclose(cart, sample.future[-1], atol=1e-9)


def test_sample_masks_shape(sample, scene):
    assert sample.drivable.shape == (6,) + scene.config.mask_shape
    assert sample.footprint.shape == sample.drivable.shape
    assert len(sample.homographies) == 6


def test_make_sample_rejects_short_context(scene):
    with pytest.raises(DatasetError):
        make_sample(scene, 0)
    with pytest.raises(DatasetError):
        make_sample(scene, scene.n_steps - 1)
    assert valid_t_range(scene) == range(5, scene.n_steps - 6)


def test_past_positions_match_scene_motion(scene):
    s = make_sample(scene, 12)
    # step lengths along the past must match the ego speed profile
    speeds = np.diff(scene.ego_s)[7:12] / scene.config.dt
    steps = np.linalg.norm(np.diff(s.past, axis=0), axis=1) / scene.config.dt
    np.testing.assert_allclose(steps, speeds, rtol=1e-6)


# ---------------------------------------------------------------------------
# build_dataset


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    manifest = build_dataset(5, 0.8, seed=9, out_dir=out, config=FAST, per_scene=2)
    return out, manifest


def test_split_counts(built):
    _, manifest = built
    assert len(manifest["train_scenes"]) == 4
    assert len(manifest["test_scenes"]) == 1
    assert len(manifest["train"]) == 8
    assert len(manifest["test"]) == 2


def test_splits_disjoint(built):
    _, manifest = built
    assert not set(manifest["train_scenes"]) & set(manifest["test_scenes"])


def test_manifest_deterministic(built, tmp_path):
    out, _ = built
    build_dataset(5, 0.8, seed=9, out_dir=tmp_path, config=FAST, per_scene=2)
    assert (tmp_path / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()


def test_sample_roundtrip_disk(built):
    out, manifest = built
    loaded = load_sample(out / manifest["train"][0])
    doc = json.loads((out / manifest["train"][0] / "sample.json").read_text())
    scene = generate_scene(doc["scene_seed"], FAST)
    fresh = make_sample(scene, doc["t_index"])
    np.testing.assert_allclose(loaded.past, fresh.past, atol=1e-12)
    np.testing.assert_allclose(loaded.future, fresh.future, atol=1e-12)
    assert np.abs(loaded.drivable - fresh.drivable).max() <= 0.5 / 255 + 1e-12


def test_load_split_validates(built):
    out, _ = built
    with pytest.raises(DatasetError):
        load_split(out, "validation")
    assert len(load_split(out, "test")) == 2


def test_bad_ratio_rejected(tmp_path):
    with pytest.raises(DatasetError):
        build_dataset(5, 1.5, seed=0, out_dir=tmp_path)
    with pytest.raises(DatasetError):
        build_dataset(1, 0.5, seed=0, out_dir=tmp_path)


# ---------------------------------------------------------------------------
# presets


@pytest.fixture(scope="module")
def samples(scene):
    rng = substream(0, "anchors")
    return generate_samples(scene.seed, 3, rng, FAST)


def test_preset_feature_widths(samples):
    for tag, width in (
        ("holistic", 650),
        ("mid-to-end", 650),
        ("lstm-ed", 0),
        ("holistic-cv", 288),
    ):
        preset = get_preset(tag)
        pd = assemble_dataset(samples, preset, scene_config=FAST)
        assert pd.features.shape == (3, 6, width), tag
        cfg = planner_config(preset)
        assert cfg.feature_dim == width


def test_unknown_preset_rejected():
    with pytest.raises(PresetError):
        get_preset("resnet")


def test_lstm_ed_ignores_grids(samples):
    preset = get_preset("lstm-ed")
    a = assemble_dataset(samples, preset)
    doctored = [
        Sample(
            scene_seed=s.scene_seed,
            t_index=s.t_index,
            past=s.past,
            future=s.future,
            dest=s.dest,
            drivable=np.zeros_like(s.drivable),
            footprint=np.ones_like(s.footprint),
            homographies=s.homographies,
        )
        for s in samples
    ]
    b = assemble_dataset(doctored, preset)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.past, b.past)


def test_no_past_preset_zeroes_past(samples):
    pd = assemble_dataset(samples, get_preset("holistic-np"))
    np.testing.assert_array_equal(pd.past, 0.0)
    ref = assemble_dataset(samples, get_preset("holistic"))
    assert np.array_equal(pd.features, ref.features)


def test_past_only_preset_zeroes_dest(samples):
    pd = assemble_dataset(samples, get_preset("lstm-ed"))
    np.testing.assert_array_equal(pd.dest, 0.0)


def test_position_scaling(samples):
    pd = assemble_dataset(samples, get_preset("holistic-cv"))
    np.testing.assert_allclose(pd.future, np.stack([s.targets for s in samples]) * POSITION_SCALE)
    np.testing.assert_allclose(pd.dest[:, 0], np.stack([s.dest for s in samples])[:, 0] * POSITION_SCALE)
    np.testing.assert_allclose(pd.dest[:, 1], np.stack([s.dest for s in samples])[:, 1])


def test_assemble_deterministic_with_noise(samples):
    noise = NoiseParams(dropout=0.1, jitter=0.8)
    a = assemble_dataset(samples, get_preset("holistic"), noise)
    b = assemble_dataset(samples, get_preset("holistic"), noise)
    assert np.array_equal(a.features, b.features)


def test_mid_to_end_features_informative(samples):
    pd = assemble_dataset(samples, get_preset("mid-to-end"), scene_config=FAST)
    # drivable channel occupies a sane fraction of the pooled grid
    assert 0.05 < pd.features.mean() < 0.9
