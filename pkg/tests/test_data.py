import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from rescrnet.data import (
    AugmentParams,
    AugmentRanges,
    DatasetManifest,
    Entry,
    PreprocessConfig,
    Sample,
    SampleStore,
    apply_augment,
    augment_rng,
    batch_iterator,
    complement_mask,
    draw_augment_params,
    histogram_equalize,
    masks_to_onehot,
    num_batches,
    onehot_to_planes,
    read_image,
    read_manifest,
    read_mask,
    resize,
    split_manifest,
    write_manifest,
    write_mask,
)
from rescrnet.data.augment import reflect_index
from rescrnet.data.synthetic import mean_mask_baseline, synth_sample
from rescrnet import rng as rngmod
from rescrnet.errors import ConfigError, DataError


# -- raster I/O -------------------------------------------------------------------

@pytest.mark.parametrize("ext", [".png", ".pgm"])
def test_mask_round_trip(tmp_path, ext):
    m = np.random.default_rng(0).random((17, 23)) > 0.5
    p = tmp_path / f"m{ext}"
    write_mask(p, m)
    back = read_mask(p)
    assert np.array_equal(back, m)
    assert set(np.unique(np.array(Image.open(p)))) <= {0, 255}
    planes = onehot_to_planes(masks_to_onehot([back]))
    write_mask(tmp_path / f"again{ext}", planes[0])
    assert (tmp_path / f"again{ext}").read_bytes() == p.read_bytes()


def test_sixteen_bit_image_scaled_to_unit(tmp_path):
    a = np.array([[0, 65535], [32768, 1000]], np.uint16)
    Image.fromarray(a).save(tmp_path / "x.png")
    np.testing.assert_allclose(read_image(tmp_path / "x.png"), a / 65535.0, rtol=1e-6)


def test_pgm_maxval_respected(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n3 1\n100\n" + bytes([0, 50, 100]))
    np.testing.assert_allclose(read_image(p), [[0.0, 128 / 255, 1.0]], atol=1e-6)
    q = tmp_path / "y.pgm"
    q.write_bytes(b"P2\n2 1\n1000\n0 1000\n")
    np.testing.assert_allclose(read_image(q), [[0.0, 1.0]])


def test_non_binary_mask_and_garbage_rejected(tmp_path):
    Image.fromarray(np.array([[0, 128, 255]], np.uint8)).save(tmp_path / "m.png")
    with pytest.raises(DataError):
        read_mask(tmp_path / "m.png")
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(DataError):
        read_image(tmp_path / "bad.png")


# -- preprocessing ------------------------------------------------------------------

def test_resize_nearest_keeps_values_and_identity():
    m = np.random.default_rng(1).random((40, 50)) > 0.5
    r = resize(m, 300, 340, "nearest")
    assert r.shape == (300, 340) and r.dtype == bool
    a = np.random.default_rng(2).random((7, 9)).astype(np.float32)
    assert np.array_equal(resize(a, 7, 9), a)
    assert np.array_equal(resize(a, 7, 9, "nearest"), a)


def test_resize_bilinear_constant_and_range():
    a = np.full((5, 6), 0.25, np.float32)
    np.testing.assert_allclose(resize(a, 13, 4), 0.25)
    b = np.random.default_rng(3).random((8, 8))
    r = resize(b, 21, 5)
    assert r.min() >= b.min() and r.max() <= b.max()


def test_equalize_flattens_histogram():
    img = np.random.default_rng(4).beta(2, 8, size=(64, 64))
    eq = histogram_equalize(img)
    assert eq.max() == 1.0
    assert abs(np.mean(eq) - 0.5) < 0.02
    assert np.all(np.diff(eq.ravel()[np.argsort(img.ravel())]) >= 0)


def test_complement_and_onehot():
    lung = np.array([[0, 1], [1, 1]], bool)
    c = complement_mask(lung)
    assert c.shape == (2, 2, 2) and np.array_equal(c.sum(-1), np.ones((2, 2)))
    assert np.array_equal(c[..., 1].astype(bool), lung)
    with pytest.raises(DataError):
        complement_mask(np.array([[0, 2]]))
    a, b = np.zeros((3, 3), bool), np.zeros((3, 3), bool)
    a[0], b[2] = True, True
    oh = masks_to_onehot([a, b])
    assert oh.shape == (3, 3, 3)
    assert [p.tolist() for p in onehot_to_planes(oh)] == [a.tolist(), b.tolist()]
    with pytest.raises(DataError):
        masks_to_onehot([a, a])


# -- manifest and split ---------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    entries = [Entry("a", "i/a.png", ("m/a.png",), "g1", "train"), Entry("b", "i/b.png", ("m/b1.png", "m/b2.png"),
                                                                        "", "val")]
    write_manifest(tmp_path / "m.tsv", DatasetManifest(entries))
    back = read_manifest(tmp_path / "m.tsv")
    assert back.entries[0] == entries[0]
    assert back.entries[1].mask_paths == ("m/b1.png", "m/b2.png")
    assert back.entries[1].group_id == "unknown:b"


def test_manifest_bad_line_reports_line_number(tmp_path):
    (tmp_path / "m.tsv").write_text("sample_id\timage_path\tmask_path\tgroup_id\tsplit\na\tb\n")
    with pytest.raises(DataError, match=":2:"):
        read_manifest(tmp_path / "m.tsv")


def test_leakage_detected():
    m = DatasetManifest([Entry("a", "x", ("y",), "g", "train"), Entry("b", "x", ("y",), "g", "val")])
    with pytest.raises(DataError):
        m.check_leakage()


def test_split_is_group_aware_and_seeded():
    entries = [Entry(f"s{i}", "x", ("y",), f"p{i // 3}") for i in range(30)]
    a = split_manifest(entries, 0.2, seed=5)
    assert a.entries == split_manifest(entries, 0.2, seed=5).entries
    a.check_leakage()
    assert len(a.split("val")) == 6


def test_split_singletons_exact_target():
    entries = [Entry(f"s{i}", "x", ("y",)) for i in range(952)]
    assert len(split_manifest(entries, 48 / 952, seed=0).split("val")) == 48


def test_split_needs_two_groups():
    with pytest.raises(DataError):
        split_manifest([Entry(f"s{i}", "x", ("y",), "g") for i in range(4)], 0.5)
    with pytest.raises(ConfigError):
        split_manifest([Entry("a", "x", ("y",)), Entry("b", "x", ("y",))], 1.0)


# -- augmentation -------------------------------------------------------------------

def sample_of(img, labels, c=2):
    return Sample("s", img.astype(np.float32), np.eye(c, dtype=np.float32)[labels],
                  np.random.default_rng(0).random(img.shape).astype(np.float32))


def test_identity_params_are_exact():
    rng = np.random.default_rng(6)
    s = sample_of(rng.random((9, 13)), rng.integers(0, 2, (9, 13)))
    out = apply_augment(s, AugmentParams())
    assert np.array_equal(out.image, s.image) and np.array_equal(out.masks, s.masks)
    assert np.array_equal(out.weights, s.weights)
    assert draw_augment_params(rng, AugmentRanges.identity()) == AugmentParams(scale=1.0)


def test_flips_match_numpy_and_are_involutions():
    rng = np.random.default_rng(7)
    s = sample_of(rng.random((6, 8)), rng.integers(0, 2, (6, 8)))
    h = apply_augment(s, AugmentParams(flip_h=True))
    assert np.array_equal(h.image, s.image[:, ::-1])
    v = apply_augment(s, AugmentParams(flip_v=True))
    assert np.array_equal(v.masks, s.masks[::-1])
    assert np.array_equal(apply_augment(h, AugmentParams(flip_h=True)).image, s.image)


def test_rotation_by_90_matches_rot90_on_square():
    rng = np.random.default_rng(8)
    s = sample_of(rng.random((7, 7)), rng.integers(0, 2, (7, 7)))
    out = apply_augment(s, AugmentParams(rotation_deg=90))
    # positive angles turn the picture clockwise on screen
    np.testing.assert_allclose(out.image, np.rot90(s.image, k=-1), atol=1e-6)
    assert np.array_equal(out.masks, np.rot90(s.masks, k=-1))


def test_registration_marker_moves_with_image():
    img = np.zeros((31, 31))
    img[20, 8] = 1
    labels = (img > 0).astype(int)
    p = AugmentParams(rotation_deg=12, shear_deg=5, shift_rows=0.05, shift_cols=-0.07, scale=1.05)
    out = apply_augment(sample_of(img, labels), p)
    peak = np.unravel_index(np.argmax(out.image), img.shape)
    marked = np.argwhere(out.masks[..., 1] > 0)
    assert len(marked) >= 1
    assert np.min(np.abs(marked - np.array(peak)).sum(1)) <= 1


def test_mask_stays_onehot_and_image_in_range():
    rng = np.random.default_rng(9)
    s = sample_of(rng.random((20, 24)), rng.integers(0, 3, (20, 24)), 3)
    for k in range(10):
        out = apply_augment(s, draw_augment_params(augment_rng(0, 1, k)))
        assert set(np.unique(out.masks)) <= {0.0, 1.0}
        assert np.array_equal(out.masks.sum(-1), np.ones((20, 24)))
        assert out.image.min() >= s.image.min() and out.image.max() <= s.image.max()
        assert set(np.unique(out.weights)) <= set(np.unique(s.weights))


def test_reflect_index():
    assert reflect_index(np.arange(-4, 8), 4).tolist() == [3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_drawn_params_within_ranges(seed):
    p = draw_augment_params(np.random.default_rng(seed))
    assert abs(p.rotation_deg) <= 15 and abs(p.shear_deg) <= 8
    assert abs(p.shift_rows) <= 0.1 and abs(p.shift_cols) <= 0.1
    assert 0.9 <= p.scale <= 1.1


def test_augment_stream_is_keyed():
    a = draw_augment_params(augment_rng(3, 2, 5))
    assert a == draw_augment_params(augment_rng(3, 2, 5))
    assert a != draw_augment_params(augment_rng(3, 2, 6))


# -- batching -----------------------------------------------------------------------

def test_num_batches():
    assert num_batches(904, 8) == 113
    assert num_batches(6191, 12) == 516
    assert num_batches(1, 8) == 1


def test_batches_cover_split_in_order(small_dataset):
    m = read_manifest(small_dataset / "manifest.tsv")
    store = SampleStore(m)
    batches = list(batch_iterator(store, "train", 4, augment=False))
    assert [len(b.sample_ids) for b in batches] == [4, 4, 1]
    assert sum((b.sample_ids for b in batches), []) == store.ids("train")
    b = batches[0]
    assert b.images.shape == (4, 32, 32, 1) and b.masks.shape == (4, 32, 32, 2) and b.weights.shape == (4, 32, 32)


def test_batches_independent_of_worker_count(small_dataset):
    m = read_manifest(small_dataset / "manifest.tsv")
    one = list(batch_iterator(SampleStore(m), "train", 4, seed=2, epoch=3, workers=1))
    three = list(batch_iterator(SampleStore(m), "train", 4, seed=2, epoch=3, workers=3))
    for a, b in zip(one, three):
        assert np.array_equal(a.images, b.images) and np.array_equal(a.masks, b.masks)
        assert np.array_equal(a.weights, b.weights)


def test_load_with_resize(small_dataset):
    m = read_manifest(small_dataset / "manifest.tsv")
    s = SampleStore(m, PreprocessConfig(resize_rows=40, resize_cols=50)).get(m.entries[0].sample_id)
    assert s.image.shape == (40, 50) and s.masks.shape == (40, 50, 2)


def test_empty_split_rejected(small_dataset):
    m = read_manifest(small_dataset / "manifest.tsv")
    only_train = DatasetManifest(m.split("train"), m.root)
    with pytest.raises(DataError):
        next(batch_iterator(SampleStore(only_train), "val", 2))


# -- synthetic data -------------------------------------------------------------------

def test_synthetic_dataset_layout(small_dataset):
    m = read_manifest(small_dataset / "manifest.tsv").validate()
    assert len(m.split("train")) == 9 and len(m.split("val")) == 3
    summary = json.loads((small_dataset / "summary.json").read_text())
    assert summary["mean_mask_baseline_dice"] < 0.9
    assert all(0.15 <= f <= 0.55 for f in summary["lung_fraction"])


def test_synthetic_samples_reproducible():
    a = synth_sample(rngmod.stream(0, rngmod.SYNTH, 3), 48, 48)
    b = synth_sample(rngmod.stream(0, rngmod.SYNTH, 3), 48, 48)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    with pytest.raises(ConfigError):
        synth_sample(np.random.default_rng(0), 10, 48)


def test_mean_mask_baseline_of_identical_masks_is_one():
    m = np.zeros((8, 8), bool)
    m[2:6, 2:6] = True
    assert mean_mask_baseline([m, m, m]) == 1.0
