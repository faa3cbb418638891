import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dbnsep import data as D
from dbnsep.errors import (
    AspectError,
    DomainError,
    IdxDimensionError,
    IdxMagicError,
    IdxTruncatedError,
    PgmFormatError,
    ShapeError,
)
from dbnsep.numerics import make_rng


def idx_fixture(n=2, h=28, w=28, seed=0):
    pixels = make_rng(seed).integers(0, 256, size=n * h * w, dtype=np.uint8)
    pixels[0], pixels[1] = 0, 255
    header = bytes([0, 0, 8, 3]) + n.to_bytes(4, "big") + h.to_bytes(4, "big") + w.to_bytes(4, "big")
    return header + pixels.tobytes(), pixels


def test_load_idx_hand_built(tmp_path):
    blob, pixels = idx_fixture()
    assert len(blob) == 16 + 1568
    (tmp_path / "img.idx").write_bytes(blob)
    s = D.load_idx(tmp_path / "img.idx")
    assert (len(s), s.height, s.width) == (2, 28, 28)
    assert s.images[0, 0] == 0.0 and s.images[0, 1] == 1.0
    np.testing.assert_array_equal(s.images.ravel() * 255.0, pixels.astype(float))
    assert s.single_aspect() == D.DIGIT


def test_load_idx_labels_and_gzip(tmp_path):
    blob, _ = idx_fixture(n=3)
    with gzip.open(tmp_path / "img.idx.gz", "wb") as f:
        f.write(blob)
    (tmp_path / "lab.idx").write_bytes(bytes([0, 0, 8, 1]) + (3).to_bytes(4, "big") + bytes([7, 1, 9]))
    s = D.load_idx(tmp_path / "img.idx.gz", tmp_path / "lab.idx")
    assert s.labels.tolist() == [7, 1, 9]


def test_load_idx_errors(tmp_path):
    blob, _ = idx_fixture()
    p = tmp_path / "x.idx"
    p.write_bytes(blob[:-10])
    with pytest.raises(IdxTruncatedError, match="expected 1568 data bytes, found 1558"):
        D.load_idx(p)
    p.write_bytes(bytes([0, 0, 8, 1]) + blob[4:])
    with pytest.raises(IdxMagicError):
        D.load_idx(p)
    p.write_bytes(blob + b"\x00")
    with pytest.raises(IdxDimensionError):
        D.load_idx(p)
    p.write_bytes(blob)
    lab = tmp_path / "lab.idx"
    lab.write_bytes(bytes([0, 0, 8, 1]) + (5).to_bytes(4, "big") + bytes(5))
    with pytest.raises(IdxDimensionError):
        D.load_idx(p, lab)


def test_save_idx_round_trip(tmp_path):
    blob, _ = idx_fixture(n=4, seed=3)
    (tmp_path / "a.idx").write_bytes(blob)
    s = D.load_idx(tmp_path / "a.idx")
    D.save_idx(tmp_path / "b.idx", s.images, s.height, s.width)
    assert (tmp_path / "b.idx").read_bytes() == blob


def test_bundled_mnist():
    s = D.load_idx(*D.bundled_mnist_paths())
    assert (len(s), s.height, s.width) == (2000, 28, 28)
    assert s.labels[:10].tolist() == list(range(10))
    assert np.bincount(s.labels[:1000]).tolist() == [100] * 10


def test_synth_faces_properties():
    a, b = D.synth_faces(20, seed=4), D.synth_faces(20, seed=4)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.images.min() >= 0.0 and a.images.max() <= 1.0
    assert a.single_aspect() == D.FACE and a.pair_index is None
    assert D.synth_faces(3, 16, 20, seed=1).images.shape == (3, 320)
    with pytest.raises(DomainError):
        D.synth_faces(2, 15, 28)
    with pytest.raises(DomainError):
        D.synth_faces(0)


def test_faces_distinguishable_above_noise_floor():
    # same geometry rendered with two noise draws vs distinct faces, 100 faces
    rng = make_rng(7)
    params = [D.draw_face_params(rng, 28, 28) for _ in range(100)]
    a = np.array([D.render_face(28, 28, p, make_rng(1, 1)).ravel() for p in params])
    b = np.array([D.render_face(28, 28, p, make_rng(2, 1)).ravel() for p in params])
    noise_floor = np.mean((a - b) ** 2)
    d = np.mean((a[:, None] - a[None]) ** 2, axis=2)
    pairwise = d[~np.eye(100, dtype=bool)].mean()
    assert pairwise > 10 * noise_floor


@pytest.fixture(scope="module")
def sources():
    faces = D.synth_faces(30, seed=2)
    digits = D.load_idx(*D.bundled_mnist_paths()).subset(np.arange(30))
    return faces, digits


def test_corrupt_pairing_and_max(sources):
    faces, digits = sources
    mixed = D.corrupt(faces, digits, 20, seed=3)
    assert mixed.single_aspect() == D.MIXED
    fr, dr = mixed.pair_index[:, 0], mixed.pair_index[:, 1]
    assert len(set(fr)) == 20 and len(set(dr)) == 20
    assert np.all(mixed.images >= faces.images[fr])
    for i in range(20):
        digit = D._shift(digits.image(dr[i]), *mixed.offsets[i])
        assert np.sum(digit) == pytest.approx(np.sum(digits.images[dr[i]]))  # ink stays in frame
        np.testing.assert_array_equal(mixed.images[i], np.maximum(faces.images[fr[i]], digit.ravel()))


def test_corrupt_blank_digit_is_identity(sources):
    faces, _ = sources
    blank = D.ImageSet(np.zeros((5, 784)), 28, 28, D.DIGIT)
    mixed = D.corrupt(faces, blank, 5, seed=1)
    np.testing.assert_array_equal(mixed.images, faces.images[mixed.pair_index[:, 0]])


def test_corrupt_deterministic_and_errors(sources):
    faces, digits = sources
    a, b = D.corrupt(faces, digits, 10, seed=8), D.corrupt(faces, digits, 10, seed=8)
    assert a.images.tobytes() == b.images.tobytes() and (a.pair_index == b.pair_index).all()
    with pytest.raises(DomainError):
        D.corrupt(faces, digits, 31, seed=0)
    with pytest.raises(ShapeError):
        D.corrupt(D.synth_faces(2, 20, 20), digits, 1, seed=0)


@pytest.mark.slow
def test_corrupt_large_scale():
    faces = D.ImageSet(np.zeros((10000, 784)), 28, 28, D.FACE)
    digits = D.ImageSet(np.zeros((5000, 784)), 28, 28, D.DIGIT)
    assert len(D.corrupt(faces, digits, 5000, seed=0)) == 5000


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32))
def test_imageset_invariants_after_corrupt(n, seed):
    faces = D.synth_faces(12, 16, 16, seed=seed)
    rng = make_rng(seed)
    digits = D.ImageSet(rng.random((12, 256)) * (rng.random((12, 256)) < 0.2), 16, 16, D.DIGIT)
    mixed = D.corrupt(faces, digits, n, seed=seed)
    mixed.validate()
    assert mixed.images.min() >= 0 and mixed.images.max() <= 1
    assert mixed.pair_index.min() >= 0 and mixed.pair_index[:, 0].max() < 12 and mixed.pair_index[:, 1].max() < 12


def test_imageset_validation():
    with pytest.raises(DomainError):
        D.ImageSet(np.full((1, 4), 1.5), 2, 2, D.FACE)
    with pytest.raises(DomainError):
        D.ImageSet(np.zeros((1, 4)), 2, 2, D.MIXED)
    with pytest.raises(DomainError):
        D.ImageSet(np.zeros((1, 4)), 2, 2, D.FACE, pair_index=[[0, 0]])
    with pytest.raises(ShapeError):
        D.ImageSet(np.zeros((1, 5)), 2, 2, D.FACE)
    with pytest.raises(AspectError):
        D.ImageSet(np.zeros((2, 4)), 2, 2, [D.FACE, D.DIGIT]).single_aspect()


# -- PGM ---------------------------------------------------------------------------

def test_pgm_header_and_endpoints(tmp_path):
    img = np.zeros((28, 28))
    img[0, 0], img[0, 1] = 1.0, 0.0
    D.save_pgm(img, tmp_path / "a.pgm")
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n28 28\n255\n")
    assert len(raw) == len(b"P5\n28 28\n255\n") + 784
    assert raw[13] == 255 and raw[14] == 0


def test_pgm_rounding_half_up():
    assert D.to_bytes([0.5 / 255, 1.5 / 255, 0.49 / 255]).tolist() == [1, 2, 0]


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_pgm_round_trip_exact(tmp_path_factory, pixels):
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    img = pixels / 255.0
    D.save_pgm(img, path)
    back = D.load_pgm(path)
    assert D.to_bytes(back).tobytes() == pixels.tobytes()
    np.testing.assert_array_equal(back, img)


def test_pgm_rejects_malformed(tmp_path):
    p = tmp_path / "bad.pgm"
    for blob in (b"P2\n2 2\n255\n0000", b"P5\n2 2\n255\n000", b"P5\n2 x\n255\n0000", b"P5\n2 2\n65535\n00000000"):
        p.write_bytes(blob)
        with pytest.raises(PgmFormatError):
            D.load_pgm(p)


def test_pgm_accepts_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(D.load_pgm(p), [[0.0, 1.0]])


def test_save_pgm_row_needs_shape(tmp_path):
    D.save_pgm(np.zeros(784), tmp_path / "sq.pgm")
    with pytest.raises(ShapeError):
        D.save_pgm(np.zeros(10), tmp_path / "x.pgm")
    D.save_pgm(np.zeros(10), tmp_path / "y.pgm", shape=(2, 5))
    assert D.load_pgm(tmp_path / "y.pgm").shape == (2, 5)


def test_montage_single_equals_image(tmp_path):
    img = make_rng(1).random(784)
    D.montage([img], (1, 1), tmp_path / "m.pgm")
    D.save_pgm(img, tmp_path / "s.pgm")
    assert (tmp_path / "m.pgm").read_bytes() == (tmp_path / "s.pgm").read_bytes()


def test_montage_dims_and_separators(tmp_path):
    imgs = [np.zeros(784) for _ in range(6)]
    canvas = D.montage(imgs, (2, 3), tmp_path / "m.pgm")
    assert canvas.shape == (57, 86)
    back = D.load_pgm(tmp_path / "m.pgm")
    assert back.shape == (57, 86)
    assert np.all(back[28, :] == 1.0) and np.all(back[:, 28] == 1.0) and np.all(back[:, 57] == 1.0)
    assert back[:28, :28].max() == 0.0
    with pytest.raises(ShapeError):
        D.montage(imgs[:5], (2, 3), tmp_path / "bad.pgm")


def test_dataset_directory_round_trip(tmp_path, sources):
    faces, digits = sources
    faces = D.ImageSet(D.to_bytes(faces.images) / 255.0, 28, 28, D.FACE)
    mixed = D.corrupt(faces, digits, 10, seed=5)
    D.save_dataset(tmp_path, faces, digits, mixed)
    f2, d2, m2 = D.load_dataset(tmp_path)
    np.testing.assert_array_equal(f2.images, faces.images)
    np.testing.assert_array_equal(d2.images, digits.images)
    np.testing.assert_array_equal(m2.images, mixed.images)
    np.testing.assert_array_equal(m2.pair_index, mixed.pair_index)
    np.testing.assert_array_equal(m2.offsets, mixed.offsets)
