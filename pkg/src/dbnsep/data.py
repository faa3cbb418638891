"""Face / digit / mixed image sets, IDX and PGM file I/O.

Faces are procedural (head ellipse, eyes, brows, mouth, hairline, side
lighting and smooth noise). Digits come from MNIST IDX files; a 2,000-digit
subset ships with the package (see ``bundled_mnist_paths``). Mixed images
overlay one digit onto one face by per-pixel maximum.
"""

import csv
import gzip
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import (
    AspectError,
    DomainError,
    IdxDimensionError,
    IdxMagicError,
    IdxTruncatedError,
    PgmFormatError,
    ShapeError,
)
from .numerics import make_rng

FACE, DIGIT, MIXED = "face", "digit", "mixed"
ASPECTS = (FACE, DIGIT, MIXED)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class ImageSet:
    """Flattened images in [0, 1], one row each, with per-row aspect tags.

    ``pair_index[i] = (face_row, digit_row)`` for mixed rows and ``(-1, -1)``
    otherwise; it is ``None`` when the set has no mixed rows. ``offsets``
    records the (row, col) shift applied to each overlaid digit.
    """

    images: np.ndarray
    height: int
    width: int
    aspect: np.ndarray
    pair_index: np.ndarray = None
    labels: np.ndarray = None
    offsets: np.ndarray = None

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        n = self.images.shape[0]
        if isinstance(self.aspect, str):
            self.aspect = np.full(n, self.aspect)
        self.aspect = np.asarray(self.aspect, dtype="<U5")
        if self.pair_index is not None:
            self.pair_index = np.asarray(self.pair_index, dtype=np.int64)
        self.validate()

    def validate(self):
        n = self.images.shape[0]
        if self.images.ndim != 2 or self.images.shape[1] != self.height * self.width:
            raise ShapeError(f"images shape {self.images.shape} does not match {self.height}x{self.width}")
        if self.aspect.shape != (n,):
            raise ShapeError(f"{self.aspect.shape[0]} aspect tags for {n} images")
        if not set(self.aspect.tolist()) <= set(ASPECTS):
            raise DomainError(f"unknown aspect tags {set(self.aspect.tolist()) - set(ASPECTS)}")
        if n and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DomainError("pixel values must lie in [0, 1]")
        mixed = self.aspect == MIXED
        if self.pair_index is None:
            if mixed.any():
                raise DomainError("mixed images require pair_index")
        else:
            if self.pair_index.shape != (n, 2):
                raise ShapeError(f"pair_index shape {self.pair_index.shape}, expected ({n}, 2)")
            if np.any(self.pair_index[mixed] < 0):
                raise DomainError("negative pair index on a mixed row")
            if np.any(self.pair_index[~mixed] != -1):
                raise DomainError("pair_index set on a non-mixed row")

    def __len__(self):
        return self.images.shape[0]

    def single_aspect(self):
        """The one aspect shared by every row, else ``AspectError``."""
        tags = set(self.aspect.tolist())
        if len(tags) != 1:
            raise AspectError(f"expected a single-aspect set, found {sorted(tags)}")
        return tags.pop()

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        pick = lambda a: None if a is None else a[rows]
        return ImageSet(
            self.images[rows], self.height, self.width, self.aspect[rows],
            pick(self.pair_index), pick(self.labels), pick(self.offsets),
        )

    def image(self, i):
        return self.images[i].reshape(self.height, self.width)


# -- IDX ---------------------------------------------------------------------

def _open_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, path):
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: {len(raw)} bytes, too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = raw[3]
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxTruncatedError(f"{path}: header needs {head} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    expected = int(np.prod(dims))
    actual = len(raw) - head
    if actual < expected:
        raise IdxTruncatedError(f"{path}: expected {expected} data bytes, found {actual}")
    if actual > expected:
        raise IdxDimensionError(f"{path}: {actual - expected} bytes beyond the declared dimensions {dims}")
    return dims, np.frombuffer(raw, dtype=np.uint8, offset=head)


def load_idx(images_path, labels_path=None):
    """Read an IDX image file (magic 2051, optionally gzip'd) as a digit ImageSet."""
    dims, pixels = _parse_idx(_open_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    if len(dims) != 3:
        raise IdxDimensionError(f"{images_path}: image file has {len(dims)} dimensions, expected 3")
    n, h, w = dims
    labels = None
    if labels_path is not None:
        ldims, labels = _parse_idx(_open_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
        if len(ldims) != 1 or ldims[0] != n:
            raise IdxDimensionError(f"{labels_path}: {ldims} labels for {n} images")
        labels = labels.astype(np.int64)
    images = pixels.reshape(n, h * w).astype(np.float64) / 255.0
    return ImageSet(images, h, w, DIGIT, labels=labels)


def to_bytes(x):
    """Quantize [0, 1] to 0..255, rounding half up."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_idx(path, images, height, width):
    """Write images (N x H*W in [0, 1]) as an IDX file; gzip'd when the name ends in .gz."""
    images = np.asarray(images)
    n = images.shape[0]
    blob = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, height, width) + to_bytes(images).tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.GzipFile(path, "wb", mtime=0) as f:
            f.write(blob)
    else:
        path.write_bytes(blob)


def save_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def bundled_mnist_paths():
    """Paths of the packaged MNIST subset: 2,000 digits, classes interleaved 0..9."""
    base = resources.files("dbnsep") / "resources"
    return (
        Path(str(base / "mnist-subset-images-idx3-ubyte.gz")),
        Path(str(base / "mnist-subset-labels-idx1-ubyte.gz")),
    )


# -- procedural faces --------------------------------------------------------

def draw_face_params(rng, height, width):
    """Random geometry and shading for one face."""
    u = rng.uniform
    return dict(
        background=u(0.0, 0.12),
        cy=height * 0.5 + u(-1.5, 1.5),
        cx=width * 0.5 + u(-1.5, 1.5),
        ry=height * u(0.21, 0.27),
        rx=width * u(0.16, 0.21),
        skin=u(0.2, 0.45),
        light=u(-0.35, 0.35),
        hairline=u(-0.75, -0.35),
        hair=u(0.05, 0.45),
        eye_y=u(0.15, 0.35),
        eye_x=u(0.3, 0.5),
        eye_size=u(0.7, 1.4),
        eye_depth=u(0.45, 0.8),
        brow=u(0.0, 0.5),
        mouth_y=u(0.4, 0.6),
        mouth_w=u(0.25, 0.5),
        mouth_curve=u(-0.25, 0.5),
        mouth_depth=u(0.3, 0.6),
    )


def render_face(height, width, prm, noise_rng, noise_level=0.012):
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dy = (yy - prm["cy"]) / prm["ry"]
    dx = (xx - prm["cx"]) / prm["rx"]
    r = np.sqrt(dy * dy + dx * dx)
    head = 1.0 / (1.0 + np.exp(np.clip((r - 1.0) / 0.06, -50, 50)))

    tone = prm["skin"] * (1.0 + prm["light"] * dx)
    tone = np.where(dy < prm["hairline"], tone * prm["hair"], tone)

    dark = np.zeros_like(yy)
    s = prm["eye_size"]
    ey = prm["cy"] - prm["eye_y"] * prm["ry"]
    for side in (-1.0, 1.0):
        ex = prm["cx"] + side * prm["eye_x"] * prm["rx"]
        dark += prm["eye_depth"] * np.exp(-((yy - ey) ** 2 + (xx - ex) ** 2) / (2 * s * s))
        by = ey - 2.2 * s
        dark += prm["brow"] * np.exp(-((yy - by) ** 2) / 0.8 - ((xx - ex) ** 2) / (2 * (1.8 * s) ** 2))

    my = prm["cy"] + prm["mouth_y"] * prm["ry"]
    mw = prm["mouth_w"] * prm["rx"]
    t = (xx - prm["cx"]) / mw
    arc_y = my - prm["mouth_curve"] * mw * 0.5 * (1.0 - t * t)
    within = np.exp(-np.maximum(np.abs(t) - 1.0, 0.0) ** 2 / 0.02)
    dark += prm["mouth_depth"] * within * np.exp(-((yy - arc_y) ** 2) / 0.9)

    face = prm["background"] + head * (tone * (1.0 - np.clip(dark, 0.0, 1.0)) - prm["background"])
    noise = gaussian_filter(noise_rng.standard_normal((height, width)), sigma=1.0, mode="nearest")
    noise *= noise_level / max(noise.std(), 1e-12)
    return np.clip(face + noise, 0.0, 1.0)


def synth_faces(n, height=28, width=28, seed=0):
    if n < 1:
        raise DomainError(f"need at least one face, got n={n}")
    if height < 16 or width < 16:
        raise DomainError(f"face images must be at least 16x16, got {height}x{width}")
    rng = make_rng(seed, stream=0)
    images = np.empty((n, height * width))
    for i in range(n):
        prm = draw_face_params(rng, height, width)
        images[i] = render_face(height, width, prm, rng).ravel()
    return ImageSet(images, height, width, FACE)


# -- corruption --------------------------------------------------------------

def _shift(img, dr, dc):
    out = np.zeros_like(img)
    h, w = img.shape
    out[max(dr, 0):h + min(dr, 0), max(dc, 0):w + min(dc, 0)] = img[max(-dr, 0):h - max(dr, 0), max(-dc, 0):w - max(dc, 0)]
    return out


def corrupt(faces, digits, n, seed=0):
    """Overlay ``n`` digits onto ``n`` faces, sources drawn without replacement.

    Each digit's ink bounding box is moved to a random position fully inside
    the frame before the per-pixel maximum is taken.
    """
    if (faces.height, faces.width) != (digits.height, digits.width):
        raise ShapeError(
            f"face size {faces.height}x{faces.width} differs from digit size {digits.height}x{digits.width}"
        )
    if n > len(faces) or n > len(digits):
        raise DomainError(f"n={n} exceeds available faces ({len(faces)}) or digits ({len(digits)})")
    h, w = faces.height, faces.width
    rng = make_rng(seed, stream=0)
    face_rows = rng.choice(len(faces), size=n, replace=False)
    digit_rows = rng.choice(len(digits), size=n, replace=False)
    images = np.empty((n, h * w))
    offsets = np.zeros((n, 2), dtype=np.int64)
    for i, (fr, dr) in enumerate(zip(face_rows, digit_rows)):
        digit = digits.image(dr)
        ink_r = np.flatnonzero(digit.any(axis=1))
        ink_c = np.flatnonzero(digit.any(axis=0))
        if ink_r.size:
            r0, r1, c0, c1 = ink_r[0], ink_r[-1], ink_c[0], ink_c[-1]
            offsets[i] = (rng.integers(-r0, h - r1), rng.integers(-c0, w - c1))
            digit = _shift(digit, *offsets[i])
        images[i] = np.maximum(faces.images[fr], digit.ravel())
    pair_index = np.stack([face_rows, digit_rows], axis=1)
    return ImageSet(images, h, w, MIXED, pair_index=pair_index, offsets=offsets)


# -- PGM ---------------------------------------------------------------------

def _as_image(image, shape):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 1:
        if shape is None:
            side = int(round(np.sqrt(img.size)))
            if side * side != img.size:
                raise ShapeError(f"cannot infer a square shape for {img.size} pixels; pass shape=")
            shape = (side, side)
        img = img.reshape(shape)
    if img.ndim != 2:
        raise ShapeError(f"image must be 2-D, got shape {img.shape}")
    return img


def save_pgm(image, path, shape=None):
    """Write a binary (P5) PGM with maxval 255. 1-D rows need ``shape`` unless square."""
    img = _as_image(image, shape)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + to_bytes(img).tobytes())


def load_pgm(path):
    """Read a P5 PGM (maxval <= 255) into a float array in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PgmFormatError(f"{path}: header ended early")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise PgmFormatError(f"{path}: magic {tokens[0]!r}, expected b'P5'")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PgmFormatError(f"{path}: non-numeric header field") from exc
    if w < 1 or h < 1 or not 0 < maxval <= 255:
        raise PgmFormatError(f"{path}: unsupported header {w}x{h} maxval {maxval}")
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise PgmFormatError(f"{path}: missing whitespace after maxval")
    data = raw[pos + 1:]
    if len(data) != w * h:
        raise PgmFormatError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval


def montage(rows, grid, path, shape=None):
    """Tile images row-major into a grid with 1-pixel white separators and save as PGM."""
    n_r, n_c = grid
    images = [_as_image(r, shape) for r in rows]
    if len(images) != n_r * n_c:
        raise ShapeError(f"{len(images)} images do not fill a {n_r}x{n_c} grid")
    h, w = images[0].shape
    if any(img.shape != (h, w) for img in images):
        raise ShapeError("montage images differ in size")
    canvas = np.ones((n_r * h + n_r - 1, n_c * w + n_c - 1))
    for k, img in enumerate(images):
        r, c = divmod(k, n_c)
        canvas[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = img
    save_pgm(canvas, path)
    return canvas


# -- dataset directories -----------------------------------------------------

PAIRS_HEADER = ["mixed_row", "face_row", "digit_row", "row_offset", "col_offset"]


def write_pairs(path, mixed):
    with open(path, "w", newline="", encoding="utf-8") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(PAIRS_HEADER)
        for i, ((fr, dr), (orow, ocol)) in enumerate(zip(mixed.pair_index, mixed.offsets)):
            out.writerow([i, int(fr), int(dr), int(orow), int(ocol)])


def read_pairs(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    pair_index = np.array([[int(r["face_row"]), int(r["digit_row"])] for r in rows], dtype=np.int64).reshape(-1, 2)
    offsets = np.array([[int(r["row_offset"]), int(r["col_offset"])] for r in rows], dtype=np.int64).reshape(-1, 2)
    return pair_index, offsets


def save_dataset(directory, faces, digits, mixed):
    """Write faces.idx, digits.idx, mixed.idx and pairs.csv into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, s in (("faces", faces), ("digits", digits), ("mixed", mixed)):
        save_idx(directory / f"{name}.idx", s.images, s.height, s.width)
    write_pairs(directory / "pairs.csv", mixed)


def load_dataset(directory):
    directory = Path(directory)
    faces = load_idx(directory / "faces.idx")
    faces = ImageSet(faces.images, faces.height, faces.width, FACE)
    digits = load_idx(directory / "digits.idx")
    mixed_raw = load_idx(directory / "mixed.idx")
    pair_index, offsets = read_pairs(directory / "pairs.csv")
    if len(pair_index) != len(mixed_raw):
        raise DomainError(f"pairs.csv lists {len(pair_index)} pairs for {len(mixed_raw)} mixed images")
    mixed = ImageSet(mixed_raw.images, mixed_raw.height, mixed_raw.width, MIXED, pair_index=pair_index, offsets=offsets)
    return faces, digits, mixed
