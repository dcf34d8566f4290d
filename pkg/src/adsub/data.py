"""Datasets: IDX ingestion, pooling, synthetic mixtures and file containers."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from adsub.measurement import ActionSpace, MeasurementModel, apply_forward
from adsub.prior import IsotropicGmm


class FormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    tensors: np.ndarray
    shape: tuple[int, ...]
    provenance: str = ""
    labels: np.ndarray | None = None

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.tensors, dtype=np.float64))
        if t.shape[0] < 1:
            raise ValueError("a dataset needs at least one row")
        if not np.all(np.isfinite(t)):
            raise ValueError("dataset contains non-finite values")
        if int(np.prod(self.shape)) != t.shape[1]:
            raise ValueError(f"shape {self.shape} does not match row length {t.shape[1]}")
        object.__setattr__(self, "tensors", t)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def __len__(self):
        return int(self.tensors.shape[0])

    @property
    def d(self) -> int:
        return int(self.tensors.shape[1])

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        lab = self.labels
        a = Dataset(self.tensors[:n_first], self.shape, self.provenance,
                    None if lab is None else lab[:n_first])
        b = Dataset(self.tensors[n_first:], self.shape, self.provenance,
                    None if lab is None else lab[n_first:])
        return a, b


# --- IDX ------------------------------------------------------------------

_IDX_U8_TENSOR = 0x00000803
_IDX_U8_LABELS = 0x00000801


def _parse_idx(raw: bytes) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError("truncated IDX header", len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (_IDX_U8_TENSOR, _IDX_U8_LABELS):
        raise FormatError(f"bad IDX magic 0x{magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX dimension block", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) < header + n:
        raise FormatError(f"truncated IDX payload: expected {n} bytes", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def load_idx(path) -> Dataset:
    """Load a u8 image tensor (or label vector) and scale it to [0, 1]."""
    raw = Path(path).read_bytes()
    arr = _parse_idx(raw)
    if arr.ndim == 1:
        return Dataset(arr.reshape(-1, 1).astype(np.float64), (1,), f"idx:{Path(path).name}")
    shape = arr.shape[1:]
    return Dataset(arr.reshape(arr.shape[0], -1) / 255.0, shape, f"idx:{Path(path).name}")


def load_idx_labels(path) -> np.ndarray:
    return _parse_idx(Path(path).read_bytes()).reshape(-1).astype(np.int64)


def write_idx(path, array) -> None:
    arr = np.asarray(array, dtype=np.uint8)
    magic = _IDX_U8_LABELS if arr.ndim == 1 else _IDX_U8_TENSOR
    magic = (magic & ~0xFF) | arr.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


# --- pooling and synthesis ------------------------------------------------

def downsample(ds: Dataset, factor: int, pad_to: tuple[int, int] | None = None) -> Dataset:
    """Zero-pad (centred) to ``pad_to`` if given, then mean-pool by ``factor``."""
    if len(ds.shape) != 2:
        raise ValueError("downsample expects single-channel 2-D images")
    H, W = ds.shape
    imgs = ds.tensors.reshape(-1, H, W)
    if pad_to is not None:
        PH, PW = pad_to
        if PH < H or PW < W:
            raise ValueError("pad_to must not shrink the image")
        top, left = (PH - H) // 2, (PW - W) // 2
        padded = np.zeros((imgs.shape[0], PH, PW))
        padded[:, top:top + H, left:left + W] = imgs
        imgs, H, W = padded, PH, PW
    if factor < 1 or H % factor or W % factor:
        raise ValueError(f"factor {factor} does not divide {H}x{W}")
    pooled = imgs.reshape(-1, H // factor, factor, W // factor, factor).mean(axis=(2, 4))
    return Dataset(pooled.reshape(pooled.shape[0], -1), (H // factor, W // factor),
                   f"{ds.provenance}|pool{factor}", ds.labels)


def synth_gmm_dataset(gmm: IsotropicGmm, N: int, seed: int, shape=None) -> Dataset:
    """I.i.d. mixture draws; ``labels`` records the generating component."""
    if N < 1:
        raise ValueError("N must be at least 1")
    x, labels = gmm.sample(N, np.random.default_rng(seed))
    return Dataset(x, tuple(shape) if shape is not None else (gmm.d,), f"gmm:seed={seed}", labels)


def planted_structure_gmm(shape=(16, 16), n_components: int = 8, n_groups: int = 2,
                          blob: int = 6, marker: int = 2, marker_level: float = 0.6,
                          background: float = 0.1, noise: float = 0.01, seed: int = 0) -> IsotropicGmm:
    """Mixture whose informative pixels depend on the component.

    Components come in ``n_groups`` groups. Each group owns a bright square
    blob (side ``blob``) at its own location; within a group each component
    is singled out by a small marker square (side ``marker``) at a location
    drawn from the pixels no blob covers. Telling groups apart is easy from
    almost any design; telling group members apart needs the few marker
    pixels of that group, which is what an adaptive design can go after.
    """
    H, W = shape
    rng = np.random.default_rng(seed)
    if n_components % n_groups:
        raise ValueError("n_components must be a multiple of n_groups")
    per_group = n_components // n_groups
    free = np.ones((H, W), dtype=bool)
    blob_pos = []
    # blobs on a coarse lattice, shuffled so groups are not ordered spatially
    cells = [(r, c) for r in range(0, H - blob + 1, blob + 1) for c in range(0, W - blob + 1, blob + 1)]
    if len(cells) < n_groups:
        raise ValueError("image too small for the requested blobs")
    for k in rng.permutation(len(cells))[:n_groups]:
        r, c = cells[k]
        blob_pos.append((r, c))
        free[r:r + blob, c:c + blob] = False
    # marker anchors on the marker lattice outside every blob
    anchors = [(r, c) for r in range(0, H - marker + 1, marker) for c in range(0, W - marker + 1, marker)
               if free[r:r + marker, c:c + marker].all()]
    if len(anchors) < n_components:
        raise ValueError("not enough free space for the markers")
    chosen = rng.choice(len(anchors), size=n_components, replace=False)
    means = np.full((n_components, H, W), background)
    for k in range(n_components):
        g = k // per_group
        r, c = blob_pos[g]
        means[k, r:r + blob, c:c + blob] = 1.0
        mr, mc = anchors[chosen[k]]
        means[k, mr:mr + marker, mc:mc + marker] = marker_level
    return IsotropicGmm(np.full(n_components, 1.0 / n_components),
                        means.reshape(n_components, -1), np.full(n_components, noise ** 2))


def data_variance_weights(model: MeasurementModel, ds: Dataset) -> np.ndarray:
    """Per-action sum of per-coordinate measurement variance over ``ds``."""
    y = apply_forward(model, ds.tensors)
    if np.iscomplexobj(y):
        var = y.real.var(axis=0) + y.imag.var(axis=0)
    else:
        var = y.var(axis=0)
    return action_sums(model.space, var)


def action_sums(space: ActionSpace, per_coord) -> np.ndarray:
    per_coord = np.asarray(per_coord, dtype=np.float64)
    return np.array([per_coord[g].sum() for g in space.groups])


# --- containers -----------------------------------------------------------

_TENSOR_MAGIC = b"ADST"
_TENSOR_VERSION = 1


def write_tensor(path, array) -> None:
    """Binary container: magic, u32 version, u32 ndim, u64 dims, f64 LE payload."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    with open(path, "wb") as f:
        f.write(_TENSOR_MAGIC)
        f.write(struct.pack("<II", _TENSOR_VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _TENSOR_MAGIC:
        raise FormatError("bad tensor magic", 0)
    if len(raw) < 12:
        raise FormatError("truncated tensor header", len(raw))
    version, ndim = struct.unpack("<II", raw[4:12])
    if version != _TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}", 4)
    end = 12 + 8 * ndim
    if len(raw) < end:
        raise FormatError("truncated tensor dims", len(raw))
    dims = struct.unpack(f"<{ndim}Q", raw[12:end])
    n = int(np.prod(dims)) if ndim else 1
    if len(raw) != end + 8 * n:
        raise FormatError(f"payload size mismatch: expected {8 * n} bytes", end)
    return np.frombuffer(raw, dtype="<f8", offset=end).reshape(dims).astype(np.float64)


def write_dataset_csv(path, ds: Dataset) -> None:
    H, W, C = (list(ds.shape) + [1, 1])[:3]
    with open(path, "w") as f:
        f.write(f"# H={H},W={W},C={C}\n")
        np.savetxt(f, ds.tensors, delimiter=",", fmt="%.17g")


def read_dataset_csv(path) -> Dataset:
    with open(path) as f:
        header = f.readline()
        if not header.startswith("#"):
            raise FormatError("missing '# H=..,W=..,C=..' header", 0)
        meta = dict(kv.split("=") for kv in header[1:].strip().split(","))
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    H, W, C = int(meta["H"]), int(meta["W"]), int(meta["C"])
    shape = (H, W) if C == 1 else (H, W, C)
    return Dataset(data, shape, f"csv:{Path(path).name}")


def write_dataset_tensor(path, ds: Dataset) -> None:
    write_tensor(path, ds.tensors.reshape((len(ds),) + ds.shape))


def read_dataset_tensor(path) -> Dataset:
    arr = read_tensor(path)
    return Dataset(arr.reshape(arr.shape[0], -1), arr.shape[1:], f"tensor:{Path(path).name}")


def write_mask_pgm(path, mask, shape) -> None:
    """Binary 0/1 mask as an 8-bit plain-header PGM (1 -> 255)."""
    H, W = shape
    img = (np.asarray(mask).reshape(H, W) > 0).astype(np.uint8) * 255
    with open(path, "wb") as f:
        f.write(f"P5\n{W} {H}\n255\n".encode())
        f.write(img.tobytes())


def read_mask_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError("not a binary PGM", 0)
    W, H, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    body = parts[4]
    img = np.frombuffer(body[:W * H], dtype=np.uint8).reshape(H, W)
    return (img > maxval // 2).astype(np.uint8)


def write_mask_csv(path, mask, shape) -> None:
    np.savetxt(path, np.asarray(mask).reshape(shape).astype(int), fmt="%d", delimiter=",")
