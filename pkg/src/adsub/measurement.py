"""Subsampling measurement model ``y_t = U(A_t) f(x) + n_t``.

Data vectors are flat. A real image of shape ``(H, W)`` is a length ``H*W``
vector; a complex image is stored as interleaved ``(re, im)`` pairs, i.e. a
flattened ``(H, W, 2)`` array of length ``2*H*W``. The measurement domain is
always the ``H x W`` grid, flattened row-major, and action groups index into
it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTION_KINDS = ("pixel", "row-line", "column-line", "box", "fourier-line")
FORWARD_KINDS = ("identity", "dft")


@dataclass(frozen=True)
class ActionSpace:
    kind: str
    shape: tuple[int, int]
    groups: tuple[np.ndarray, ...]

    @property
    def n_actions(self) -> int:
        return len(self.groups)

    @property
    def size(self) -> int:
        """Number of measurement-domain coordinates."""
        return int(self.shape[0] * self.shape[1])

    def coords(self, actions) -> np.ndarray:
        actions = list(actions)
        if not actions:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self.groups[a] for a in actions])

    def inclusion(self, actions) -> np.ndarray:
        """0/1 vector over actions."""
        v = np.zeros(self.n_actions, dtype=np.uint8)
        v[list(actions)] = 1
        return v


def build_action_space(kind: str, shape, box: tuple[int, int] = (4, 4)) -> ActionSpace:
    """Enumerate disjoint action groups covering an ``H x W`` grid.

    ``box`` is ``(w, h)`` and is only used by the ``box`` kind. Line kinds
    index columns left to right (``column-line``, ``fourier-line``) or rows
    top to bottom (``row-line``); boxes are numbered row-major over the tiling.
    """
    H, W = (int(s) for s in shape)
    if H < 1 or W < 1:
        raise ValueError(f"invalid shape {shape!r}")
    grid = np.arange(H * W, dtype=np.int64).reshape(H, W)
    if kind == "pixel":
        groups = [np.array([i]) for i in range(H * W)]
    elif kind == "row-line":
        groups = [grid[r].copy() for r in range(H)]
    elif kind in ("column-line", "fourier-line"):
        groups = [grid[:, c].copy() for c in range(W)]
    elif kind == "box":
        bw, bh = (int(b) for b in box)
        if bw < 1 or bh < 1 or H % bh or W % bw:
            raise ValueError(f"box {bw}x{bh} does not tile a {H}x{W} grid")
        groups = [grid[r:r + bh, c:c + bw].ravel()
                  for r in range(0, H, bh) for c in range(0, W, bw)]
    else:
        raise ValueError(f"unknown action kind {kind!r}; expected one of {ACTION_KINDS}")
    for g in groups:
        g.setflags(write=False)
    return ActionSpace(kind, (H, W), tuple(groups))


@dataclass
class ActionSet:
    """Actions acquired so far, in acquisition order (no repeats)."""

    space: ActionSpace
    actions: list[int] = field(default_factory=list)

    def __post_init__(self):
        initial, self.actions = list(self.actions), []
        for a in initial:
            self.add(a)

    def add(self, action: int) -> None:
        action = int(action)
        if not 0 <= action < self.space.n_actions:
            raise IndexError(f"action {action} outside [0, {self.space.n_actions})")
        if action in self.actions:
            raise ValueError(f"action {action} already acquired")
        self.actions.append(action)

    def __len__(self):
        return len(self.actions)

    def __contains__(self, action):
        return action in self.actions

    def remaining(self) -> list[int]:
        taken = set(self.actions)
        return [a for a in range(self.space.n_actions) if a not in taken]

    def coords(self) -> np.ndarray:
        return self.space.coords(self.actions)


@dataclass(frozen=True)
class MeasurementModel:
    forward: str
    noise_std: float
    space: ActionSpace
    complex_data: bool = False

    def __post_init__(self):
        if self.forward not in FORWARD_KINDS:
            raise ValueError(f"unknown forward model {self.forward!r}; expected one of {FORWARD_KINDS}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.complex_data and self.forward != "dft":
            raise ValueError("complex data is only supported with the dft forward model")

    @property
    def data_dim(self) -> int:
        return self.space.size * (2 if self.complex_data else 1)

    @property
    def measurement_dim(self) -> int:
        return self.space.size

    @property
    def is_complex(self) -> bool:
        return self.forward == "dft"


@dataclass(frozen=True)
class SparseMeasurement:
    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls, complex_valued: bool = False) -> "SparseMeasurement":
        return cls(np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.complex128 if complex_valued else np.float64))

    def __len__(self):
        return int(self.indices.size)

    def concat(self, other: "SparseMeasurement") -> "SparseMeasurement":
        return SparseMeasurement(np.concatenate([self.indices, other.indices]),
                                 np.concatenate([self.values, other.values]))


def _as_batch(model: MeasurementModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    d = model.data_dim
    if x.ndim >= 1 and x.shape[-1] == d and x.ndim <= 2:
        return np.atleast_2d(x), x.ndim == 1
    if x.size == d:
        return x.reshape(1, d), True
    raise ValueError(f"data of shape {x.shape} does not match model data dimension {d}")


def _to_image(model: MeasurementModel, xb: np.ndarray) -> np.ndarray:
    H, W = model.space.shape
    if model.complex_data:
        z = xb.reshape(-1, H, W, 2)
        return z[..., 0] + 1j * z[..., 1]
    return xb.reshape(-1, H, W)


def apply_forward(model: MeasurementModel, x) -> np.ndarray:
    """Map data to the (flat) measurement domain; batched over leading axis."""
    xb, single = _as_batch(model, x)
    if model.forward == "identity":
        out = xb.copy()
    else:
        out = np.fft.fft2(_to_image(model, xb), norm="ortho").reshape(xb.shape[0], -1)
    return out[0] if single else out


def apply_adjoint(model: MeasurementModel, r) -> np.ndarray:
    """Real adjoint of ``apply_forward``: maps measurement residuals to data space.

    For the DFT model this is ``Re``/``Im`` of the inverse orthonormal DFT,
    which is the gradient map of ``||f(x) - y||^2 / 2`` for real-parameterised data.
    """
    r = np.asarray(r)
    single = r.ndim == 1
    rb = np.atleast_2d(r)
    if model.forward == "identity":
        out = np.real(rb).astype(np.float64)
    else:
        H, W = model.space.shape
        z = np.fft.ifft2(rb.reshape(-1, H, W), norm="ortho")
        if model.complex_data:
            out = np.stack([z.real, z.imag], axis=-1).reshape(rb.shape[0], -1)
        else:
            out = z.real.reshape(rb.shape[0], -1)
    return out[0] if single else out


def inverse_forward(model: MeasurementModel, y) -> np.ndarray:
    """Exact inverse of ``apply_forward`` (dense measurements)."""
    y = np.asarray(y)
    if model.forward == "identity":
        return np.real(y).astype(np.float64)
    return apply_adjoint(model, y)


def measurement_noise(model: MeasurementModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if model.is_complex:
        s = model.noise_std / np.sqrt(2.0)
        return s * rng.standard_normal(n) + 1j * s * rng.standard_normal(n)
    return model.noise_std * rng.standard_normal(n)


def acquire(model: MeasurementModel, x_true, actions, rng: np.random.Generator) -> SparseMeasurement:
    """Measure the coordinates of ``actions`` on ``x_true`` with fresh noise.

    ``actions`` is an ``ActionSet`` or an iterable of action ids.
    """
    ids = actions.actions if isinstance(actions, ActionSet) else list(actions)
    idx = model.space.coords(ids)
    full = apply_forward(model, x_true)
    vals = full[idx]
    if model.noise_std > 0 and idx.size:
        vals = vals + measurement_noise(model, idx.size, rng)
    return SparseMeasurement(idx, vals)


def mask_and_zero_fill(actions: ActionSet, y_sparse: SparseMeasurement) -> tuple[np.ndarray, np.ndarray]:
    """Return the measurement-domain mask and the zero-filled measurement."""
    M = actions.space.size
    idx = actions.coords()
    if np.any((y_sparse.indices < 0) | (y_sparse.indices >= M)):
        raise IndexError("measurement index outside the measurement domain")
    m = np.zeros(M, dtype=np.uint8)
    m[idx] = 1
    y_zf = np.zeros(M, dtype=y_sparse.values.dtype if y_sparse.values.size else np.float64)
    y_zf[y_sparse.indices] = y_sparse.values
    return m, y_zf
