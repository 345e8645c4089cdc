"""Dense third-order tensors and the multilinear algebra behind rank-(L,L,1)
block-term models.

Conventions used throughout the package (and pinned by the test suite):

* A tensor is a C-contiguous ``float64`` ndarray of shape ``(I, J, K)``.
  The linear (memory) order is therefore row-major: index ``k`` varies
  fastest, then ``j``, then ``i``.
* ``vec`` of an ``I x J`` matrix is its row-major ravel (column index
  varies fastest).
* Mode unfoldings are laid out so that the Khatri-Rao factor identities
  hold exactly for any model-generated tensor::

      unfold(X, 1).T == khatri_rao(B, C) @ A.T        # I  x (J*K)
      unfold(X, 2).T == khatri_rao(C, A) @ B.T        # J  x (K*I)
      unfold(X, 3).T == slice_design(A, B) @ C.T      # K  x (I*J)

* Kronecker products follow ``np.kron``: the right operand's index varies
  fastest.

A rank-(L,L,1) block-term model with R terms is held as a factor triple
``A (I x L*R)``, ``B (J x L*R)``, ``C (K x R)``; columns ``r*L .. (r+1)*L``
of A and B form block ``r``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Mode",
    "BtdFactors",
    "unfold",
    "fold",
    "vec_slice",
    "khatri_rao",
    "khatri_rao_cw",
    "slice_design",
    "model_slice",
    "reconstruct",
    "save_tensor",
    "load_tensor",
    "dump_slices_csv",
    "save_factors",
    "load_factors",
]


class Mode(enum.IntEnum):
    """Unfolding mode of a third-order tensor."""

    ONE = 1
    TWO = 2
    THREE = 3


def _as_tensor(t) -> np.ndarray:
    t = np.ascontiguousarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got ndim={t.ndim}")
    return t


@dataclass(frozen=True)
class BtdFactors:
    """Factor triple of a rank-(L,L,1) block-term model.

    Attributes
    ----------
    a : ndarray, shape (I, L*R)
    b : ndarray, shape (J, L*R)
    c : ndarray, shape (K, R)
    width : int
        Number of columns per block (the common block rank L).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    width: int

    def __post_init__(self):
        a, b, c = (np.asarray(m, dtype=np.float64) for m in (self.a, self.b, self.c))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        if self.width < 1:
            raise ValueError("block width must be positive")
        r = c.shape[1]
        if a.shape[1] != self.width * r or b.shape[1] != self.width * r:
            raise ValueError(
                f"A and B must have width*R = {self.width * r} columns, "
                f"got {a.shape[1]} and {b.shape[1]}"
            )

    @property
    def num_blocks(self) -> int:
        return self.c.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0])

    def a_block(self, r: int) -> np.ndarray:
        return self.a[:, r * self.width : (r + 1) * self.width]

    def b_block(self, r: int) -> np.ndarray:
        return self.b[:, r * self.width : (r + 1) * self.width]


def unfold(t, mode) -> np.ndarray:
    """Mode-n unfolding of a third-order tensor.

    Shapes are ``I x (J*K)``, ``J x (K*I)`` and ``K x (I*J)`` for modes 1,
    2 and 3; the column orderings are the ones under which the Khatri-Rao
    identities in the module docstring hold.
    """
    t = _as_tensor(t)
    i, j, k = t.shape
    mode = Mode(mode)
    if mode == Mode.ONE:
        return t.reshape(i, j * k)
    if mode == Mode.TWO:
        return np.ascontiguousarray(t.transpose(1, 2, 0)).reshape(j, k * i)
    return np.ascontiguousarray(t.transpose(2, 0, 1)).reshape(k, i * j)


def fold(m, mode, dims) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the tensor from its unfolding."""
    i, j, k = dims
    m = np.asarray(m, dtype=np.float64)
    mode = Mode(mode)
    if mode == Mode.ONE:
        return m.reshape(i, j, k)
    if mode == Mode.TWO:
        return np.ascontiguousarray(m.reshape(j, k, i).transpose(2, 0, 1))
    return np.ascontiguousarray(m.reshape(k, i, j).transpose(1, 2, 0))


def vec_slice(m) -> np.ndarray:
    """Row-major vectorization of a matrix (the package-wide vec)."""
    return np.ascontiguousarray(m, dtype=np.float64).ravel()


def khatri_rao(left, right, num_blocks: int | None = None) -> np.ndarray:
    """Partition-wise Khatri-Rao product.

    The columns of ``left`` and ``right`` are split into ``num_blocks``
    equal-width groups and matching groups are combined with a Kronecker
    product: block r of the result is ``kron(left_r, right_r)``.

    When ``num_blocks`` is omitted both matrices must have the same number
    of columns and the product is taken column-wise.
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.ndim != 2 or right.ndim != 2:
        raise ValueError("khatri_rao operands must be matrices")
    if num_blocks is None:
        return khatri_rao_cw(left, right)
    if left.shape[1] % num_blocks or right.shape[1] % num_blocks:
        raise ValueError(
            f"column counts {left.shape[1]}, {right.shape[1]} are not "
            f"divisible into {num_blocks} blocks"
        )
    m, n = left.shape[0], right.shape[0]
    lw = left.shape[1] // num_blocks
    rw = right.shape[1] // num_blocks
    l3 = left.reshape(m, num_blocks, lw)
    r3 = right.reshape(n, num_blocks, rw)
    out = np.einsum("mbp,nbq->mnbpq", l3, r3)
    return out.reshape(m * n, num_blocks * lw * rw)


def khatri_rao_cw(left, right) -> np.ndarray:
    """Column-wise Khatri-Rao product: column l is ``kron(left[:,l], right[:,l])``."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape[1] != right.shape[1]:
        raise ValueError(
            f"column-wise Khatri-Rao needs equal column counts, "
            f"got {left.shape[1]} and {right.shape[1]}"
        )
    out = np.einsum("mc,nc->mnc", left, right)
    return out.reshape(-1, left.shape[1])


def slice_design(a, b, width: int) -> np.ndarray:
    """Design matrix mapping a block-weight vector to a vectorized slice.

    Column r is ``vec(A_r @ B_r.T)``, so for any R-vector ``g``::

        slice_design(a, b, L) @ g == vec_slice(model_slice(a, b, g, L))

    Returns an ``(I*J) x R`` matrix.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1] or a.shape[1] % width:
        raise ValueError("factor column counts must match and divide by width")
    i, j = a.shape[0], b.shape[0]
    r = a.shape[1] // width
    a3 = a.reshape(i, r, width)
    b3 = b.reshape(j, r, width)
    # batched A_r @ B_r.T, laid out as (i, j, r)
    blocks = np.matmul(a3.transpose(1, 0, 2), b3.transpose(1, 2, 0))
    return np.ascontiguousarray(blocks.transpose(1, 2, 0)).reshape(i * j, r)


def model_slice(a, b, gamma, width: int) -> np.ndarray:
    """Frontal slice of the model for block weights ``gamma``.

    Computes ``A @ (diag(gamma) kron I_width) @ B.T``; with width 1 this is
    the familiar rank-one-terms slice formula.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    scale = np.repeat(gamma, width)
    return (np.asarray(a) * scale[None, :]) @ np.asarray(b).T


def reconstruct(f: BtdFactors) -> np.ndarray:
    """Dense tensor generated by a factor triple."""
    i, j, k = f.dims
    s = slice_design(f.a, f.b, f.width)
    return fold(f.c @ s.T, Mode.THREE, (i, j, k))


# ---------------------------------------------------------------------------
# binary container formats
#
# Tensor file:  three little-endian uint64 dims, then I*J*K little-endian
# float64 values in C order.  Factor file: five little-endian uint64
# (I, J, K, L, R) followed by A, B, C in C order.
# ---------------------------------------------------------------------------

_DIMS = struct.Struct("<3Q")
_FACTOR_HEADER = struct.Struct("<5Q")


def save_tensor(path, t) -> None:
    t = _as_tensor(t)
    with open(path, "wb") as fh:
        fh.write(_DIMS.pack(*t.shape))
        fh.write(t.astype("<f8", copy=False).tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        dims = _DIMS.unpack(fh.read(_DIMS.size))
        n = dims[0] * dims[1] * dims[2]
        data = np.frombuffer(fh.read(8 * n), dtype="<f8", count=n)
    return np.ascontiguousarray(data.astype(np.float64).reshape(dims))


def dump_slices_csv(path, t) -> None:
    """Debug dump: one ``k,i,j,value`` row per entry."""
    t = _as_tensor(t)
    i, j, k = t.shape
    with open(path, "w") as fh:
        fh.write("k,i,j,value\n")
        for kk in range(k):
            for ii in range(i):
                for jj in range(j):
                    fh.write(f"{kk},{ii},{jj},{t[ii, jj, kk]!r}\n")


def save_factors(path, f: BtdFactors) -> None:
    i, j, k = f.dims
    with open(path, "wb") as fh:
        fh.write(_FACTOR_HEADER.pack(i, j, k, f.width, f.num_blocks))
        for m in (f.a, f.b, f.c):
            fh.write(np.ascontiguousarray(m).astype("<f8", copy=False).tobytes(order="C"))


def load_factors(path) -> BtdFactors:
    with open(path, "rb") as fh:
        i, j, k, width, r = _FACTOR_HEADER.unpack(fh.read(_FACTOR_HEADER.size))
        mats = []
        for rows, cols in ((i, width * r), (j, width * r), (k, r)):
            buf = fh.read(8 * rows * cols)
            mats.append(
                np.frombuffer(buf, dtype="<f8", count=rows * cols)
                .astype(np.float64)
                .reshape(rows, cols)
            )
    return BtdFactors(a=mats[0], b=mats[1], c=mats[2], width=int(width))
