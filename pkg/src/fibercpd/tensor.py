"""Dense tensor kernels: unfoldings, Khatri-Rao products, MTTKRP, norms.

Layout convention
-----------------
A tensor of shape (I_0, ..., I_{N-1}) is stored as a flat float64 array with
the first mode varying fastest (Fortran order): the entry at zero-based
multi-index (i_0, ..., i_{N-1}) sits at linear position
sum_n i_n * prod_{m<n} I_m.

The mode-n unfolding is the J x I_n matrix (J = prod of the other dims) whose
row index enumerates the surviving modes with the smallest surviving mode
varying fastest.  Under this convention

    unfold(reconstruct(model), n) == kr_full(model, n) @ model.factors[n].T

holds exactly, with kr_full stacking the surviving factors so that the
smallest mode is the fastest Kronecker index.  Everything downstream (fiber
sampling, sampled gradients, the solvers) relies on this identity.

Modes are 0-based everywhere in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# rank axis uses 'z'; tensor modes take a..y, which caps the order at 25
_LETTERS = "abcdefghijklmnopqrstuvwxy"


@dataclass
class DenseTensor:
    """Order-N dense real tensor with explicit flat storage (see module docs)."""

    dims: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) == 0:
            raise ValueError("tensor must have at least one mode")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        expected = math.prod(self.dims)
        if self.values.size != expected:
            raise ValueError(
                f"values length {self.values.size} does not match dims {self.dims} "
                f"(expected {expected})"
            )

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def array(self) -> np.ndarray:
        """N-d view of the flat storage (no copy)."""
        return self.values.reshape(self.dims, order="F")

    @classmethod
    def from_array(cls, arr) -> "DenseTensor":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(arr.shape, arr.ravel(order="F"))

    @classmethod
    def zeros(cls, dims) -> "DenseTensor":
        dims = tuple(int(d) for d in dims)
        return cls(dims, np.zeros(math.prod(dims)))

    def copy(self) -> "DenseTensor":
        return DenseTensor(self.dims, self.values.copy())


@dataclass
class KruskalModel:
    """List of factor matrices A^(n), each I_n x R, sharing the column count R."""

    factors: list[np.ndarray]

    def __post_init__(self):
        self.factors = [np.ascontiguousarray(f, dtype=np.float64) for f in self.factors]
        if not self.factors:
            raise ValueError("model needs at least one factor matrix")
        for n, f in enumerate(self.factors):
            if f.ndim != 2:
                raise ValueError(f"factor {n} must be a matrix, got ndim={f.ndim}")
        ranks = {f.shape[1] for f in self.factors}
        if len(ranks) != 1:
            raise ValueError(f"factors disagree on column count: {sorted(ranks)}")
        if self.rank < 1:
            raise ValueError("rank must be positive")

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    def copy(self) -> "KruskalModel":
        return KruskalModel([f.copy() for f in self.factors])


def _check_mode(dims, mode: int) -> None:
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for order-{len(dims)} tensor")


def surviving_modes(dims, mode: int) -> list[int]:
    """Modes other than `mode`, in increasing order (fastest unfolding index first)."""
    _check_mode(dims, mode)
    return [n for n in range(len(dims)) if n != mode]


def row_count(dims, mode: int) -> int:
    """Number of rows J of the mode-`mode` unfolding (= number of mode fibers)."""
    _check_mode(dims, mode)
    return math.prod(d for n, d in enumerate(dims) if n != mode)


def rows_to_digits(dims, mode: int, rows) -> np.ndarray:
    """Decompose unfolding row indices into the 0-based index of each surviving mode.

    Returns an array of shape (order-1, len(rows)); row k holds the index of
    the k-th surviving mode (increasing mode order, smallest mode fastest).
    """
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    j = row_count(dims, mode)
    if rows.size and (rows.min() < 0 or rows.max() >= j):
        raise ValueError(f"fiber row index out of range [0, {j})")
    surv = surviving_modes(dims, mode)
    digits = np.empty((len(surv), rows.size), dtype=np.int64)
    stride = 1
    for k, n in enumerate(surv):
        digits[k] = (rows // stride) % dims[n]
        stride *= dims[n]
    return digits


def digits_to_rows(dims, mode: int, digits: np.ndarray) -> np.ndarray:
    """Inverse of rows_to_digits."""
    surv = surviving_modes(dims, mode)
    rows = np.zeros(digits.shape[1], dtype=np.int64)
    stride = 1
    for k, n in enumerate(surv):
        rows += digits[k] * stride
        stride *= dims[n]
    return rows


def unfold(t: DenseTensor, mode: int) -> np.ndarray:
    """Mode-`mode` unfolding as a fresh (J, I_mode) matrix; `t` is left unchanged."""
    _check_mode(t.dims, mode)
    moved = np.moveaxis(t.array, mode, -1)
    return moved.reshape(row_count(t.dims, mode), t.dims[mode], order="F")


def fold(m, mode: int, dims) -> DenseTensor:
    """Inverse of unfold: rebuild the tensor of shape `dims` from its mode unfolding."""
    dims = tuple(int(d) for d in dims)
    _check_mode(dims, mode)
    m = np.asarray(m, dtype=np.float64)
    j = row_count(dims, mode)
    if m.shape != (j, dims[mode]):
        raise ValueError(f"matrix shape {m.shape} does not match mode-{mode} unfolding "
                         f"of dims {dims} (expected {(j, dims[mode])})")
    surv_shape = [dims[n] for n in surviving_modes(dims, mode)]
    arr = m.reshape(surv_shape + [dims[mode]], order="F")
    return DenseTensor.from_array(np.moveaxis(arr, -1, mode))


def khatri_rao(a, b) -> np.ndarray:
    """Columnwise Kronecker product; the row index of `b` varies fastest."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column-count mismatch: {a.shape[1]} vs {b.shape[1]}")
    out = a[:, None, :] * b[None, :, :]
    return out.reshape(a.shape[0] * b.shape[0], a.shape[1])


def kr_full(model: KruskalModel, mode: int) -> np.ndarray:
    """Khatri-Rao product of all factors except `mode`, smallest mode fastest.

    Rows are aligned with the rows of unfold(., mode), so the reconstruction
    satisfies unfold(reconstruct(model), mode) == kr_full(model, mode) @ A_mode.T.
    """
    _check_mode(model.dims, mode)
    out = None
    for n in surviving_modes(model.dims, mode):
        f = model.factors[n]
        out = f if out is None else khatri_rao(f, out)
    if out is None:  # order-1 tensor: empty product is the 1 x R row of ones
        return np.ones((1, model.rank))
    if any(out is f for f in model.factors):  # single surviving factor: do not alias it
        out = out.copy()
    return out


def kr_rows(model: KruskalModel, mode: int, rows) -> np.ndarray:
    """Selected rows of kr_full(model, mode) without materializing the full product.

    Cost is O(len(rows) * order * rank): each requested row is the elementwise
    product of one row from every surviving factor.
    """
    dims = model.dims
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    digits = rows_to_digits(dims, mode, rows)
    surv = surviving_modes(dims, mode)
    if not surv:
        return np.ones((rows.size, model.rank))
    out = model.factors[surv[0]][digits[0]].copy()
    for k in range(1, len(surv)):
        out *= model.factors[surv[k]][digits[k]]
    return out


def gather_fiber_rows(t: DenseTensor, mode: int, rows) -> np.ndarray:
    """Rows `rows` of the mode unfolding, gathered straight from flat storage.

    Touches exactly len(rows) * I_mode tensor entries.
    """
    dims = t.dims
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    digits = rows_to_digits(dims, mode, rows)
    strides = np.cumprod((1,) + dims[:-1]).astype(np.int64)
    base = np.zeros(rows.size, dtype=np.int64)
    for k, n in enumerate(surviving_modes(dims, mode)):
        base += digits[k] * strides[n]
    cols = strides[mode] * np.arange(dims[mode], dtype=np.int64)
    return t.values[base[:, None] + cols[None, :]]


def _check_model_compatible(t: DenseTensor, model: KruskalModel, skip: int | None = None):
    for n, f in enumerate(model.factors):
        if n == skip:
            continue
        if f.shape[0] != t.dims[n]:
            raise ValueError(f"factor {n} has {f.shape[0]} rows, tensor dim is {t.dims[n]}")
    if model.order != t.order:
        raise ValueError(f"model order {model.order} != tensor order {t.order}")


def mttkrp(t: DenseTensor, model: KruskalModel, mode: int) -> np.ndarray:
    """Full MTTKRP: unfold(t, mode).T @ kr_full(model, mode), computed by contraction."""
    _check_mode(t.dims, mode)
    _check_model_compatible(t, model, skip=mode)
    n_modes = t.order
    if n_modes > len(_LETTERS):
        raise ValueError(f"order {n_modes} exceeds supported maximum {len(_LETTERS)}")
    operands, subs = [t.array], [_LETTERS[:n_modes]]
    for n in range(n_modes):
        if n != mode:
            operands.append(model.factors[n])
            subs.append(_LETTERS[n] + "z")
    expr = ",".join(subs) + "->" + _LETTERS[mode] + "z"
    return np.einsum(expr, *operands, optimize=True)


def partial_mttkrp(t: DenseTensor, model: KruskalModel, mode: int, rows) -> np.ndarray:
    """MTTKRP restricted to the sampled fiber rows; touches only those fibers."""
    _check_model_compatible(t, model, skip=mode)
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    if rows.size == 0:
        return np.zeros((t.dims[mode], model.rank))
    x_rows = gather_fiber_rows(t, mode, rows)
    k_rows = kr_rows(model, mode, rows)
    return x_rows.T @ k_rows


def reconstruct(model: KruskalModel) -> DenseTensor:
    """Dense tensor with entries sum_r prod_n A^(n)[i_n, r]."""
    n_modes = model.order
    if n_modes > len(_LETTERS):
        raise ValueError(f"order {n_modes} exceeds supported maximum {len(_LETTERS)}")
    expr = ",".join(_LETTERS[n] + "z" for n in range(n_modes)) + "->" + _LETTERS[:n_modes]
    return DenseTensor.from_array(np.einsum(expr, *model.factors, optimize=True))


def frob_norm(t: DenseTensor) -> float:
    return float(np.linalg.norm(t.values))


def objective(t: DenseTensor, model: KruskalModel) -> float:
    """Squared Frobenius norm of the residual between `t` and the model."""
    _check_model_compatible(t, model)
    resid = t.values - reconstruct(model).values
    return float(resid @ resid)


def relative_error(t: DenseTensor, model: KruskalModel) -> float:
    """||t - reconstruct(model)||_F / ||t||_F; undefined for the zero tensor."""
    denom = frob_norm(t)
    if denom == 0.0:
        raise ValueError("relative error is undefined for the zero tensor")
    return math.sqrt(objective(t, model)) / denom
