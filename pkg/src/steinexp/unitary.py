"""Haar sampling on U(n), trace observables and a heat-kernel diffusion step.

Everything here works on stacks of matrices: an array of shape ``(..., n, n)``
is treated as a batch.  :class:`UnitaryMatrix` is a thin checked wrapper for
single matrices.

The diffusion step is a geodesic Euler move ``U -> U exp(sqrt(2t) S)`` with
``S`` a standard skew-Hermitian Gaussian.  With that scaling, for smooth
class functions ``phi``,

    E[phi(U') | U] = phi(U) + t * (Delta phi)(U) + O(t^2)

where Delta is normalized so that ``Delta Tr(U) = -n Tr(U)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

UNITARITY_TOL = 1e-10
SKEW_TOL = 1e-12


class NotUnitaryError(ValueError):
    pass


class NotSkewHermitianError(ValueError):
    pass


def unitarity_defect(U: np.ndarray) -> float:
    """Max-entry norm of ``U U^dagger - I`` over a (batch of) matrices."""
    U = np.asarray(U)
    n = U.shape[-1]
    prod = U @ np.conj(np.swapaxes(U, -1, -2))
    return float(np.max(np.abs(prod - np.eye(n)))) if prod.size else 0.0


def _check_unitary(U: np.ndarray) -> None:
    defect = unitarity_defect(U)
    if not defect <= UNITARITY_TOL:
        raise NotUnitaryError(f"unitarity defect {defect:.3e} exceeds {UNITARITY_TOL:g}")


@dataclass(frozen=True)
class UnitaryMatrix:
    """An ``n x n`` complex unitary matrix (checked at construction)."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {entries.shape}")
        _check_unitary(entries)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def to_json(self) -> str:
        """Rows of ``[re, im]`` pairs, for debugging dumps."""
        rows = [[[z.real, z.imag] for z in row] for row in self.entries.tolist()]
        return json.dumps({"n": self.n, "entries": rows})

    @classmethod
    def from_json(cls, text: str) -> "UnitaryMatrix":
        data = json.loads(text)
        arr = np.array([[complex(re, im) for re, im in row] for row in data["entries"]])
        return cls(arr)


@dataclass(frozen=True)
class DiffusionStep:
    """Heat-kernel time ``t`` split into ``substeps`` geodesic moves."""

    t: float
    substeps: int = 1

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"diffusion time must be positive, got {self.t}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be a positive integer, got {self.substeps}")


def _ginibre(shape, rng: np.random.Generator) -> np.ndarray:
    # i.i.d. standard complex Gaussians, E|z|^2 = 1
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def haar_batch(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` independent Haar unitaries, returned as ``(size, n, n)``.

    QR of a complex Ginibre matrix, with each column of Q multiplied by the
    phase of the matching diagonal entry of R so that R has a positive real
    diagonal.  Without that correction the law of Q is not Haar.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if size < 0:
        raise ValueError(f"batch size must be >= 0, got {size}")
    z = _ginibre((size, n, n), rng)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    phase = d / np.abs(d)
    return q * phase[..., None, :]


def haar_sample(n: int, rng: np.random.Generator) -> UnitaryMatrix:
    """Single Haar-distributed element of U(n)."""
    return UnitaryMatrix(haar_batch(n, 1, rng)[0])


def skew_gaussian_batch(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Standard Gaussians on the Lie algebra u(n), shape ``(size, n, n)``.

    Diagonal entries are ``i N(0, 1)``; above the diagonal the entries are
    standard complex Gaussians with ``E|S_jk|^2 = 1``; below it
    ``S_kj = -conj(S_jk)``.  Equivalently ``S = sum_a xi_a X_a`` over an
    orthonormal basis of u(n) for the trace form, so ``E[S^2] = -n I``.
    """
    a = _ginibre((size, n, n), rng)
    return (a - np.conj(np.swapaxes(a, -1, -2))) / np.sqrt(2.0)


def matrix_exp_skew(G: np.ndarray) -> np.ndarray:
    """``exp(G)`` for skew-Hermitian ``G`` (or a stack of them).

    Uses the eigendecomposition of the Hermitian matrix ``-iG``, so the result
    is unitary to rounding error regardless of the size of ``G``.
    """
    G = np.asarray(G, dtype=complex)
    GH = np.conj(np.swapaxes(G, -1, -2))
    scale = np.max(np.abs(G)) if G.size else 0.0
    if np.max(np.abs(G + GH), initial=0.0) > SKEW_TOL * max(scale, 1e-300):
        raise NotSkewHermitianError("input is not skew-Hermitian")
    lam, V = np.linalg.eigh(-1j * G)
    return (V * np.exp(1j * lam)[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def heat_step(U, step: DiffusionStep, rng: np.random.Generator, check: bool = True):
    """Move ``U`` for time ``step.t`` along the heat kernel.

    Accepts a :class:`UnitaryMatrix` (returns one) or an array stack of shape
    ``(..., n, n)`` (returns an array of the same shape).  Each substep
    multiplies on the right by ``exp(sqrt(2 t / m) S)`` with fresh ``S``.
    """
    wrapped = isinstance(U, UnitaryMatrix)
    X = U.entries if wrapped else np.asarray(U, dtype=complex)
    n = X.shape[-1]
    batch = X.shape[:-2]
    size = int(np.prod(batch)) if batch else 1
    eps = np.sqrt(2.0 * step.t / step.substeps)
    for _ in range(step.substeps):
        S = skew_gaussian_batch(n, size, rng).reshape(batch + (n, n))
        X = X @ matrix_exp_skew(eps * S)
    if check:
        _check_unitary(X)
    return UnitaryMatrix(X) if wrapped else X


def trace_power(U, k: int):
    """``Tr(U^k)`` by repeated multiplication; works on stacks."""
    if k < 1:
        raise ValueError(f"power must be >= 1, got {k}")
    X = U.entries if isinstance(U, UnitaryMatrix) else np.asarray(U)
    P = X
    for _ in range(k - 1):
        P = P @ X
    tr = np.trace(P, axis1=-2, axis2=-1)
    return complex(tr) if np.ndim(tr) == 0 else tr


def abs_trace_sq(U) -> np.ndarray:
    """``W = |Tr U|^2`` for a matrix or a stack."""
    X = U.entries if isinstance(U, UnitaryMatrix) else np.asarray(U)
    tr = np.trace(X, axis1=-2, axis2=-1)
    return tr.real**2 + tr.imag**2
