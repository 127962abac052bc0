"""Block-matrix arithmetic for finite-dimensional C*-algebras M(n1) + ... + M(nN).

Elements are tuples of complex matrices, one per block.  Norms and spectra
are computed with a cyclic Jacobi eigensolver so results do not depend on
the LAPACK build.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TOL_SA = 1e-10
JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100


class ShapeError(ValueError):
    """Raised when block shapes do not match."""


@dataclass(frozen=True)
class AlgebraShape:
    block_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.block_dims)
        if not dims:
            raise ShapeError("an algebra needs at least one block")
        if any(d < 1 for d in dims):
            raise ShapeError(f"block dimensions must be positive, got {dims}")
        object.__setattr__(self, "block_dims", dims)

    @property
    def n_blocks(self) -> int:
        return len(self.block_dims)

    @property
    def dimension(self) -> int:
        return sum(d * d for d in self.block_dims)

    @property
    def total_size(self) -> int:
        return sum(self.block_dims)

    def is_commutative(self) -> bool:
        return all(d == 1 for d in self.block_dims)

    def __iter__(self):
        return iter(self.block_dims)

    def __len__(self):
        return len(self.block_dims)

    def __getitem__(self, k):
        return self.block_dims[k]


def as_shape(shape) -> AlgebraShape:
    if isinstance(shape, AlgebraShape):
        return shape
    return AlgebraShape(tuple(shape))


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.complex128)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BlockElement:
    shape: AlgebraShape
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        shape = as_shape(self.shape)
        blocks = tuple(_frozen(b) for b in self.blocks)
        if len(blocks) != shape.n_blocks:
            raise ShapeError(f"expected {shape.n_blocks} blocks, got {len(blocks)}")
        for k, (b, d) in enumerate(zip(blocks, shape.block_dims)):
            if b.shape != (d, d):
                raise ShapeError(f"block {k} has shape {b.shape}, expected {(d, d)}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "blocks", blocks)

    # constructors
    @classmethod
    def zeros(cls, shape) -> BlockElement:
        shape = as_shape(shape)
        return cls(shape, tuple(np.zeros((d, d)) for d in shape))

    @classmethod
    def identity(cls, shape) -> BlockElement:
        shape = as_shape(shape)
        return cls(shape, tuple(np.eye(d) for d in shape))

    @classmethod
    def scalar(cls, shape, c) -> BlockElement:
        shape = as_shape(shape)
        return cls(shape, tuple(c * np.eye(d) for d in shape))

    @classmethod
    def diagonal(cls, shape, *diagonals) -> BlockElement:
        shape = as_shape(shape)
        return cls(shape, tuple(np.diag(np.asarray(v, dtype=complex)) for v in diagonals))

    # arithmetic
    def _check(self, other: BlockElement):
        if not isinstance(other, BlockElement):
            raise TypeError(f"expected BlockElement, got {type(other).__name__}")
        if other.shape != self.shape:
            raise ShapeError(f"shape mismatch: {self.shape.block_dims} vs {other.shape.block_dims}")

    def __add__(self, other):
        self._check(other)
        return BlockElement(self.shape, tuple(a + b for a, b in zip(self.blocks, other.blocks)))

    def __sub__(self, other):
        self._check(other)
        return BlockElement(self.shape, tuple(a - b for a, b in zip(self.blocks, other.blocks)))

    def __neg__(self):
        return BlockElement(self.shape, tuple(-a for a in self.blocks))

    def __mul__(self, c):
        if isinstance(c, BlockElement):
            return NotImplemented
        return BlockElement(self.shape, tuple(c * a for a in self.blocks))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return BlockElement(self.shape, tuple(a / c for a in self.blocks))

    def __matmul__(self, other):
        self._check(other)
        return BlockElement(self.shape, tuple(a @ b for a, b in zip(self.blocks, other.blocks)))

    @property
    def H(self) -> BlockElement:
        return BlockElement(self.shape, tuple(a.conj().T for a in self.blocks))

    def adjoint(self) -> BlockElement:
        return self.H

    def is_self_adjoint(self, tol: float = TOL_SA) -> bool:
        return frobenius(self - self.H) <= tol

    def equals(self, other: BlockElement) -> bool:
        """Bitwise equality of shapes and entries."""
        return self.shape == other.shape and all(
            np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks)
        )

    def real_vector(self) -> np.ndarray:
        return np.concatenate([np.concatenate([b.real.ravel(), b.imag.ravel()]) for b in self.blocks])

    def __repr__(self):
        return f"BlockElement(shape={self.shape.block_dims})"


@dataclass(frozen=True, order=True)
class MatrixUnit:
    k: int
    j: int
    m: int

    def element(self, shape) -> BlockElement:
        shape = as_shape(shape)
        blocks = [np.zeros((d, d)) for d in shape]
        blocks[self.k][self.j, self.m] = 1.0
        return BlockElement(shape, tuple(blocks))


def matrix_units(shape) -> list[MatrixUnit]:
    """All matrix units e_{k,j,m}, ordered lexicographically by (k, j, m).  Indices are 0-based."""
    shape = as_shape(shape)
    return [MatrixUnit(k, j, m) for k, d in enumerate(shape) for j in range(d) for m in range(d)]


def frobenius(x: BlockElement) -> float:
    return float(np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in x.blocks)))


def jordan(a: BlockElement, b: BlockElement) -> BlockElement:
    return (a @ b + b @ a) * 0.5


def lie(a: BlockElement, b: BlockElement) -> BlockElement:
    return (a @ b - b @ a) * (1 / 2j)


def self_adjoint_projection(x: BlockElement) -> BlockElement:
    return (x + x.H) * 0.5


# ---------------------------------------------------------------------------
# Jacobi eigensolver


def jacobi_eigh(h: np.ndarray, tol: float = JACOBI_TOL, vectors: bool = False):
    """Cyclic Jacobi diagonalization of a Hermitian matrix.

    Pairs are visited in row order (p < q) every sweep.  Stops once the
    off-diagonal Frobenius mass drops below ``tol`` times the total Frobenius
    norm.  Returns ascending eigenvalues, and the unitary of eigenvectors
    (columns) when ``vectors`` is set.
    """
    h = np.asarray(h, dtype=np.complex128)
    n = h.shape[0]
    if h.shape != (n, n):
        raise ShapeError(f"square matrix required, got {h.shape}")
    # plain python complex lists: for the small blocks used here this beats
    # numpy fancy indexing by a wide margin
    a = [[complex(z) for z in row] for row in ((h + h.conj().T) * 0.5)]
    v = [[1.0 + 0j if i == j else 0j for j in range(n)] for i in range(n)] if vectors else None
    total2 = sum(z.real * z.real + z.imag * z.imag for row in a for z in row)
    if n > 1 and total2 > 0.0:
        thr2 = tol * tol * total2
        for _ in range(JACOBI_MAX_SWEEPS):
            off2 = 0.0
            for i in range(n):
                ai = a[i]
                for j in range(n):
                    if i != j:
                        z = ai[j]
                        off2 += z.real * z.real + z.imag * z.imag
            if off2 < thr2:
                break
            for p in range(n - 1):
                ap = a[p]
                for q in range(p + 1, n):
                    g = ap[q]
                    ag = abs(g)
                    if ag < 1e-300:
                        continue
                    aq = a[q]
                    theta = (aq[q].real - ap[p].real) / (2.0 * ag)
                    if theta == 0.0:
                        t = 1.0
                    else:
                        t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    s = t * c
                    ph = (g / ag).conjugate()
                    # J = diag(1, conj(phase)) @ [[c, s], [-s, c]]
                    j10 = -s * ph
                    j11 = c * ph
                    for r in range(n):
                        ar = a[r]
                        x, y = ar[p], ar[q]
                        ar[p] = x * c + y * j10
                        ar[q] = x * s + y * j11
                    cj10 = j10.conjugate()
                    cj11 = j11.conjugate()
                    for col in range(n):
                        x, y = ap[col], aq[col]
                        ap[col] = c * x + cj10 * y
                        aq[col] = s * x + cj11 * y
                    ap[q] = 0j
                    aq[p] = 0j
                    ap[p] = complex(ap[p].real, 0.0)
                    aq[q] = complex(aq[q].real, 0.0)
                    if vectors:
                        for r in range(n):
                            vr = v[r]
                            x, y = vr[p], vr[q]
                            vr[p] = x * c + y * j10
                            vr[q] = x * s + y * j11
    w = np.array([a[i][i].real for i in range(n)])
    if not vectors:
        return np.sort(w)
    order = np.argsort(w)
    return w[order], np.array(v, dtype=np.complex128).reshape(n, n)[:, order]


def eigvalsh(x: BlockElement) -> list[np.ndarray]:
    """Per-block ascending eigenvalues of a self-adjoint element."""
    return [jacobi_eigh(b) for b in x.blocks]


def block_norm(b: np.ndarray) -> float:
    if b.size == 0:
        return 0.0
    if b.shape == (1, 1):
        return float(abs(b[0, 0]))
    w = jacobi_eigh(b.conj().T @ b)
    return float(np.sqrt(max(w[-1], 0.0)))


def op_norm(x: BlockElement) -> float:
    """Operator norm: the largest singular value over all blocks."""
    if not isinstance(x, BlockElement):
        raise TypeError(f"expected BlockElement, got {type(x).__name__}")
    return max(block_norm(b) for b in x.blocks)


def sa_norm(x: BlockElement) -> float:
    """Operator norm of a self-adjoint element: the largest |eigenvalue|."""
    best = 0.0
    for b in x.blocks:
        if b.shape == (1, 1):
            best = max(best, abs(b[0, 0].real))
            continue
        w = jacobi_eigh(b)
        best = max(best, abs(w[0]), abs(w[-1]))
    return float(best)


def nuclear_norm_sa(x: BlockElement) -> float:
    """Trace norm of a self-adjoint element (un-normalized trace)."""
    return float(sum(np.sum(np.abs(w)) for w in eigvalsh(x)))


def spectral_range(x: BlockElement) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a self-adjoint element over all blocks."""
    ws = eigvalsh(x)
    return min(float(w[0]) for w in ws), max(float(w[-1]) for w in ws)


def canonical_trace(x: BlockElement) -> complex:
    """Un-normalized trace: the sum of block traces."""
    return complex(sum(np.trace(b) for b in x.blocks))


def hs_inner(a: BlockElement, b: BlockElement) -> float:
    """Real Hilbert-Schmidt inner product Re Tr(a* b)."""
    a._check(b)
    return float(sum(np.vdot(p, q).real for p, q in zip(a.blocks, b.blocks)))


def random_element(shape, rng: np.random.Generator, self_adjoint: bool = True, scale: float = 1.0) -> BlockElement:
    shape = as_shape(shape)
    blocks = []
    for d in shape:
        z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        if self_adjoint:
            z = (z + z.conj().T) / 2
        blocks.append(scale * z)
    return BlockElement(shape, tuple(blocks))


def hermitian_basis(shape) -> list[BlockElement]:
    """Real basis of sa(A), HS-orthonormal, ordered by block then (j, m)."""
    shape = as_shape(shape)
    basis = []
    r2 = 1 / np.sqrt(2)
    for k, d in enumerate(shape):
        for j in range(d):
            for m in range(j, d):
                if j == m:
                    mats = [np.zeros((d, d), dtype=complex)]
                    mats[0][j, j] = 1
                else:
                    s = np.zeros((d, d), dtype=complex)
                    s[j, m] = s[m, j] = r2
                    a = np.zeros((d, d), dtype=complex)
                    a[j, m] = 1j * r2
                    a[m, j] = -1j * r2
                    mats = [s, a]
                for mat in mats:
                    blocks = [np.zeros((e, e)) for e in shape]
                    blocks[k] = mat
                    basis.append(BlockElement(shape, tuple(blocks)))
    return basis


def combine(shape, basis: Sequence[BlockElement], coeffs: Iterable[float]) -> BlockElement:
    shape = as_shape(shape)
    blocks = [np.zeros((d, d), dtype=complex) for d in shape]
    for c, b in zip(coeffs, basis):
        if c != 0.0:
            for k in range(len(blocks)):
                blocks[k] += c * b.blocks[k]
    return BlockElement(shape, tuple(blocks))
