"""Tracial states as block weights, pullbacks, the Effros-Shen trace and the
trace-preserving conditional expectation onto a lower level of a tower."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .algebra import AlgebraShape, BlockElement, ShapeError, as_shape
from .towers import ContinuedFraction, MultiplicityEmbedding, Tower, apply_embedding, compose_steps

FAITHFUL_TOL = 1e-12
SUM_TOL = 1e-12


class FaithfulnessError(ValueError):
    pass


class PrecisionError(ValueError):
    """The continued-fraction prefix is too short to certify a quantity."""


@dataclass(frozen=True)
class TraceWeights:
    """tau(x) = sum_j lam_j tr_{n_j}(x_j) with normalized block traces.

    Weights may be Fractions (exact) or floats.  ``radius`` bounds the error of
    each weight when it comes from an enclosure of an irrational number.
    """

    shape: AlgebraShape
    lam: tuple
    radius: Fraction | float = 0

    def __post_init__(self):
        shape = as_shape(self.shape)
        lam = tuple(v if isinstance(v, Fraction) else (Fraction(v) if isinstance(v, int) else float(v))
                    for v in self.lam)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lam", lam)
        if len(lam) != shape.n_blocks:
            raise ShapeError(f"{shape.n_blocks} blocks need {shape.n_blocks} weights, got {len(lam)}")
        if any(v < 0 for v in lam):
            raise ValueError(f"trace weights must be nonnegative, got {self.floats()}")
        if abs(float(sum(lam)) - 1.0) > SUM_TOL:
            raise ValueError(f"trace weights must sum to 1, got {float(sum(lam))!r}")

    @property
    def exact(self) -> bool:
        return all(isinstance(v, Fraction) for v in self.lam)

    @property
    def faithful(self) -> bool:
        return min(self.lam) > FAITHFUL_TOL

    def floats(self) -> np.ndarray:
        return np.array([float(v) for v in self.lam])

    def per_unit(self) -> np.ndarray:
        """lam_j / n_j: the weight of one diagonal entry of block j."""
        return np.array([float(v) / d for v, d in zip(self.lam, self.shape)])

    def permuted(self, perm: Sequence[int]) -> TraceWeights:
        """Weights on the shape whose block perm[j] is block j of this one."""
        n = self.shape.n_blocks
        dims, lam = [0] * n, [0] * n
        for j, pj in enumerate(perm):
            dims[pj] = self.shape[j]
            lam[pj] = self.lam[j]
        return TraceWeights(AlgebraShape(tuple(dims)), tuple(lam), self.radius)


def canonical_weights(shape) -> TraceWeights:
    """Weights proportional to block size: the normalized canonical trace Tr / sum(n_j).

    With these weights the conditional expectation is the Hilbert-Schmidt
    orthogonal projection.
    """
    shape = as_shape(shape)
    total = shape.total_size
    return TraceWeights(shape, tuple(Fraction(d, total) for d in shape))


def point_mass(shape, j: int) -> TraceWeights:
    shape = as_shape(shape)
    return TraceWeights(shape, tuple(Fraction(int(i == j)) for i in range(shape.n_blocks)))


def eval_trace(w: TraceWeights, x: BlockElement) -> complex:
    if x.shape != w.shape:
        raise ShapeError(f"trace on {w.shape.block_dims} applied to element of shape {x.shape.block_dims}")
    return complex(sum(float(l) * np.trace(b) / d for l, b, d in zip(w.lam, x.blocks, w.shape)))


def pullback_trace(e: MultiplicityEmbedding, w_out: TraceWeights) -> TraceWeights:
    """Weights of tau o e on the input algebra."""
    if w_out.shape != e.out_shape:
        raise ShapeError("weights do not live on the embedding's codomain")
    exact = w_out.exact
    lam = []
    for i, ni in enumerate(e.in_shape):
        if exact:
            v = sum((w_out.lam[j] * e.mult[j][i] * Fraction(ni, nj)
                     for j, nj in enumerate(e.out_shape)), Fraction(0))
        else:
            v = sum(float(w_out.lam[j]) * e.mult[j][i] * ni / nj for j, nj in enumerate(e.out_shape))
        lam.append(v)
    return TraceWeights(e.in_shape, tuple(lam), w_out.radius)


def weight_distance(w1: TraceWeights, w2: TraceWeights):
    """sum_j |lam1_j - lam2_j|; bounds |tau1(b) - tau2(b)| by this times ||b||."""
    if w1.shape != w2.shape:
        raise ShapeError("weights on different shapes")
    if w1.exact and w2.exact:
        return sum((abs(a - b) for a, b in zip(w1.lam, w2.lam)), Fraction(0))
    return float(sum(abs(float(a) - float(b)) for a, b in zip(w1.lam, w2.lam)))


def t_weight(cf: ContinuedFraction, n: int, theta: Fraction) -> Fraction:
    """t(theta, n) = (-1)^(n-1) q_n (theta q_{n-1} - p_{n-1}), linear in theta."""
    sign = 1 if n % 2 == 1 else -1
    return sign * cf.q(n) * (theta * cf.q(n - 1) - cf.p(n - 1))


def effros_shen_trace(cf: ContinuedFraction, n: int) -> TraceWeights:
    """Weights (t, 1 - t) on level n of the Effros-Shen tower.

    theta is known only through the enclosure of its quotient prefix; t is
    evaluated exactly at the midpoint and ``radius`` is q_n q_{n-1} times the
    enclosure half-width.  Evaluating every level at the same midpoint keeps
    the weights exactly consistent under pullback.
    """
    if n < 0:
        raise ValueError("level must be nonnegative")
    if n == 0:
        return TraceWeights(AlgebraShape((1,)), (Fraction(1),))
    if cf.K < n:
        raise PrecisionError(f"level {n} needs at least {n} quotients after a_0")
    lo, hi = cf.enclosure()
    mid = (lo + hi) / 2
    t = t_weight(cf, n, mid)
    radius = cf.q(n) * cf.q(n - 1) * (hi - lo) / 2
    if not (t - radius > 0 and t + radius < 1):
        raise PrecisionError(
            f"enclosure too wide to place t(theta,{n}) in (0,1): t = {float(t)} +- {float(radius)}; "
            "supply more partial quotients"
        )
    return TraceWeights(AlgebraShape((cf.q(n), cf.q(n - 1))), (t, 1 - t), radius)


def effros_shen_trace_interval(cf: ContinuedFraction, n: int) -> tuple[Fraction, Fraction]:
    """Exact interval for t(theta, n) over the enclosure of theta."""
    lo, hi = cf.enclosure()
    a, b = t_weight(cf, n, lo), t_weight(cf, n, hi)
    return min(a, b), max(a, b)


# ---------------------------------------------------------------------------
# conditional expectations

def _check_faithful(w: TraceWeights):
    if not w.faithful:
        raise FaithfulnessError(
            f"conditional expectation needs a faithful trace (all weights > {FAITHFUL_TOL}); got {w.floats()}"
        )


def expectation_coefficients(alpha: MultiplicityEmbedding, w: TraceWeights, x: BlockElement) -> BlockElement:
    """The element c of the lower level with E(x) = alpha(c).

    Summing the matrix-unit formula over the units of one input block gives,
    for each input block, the trace-weighted average of its diagonal copies
    inside x; each copy in output block J carries weight lam_J / n_J.
    """
    if w.shape != alpha.out_shape or x.shape != alpha.out_shape:
        raise ShapeError("trace, element and embedding codomain must share a shape")
    _check_faithful(w)
    unit = w.per_unit()
    ins = alpha.in_shape
    acc = [np.zeros((d, d), dtype=np.complex128) for d in ins]
    mass = [0.0] * ins.n_blocks
    for J, places in enumerate(alpha.placements):
        xb = x.blocks[J]
        for i, off in places:
            d = ins[i]
            acc[i] += unit[J] * xb[off:off + d, off:off + d]
            mass[i] += unit[J]
    return BlockElement(ins, tuple(a / m for a, m in zip(acc, mass)))


def conditional_expectation(t: Tower, n: int, m: int, w: TraceWeights, x: BlockElement) -> BlockElement:
    """tau-preserving conditional expectation of level n onto the image of level m."""
    if not 0 <= m <= n <= t.depth:
        raise ValueError(f"need 0 <= m <= n <= {t.depth}, got n={n}, m={m}")
    if x.shape != t.levels[n]:
        raise ShapeError(f"element of shape {x.shape.block_dims} is not at level {n}")
    if m == n:
        _check_faithful(w)
        return x
    alpha = compose_steps(t, m, n)
    return apply_embedding(alpha, expectation_coefficients(alpha, w, x))


def conditional_expectation_units(t: Tower, n: int, m: int, w: TraceWeights, x: BlockElement) -> BlockElement:
    """Literal matrix-unit sum  sum_e tau(alpha(e)* x)/tau(alpha(e* e)) alpha(e).

    Slow reference version of ``conditional_expectation``.
    """
    from .algebra import matrix_units

    _check_faithful(w)
    alpha = compose_steps(t, m, n)
    out = BlockElement.zeros(t.levels[n])
    for u in matrix_units(t.levels[m]):
        ae = apply_embedding(alpha, u.element(t.levels[m]))
        num = eval_trace(w, ae.H @ x)
        den = eval_trace(w, ae.H @ ae)
        out = out + ae * (num / den)
    return out


def restrict(alpha: MultiplicityEmbedding, y: BlockElement) -> BlockElement:
    """Read off c from y = alpha(c), taking the first diagonal copy of each input block."""
    ins = alpha.in_shape
    blocks: list = [None] * ins.n_blocks
    for J, places in enumerate(alpha.placements):
        for i, off in places:
            if blocks[i] is None:
                d = ins[i]
                blocks[i] = y.blocks[J][off:off + d, off:off + d]
    return BlockElement(ins, tuple(blocks))


def image_residual(alpha: MultiplicityEmbedding, y: BlockElement) -> float:
    """Largest entrywise deviation of y from the block pattern of alpha's image (0 means exact membership)."""
    return float(max(np.max(np.abs(a - b)) for a, b in zip(apply_embedding(alpha, restrict(alpha, y)).blocks, y.blocks)))


def in_image(alpha: MultiplicityEmbedding, y: BlockElement, tol: float = 0.0) -> bool:
    return image_residual(alpha, y) <= tol
