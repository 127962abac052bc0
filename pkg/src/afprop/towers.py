"""Truncated Bratteli towers: continued fractions, multiplicity embeddings,
Effros-Shen and UHF builders, the Baire metric and fusing detection.

All integer data is exact (python ints / Fractions).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .algebra import AlgebraShape, BlockElement, ShapeError, as_shape


class InvalidQuotientError(ValueError):
    pass


class DepthError(ValueError):
    pass


class EmbeddingError(ValueError):
    """Multiplicity data that is not a unital injective embedding."""


class NotFusing(ValueError):
    def __init__(self, N: int, detail: str = ""):
        self.N = N
        super().__init__(f"family is not fusing at depth N={N}" + (f": {detail}" if detail else ""))


# ---------------------------------------------------------------------------
# continued fractions

@dataclass(frozen=True)
class ContinuedFraction:
    """Finite list of partial quotients (a_0, ..., a_K) with a_0 = 0.

    Read either as the full expansion of a rational, or as a prefix of the
    expansion of an irrational.  Which one is meant only matters for
    ``enclosure``.
    """

    partial_quotients: tuple[int, ...]

    def __post_init__(self):
        a = tuple(int(v) for v in self.partial_quotients)
        if not a:
            raise InvalidQuotientError("empty quotient list")
        if a[0] != 0:
            raise InvalidQuotientError(f"a_0 must be 0 for a number in (0,1), got {a[0]}")
        bad = [j for j, v in enumerate(a[1:], start=1) if v < 1]
        if bad:
            raise InvalidQuotientError(f"a_j must be >= 1 for j >= 1; bad indices {bad}")
        object.__setattr__(self, "partial_quotients", a)
        object.__setattr__(self, "_pq", _convergents(a))

    @classmethod
    def parse(cls, text: str) -> ContinuedFraction:
        try:
            return cls(tuple(int(t) for t in text.replace(" ", "").split(",") if t))
        except ValueError as exc:
            if isinstance(exc, InvalidQuotientError):
                raise
            raise InvalidQuotientError(f"cannot parse quotients {text!r}") from exc

    @classmethod
    def golden(cls, n_terms: int) -> ContinuedFraction:
        """[0, 1, 1, ...], the expansion of (sqrt(5) - 1)/2."""
        return cls((0,) + (1,) * n_terms)

    @property
    def K(self) -> int:
        return len(self.partial_quotients) - 1

    def __len__(self):
        return len(self.partial_quotients)

    def __getitem__(self, j):
        return self.partial_quotients[j]

    @property
    def convergents(self) -> tuple[tuple[int, int], ...]:
        return self._pq

    def p(self, n: int) -> int:
        return self._pq[n][0]

    def q(self, n: int) -> int:
        return self._pq[n][1]

    def value(self) -> Fraction:
        """Value of the finite expansion (last convergent)."""
        p, q = self._pq[-1]
        return Fraction(p, q)

    def enclosure(self) -> tuple[Fraction, Fraction]:
        """Closed interval containing every number whose expansion starts with these quotients.

        The tail [a_{K+1}, ...] ranges over (1, inf], so theta lies between
        p_K/q_K and (p_K + p_{K-1})/(q_K + q_{K-1}).
        """
        if self.K == 0:
            return Fraction(0), Fraction(1)
        pK, qK = self._pq[-1]
        pk1, qk1 = self._pq[-2]
        ends = sorted([Fraction(pK, qK), Fraction(pK + pk1, qK + qk1)])
        return ends[0], ends[1]

    def midpoint(self) -> Fraction:
        lo, hi = self.enclosure()
        return (lo + hi) / 2

    def width(self) -> Fraction:
        lo, hi = self.enclosure()
        return hi - lo

    def prefix(self, n: int) -> ContinuedFraction:
        return ContinuedFraction(self.partial_quotients[: n + 1])


def _convergents(a: Sequence[int]) -> tuple[tuple[int, int], ...]:
    out = [(a[0], 1)]
    if len(a) > 1:
        out.append((a[0] * a[1] + 1, a[1]))
    for n in range(2, len(a)):
        (p1, q1), (p0, q0) = out[-1], out[-2]
        out.append((a[n] * p1 + p0, a[n] * q1 + q0))
    return tuple(out)


def convergents(cf: ContinuedFraction | Sequence[int]) -> tuple[tuple[int, int], ...]:
    """Exact convergents (p_n, q_n), n = 0..K."""
    if not isinstance(cf, ContinuedFraction):
        cf = ContinuedFraction(tuple(cf))
    return cf.convergents


def cf_expand(x, max_terms: int = 10_000) -> ContinuedFraction:
    """Euclidean-algorithm expansion of a rational in (0, 1)."""
    x = Fraction(x)
    if not 0 < x < 1:
        raise ValueError(f"x must lie in (0,1), got {x}")
    a = [0]
    num, den = x.numerator, x.denominator
    # x = num/den < 1, so the first step is 1/x
    num, den = den, num
    while den and len(a) <= max_terms:
        a.append(num // den)
        num, den = den, num % den
    if den:
        raise DepthError(f"expansion of {x} exceeds {max_terms} terms")
    return ContinuedFraction(tuple(a))


# ---------------------------------------------------------------------------
# embeddings

def _canonical_layout(mult) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(i for i, c in enumerate(row) for _ in range(c)) for row in mult)


@dataclass(frozen=True)
class MultiplicityEmbedding:
    """Unital injective *-embedding described by a multiplicity matrix.

    ``mult[j][i]`` copies of input block i sit on the diagonal of output block j.
    ``layout[j]`` lists the input blocks in diagonal order; by default input
    blocks appear in index order with their copies consecutive.  Composites
    keep the true order of their factors so that images nest.
    """

    in_shape: AlgebraShape
    out_shape: AlgebraShape
    mult: tuple[tuple[int, ...], ...]
    layout: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        ins, outs = as_shape(self.in_shape), as_shape(self.out_shape)
        mult = tuple(tuple(int(c) for c in row) for row in self.mult)
        object.__setattr__(self, "in_shape", ins)
        object.__setattr__(self, "out_shape", outs)
        object.__setattr__(self, "mult", mult)
        if len(mult) != outs.n_blocks or any(len(r) != ins.n_blocks for r in mult):
            raise EmbeddingError(
                f"multiplicity matrix must be {outs.n_blocks}x{ins.n_blocks}, got "
                f"{len(mult)}x{len(mult[0]) if mult else 0}"
            )
        if any(c < 0 for r in mult for c in r):
            raise EmbeddingError("multiplicities must be nonnegative")
        for j, row in enumerate(mult):
            size = sum(c * d for c, d in zip(row, ins))
            if size != outs[j]:
                raise EmbeddingError(f"not unital: output block {j} has size {outs[j]} but receives {size}")
        for i in range(ins.n_blocks):
            if all(row[i] == 0 for row in mult):
                raise EmbeddingError(f"not injective: input block {i} is sent to zero")
        if self.layout is None:
            layout = _canonical_layout(mult)
        else:
            layout = tuple(tuple(int(i) for i in row) for row in self.layout)
            for j, row in enumerate(layout):
                counts = [row.count(i) for i in range(ins.n_blocks)]
                if tuple(counts) != mult[j] or len(row) != sum(mult[j]):
                    raise EmbeddingError(f"layout of output block {j} disagrees with multiplicities")
        object.__setattr__(self, "layout", layout)
        # (input block, offset) pairs per output block
        places = []
        for row in layout:
            off, pl = 0, []
            for i in row:
                pl.append((i, off))
                off += ins[i]
            places.append(tuple(pl))
        object.__setattr__(self, "_places", tuple(places))

    @property
    def placements(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        return self._places

    def matrix(self) -> np.ndarray:
        return np.array(self.mult, dtype=object)

    def is_canonical(self) -> bool:
        return self.layout == _canonical_layout(self.mult)

    def __call__(self, x: BlockElement) -> BlockElement:
        return apply_embedding(self, x)


def identity_embedding(shape) -> MultiplicityEmbedding:
    shape = as_shape(shape)
    n = shape.n_blocks
    return MultiplicityEmbedding(shape, shape, tuple(tuple(int(i == j) for i in range(n)) for j in range(n)))


def unique_unital_map(shape) -> MultiplicityEmbedding:
    """The embedding C -> shape, sending 1 to the unit."""
    shape = as_shape(shape)
    return MultiplicityEmbedding(AlgebraShape((1,)), shape, tuple((d,) for d in shape))


def apply_embedding(e: MultiplicityEmbedding, x: BlockElement) -> BlockElement:
    if x.shape != e.in_shape:
        raise ShapeError(f"embedding expects shape {e.in_shape.block_dims}, got {x.shape.block_dims}")
    blocks = []
    for j, d in enumerate(e.out_shape):
        out = np.zeros((d, d), dtype=np.complex128)
        for i, off in e.placements[j]:
            n = e.in_shape[i]
            out[off:off + n, off:off + n] = x.blocks[i]
        blocks.append(out)
    return BlockElement(e.out_shape, tuple(blocks))


def compose(outer: MultiplicityEmbedding, inner: MultiplicityEmbedding) -> MultiplicityEmbedding:
    """outer o inner."""
    if inner.out_shape != outer.in_shape:
        raise ShapeError("cannot compose: intermediate shapes differ")
    mult = tuple(
        tuple(sum(outer.mult[j][k] * inner.mult[k][i] for k in range(outer.in_shape.n_blocks))
              for i in range(inner.in_shape.n_blocks))
        for j in range(outer.out_shape.n_blocks)
    )
    layout = tuple(tuple(i for k in row for i in inner.layout[k]) for row in outer.layout)
    return MultiplicityEmbedding(inner.in_shape, outer.out_shape, mult, layout)


# ---------------------------------------------------------------------------
# towers

@dataclass(frozen=True)
class Tower:
    levels: tuple[AlgebraShape, ...]
    steps: tuple[MultiplicityEmbedding, ...]
    label: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        levels = tuple(as_shape(s) for s in self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "steps", tuple(self.steps))
        if levels[0].block_dims != (1,):
            raise ShapeError(f"level 0 must be the scalars (1), got {levels[0].block_dims}")
        if len(self.steps) != len(levels) - 1:
            raise ShapeError(f"{len(levels)} levels need {len(levels) - 1} steps, got {len(self.steps)}")
        for n, e in enumerate(self.steps):
            if e.in_shape != levels[n] or e.out_shape != levels[n + 1]:
                raise ShapeError(f"step {n} maps {e.in_shape.block_dims} -> {e.out_shape.block_dims}, "
                                 f"levels are {levels[n].block_dims} -> {levels[n + 1].block_dims}")

    @classmethod
    def from_multiplicities(cls, levels, mults, label: str = "") -> Tower:
        levels = [as_shape(s) for s in levels]
        steps = [MultiplicityEmbedding(levels[n], levels[n + 1], m) for n, m in enumerate(mults)]
        return cls(tuple(levels), tuple(steps), label)

    @property
    def depth(self) -> int:
        return len(self.steps)

    @property
    def top(self) -> AlgebraShape:
        return self.levels[-1]

    def embedding(self, m: int, n: int) -> MultiplicityEmbedding:
        return compose_steps(self, m, n)

    def truncate(self, depth: int) -> Tower:
        if not 0 <= depth <= self.depth:
            raise DepthError(f"cannot truncate depth-{self.depth} tower to {depth}")
        return Tower(self.levels[: depth + 1], self.steps[:depth], self.label)

    def agrees_with(self, other: Tower, N: int, outgoing: bool = False) -> bool:
        """Exact equality of shapes on levels 0..N and of step matrices on steps 0..N-1
        (and step N too when ``outgoing``)."""
        n_steps = N + 1 if outgoing else N
        if self.depth < n_steps or other.depth < n_steps or min(self.depth, other.depth) < N:
            return False
        if self.levels[: N + 1] != other.levels[: N + 1]:
            return False
        return all(self.steps[k].mult == other.steps[k].mult for k in range(n_steps))

    def __hash__(self):
        return hash((self.levels, self.steps))


def compose_steps(t: Tower, m: int, n: int) -> MultiplicityEmbedding:
    """The composite embedding level m -> level n."""
    if not 0 <= m <= n <= t.depth:
        raise DepthError(f"need 0 <= m <= n <= {t.depth}, got m={m}, n={n}")
    key = (m, n)
    hit = t._cache.get(key)
    if hit is not None:
        return hit
    if m == n:
        e = identity_embedding(t.levels[m])
    else:
        e = t.steps[n - 1] if n - 1 == m else compose(t.steps[n - 1], compose_steps(t, m, n - 1))
    t._cache[key] = e
    return e


def effros_shen_tower(cf: ContinuedFraction, depth: int) -> Tower:
    """Levels (1), (q_1, q_0), ..., (q_N, q_{N-1})."""
    if not isinstance(cf, ContinuedFraction):
        cf = ContinuedFraction(tuple(cf))
    if depth < 0:
        raise DepthError("depth must be nonnegative")
    if cf.K < depth:
        raise DepthError(f"depth {depth} needs a_1..a_{depth}; only {cf.K} quotients given")
    a = cf.partial_quotients
    levels = [AlgebraShape((1,))] + [AlgebraShape((cf.q(n), cf.q(n - 1))) for n in range(1, depth + 1)]
    steps = []
    for n in range(depth):
        if n == 0:
            mult = ((a[1],), (1,))
        else:
            mult = ((a[n + 1], 1), (1, 0))
        steps.append(MultiplicityEmbedding(levels[n], levels[n + 1], mult))
    label = "effros-shen cf=" + ",".join(map(str, a[: depth + 1]))
    return Tower(tuple(levels), tuple(steps), label)


def uhf_tower(multipliers: Sequence[int], depth: int | None = None) -> Tower:
    mults = [int(m) for m in multipliers]
    if depth is None:
        depth = len(mults)
    if any(m < 2 for m in mults[:depth]):
        raise ValueError(f"UHF multipliers must be >= 2, got {mults}")
    if len(mults) < depth:
        raise DepthError(f"depth {depth} needs {depth} multipliers, got {len(mults)}")
    dims = [1]
    for m in mults[:depth]:
        dims.append(dims[-1] * m)
    levels = [AlgebraShape((d,)) for d in dims]
    steps = [MultiplicityEmbedding(levels[n], levels[n + 1], ((mults[n],),)) for n in range(depth)]
    return Tower(tuple(levels), tuple(steps), "uhf mult=" + ",".join(map(str, mults[:depth])))


# ---------------------------------------------------------------------------
# weights attached to towers

def dimension_beta(t: Tower) -> tuple[Fraction, ...]:
    """beta(n) = 1/dim(level n) for n = 0..depth-1.

    On Effros-Shen towers this is 1/(q_n^2 + q_{n-1}^2), with beta(0) = 1.
    """
    return tuple(Fraction(1, t.levels[n].dimension) for n in range(t.depth))


def effros_shen_beta(cf: ContinuedFraction, n: int) -> Fraction:
    if n == 0:
        return Fraction(1)
    return Fraction(1, cf.q(n) ** 2 + cf.q(n - 1) ** 2)


def golden_beta(n: int) -> Fraction:
    """Dominating sequence B(n) from the golden expansion (smallest q_n of all)."""
    return effros_shen_beta(ContinuedFraction.golden(max(n, 1)), n)


# ---------------------------------------------------------------------------
# Baire metric and fusing

@dataclass(frozen=True)
class Indistinguishable:
    """Two finite prefixes agree wherever both are defined; the distance is not determined."""

    depth: int

    def __float__(self):
        raise TypeError(f"distance undetermined: sequences agree on the first {self.depth} entries")

    def upper_bound(self) -> float:
        return 2.0 ** (-self.depth)


def baire_distance(x: Sequence[int], y: Sequence[int], *, complete: bool = True):
    """2^-(first index of disagreement).

    With ``complete`` (the default) equal sequences of equal length are taken
    as the full data and give 0.  Otherwise agreement on every shared index
    yields an Indistinguishable tag.
    """
    x, y = list(x), list(y)
    if not x or not y:
        raise ValueError("sequences must be nonempty")
    for n, (u, v) in enumerate(zip(x, y)):
        if u != v:
            return 2.0 ** (-n)
    if complete and len(x) == len(y):
        return 0.0
    return Indistinguishable(min(len(x), len(y)))


@dataclass(frozen=True)
class TowerFamily:
    """Members indexed 0..K together with a limit tower.  ``cfs`` is set for Effros-Shen families."""

    members: tuple[Tower, ...]
    limit: Tower
    cfs: tuple[ContinuedFraction, ...] | None = None
    limit_cf: ContinuedFraction | None = None
    label: str = ""

    @property
    def K(self) -> int:
        return len(self.members) - 1


def effros_shen_family(cfs: Sequence[ContinuedFraction], limit_cf: ContinuedFraction, depth: int,
                       label: str = "") -> TowerFamily:
    members = tuple(effros_shen_tower(cf, depth) for cf in cfs)
    return TowerFamily(members, effros_shen_tower(limit_cf, depth), tuple(cfs), limit_cf, label)


def golden_perturbed_cf(k: int, n_terms: int) -> ContinuedFraction:
    """[0, 1 (k times), 2, 2, ...] with n_terms quotients after a_0."""
    tail = max(n_terms - k, 0)
    return ContinuedFraction((0,) + (1,) * k + (2,) * tail)


def golden_family(K: int, depth: int, n_terms: int | None = None) -> TowerFamily:
    """theta_k = [0, 1^k, 2, 2, ...] for k = 0..K, converging to the golden expansion."""
    n_terms = n_terms or (K + depth + 40)
    cfs = [golden_perturbed_cf(k, n_terms) for k in range(K + 1)]
    return effros_shen_family(cfs, ContinuedFraction.golden(n_terms), depth, f"golden family K={K}")


def fusing_sequence(family: TowerFamily, N_max: int | None = None, *, outgoing: bool = False) -> list[int]:
    """c_N for N = 0..N_max: the least k0 such that every member k >= k0 agrees with the limit to level N."""
    if any(t.levels[0].block_dims != (1,) for t in family.members + (family.limit,)):
        raise ShapeError("all towers must start from the scalars")
    if N_max is None:
        N_max = family.limit.depth - (1 if outgoing else 0)
    out = []
    for N in range(N_max + 1):
        k0 = len(family.members)
        for k in range(family.K, -1, -1):
            if not family.members[k].agrees_with(family.limit, N, outgoing):
                break
            k0 = k
        if k0 > family.K:
            raise NotFusing(N, f"member {family.K} differs from the limit")
        out.append(k0)
    return out
