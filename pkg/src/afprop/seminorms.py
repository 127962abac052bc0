"""Lip-norms on the top level of a truncated tower.

Two families:

* cond-exp:  L(x) = max_{m<N} ||x - E_m(x)|| / beta(m), E_m the trace-preserving
  conditional expectation onto level m;
* quotient:  L(x) = max_{m<N} S_m(x) / beta(m), S_m(x) the operator-norm distance
  from x to the self-adjoint part of level m.

S_m is a convex best-approximation problem.  It is solved with a barrier
method (``lmi.solve_lmi``) and bracketed by a dual certificate, so every
value comes with a lower and an upper bound.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import lmi
from .algebra import (
    TOL_SA,
    BlockElement,
    hermitian_basis,
    hs_inner,
    jacobi_eigh,
    jordan,
    lie,
    nuclear_norm_sa,
    random_element,
    sa_norm,
)
from .states import (
    TraceWeights,
    canonical_weights,
    effros_shen_trace,
    eval_trace,
    expectation_coefficients,
)
from .towers import ContinuedFraction, Tower, apply_embedding, compose_steps, dimension_beta, effros_shen_tower, golden_beta

KINDS = ("cond-exp", "quotient")
GAP_TARGET = 1e-6
SUBGRADIENT_CAP = 5000


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _rational(v) -> Fraction:
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**12) if v != Fraction(v) else Fraction(v)
    return Fraction(v)


@dataclass(frozen=True)
class WeightSequence:
    """beta(0..N-1) as exact positive rationals, with an optional dominator B >= beta."""

    beta: tuple[Fraction, ...]
    dominator: tuple[Fraction, ...] | None = None

    def __post_init__(self):
        beta = tuple(_rational(b) for b in self.beta)
        if not beta or any(b <= 0 for b in beta):
            raise ConfigError(f"beta entries must be positive, got {[str(b) for b in beta]}")
        object.__setattr__(self, "beta", beta)
        if self.dominator is not None:
            dom = tuple(_rational(b) for b in self.dominator)
            if len(dom) < len(beta):
                raise ConfigError("dominator must cover every beta index")
            if any(b > d for b, d in zip(beta, dom)):
                raise ConfigError("dominator must bound beta from above")
            if any(d2 > d1 for d1, d2 in zip(dom, dom[1:])):
                raise ConfigError("dominator must be nonincreasing")
            object.__setattr__(self, "dominator", dom)

    def __len__(self):
        return len(self.beta)

    def __getitem__(self, m) -> Fraction:
        return self.beta[m]


@dataclass(frozen=True)
class LipSpec:
    tower: Tower
    kind: str
    beta: WeightSequence
    trace: TraceWeights | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not isinstance(self.beta, WeightSequence):
            object.__setattr__(self, "beta", WeightSequence(tuple(self.beta)))
        if len(self.beta) < self.depth:
            raise ConfigError(f"beta covers {len(self.beta)} levels, the tower needs {self.depth}")
        if self.kind == "cond-exp":
            if self.trace is None:
                raise ConfigError("the cond-exp kind needs a trace")
            if self.trace.shape != self.tower.top:
                raise ConfigError("trace must live on the top level")
            if not self.trace.faithful:
                raise ConfigError("the cond-exp kind needs a faithful trace")
        elif self.trace is not None and self.trace.shape != self.tower.top:
            raise ConfigError("trace must live on the top level")

    @property
    def depth(self) -> int:
        return self.tower.depth

    @property
    def top(self):
        return self.tower.top

    def beta_f(self, m: int) -> float:
        return float(self.beta[m])

    def with_kind(self, kind: str, trace: TraceWeights | None = None) -> LipSpec:
        return LipSpec(self.tower, kind, self.beta, trace if trace is not None else self.trace)

    def expectation(self, m: int, x: BlockElement) -> BlockElement:
        """E_m(x) with the LipSpec trace (canonical trace when none is set)."""
        if m == self.depth:
            return x
        w = self.trace if self.trace is not None else canonical_weights(self.top)
        alpha = compose_steps(self.tower, m, self.depth)
        return apply_embedding(alpha, expectation_coefficients(alpha, w, x))

    def level_data(self, m: int):
        """Cached per-level data for the best-approximation solver."""
        key = ("level", m)
        hit = self._cache.get(key)
        if hit is None:
            hit = _LevelData(self.tower, m, self.depth)
            self._cache[key] = hit
        return hit


def effros_shen_spec(cf: ContinuedFraction, depth: int, kind: str = "cond-exp", beta=None) -> LipSpec:
    """Effros-Shen tower with its trace at the top level and beta = 1/dim(level n) by default."""
    t = effros_shen_tower(cf, depth)
    if beta is None:
        beta = WeightSequence(dimension_beta(t), tuple(golden_beta(n) for n in range(depth)))
    trace = effros_shen_trace(cf, depth)
    return LipSpec(t, kind, beta, trace)


class _LevelData:
    def __init__(self, tower: Tower, m: int, N: int):
        self.m = m
        self.alpha = compose_steps(tower, m, N)
        self.basis = hermitian_basis(tower.levels[m])
        top = tower.top
        imgs = [apply_embedding(self.alpha, b) for b in self.basis]
        self.images = [np.stack([im.blocks[J] for im in imgs]) for J in range(top.n_blocks)]
        self.commutative_fibers = None
        if top.is_commutative():
            fibers: dict[int, list[int]] = {}
            for J, row in enumerate(self.alpha.layout):
                fibers.setdefault(row[0], []).append(J)
            self.commutative_fibers = [fibers[i] for i in sorted(fibers)]

    def element(self, coeffs) -> BlockElement:
        """alpha(sum_k coeffs_k B_k) at the top level."""
        shape = self.alpha.out_shape
        return BlockElement(shape, tuple(np.tensordot(np.asarray(coeffs, dtype=float), A, axes=1) for A in self.images))

    def coordinates(self, c: BlockElement) -> np.ndarray:
        return np.array([hs_inner(b, c) for b in self.basis])


def _require_sa(x: BlockElement):
    if not x.is_self_adjoint(TOL_SA):
        raise DomainError("Lip-norms are defined on self-adjoint elements only")


def _is_scalar(x: BlockElement) -> bool:
    c = x.blocks[0][0, 0]
    return all(np.array_equal(b, c * np.eye(b.shape[0])) for b in x.blocks)


# ---------------------------------------------------------------------------
# cond-exp kind

def cond_exp_terms(spec: LipSpec, x: BlockElement) -> list[float]:
    """||x - E_m(x)|| for m = 0..N-1."""
    return [sa_norm(x - spec.expectation(m, x)) for m in range(spec.depth)]


def lip_cond_exp(spec: LipSpec, x: BlockElement) -> float:
    if spec.kind != "cond-exp":
        raise ConfigError("lip_cond_exp needs a cond-exp spec")
    _require_sa(x)
    if _is_scalar(x):
        return 0.0
    return max((d / spec.beta_f(m) for m, d in enumerate(cond_exp_terms(spec, x))), default=0.0)


# ---------------------------------------------------------------------------
# quotient kind

@dataclass
class QuotientResult:
    value: float                  # ||x - witness||, an upper bound for S_m(x)
    witness: BlockElement         # self-adjoint element of the level-m image
    lower: float                  # certified lower bound for S_m(x)
    converged: bool
    method: str = "barrier"
    iterations: int = 0

    @property
    def gap(self) -> float:
        return self.value - self.lower

    @property
    def rel_gap(self) -> float:
        return 0.0 if self.value == 0.0 else (self.value - self.lower) / self.value


def _spectrum_bounds(x: BlockElement) -> tuple[float, float]:
    lo, hi = np.inf, -np.inf
    for b in x.blocks:
        w = jacobi_eigh(b) if b.shape[0] > 1 else np.array([b[0, 0].real])
        lo, hi = min(lo, w[0]), max(hi, w[-1])
    return float(lo), float(hi)


def dual_lower_bound(spec: LipSpec, m: int, x: BlockElement, W: BlockElement) -> float:
    """Re Tr(W' x) / ||W'||_1 with W' the Hilbert-Schmidt projection of W off the level-m image.

    Valid for any self-adjoint W: Tr(W'(x - b)) = Tr(W' x) for b in the image.
    """
    lev = spec.level_data(m)
    Wp = W - apply_embedding(lev.alpha, expectation_coefficients(lev.alpha, canonical_weights(spec.top), W))
    nn = nuclear_norm_sa(Wp)
    if nn <= 0.0:
        return 0.0
    val = sum(float(np.real(np.vdot(a, b))) for a, b in zip(Wp.blocks, x.blocks))
    return max(val / nn, 0.0)


def quotient_seminorm(spec: LipSpec, m: int, x: BlockElement, *, method: str = "barrier",
                      gap_target: float = GAP_TARGET) -> QuotientResult:
    """Distance from x to the self-adjoint part of the level-m image, with bounds."""
    _require_sa(x)
    N = spec.depth
    if not 0 <= m < N:
        raise ValueError(f"level m must be in [0, {N}), got {m}")
    x = BlockElement(x.shape, tuple((b + b.conj().T) / 2 for b in x.blocks))
    lev = spec.level_data(m)

    if m == 0:
        lo, hi = _spectrum_bounds(x)
        v = (hi - lo) / 2
        return QuotientResult(v, BlockElement.scalar(spec.top, (hi + lo) / 2), v, True, "closed-form")
    if lev.commutative_fibers is not None:
        diag = np.array([b[0, 0].real for b in x.blocks])
        coeff_blocks, v = [], 0.0
        for fib in lev.commutative_fibers:
            lo, hi = diag[fib].min(), diag[fib].max()
            v = max(v, (hi - lo) / 2)
            coeff_blocks.append(np.array([[(hi + lo) / 2]]))
        c = BlockElement(lev.alpha.in_shape, tuple(coeff_blocks))
        return QuotientResult(float(v), apply_embedding(lev.alpha, c), float(v), True, "closed-form")

    # feasible starting points: expectations for the canonical trace and the LipSpec trace
    starts = [expectation_coefficients(lev.alpha, canonical_weights(spec.top), x)]
    if spec.trace is not None:
        starts.append(expectation_coefficients(lev.alpha, spec.trace, x))
    best_c, best_v = None, np.inf
    for c in starts:
        v = sa_norm(x - apply_embedding(lev.alpha, c))
        if v < best_v:
            best_c, best_v = c, v
    e_star = sa_norm(x - apply_embedding(lev.alpha, starts[0]))
    floor = e_star / 2
    scale = max(1.0, sa_norm(x))
    if best_v <= 1e-13 * scale:
        # x already sits in the image up to rounding
        return QuotientResult(best_v, apply_embedding(lev.alpha, best_c), min(floor, best_v), True, "feasible-zero")
    coords0 = lev.coordinates(best_c)

    if method == "subgradient":
        return _subgradient(spec, lev, x, coords0, best_v, floor, gap_target)
    if method != "barrier":
        raise ValueError(f"unknown method {method!r}")

    # work in units of the starting residual, measured on the basis reconstruction
    u0 = max(sa_norm(x - lev.element(coords0)), best_v)
    xs = [b / u0 for b in x.blocks]
    K = len(lev.basis) + 1
    F0, Fk = [], []
    for J, A in enumerate(lev.images):
        n = A.shape[1]
        eye = np.eye(n)[None, :, :]
        F0 += [-xs[J], xs[J]]
        Fk += [np.concatenate([eye, A], axis=0), np.concatenate([eye, -A], axis=0)]
    cvec = np.zeros(K)
    cvec[0] = 1.0
    prob = lmi.LMIProblem(cvec, F0, Fk)
    z0 = np.concatenate([[1.05], coords0 / u0])
    # past nu/s ~ 1e-8 the centering loses accuracy (s c and the barrier gradient
    # cancel) and the dual matrix degrades, so the path stops there
    res = lmi.solve_lmi(prob, z0, gap_tol=min(gap_target * 1e-2, 1e-8))

    coeffs = res.z[1:] * u0
    b = lev.element(coeffs)
    value = sa_norm(x - b)
    if value > best_v:
        b, value = apply_embedding(lev.alpha, best_c), best_v
    W = BlockElement(spec.top, tuple(res.dual_block(prob, 2 * J) - res.dual_block(prob, 2 * J + 1)
                                      for J in range(spec.top.n_blocks)))
    W = BlockElement(spec.top, tuple((w + w.conj().T) / 2 for w in W.blocks))
    lower = max(floor, min(dual_lower_bound(spec, m, x, W), value))
    converged = value - lower <= gap_target * value
    return QuotientResult(float(value), b, float(lower), bool(converged), "barrier", res.newton_steps)


def _subgradient(spec, lev, x, coords0, v0, floor, gap_target) -> QuotientResult:
    """Projected subgradient with Polyak steps against the running lower bound."""
    # orthonormal coordinates on the image: the images of the basis are orthogonal
    norms = np.array([np.sqrt(sum(np.sum(np.abs(A[k]) ** 2) for A in lev.images)) for k in range(len(lev.basis))])
    z = coords0 * norms
    best_z, best_v = z.copy(), v0
    lower = floor
    it = 0
    for it in range(1, SUBGRADIENT_CAP + 1):
        b = lev.element(z / norms)
        y = x - b
        # top eigenpair by absolute value over blocks
        top_val, g_blocks = -1.0, None
        for J, yb in enumerate(y.blocks):
            w, V = jacobi_eigh(yb, vectors=True)
            for idx in (0, len(w) - 1):
                if abs(w[idx]) > top_val:
                    top_val = abs(w[idx])
                    gb = [np.zeros_like(bb) for bb in y.blocks]
                    v = V[:, idx]
                    gb[J] = np.sign(w[idx]) * np.outer(v, v.conj())
                    g_blocks = gb
        f = top_val
        if f < best_v:
            best_v, best_z = f, z.copy()
        G = BlockElement(spec.top, tuple(g_blocks))
        lower = max(lower, dual_lower_bound(spec, lev.m, x, G)) if it % 50 == 1 else lower
        if best_v - lower <= gap_target * best_v:
            break
        # gradient of ||x - b|| in orthonormal image coordinates is -P(G)
        grad = -np.array([sum(float(np.real(np.vdot(A[k], G.blocks[J]))) for J, A in enumerate(lev.images))
                          for k in range(len(lev.basis))]) / norms
        gn = float(grad @ grad)
        if gn == 0.0:
            lower = best_v
            break
        step = (f - lower) / gn
        z = z - step * grad
    b = lev.element(best_z / norms)
    value = sa_norm(x - b)
    return QuotientResult(float(value), b, float(min(lower, value)), bool(value - lower <= gap_target * value),
                          "subgradient", it)


# ---------------------------------------------------------------------------
# unified evaluation

@dataclass
class LipInterval:
    lower: float
    upper: float
    converged: bool = True
    terms: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.upper


def lip_quotient(spec: LipSpec, x: BlockElement, **kw) -> LipInterval:
    _require_sa(x)
    if _is_scalar(x):
        return LipInterval(0.0, 0.0, True, [])
    terms = [quotient_seminorm(spec, m, x, **kw) for m in range(spec.depth)]
    lo = max((r.lower / spec.beta_f(m) for m, r in enumerate(terms)), default=0.0)
    hi = max((r.value / spec.beta_f(m) for m, r in enumerate(terms)), default=0.0)
    return LipInterval(lo, hi, all(r.converged for r in terms), terms)


def quotient_bounds_cheap(spec: LipSpec, m: int, x: BlockElement) -> tuple[float, float]:
    """Bounds on S_m(x) without the solver: e/2 <= S_m(x) <= e with e = ||x - E*_m(x)||.

    E* is the expectation for the canonical trace; the lower end uses
    contractivity, the upper end feasibility of E*_m(x).  Closed forms are
    used where available.
    """
    lev = spec.level_data(m)
    if m == 0 or lev.commutative_fibers is not None:
        r = quotient_seminorm(spec, m, x)
        return r.lower, r.value
    e = sa_norm(x - apply_embedding(lev.alpha, expectation_coefficients(lev.alpha, canonical_weights(spec.top), x)))
    return e / 2, e


def lip_interval(spec: LipSpec, x: BlockElement, cheap: bool = False) -> LipInterval:
    """Lip-norm of either kind as an interval (degenerate for cond-exp).

    With ``cheap`` the quotient kind skips the solver and returns the wider
    expectation bounds, which are still valid.
    """
    if spec.kind == "cond-exp":
        v = lip_cond_exp(spec, x)
        return LipInterval(v, v, True)
    if not cheap:
        return lip_quotient(spec, x)
    _require_sa(x)
    if _is_scalar(x):
        return LipInterval(0.0, 0.0, True, [])
    b = [quotient_bounds_cheap(spec, m, x) for m in range(spec.depth)]
    lo = max(l / spec.beta_f(m) for m, (l, _) in enumerate(b))
    hi = max(u / spec.beta_f(m) for m, (_, u) in enumerate(b))
    return LipInterval(lo, hi, lo == hi, b)


def lip_upper(spec: LipSpec, x: BlockElement) -> float:
    return lip_interval(spec, x).upper


# ---------------------------------------------------------------------------
# quasi-Leibniz and sampling

def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used everywhere randomness is needed."""
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


def random_sa(shape, rng: np.random.Generator) -> BlockElement:
    """Gaussian self-adjoint element with a random overall scale in [0.1, 10]."""
    return random_element(shape, rng, self_adjoint=True, scale=float(10 ** rng.uniform(-1, 1)))


@dataclass
class QuasiLeibnizReport:
    C: float
    D: float
    n_samples: int
    worst_margin: float           # min over samples of (rhs - lhs) / max(1, rhs)
    tol: float
    passed: bool
    unconverged: int = 0
    refined: int = 0              # samples that needed the solver
    failures: list = field(default_factory=list)


def quasi_leibniz_check(spec: LipSpec, C: float, D: float, n_samples: int, seed: int, tol: float = 1e-7,
                        samples: Sequence[tuple[BlockElement, BlockElement]] | None = None,
                        adaptive: bool = True) -> QuasiLeibnizReport:
    """max(L(a o b), L({a,b})) <= C(||a|| L(b) + ||b|| L(a)) + D L(a) L(b) on sampled pairs.

    Upper bounds are used on the left and lower bounds on the right, so a
    pass holds for the exact seminorm whatever the solver gap.  With
    ``adaptive`` the quotient kind first tries the cheap expectation bounds
    and calls the solver only for pairs they cannot decide.
    """
    if C < 1 or D < 0:
        raise ValueError("need C >= 1 and D >= 0")
    rng = make_rng(seed)
    if samples is None:
        samples = []
        for k in range(n_samples):
            a = random_sa(spec.top, rng)
            b = random_sa(spec.top, rng)
            if k == 0:
                a = BlockElement.identity(spec.top)
            samples.append((a, b))
    worst, unconv, refined, failures = np.inf, 0, 0, []
    for idx, (a, b) in enumerate(samples):
        elems = (a, b, jordan(a, b), lie(a, b))
        na, nb = sa_norm(a), sa_norm(b)
        for cheap in ((True, False) if adaptive and spec.kind == "quotient" else (False,)):
            La, Lb, Lj, Ll = (lip_interval(spec, y, cheap=cheap) for y in elems)
            rhs = C * (na * Lb.lower + nb * La.lower) + D * La.lower * Lb.lower
            lhs = max(Lj.upper, Ll.upper)
            scale = max(1.0, rhs)
            if rhs - lhs >= -tol * scale:
                break
        if not cheap:
            unconv += sum(not r.converged for r in (La, Lb, Lj, Ll))
            refined += spec.kind == "quotient"
        margin = rhs - lhs
        if margin < -tol * scale:
            failures.append({"sample": idx, "lhs": lhs, "rhs": rhs})
        worst = min(worst, margin / scale)
    return QuasiLeibnizReport(C, D, len(samples), float(worst), tol, not failures, unconv, refined, failures)


def level_direction(spec: LipSpec, m: int, rng: np.random.Generator) -> BlockElement:
    """A self-adjoint element of the level-(m+1) image with no level-m part (canonical trace)."""
    x = random_element(spec.top, rng)
    w = canonical_weights(spec.top)
    hi = compose_steps(spec.tower, m + 1, spec.depth)
    lo = compose_steps(spec.tower, m, spec.depth)
    y = apply_embedding(hi, expectation_coefficients(hi, w, x))
    return y - apply_embedding(lo, expectation_coefficients(lo, w, y))


def sample_lip_ball(spec: LipSpec, n_samples: int, seed: int) -> list[BlockElement]:
    """Self-adjoint elements with L <= 1.

    Gaussian draws pushed onto the unit sphere of L, then 0 and +-1, scalar
    shifts of the first few draws and one unit-L direction per level.
    For the quotient kind the rescale uses the upper bound, so L <= 1 holds exactly.
    """
    rng = make_rng(seed)
    out = []
    for _ in range(n_samples):
        x = random_sa(spec.top, rng)
        L = lip_upper(spec, x)
        out.append(x / max(1.0, L) if L > 0 else x)
    one = BlockElement.identity(spec.top)
    out += [BlockElement.zeros(spec.top), one, -one]
    for x in out[: min(3, n_samples)]:
        out.append(x + one * float(rng.standard_normal()))
    for m in range(spec.depth):
        d = level_direction(spec, m, rng)
        L = lip_upper(spec, d)
        if L > 0:
            out.append(d / L)
    return out


def coerce_sa(x: BlockElement) -> BlockElement:
    return BlockElement(x.shape, tuple((b + b.conj().T) / 2 for b in x.blocks))

