"""Monge-Kantorovich distances, unit-pivot bridges and propinquity certificates.

Bounds that follow from a theorem once its hypotheses are machine-checked
are labelled CERTIFIED; bounds that rest on sampling a supremum are
labelled EMPIRICAL.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import io, lmi
from .algebra import (
    AlgebraShape,
    BlockElement,
    ShapeError,
    hermitian_basis,
    matrix_units,
    op_norm,
    random_element,
    sa_norm,
)
from .seminorms import (
    ConfigError,
    DomainError,
    LipSpec,
    WeightSequence,
    lip_cond_exp,
    lip_interval,
    lip_upper,
    make_rng,
    sample_lip_ball,
)
from .states import (
    TraceWeights,
    canonical_weights,
    effros_shen_trace,
    eval_trace,
    expectation_coefficients,
    image_residual,
    pullback_trace,
    weight_distance,
)
from .towers import (
    MultiplicityEmbedding,
    Tower,
    TowerFamily,
    apply_embedding,
    compose_steps,
    fusing_sequence,
    golden_beta,
    effros_shen_beta,
    identity_embedding,
)

CERTIFIED = "CERTIFIED"
EMPIRICAL = "EMPIRICAL"
WITNESS_TOL = 1e-9
ISOMETRY_TOL = 1e-8


class HypothesisError(ValueError):
    pass


class ConditioningError(ValueError):
    pass


class StructureError(ValueError):
    """A proposed isometry does not respect the tower data."""


# ---------------------------------------------------------------------------
# certificates

@dataclass(frozen=True)
class Witness:
    label: str
    lhs: float
    rhs: float
    tol: float

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs

    @property
    def ok(self) -> bool:
        return self.residual <= self.tol


@dataclass
class MetricCertificate:
    kind: str
    inputs_digest: str
    bound: Fraction | float
    witnesses: list
    seed: int | None
    label: str
    parts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    verified: bool = field(init=False)

    def __post_init__(self):
        self.verified = self.recheck()

    def recheck(self) -> bool:
        return all(w.ok for w in self.witnesses) and not self.notes_fail()

    def notes_fail(self) -> bool:
        return any(n.get("fail") for n in self.notes)

    @property
    def witness_count(self) -> int:
        return len(self.witnesses)

    @property
    def worst_residual(self) -> float:
        return max((w.residual for w in self.witnesses), default=0.0)

    def to_json(self) -> dict:
        return {
            "schema": io.tag("certificate"),
            "kind": self.kind,
            "label": self.label,
            "bound": io.num(self.bound),
            "verified": self.verified,
            "witness_count": self.witness_count,
            "worst_residual": float(self.worst_residual),
            "seed": self.seed,
            "inputs_digest": self.inputs_digest,
            "parts": {k: (io.rat(v) if isinstance(v, Fraction) else v) for k, v in self.parts.items()},
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# simplex

class LPError(ValueError):
    pass


def simplex_max(c, A, b, eps: float = 1e-12, max_iter: int = 10_000):
    """maximize c.x subject to A x <= b, x >= 0, for b >= 0 (the origin is feasible).

    Dense tableau with Bland's rule, so it terminates on degenerate problems.
    Returns (value, x).
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if np.any(b < 0):
        raise LPError("right-hand side must be nonnegative")
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = list(range(n, n + m))
    for _ in range(max_iter):
        enter = next((j for j in range(n + m) if T[m, j] < -eps), None)
        if enter is None:
            break
        col = T[:m, enter]
        best, leave = None, None
        for i in range(m):
            if col[i] > eps:
                r = T[i, -1] / col[i]
                if best is None or r < best - eps or (abs(r - best) <= eps and basis[i] < basis[leave]):
                    best, leave = r, i
        if leave is None:
            raise LPError("LP is unbounded")
        T[leave] /= T[leave, enter]
        for i in range(m + 1):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter
    else:
        raise LPError("simplex iteration cap reached")
    x = np.zeros(n + m)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    return float(T[m, -1]), x[:n]


def _state_vector(w: TraceWeights) -> np.ndarray:
    """Coefficients of a state on a commutative algebra: phi(a) = sum_i v_i a_i."""
    return w.floats()


def commutative_expectation_matrix(spec: LipSpec, m: int) -> np.ndarray:
    n = spec.top.n_blocks
    P = np.zeros((n, n))
    for i in range(n):
        e = BlockElement.diagonal(spec.top, *[[1.0 if j == i else 0.0] for j in range(n)])
        y = spec.expectation(m, e)
        P[:, i] = [b[0, 0].real for b in y.blocks]
    return P


def lip_constraints_commutative(spec: LipSpec):
    """Rows (A, b) with A a <= b describing L(a) <= 1 on a commutative top level."""
    n = spec.top.n_blocks
    rows, rhs = [], []
    for m in range(spec.depth):
        beta = spec.beta_f(m)
        if spec.kind == "cond-exp":
            R = np.eye(n) - commutative_expectation_matrix(spec, m)
            for r in R:
                rows += [r, -r]
                rhs += [beta, beta]
        else:
            lev = spec.level_data(m)
            fibers = lev.commutative_fibers if m > 0 else [list(range(n))]
            for fib in fibers:
                for u in fib:
                    for v in fib:
                        if u != v:
                            r = np.zeros(n)
                            r[u], r[v] = 1.0, -1.0
                            rows.append(r)
                            rhs.append(2 * beta)
    return np.array(rows), np.array(rhs)


def kantorovich_commutative_exact(spec: LipSpec, phi: TraceWeights, psi: TraceWeights) -> float:
    """mk_L(phi, psi) by linear programming on a commutative top level."""
    if not spec.top.is_commutative():
        raise DomainError("exact Kantorovich needs a commutative top level; use kantorovich_lower_bound")
    if phi.shape != spec.top or psi.shape != spec.top:
        raise ShapeError("states must live on the top level")
    d = _state_vector(phi) - _state_vector(psi)
    if not np.any(d):
        return 0.0
    R, beta = lip_constraints_commutative(spec)
    # a = u - v with u, v >= 0
    A = np.hstack([R, -R])
    val, _ = simplex_max(np.concatenate([d, -d]), A, beta)
    return float(val)


def diameter_upper_bound(spec: LipSpec) -> Fraction:
    """2 beta(0): the m = 0 term bounds ||a - tau(a) 1|| by beta(0) on the Lip ball."""
    return 2 * spec.beta[0]


def _traceless_basis(shape) -> list[BlockElement]:
    basis = hermitian_basis(shape)
    D = len(basis)
    u = np.zeros(D)
    for k, b in enumerate(basis):
        u[k] = sum(np.trace(blk).real for blk in b.blocks)
    u /= np.linalg.norm(u)
    Q, _ = np.linalg.qr(np.column_stack([u, np.eye(D)]))
    Q = Q[:, 1:D]
    out = []
    for k in range(Q.shape[1]):
        blocks = [np.zeros((d, d), dtype=complex) for d in shape]
        for i, coef in enumerate(Q[:, k]):
            if coef != 0.0:
                for J in range(len(blocks)):
                    blocks[J] = blocks[J] + coef * basis[i].blocks[J]
        out.append(BlockElement(shape, tuple(blocks)))
    return out


def kantorovich_ascent(spec: LipSpec, phi: TraceWeights, psi: TraceWeights, gap_tol: float = 1e-9) -> BlockElement:
    """Interior-point maximizer of phi(a) - psi(a) over the Lip ball, rescaled so that L(a) <= 1."""
    top = spec.top
    G = _traceless_basis(top)
    d = np.array([(eval_trace(phi, g) - eval_trace(psi, g)).real for g in G])
    if not np.any(np.abs(d) > 0):
        return BlockElement.zeros(top)
    dn = np.linalg.norm(d)
    K = len(G)
    F0, Fk_rows = [], []           # Fk_rows: list of (K_total, n, n) arrays built below
    aux_sizes = []
    blocks_spec = []
    for m in range(spec.depth):
        beta = spec.beta_f(m)
        if spec.kind == "cond-exp":
            R = [g - spec.expectation(m, g) for g in G]
            for J, n in enumerate(top):
                A = np.stack([r.blocks[J] for r in R])
                blocks_spec.append((beta, n, A, None, m))
        else:
            if m == 0:
                aux = [BlockElement.identity(top)]
            else:
                lev = spec.level_data(m)
                aux = [apply_embedding(lev.alpha, b) for b in lev.basis]
            aux_sizes.append(len(aux))
            for J, n in enumerate(top):
                A = np.stack([g.blocks[J] for g in G])
                Baux = np.stack([x.blocks[J] for x in aux])
                blocks_spec.append((beta, n, A, Baux, m))
    n_aux = sum(aux_sizes)
    aux_offset = {}
    off = K
    for m, s in enumerate(aux_sizes):
        aux_offset[m] = off
        off += s
    Ktot = K + n_aux
    for beta, n, A, Baux, m in blocks_spec:
        stack = np.zeros((Ktot, n, n), dtype=complex)
        stack[:K] = A
        if Baux is not None:
            o = aux_offset[m]
            stack[o:o + Baux.shape[0]] = -Baux
        for sign in (1.0, -1.0):
            F0.append(beta * np.eye(n))
            Fk_rows.append(sign * stack)
    c = np.zeros(Ktot)
    c[:K] = -d / dn
    prob = lmi.LMIProblem(c, F0, Fk_rows)
    res = lmi.solve_lmi(prob, np.zeros(Ktot), gap_tol=gap_tol * spec.beta_f(0))
    z = res.z[:K]
    a = BlockElement(top, tuple(sum(zk * g.blocks[J] for zk, g in zip(z, G)) for J in range(top.n_blocks)))
    a = BlockElement(top, tuple((b + b.conj().T) / 2 for b in a.blocks))
    L = lip_upper(spec, a)
    return a / max(1.0, L)


def kantorovich_lower_bound(spec: LipSpec, phi: TraceWeights, psi: TraceWeights, n_samples: int = 64,
                            seed: int = 0, ascent: bool = True) -> float:
    """max |phi(a) - psi(a)| over Lip-ball samples and the interior-point maximizer.

    Every candidate satisfies L(a) <= 1 (upper bounds are used for the
    quotient kind), so the value is a valid lower bound.
    """
    if phi.shape != spec.top or psi.shape != spec.top:
        raise ShapeError("states must live on the top level")
    if weight_distance(phi, psi) == 0:
        return 0.0
    best = 0.0
    for a in sample_lip_ball(spec, n_samples, seed):
        best = max(best, abs((eval_trace(phi, a) - eval_trace(psi, a)).real))
    if ascent:
        a = kantorovich_ascent(spec, phi, psi)
        best = max(best, abs((eval_trace(phi, a) - eval_trace(psi, a)).real))
    return float(best)


# ---------------------------------------------------------------------------
# bridges

@dataclass(frozen=True)
class UnitPivotBridge:
    """Bridge (D, 1, pi_A, pi_B) with the unit as pivot; its height is 0."""

    ambient: AlgebraShape
    pi_a: MultiplicityEmbedding
    pi_b: MultiplicityEmbedding

    def __post_init__(self):
        if self.pi_a.out_shape != self.ambient or self.pi_b.out_shape != self.ambient:
            raise ShapeError("both embeddings must land in the ambient algebra")

    height: float = 0.0


def inclusion_bridge(t: Tower, m: int, n: int | None = None) -> UnitPivotBridge:
    """Level n (ambient, identity) against level m included by the tower maps."""
    n = t.depth if n is None else n
    return UnitPivotBridge(t.levels[n], identity_embedding(t.levels[n]), compose_steps(t, m, n))


def bridge_seminorm(b: UnitPivotBridge, a: BlockElement, c: BlockElement) -> float:
    """||pi_A(a) 1 - 1 pi_B(c)|| in the ambient algebra."""
    if a.shape != b.pi_a.in_shape or c.shape != b.pi_b.in_shape:
        raise ShapeError("elements do not match the bridge's domains")
    return op_norm(apply_embedding(b.pi_a, a) - apply_embedding(b.pi_b, c))


def _spec_digest(*objs) -> str:
    payload = []
    for o in objs:
        if isinstance(o, LipSpec):
            payload.append(io.spec_to_json(o))
        elif isinstance(o, Tower):
            payload.append(io.tower_to_json(o))
        elif isinstance(o, TraceWeights):
            payload.append(io.trace_to_json(o))
        else:
            payload.append(o)
    return io.digest(payload)


def beta_bound_certificate(spec: LipSpec, m: int, n_samples: int, seed: int,
                           tol: float = WITNESS_TOL) -> MetricCertificate:
    """Propinquity between the top level and level m is at most beta(m).

    For each sampled a with L(a) <= 1 this records L(E_m a) <= 1 and
    ||a - E_m a|| <= beta(m): the inclusion bridge with unit pivot then has
    height 0 and reach at most beta(m).
    """
    if spec.kind != "cond-exp":
        raise ConfigError("the beta(m) bound is stated for the cond-exp kind")
    if not 0 <= m < spec.depth:
        raise ValueError(f"m must be in [0, {spec.depth})")
    beta = spec.beta[m]
    bridge = inclusion_bridge(spec.tower, m)
    wits = []
    for a in sample_lip_ball(spec, n_samples, seed):
        Ea = spec.expectation(m, a)
        wits.append(Witness("L(E_m a) <= 1", lip_cond_exp(spec, Ea), 1.0, tol))
        # E_m a = alpha(c): the bridge seminorm of (a, c) is the distance to the level-m image
        c = expectation_coefficients(bridge.pi_b, spec.trace, a)
        wits.append(Witness("||a - E_m a|| <= beta(m)", bridge_seminorm(bridge, a, c), float(beta), tol))
    return MetricCertificate(
        "beta-bound", _spec_digest(spec, {"m": m, "n_samples": n_samples}), beta, wits, seed, CERTIFIED,
        {"m": m, "beta_m": beta, "height": 0.0},
    )


def truncated_spec(spec: LipSpec, n: int) -> LipSpec:
    """The same Lip-norm restricted to level n: tower cut at n, trace pulled back, beta(0..n-1)."""
    if n == spec.depth:
        return spec
    trace = None
    if spec.trace is not None:
        trace = pullback_trace(compose_steps(spec.tower, n, spec.depth), spec.trace)
    dom = spec.beta.dominator[:n] if spec.beta.dominator is not None else None
    return LipSpec(spec.tower.truncate(n), spec.kind, WeightSequence(spec.beta.beta[:n], dom), trace)


def _sphere_sample(shape, rng) -> BlockElement:
    """Random element of the unit sphere of the traceless self-adjoint part."""
    while True:
        x = random_element(shape, rng)
        t = sum(np.trace(b).real for b in x.blocks) / shape.total_size
        x = x - BlockElement.scalar(shape, t)
        nrm = sa_norm(x)
        if nrm > 1e-12:
            return x / nrm


def rescaling_bridge_bound(spec_k: LipSpec, spec_inf: LipSpec, n: int, sphere_samples: int, seed: int,
                           general_samples: int | None = None, tol: float = WITNESS_TOL) -> MetricCertificate:
    """Identity bridge with unit pivot between two Lip-norms on a shared level n.

    With l_k, l_inf the two Lip-norms on level n, the partner of a unit
    traceless a is a' = (l_inf(a)/l_k(a)) a.  The claimed epsilon is
    max |l_k - l_inf| / m_S^2 over the samples, m_S the smallest sampled
    value of either seminorm on the sphere; it dominates the tightest
    per-sample value |l_k - l_inf| / (l_k l_inf), so both partner
    inequalities hold on every sample.  General elements rb + t1 are
    checked through their sphere part.
    """
    if spec_k.kind != "cond-exp" or spec_inf.kind != "cond-exp":
        raise ConfigError("the rescaling bridge is stated for the cond-exp kind")
    if not spec_k.tower.agrees_with(spec_inf.tower, n):
        raise HypothesisError(f"towers differ below level {n}")
    if n == 0:
        return MetricCertificate("rescale", _spec_digest(spec_k, spec_inf, {"n": 0}), Fraction(0), [], seed,
                                 EMPIRICAL, {"n": 0, "m_S": None, "note": "level 0 is the scalars"})
    sk, si = truncated_spec(spec_k, n), truncated_spec(spec_inf, n)
    if sk.beta.beta != si.beta.beta:
        raise HypothesisError("beta sequences differ on the shared levels")
    rng = make_rng(seed)
    shape = sk.top
    # (r, t, b): sampled a = r b + t 1 with b on the traceless unit sphere
    draws = [(1.0, 0.0, _sphere_sample(shape, rng)) for _ in range(sphere_samples)]
    for _ in range(sphere_samples if general_samples is None else general_samples):
        a = random_element(shape, rng, scale=float(10 ** rng.uniform(-1, 1)))
        t = sum(np.trace(blk).real for blk in a.blocks) / shape.total_size
        rest = a - BlockElement.scalar(shape, t)
        r = sa_norm(rest)
        if r > 1e-12:
            draws.append((r, t, rest / r))
    vals = [(lip_cond_exp(sk, b), lip_cond_exp(si, b)) for _, _, b in draws]
    m_S = min(min(v) for v in vals)
    if m_S < 1e-8:
        raise ConditioningError(f"sampled minimum of the Lip-norms on the sphere is {m_S:.3e} < 1e-8")
    delta = max(abs(lk - li) for lk, li in vals)
    eps = delta / m_S**2
    eps_tight = max(abs(lk - li) / (lk * li) for lk, li in vals)

    wits = []
    for (r, t, b), (lk, li) in zip(draws, vals):
        a = r * b + BlockElement.scalar(shape, t)
        a3 = r * (li / lk) * b + BlockElement.scalar(shape, t)     # eq3 partner: l_k(a3) = l_inf(a)
        a4 = r * (lk / li) * b + BlockElement.scalar(shape, t)     # eq4 partner
        la_i, la_k = r * li, r * lk
        wits.append(Witness("eq3 ||a - a'|| <= eps l_inf(a)", sa_norm(a - a3), eps * la_i, tol * max(1.0, la_i)))
        wits.append(Witness("eq3 l_k(a') <= l_inf(a)", lip_cond_exp(sk, a3), la_i, tol * max(1.0, la_i)))
        wits.append(Witness("eq4 ||a - a'|| <= eps l_k(a)", sa_norm(a - a4), eps * la_k, tol * max(1.0, la_k)))
        wits.append(Witness("eq4 l_inf(a') <= l_k(a)", lip_cond_exp(si, a4), la_k, tol * max(1.0, la_k)))
    return MetricCertificate(
        "rescale", _spec_digest(spec_k, spec_inf, {"n": n, "samples": sphere_samples}), float(eps), wits, seed,
        EMPIRICAL, {"n": n, "m_S": float(m_S), "max_delta": float(delta), "eps_tight": float(eps_tight)},
    )


# ---------------------------------------------------------------------------
# fusing chain

def family_spec(family: TowerFamily, k: int | None, N: int) -> LipSpec:
    """Lip-norm data of member k (or the limit when k is None) truncated to level N."""
    if family.cfs is None:
        raise ConfigError("family carries no continued fractions; pass LipSpecs with a dominator instead")
    cf = family.limit_cf if k is None else family.cfs[k]
    tower = (family.limit if k is None else family.members[k]).truncate(N)
    beta = WeightSequence(tuple(effros_shen_beta(cf, n) for n in range(N)),
                          tuple(golden_beta(n) for n in range(N)))
    return LipSpec(tower, "cond-exp", beta, effros_shen_trace(cf, N))


@dataclass
class ChainBound:
    bound: float
    two_B_N: Fraction
    bridge: float
    N: int
    k: int
    c_N: int
    weight_distance: Fraction | float
    certificate: MetricCertificate

    @property
    def parts(self) -> dict:
        return {"2B(N)": self.two_B_N, "bridge": self.bridge, "N": self.N, "k": self.k, "c_N": self.c_N,
                "weight_distance": self.weight_distance}


def chain_bound_from_specs(spec_k: LipSpec, spec_inf: LipSpec, N: int, sphere_samples: int, seed: int,
                           k: int = 0, c_N: int = 0, tol: float = WITNESS_TOL) -> ChainBound:
    """2 B(N) + (rescaling bridge at level N) for two specs truncated at level N."""
    dom = spec_inf.beta.dominator
    if dom is None or spec_k.beta.dominator is None:
        raise ConfigError("the chain bound needs a dominating sequence B")
    if len(dom) <= N:
        raise ConfigError(f"dominator must cover index N={N}")
    twoB = 2 * dom[N]
    cert = rescaling_bridge_bound(spec_k, spec_inf, N, sphere_samples, seed, tol=tol)
    wd = weight_distance(truncated_spec(spec_k, N).trace, truncated_spec(spec_inf, N).trace)
    eps = float(cert.bound)
    return ChainBound(float(twoB) + eps, twoB, eps, N, k, c_N, wd, cert)


def propinquity_chain_bound(family: TowerFamily, N: int, k: int, sphere_samples: int = 64, seed: int = 0,
                            tol: float = WITNESS_TOL) -> ChainBound:
    """Upper bound 2 B(N) + Lambda(F_N(k), F_N(inf)) for a member of a fusing family with k >= c_N.

    The second term is the empirical rescaling-bridge epsilon at level N.
    """
    c = fusing_sequence(family, N)
    if k < c[N]:
        raise HypothesisError(f"k = {k} is below the fusing index c_N = {c[N]}")
    sk = family_spec(family, k, N + 1)
    si = family_spec(family, None, N + 1)
    # both specs carry beta and B up to index N; truncate the Lip-norms to level N
    spec_k, spec_inf = truncated_spec(sk, N), truncated_spec(si, N)
    spec_k = LipSpec(spec_k.tower, "cond-exp", WeightSequence(spec_k.beta.beta, sk.beta.dominator), spec_k.trace)
    spec_inf = LipSpec(spec_inf.tower, "cond-exp", WeightSequence(spec_inf.beta.beta, si.beta.dominator),
                       spec_inf.trace)
    if sk.beta.beta[: N + 1] != si.beta.beta[: N + 1]:
        raise HypothesisError("beta sequences of member and limit differ up to N")
    return chain_bound_from_specs(spec_k, spec_inf, N, sphere_samples, seed, k, c[N], tol)


def chain_report(family: TowerFamily, k: int, Ns: Sequence[int], sphere_samples: int = 64,
                 seed: int = 0, tol: float = WITNESS_TOL) -> list[ChainBound]:
    """Chain bounds for member k at each N in Ns (skipping N with k < c_N)."""
    Ns = list(Ns)
    c = fusing_sequence(family, max(Ns))
    return [propinquity_chain_bound(family, N, k, sphere_samples, seed, tol) for N in Ns if k >= c[N]]


# ---------------------------------------------------------------------------
# quantum isometries

@dataclass(frozen=True)
class IsometryMap:
    """Block permutations per level (U level-n block j goes to V block perms[n][j]),
    plus optional extra unitaries applied on V's top blocks."""

    perms: tuple[tuple[int, ...], ...]
    unitaries: tuple | None = None


def identity_map(t: Tower) -> IsometryMap:
    return IsometryMap(tuple(tuple(range(s.n_blocks)) for s in t.levels))


def _slot_permutations(U: Tower, V: Tower, perms) -> list[list[np.ndarray]]:
    """Per level and U block, the permutation matrix P with phi_n(x)_{perm(j)} = P x_j P^T."""
    P = [[np.eye(d) for d in U.levels[0]]]
    for n, (eu, ev) in enumerate(zip(U.steps, V.steps)):
        pin, pout = perms[n], perms[n + 1]
        level = []
        for J, d in enumerate(U.levels[n + 1]):
            lay_u = eu.layout[J]
            lay_v = ev.layout[pout[J]]
            # k-th copy of input i in U goes to the k-th copy of perm(i) in V
            offs_v: dict[int, list[int]] = {}
            for i, off in ev.placements[pout[J]]:
                offs_v.setdefault(i, []).append(off)
            seen: dict[int, int] = {}
            M = np.zeros((d, d))
            off_u = 0
            for i in lay_u:
                k = seen.get(i, 0)
                seen[i] = k + 1
                ov = offs_v[pin[i]][k]
                size = U.levels[n][i]
                M[ov:ov + size, off_u:off_u + size] = P[n][i]
                off_u += size
            if len(lay_v) != len(lay_u):
                raise StructureError(f"level {n + 1} block {J}: layouts differ in length")
            level.append(M)
        P.append(level)
    return P


def apply_isometry(phi: IsometryMap, U: Tower, V: Tower, x: BlockElement, P=None) -> BlockElement:
    P = _slot_permutations(U, V, phi.perms) if P is None else P
    N = U.depth
    perm = phi.perms[N]
    blocks: list = [None] * len(perm)
    for j, pj in enumerate(perm):
        M = P[N][j]
        y = M @ x.blocks[j] @ M.T
        if phi.unitaries is not None and phi.unitaries[pj] is not None:
            u = np.asarray(phi.unitaries[pj])
            y = u @ y @ u.conj().T
        blocks[pj] = y
    return BlockElement(V.top, tuple(blocks))


def check_structure(phi: IsometryMap, U: Tower, V: Tower) -> list[str]:
    """Problems with the permuted shapes and step matrices; empty when compatible."""
    errs = []
    if U.depth != V.depth:
        return [f"depths differ: {U.depth} vs {V.depth}"]
    if len(phi.perms) != U.depth + 1:
        return [f"need {U.depth + 1} level permutations, got {len(phi.perms)}"]
    for n, p in enumerate(phi.perms):
        nb = U.levels[n].n_blocks
        if sorted(p) != list(range(nb)) or V.levels[n].n_blocks != nb:
            errs.append(f"level {n}: {p} is not a permutation of {nb} blocks")
            continue
        for j in range(nb):
            if V.levels[n][p[j]] != U.levels[n][j]:
                errs.append(f"level {n}: U block {j} has size {U.levels[n][j]}, V block {p[j]} has {V.levels[n][p[j]]}")
    if errs:
        return errs
    for n, (eu, ev) in enumerate(zip(U.steps, V.steps)):
        pin, pout = phi.perms[n], phi.perms[n + 1]
        for J in range(U.levels[n + 1].n_blocks):
            for i in range(U.levels[n].n_blocks):
                if eu.mult[J][i] != ev.mult[pout[J]][pin[i]]:
                    errs.append(f"step {n}: multiplicity ({J},{i}) = {eu.mult[J][i]} but V has "
                                f"({pout[J]},{pin[i]}) = {ev.mult[pout[J]][pin[i]]}")
    return errs


def verify_quantum_isometry(phi: IsometryMap, spec_u: LipSpec, spec_v: LipSpec, n_samples: int, seed: int,
                            tol: float = ISOMETRY_TOL) -> MetricCertificate:
    """Check that phi is a quantum isometry between the two truncations.

    (1) phi maps the level-n image of U onto that of V for every n,
    (2) for the cond-exp kind the traces satisfy mu = nu o phi exactly,
    (3) |L_V(phi a) - L_U(a)| <= tol on sampled self-adjoint a.
    A structural mismatch raises StructureError with a per-level report.
    """
    U, V = spec_u.tower, spec_v.tower
    errs = check_structure(phi, U, V)
    if errs:
        raise StructureError("; ".join(errs))
    if spec_u.kind != spec_v.kind:
        raise StructureError("the two specs have different kinds")
    notes = []
    P = _slot_permutations(U, V, phi.perms)

    # (1) image membership of every level-n matrix unit
    worst_img = 0.0
    for n in range(U.depth + 1):
        au, av = compose_steps(U, n, U.depth), compose_steps(V, n, V.depth)
        for e in matrix_units(U.levels[n]):
            y = apply_isometry(phi, U, V, apply_embedding(au, e.element(U.levels[n])), P)
            worst_img = max(worst_img, image_residual(av, y))
    notes.append({"check": "intertwining", "worst_image_residual": worst_img, "fail": worst_img > 1e-12})

    # beta must agree exactly for L_V o phi = L_U
    beta_ok = spec_u.beta.beta[: U.depth] == spec_v.beta.beta[: V.depth]
    notes.append({"check": "beta", "equal": beta_ok, "fail": not beta_ok})

    # (2) mu = nu o phi
    if spec_u.kind == "cond-exp":
        perm = phi.perms[U.depth]
        pulled = tuple(spec_v.trace.lam[perm[j]] for j in range(U.top.n_blocks))
        same = pulled == spec_u.trace.lam
        notes.append({"check": "mu = nu o phi", "equal": same, "fail": not same,
                      "max_weight_gap": float(max(abs(float(a) - float(b)) for a, b in zip(pulled, spec_u.trace.lam)))})
        if not same:
            return MetricCertificate("isometry", _spec_digest(spec_u, spec_v, {"perms": [list(p) for p in phi.perms]}),
                                     0.0, [], seed, CERTIFIED, {"rejected_at": "trace"}, notes)

    # (3) sampled Lip-norm deviations
    rng = make_rng(seed)
    wits = []
    worst = 0.0
    for _ in range(n_samples):
        a = random_element(U.top, rng, scale=float(10 ** rng.uniform(-1, 1)))
        b = apply_isometry(phi, U, V, a, P)
        lu, lv = lip_interval(spec_u, a), lip_interval(spec_v, b)
        dev = max(lv.lower - lu.upper, lu.lower - lv.upper, 0.0)
        if spec_u.kind == "cond-exp":
            dev = abs(lv.upper - lu.upper)
        worst = max(worst, dev)
        wits.append(Witness("|L_V(phi a) - L_U(a)|", dev, 0.0, tol))
    return MetricCertificate(
        "isometry", _spec_digest(spec_u, spec_v, {"perms": [list(p) for p in phi.perms], "n": n_samples}),
        0.0, wits, seed, CERTIFIED, {"max_deviation": worst}, notes,
    )


def relabel_tower(t: Tower, perms: Sequence[Sequence[int]]) -> Tower:
    """The tower with level-n block j moved to position perms[n][j]; step matrices conjugated accordingly."""
    levels, steps = [], []
    for n, s in enumerate(t.levels):
        dims = [0] * s.n_blocks
        for j, pj in enumerate(perms[n]):
            dims[pj] = s[j]
        levels.append(AlgebraShape(tuple(dims)))
    for n, e in enumerate(t.steps):
        pin, pout = perms[n], perms[n + 1]
        mult = [[0] * e.in_shape.n_blocks for _ in range(e.out_shape.n_blocks)]
        for J in range(e.out_shape.n_blocks):
            for i in range(e.in_shape.n_blocks):
                mult[pout[J]][pin[i]] = e.mult[J][i]
        steps.append(MultiplicityEmbedding(levels[n], levels[n + 1], tuple(tuple(r) for r in mult)))
    return Tower(tuple(levels), tuple(steps), t.label + " (relabelled)")
