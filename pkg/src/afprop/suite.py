"""Small deterministic invariant suites behind ``afprop verify-suite``.

Each check returns a flat dict: name, passed, worst (the largest observed
violation or residual), tol and provenance.  No timings are recorded so
that reports are byte-identical for a fixed seed.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .algebra import BlockElement, op_norm, random_element, sa_norm
from .metrics import (
    IsometryMap,
    beta_bound_certificate,
    kantorovich_commutative_exact,
    kantorovich_lower_bound,
    propinquity_chain_bound,
    relabel_tower,
    verify_quantum_isometry,
)
from .seminorms import (
    LipSpec,
    WeightSequence,
    effros_shen_spec,
    lip_cond_exp,
    make_rng,
    quasi_leibniz_check,
    quotient_seminorm,
)
from .states import (
    TraceWeights,
    canonical_weights,
    conditional_expectation,
    effros_shen_trace,
    eval_trace,
    point_mass,
    pullback_trace,
)
from .towers import (
    ContinuedFraction,
    Tower,
    effros_shen_tower,
    fusing_sequence,
    golden_beta,
    golden_family,
)


def _result(name, worst, tol, provenance, passed=None, **extra):
    worst = float(worst)
    out = {"name": name, "passed": bool(worst <= tol) if passed is None else bool(passed),
           "worst": worst, "tol": tol, "provenance": provenance}
    out.update(extra)
    return out


def random_cf(rng, n_terms: int) -> ContinuedFraction:
    return ContinuedFraction((0,) + tuple(int(v) for v in rng.integers(1, 6, n_terms)))


def random_tower(rng, depth: int, max_block: int = 4) -> Tower:
    """Random unital tower from C1 with block sizes <= max_block (built top-down from multiplicities)."""
    levels = [(1,)]
    mults = []
    for _ in range(depth):
        prev = levels[-1]
        n_out = int(rng.integers(1, 4))
        rows = []
        for _ in range(n_out):
            for _ in range(50):
                row = [int(v) for v in rng.integers(0, 3, len(prev))]
                size = sum(c * d for c, d in zip(row, prev))
                if 0 < size <= max_block:
                    break
            else:
                row = [0] * len(prev)
                row[int(np.argmin(prev))] = 1
            rows.append(row)
        # injectivity: every input block must land somewhere
        for i in range(len(prev)):
            if all(r[i] == 0 for r in rows):
                rows.append([int(j == i) for j in range(len(prev))])
        levels.append(tuple(sum(c * d for c, d in zip(r, prev)) for r in rows))
        mults.append(rows)
    return Tower.from_multiplicities(levels, mults, "random")


def random_faithful(rng, shape) -> TraceWeights:
    w = rng.dirichlet(np.ones(shape.n_blocks)) + 1e-3
    return TraceWeights(shape, tuple(w / w.sum()))


# ---------------------------------------------------------------------------

def check_cf(seed: int, n_random: int = 20):
    rng = make_rng(seed)
    cf = ContinuedFraction.golden(8)
    q = [cf.q(n) for n in range(9)]
    fib_ok = q == [1, 1, 2, 3, 5, 8, 13, 21, 34]
    worst = 0
    for _ in range(n_random):
        c = random_cf(rng, 12)
        for n in range(c.K):
            det = c.p(n + 1) * c.q(n) - c.p(n) * c.q(n + 1)
            worst = max(worst, abs(abs(det) - 1))
    return _result("cf.determinant+fibonacci", worst, 0, "convergent recursion",
                   passed=fib_ok and worst == 0 and golden_beta(3) == Fraction(1, 13))


def check_effros_shen(seed: int, n_random: int = 10):
    rng = make_rng(seed)
    bad = 0
    for _ in range(n_random):
        cf = random_cf(rng, 10)
        t = effros_shen_tower(cf, 8)
        for n in range(1, 9):
            bad += t.levels[n].block_dims != (cf.q(n), cf.q(n - 1))
        for n in range(1, 8):
            bad += t.steps[n].mult != ((cf[n + 1], 1), (1, 0))
    return _result("effros-shen.structure", bad, 0, "tower builder vs (q_n, q_{n-1})")


def check_expectation(seed: int, n_towers: int = 4, per_tower: int = 5):
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_towers):
        t = random_tower(rng, int(rng.integers(2, 5)))
        w = random_faithful(rng, t.top)
        N = t.depth
        for _ in range(per_tower):
            x = random_element(t.top, rng, self_adjoint=False)
            for m in range(N):
                E = conditional_expectation(t, N, m, w, x)
                worst = max(worst, op_norm(conditional_expectation(t, N, m, w, E) - E))
                worst = max(worst, abs(eval_trace(w, E) - eval_trace(w, x)))
                worst = max(worst, op_norm(E) - op_norm(x))
                for k in range(m):
                    worst = max(worst, op_norm(conditional_expectation(t, N, k, w, E)
                                               - conditional_expectation(t, N, k, w, x)))
    return _result("cond-exp.idempotent+trace+contractive+nesting", worst, 1e-9, "states.conditional_expectation")


def check_trace_consistency(seed: int):
    worst = Fraction(0)
    for cf in (ContinuedFraction.golden(30), ContinuedFraction((0, 2, 1, 3, 1, 4) + (1,) * 30)):
        t = effros_shen_tower(cf, 6)
        for n in range(1, 6):
            up = pullback_trace(t.steps[n], effros_shen_trace(cf, n + 1))
            lo = effros_shen_trace(cf, n)
            worst = max(worst, max(abs(a - b) for a, b in zip(up.lam, lo.lam)))
    return _result("effros-shen.trace-pullback", worst, 1e-9, "exact Fraction weights")


def _c2_spec(kind="cond-exp"):
    t = Tower.from_multiplicities([[1], [1, 1]], [[[1], [1]]])
    return LipSpec(t, kind, WeightSequence((Fraction(1),)), canonical_weights(t.top))


def check_commutative_oracle(seed: int, n: int = 20):
    rng = make_rng(seed)
    spec = _c2_spec()
    worst = 0.0
    for _ in range(n):
        x1, x2 = rng.standard_normal(2)
        x = BlockElement.diagonal(spec.top, [x1], [x2])
        worst = max(worst, abs(lip_cond_exp(spec, x) - abs(x1 - x2) / 2))
    mk = kantorovich_commutative_exact(spec, point_mass(spec.top, 0), point_mass(spec.top, 1))
    worst = max(worst, abs(mk - 2.0))
    return _result("commutative-oracle", worst, 1e-9, "|x1-x2|/2 and hand LP value 2")


def check_quasi_leibniz(seed: int, n: int = 40):
    spec = effros_shen_spec(ContinuedFraction.golden(30), 3)
    a = quasi_leibniz_check(spec, 2, 0, n, seed)
    b = quasi_leibniz_check(spec.with_kind("quotient"), 1, 0, n, seed)
    return _result("quasi-leibniz", -min(a.worst_margin, b.worst_margin), 1e-7, "cond-exp (2,0), quotient (1,0)",
                   passed=a.passed and b.passed, unconverged=a.unconverged + b.unconverged)


def check_sandwich(seed: int, n: int = 20):
    rng = make_rng(seed)
    spec = effros_shen_spec(ContinuedFraction.golden(30), 3, kind="quotient")
    worst, unconverged = 0.0, 0
    for _ in range(n):
        x = random_element(spec.top, rng)
        for m in range(spec.depth):
            e = sa_norm(x - spec.expectation(m, x))
            r = quotient_seminorm(spec, m, x)
            unconverged += not r.converged
            worst = max(worst, e / 2 - 1e-6 - r.lower, r.value - e - 1e-8)
    return _result("quotient-sandwich", worst, 0.0, "barrier solver intervals", unconverged=unconverged)


def check_beta_bound(seed: int, n: int = 20):
    spec = effros_shen_spec(ContinuedFraction.golden(30), 4)
    certs = [beta_bound_certificate(spec, m, n, seed) for m in (1, 2, 3)]
    return _result("beta-bound", max(c.worst_residual for c in certs), 1e-9, "inclusion bridge, unit pivot",
                   passed=all(c.verified for c in certs), claimed=[str(c.bound) for c in certs])


def check_chain(seed: int):
    fam = golden_family(8, 4)
    c = fusing_sequence(fam, 3)
    cb = propinquity_chain_bound(fam, 3, 6, sphere_samples=12, seed=seed)
    ok = all(cN <= N + 1 for N, cN in enumerate(c)) and cb.two_B_N == Fraction(2, 13) and cb.certificate.verified
    return _result("fusing-chain", cb.certificate.worst_residual, 1e-9, "2B(N) + rescaling bridge", passed=ok,
                   c_N=c, two_B_N=str(cb.two_B_N), bound=cb.bound)


def check_isometry(seed: int, n: int = 10):
    cf = ContinuedFraction.golden(30)
    su = effros_shen_spec(cf, 3)
    U = su.tower
    perms = tuple(tuple(range(s.n_blocks))[::-1] for s in U.levels)
    V = relabel_tower(U, perms)
    sv = LipSpec(V, "cond-exp", su.beta, su.trace.permuted(perms[-1]))
    good = verify_quantum_isometry(IsometryMap(perms), su, sv, n, seed)
    lam = [float(v) for v in sv.trace.lam]
    lam[0] += 1e-3
    lam[1] -= 1e-3
    bad = verify_quantum_isometry(IsometryMap(perms), su, LipSpec(V, "cond-exp", su.beta, TraceWeights(V.top, lam)),
                                  n, seed)
    return _result("isometry", good.parts.get("max_deviation", 0.0), 1e-8, "relabelled Effros-Shen tower",
                   passed=good.verified and not bad.verified)


def check_kantorovich(seed: int, n: int = 5):
    rng = make_rng(seed)
    t = Tower.from_multiplicities([[1], [1, 1], [1, 1, 1, 1]], [[[1], [1]], [[1, 0], [1, 0], [0, 1], [0, 1]]])
    worst = 0.0
    for k in range(n):
        kind = ("cond-exp", "quotient")[k % 2]
        spec = LipSpec(t, kind, WeightSequence((Fraction(1), Fraction(1, 2))), random_faithful(rng, t.top))
        phi, psi = random_faithful(rng, t.top), random_faithful(rng, t.top)
        exact = kantorovich_commutative_exact(spec, phi, psi)
        lower = kantorovich_lower_bound(spec, phi, psi, n_samples=8, seed=seed + k)
        worst = max(worst, abs(exact - lower))
    return _result("kantorovich", worst, 1e-4, "ascent lower bound vs simplex")


SUITE = (
    check_cf,
    check_effros_shen,
    check_expectation,
    check_trace_consistency,
    check_commutative_oracle,
    check_quasi_leibniz,
    check_sandwich,
    check_beta_bound,
    check_chain,
    check_isometry,
    check_kantorovich,
)


def run_suite(seed: int) -> list[dict]:
    return [check(seed) for check in SUITE]
