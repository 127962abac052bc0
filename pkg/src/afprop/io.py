"""JSON persistence with schema tags.

Rationals are written as "p/q" strings, floats with Python's shortest
round-trip repr, complex matrix entries as [re, im] pairs.
"""
from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from typing import Any

import numpy as np

from .algebra import AlgebraShape, BlockElement
from .seminorms import LipSpec, WeightSequence
from .states import TraceWeights
from .towers import ContinuedFraction, MultiplicityEmbedding, Tower

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def tag(kind: str) -> str:
    return f"afprop/{kind}@{SCHEMA_VERSION}"


def _check(obj: dict, kind: str):
    got = obj.get("schema")
    if got is None:
        raise SchemaError(f"missing schema tag, expected {tag(kind)}")
    if got != tag(kind):
        raise SchemaError(f"schema mismatch: expected {tag(kind)}, got {got}")


def rat(x: Fraction) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def parse_rat(s) -> Fraction:
    if isinstance(s, bool):
        raise SchemaError("boolean is not a rational")
    if isinstance(s, (int, str)):
        return Fraction(s)
    raise SchemaError(f"rationals must be 'p/q' strings, got {s!r}")


def num(v):
    """Exact values as rational strings, floats as floats."""
    if isinstance(v, Fraction):
        return rat(v)
    if isinstance(v, (int, np.integer)):
        return rat(Fraction(int(v)))
    return float(v)


def parse_num(v):
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, int) and not isinstance(v, bool):
        return Fraction(v)
    return float(v)


# ---------------------------------------------------------------------------

def cf_to_json(cf: ContinuedFraction) -> dict:
    return {"schema": tag("cf"), "quotients": list(cf.partial_quotients)}


def cf_from_json(obj: dict) -> ContinuedFraction:
    _check(obj, "cf")
    return ContinuedFraction(tuple(obj["quotients"]))


def tower_to_json(t: Tower) -> dict:
    for n, e in enumerate(t.steps):
        if not e.is_canonical():
            raise SchemaError(f"step {n} has a non-canonical layout and cannot be written")
    return {
        "schema": tag("tower"),
        "levels": [list(s.block_dims) for s in t.levels],
        "steps": [[list(r) for r in e.mult] for e in t.steps],
        "label": t.label,
    }


def tower_from_json(obj: dict) -> Tower:
    _check(obj, "tower")
    return Tower.from_multiplicities(obj["levels"], obj["steps"], obj.get("label", ""))


def trace_to_json(w: TraceWeights) -> dict:
    out = {"schema": tag("trace"), "shape": list(w.shape.block_dims), "lambda": [num(v) for v in w.lam]}
    if w.radius:
        out["radius"] = num(w.radius)
    return out


def trace_from_json(obj: dict) -> TraceWeights:
    _check(obj, "trace")
    return TraceWeights(AlgebraShape(tuple(obj["shape"])), tuple(parse_num(v) for v in obj["lambda"]),
                        parse_num(obj.get("radius", "0/1")))


def beta_to_json(b: WeightSequence) -> dict:
    out = {"schema": tag("beta"), "beta": [rat(v) for v in b.beta]}
    if b.dominator is not None:
        out["dominator"] = [rat(v) for v in b.dominator]
    return out


def beta_from_json(obj) -> WeightSequence:
    if isinstance(obj, list):
        return WeightSequence(tuple(parse_rat(v) for v in obj))
    _check(obj, "beta")
    dom = obj.get("dominator")
    return WeightSequence(tuple(parse_rat(v) for v in obj["beta"]),
                          None if dom is None else tuple(parse_rat(v) for v in dom))


def spec_to_json(spec: LipSpec) -> dict:
    out = {
        "schema": tag("lipspec"),
        "tower": tower_to_json(spec.tower),
        "kind": spec.kind,
        "trace": None if spec.trace is None else trace_to_json(spec.trace),
        "beta": [rat(v) for v in spec.beta.beta],
    }
    if spec.beta.dominator is not None:
        out["dominator"] = [rat(v) for v in spec.beta.dominator]
    return out


def spec_from_json(obj: dict) -> LipSpec:
    _check(obj, "lipspec")
    dom = obj.get("dominator")
    beta = WeightSequence(tuple(parse_rat(v) for v in obj["beta"]),
                          None if dom is None else tuple(parse_rat(v) for v in dom))
    trace = None if obj.get("trace") is None else trace_from_json(obj["trace"])
    return LipSpec(tower_from_json(obj["tower"]), obj["kind"], beta, trace)


def element_to_json(x: BlockElement) -> dict:
    return {
        "schema": tag("element"),
        "shape": list(x.shape.block_dims),
        "blocks": [[[[float(z.real), float(z.imag)] for z in row] for row in b] for b in x.blocks],
    }


def element_from_json(obj: dict) -> BlockElement:
    _check(obj, "element")
    blocks = []
    for b in obj["blocks"]:
        arr = np.array([[complex(re, im) for re, im in row] for row in b], dtype=np.complex128)
        blocks.append(arr.reshape(len(b), len(b)))
    return BlockElement(AlgebraShape(tuple(obj["shape"])), tuple(blocks))


def embedding_to_json(e: MultiplicityEmbedding) -> dict:
    return {"schema": tag("embedding"), "in_shape": list(e.in_shape.block_dims),
            "out_shape": list(e.out_shape.block_dims), "mult": [list(r) for r in e.mult],
            "layout": [list(r) for r in e.layout]}


def embedding_from_json(obj: dict) -> MultiplicityEmbedding:
    _check(obj, "embedding")
    return MultiplicityEmbedding(AlgebraShape(tuple(obj["in_shape"])), AlgebraShape(tuple(obj["out_shape"])),
                                 tuple(tuple(r) for r in obj["mult"]), tuple(tuple(r) for r in obj["layout"]))


# ---------------------------------------------------------------------------

def canonical_dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest(obj: Any) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode()).hexdigest()


def dumps(obj: Any) -> str:
    """Stable pretty output (sorted keys) used for reports and files."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def load(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save(obj: Any, path):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
