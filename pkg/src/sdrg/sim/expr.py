"""Small expression trees for structural equations.

The vocabulary is deliberately narrow: constants, node references, ``+``,
``-``, ``*``, the expit function, absolute value and the indicator
``1{x > c}``.  Expressions evaluate vectorised over a mapping of node arrays
and round-trip through plain JSON-compatible dictionaries.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import expit as _expit


class Expr:
    def __add__(self, other):
        return Op("add", (self, lift(other)))

    def __radd__(self, other):
        return Op("add", (lift(other), self))

    def __sub__(self, other):
        return Op("sub", (self, lift(other)))

    def __rsub__(self, other):
        return Op("sub", (lift(other), self))

    def __mul__(self, other):
        return Op("mul", (self, lift(other)))

    def __rmul__(self, other):
        return Op("mul", (lift(other), self))

    def __neg__(self):
        return Op("mul", (Const(-1.0), self))

    def refs(self) -> set:
        raise NotImplementedError

    def evaluate(self, env: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def refs(self):
        return set()

    def evaluate(self, env, n):
        return np.full(n, float(self.value))

    def to_dict(self):
        return {"const": self.value}

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Ref(Expr):
    name: str

    def refs(self):
        return {self.name}

    def evaluate(self, env, n):
        try:
            return np.asarray(env[self.name], dtype=float)
        except KeyError:
            raise KeyError(f"formula references undefined node {self.name!r}") from None

    def to_dict(self):
        return {"ref": self.name}

    def __str__(self):
        return self.name


_SYMBOL = {"add": "+", "sub": "-", "mul": "*"}


@dataclass(frozen=True)
class Op(Expr):
    op: str
    args: tuple
    threshold: float = 0.0

    def __post_init__(self):
        if self.op not in ("add", "sub", "mul", "expit", "abs", "gt"):
            raise ValueError(f"unknown operator {self.op!r}")

    def refs(self):
        out = set()
        for a in self.args:
            out |= a.refs()
        return out

    def evaluate(self, env, n):
        vals = [a.evaluate(env, n) for a in self.args]
        if self.op == "add":
            return vals[0] + vals[1]
        if self.op == "sub":
            return vals[0] - vals[1]
        if self.op == "mul":
            return vals[0] * vals[1]
        if self.op == "expit":
            return _expit(vals[0])
        if self.op == "abs":
            return np.abs(vals[0])
        return (vals[0] > self.threshold).astype(float)

    def to_dict(self):
        d = {"op": self.op, "args": [a.to_dict() for a in self.args]}
        if self.op == "gt":
            d["threshold"] = self.threshold
        return d

    def __str__(self):
        if self.op in _SYMBOL:
            return f"({self.args[0]} {_SYMBOL[self.op]} {self.args[1]})"
        if self.op == "gt":
            return f"1{{{self.args[0]} > {self.threshold!r}}}"
        return f"{self.op}({self.args[0]})"


def lift(x) -> Expr:
    return x if isinstance(x, Expr) else Const(float(x))


def ref(name: str) -> Ref:
    return Ref(name)


def expit(x) -> Op:
    return Op("expit", (lift(x),))


def absolute(x) -> Op:
    return Op("abs", (lift(x),))


def indicator(x, threshold: float) -> Op:
    """``1{x > threshold}``."""
    return Op("gt", (lift(x),), float(threshold))


def from_dict(d) -> Expr:
    if "const" in d:
        return Const(float(d["const"]))
    if "ref" in d:
        return Ref(d["ref"])
    args = tuple(from_dict(a) for a in d["args"])
    return Op(d["op"], args, float(d.get("threshold", 0.0)))
