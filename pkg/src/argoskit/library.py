"""Candidate-function libraries: monomial/trigonometric design matrices.

A library maps an n-by-m state matrix to an n-by-p design matrix whose
columns evaluate candidate basis functions (an intercept, monomials up to a
total degree, and optionally sin/cos of each variable).  Columns follow a
fixed canonical order so model reports and golden tests are stable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np

__all__ = [
    "TermDescriptor",
    "CandidateLibrary",
    "EmptySupportError",
    "build_library",
    "refine_library",
    "subset_library",
    "parse_term",
    "term_names_json",
]


class EmptySupportError(ValueError):
    """Raised when a library refinement is requested for an empty support."""


@dataclass(frozen=True)
class TermDescriptor:
    """One candidate basis function.

    Either a pure monomial (``func`` is None, powers in ``exponents``) or a
    unary sin/cos of a single variable (``func`` set, all exponents zero).
    """

    exponents: tuple[int, ...]
    func: tuple[str, int] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "exponents", tuple(int(e) for e in self.exponents))
        if any(e < 0 for e in self.exponents):
            raise ValueError("monomial exponents must be nonnegative")
        if self.func is not None:
            tag, var = self.func
            if tag not in ("sin", "cos"):
                raise ValueError(f"unsupported unary tag {tag!r}")
            if not 0 <= var < len(self.exponents):
                raise ValueError("unary variable index out of range")
            if any(self.exponents):
                raise ValueError("unary terms carry no monomial part")

    @property
    def name(self) -> str:
        if self.func is not None:
            tag, var = self.func
            return f"{tag}(x{var + 1})"
        factors = []
        for i, e in enumerate(self.exponents):
            if e == 1:
                factors.append(f"x{i + 1}")
            elif e > 1:
                factors.append(f"x{i + 1}^{e}")
        return "*".join(factors) if factors else "1"

    @property
    def degree(self) -> int:
        """Total degree; unary terms count as degree 1."""
        if self.func is not None:
            return 1
        return sum(self.exponents)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Evaluate this term on every row of an n-by-m state matrix."""
        X = np.asarray(X, dtype=float)
        if self.func is not None:
            tag, var = self.func
            return np.sin(X[:, var]) if tag == "sin" else np.cos(X[:, var])
        out = np.ones(X.shape[0])
        for i, e in enumerate(self.exponents):
            if e:
                out = out * X[:, i] ** e
        return out


@dataclass(frozen=True)
class CandidateLibrary:
    """Evaluated design matrix with per-column descriptors and scales.

    ``scales`` holds per-column sample standard deviations (n-1 denominator);
    the intercept scale is fixed at zero.
    """

    theta: np.ndarray
    terms: tuple[TermDescriptor, ...]
    scales: np.ndarray

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def p(self) -> int:
        return self.theta.shape[1]

    @property
    def has_trig(self) -> bool:
        return any(t.func is not None for t in self.terms)

    def index_of(self, term: TermDescriptor) -> int:
        return self.terms.index(term)


def _monomial_terms(m: int, degree: int) -> list[TermDescriptor]:
    """All monomials of total degree <= degree, degree-major then lexicographic."""
    out = [TermDescriptor((0,) * m)]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(m), deg):
            exps = [0] * m
            for v in combo:
                exps[v] += 1
            out.append(TermDescriptor(tuple(exps)))
    return out


def build_library(X: np.ndarray, degree: int, trig: bool) -> CandidateLibrary:
    """Evaluate all monomials up to ``degree`` (plus sin/cos terms if ``trig``).

    Column order: intercept, monomials by total degree then lexicographic
    variable order, then sin terms by variable, then cos terms by variable.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, m = X.shape
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if n < 1:
        raise ValueError("need at least one sample row")
    terms = _monomial_terms(m, degree)
    if trig:
        terms += [TermDescriptor((0,) * m, ("sin", j)) for j in range(m)]
        terms += [TermDescriptor((0,) * m, ("cos", j)) for j in range(m)]
    theta = np.column_stack([t.evaluate(X) for t in terms])
    if n > 1:
        scales = theta.std(axis=0, ddof=1)
    else:
        scales = np.zeros(theta.shape[1])
    scales[0] = 0.0
    assert theta.shape[1] == comb(m + degree, degree) + (2 * m if trig else 0)
    return CandidateLibrary(theta=theta, terms=tuple(terms), scales=scales)


def refine_library(
    lib: CandidateLibrary, support: set[TermDescriptor], X: np.ndarray
) -> CandidateLibrary:
    """Rebuild the library at the maximum total degree found in ``support``.

    Unary terms count as degree 1.  The unary block is kept whenever the
    original library had one.  Degree-0 supports (intercept only) refine to
    degree 1 so the rebuilt library remains valid.
    """
    support = set(support)
    if not support:
        raise EmptySupportError("cannot refine on an empty support")
    missing = support - set(lib.terms)
    if missing:
        raise ValueError(f"support terms not in library: {sorted(t.name for t in missing)}")
    d1 = max(1, max(t.degree for t in support))
    return build_library(X, d1, lib.has_trig)


def subset_library(lib: CandidateLibrary, indices) -> CandidateLibrary:
    """Column-subset view of a library (used for trimmed design matrices)."""
    idx = np.asarray(list(indices), dtype=int)
    return CandidateLibrary(
        theta=lib.theta[:, idx],
        terms=tuple(lib.terms[i] for i in idx),
        scales=lib.scales[idx],
    )


_MONO_FACTOR = re.compile(r"^x(\d+)(?:\^(\d+))?$")
_UNARY = re.compile(r"^(sin|cos)\(x(\d+)\)$")


def parse_term(name: str, m: int) -> TermDescriptor:
    """Parse a canonical term name (e.g. ``x1^2*x3``, ``sin(x2)``, ``1``)."""
    name = name.strip()
    if name == "1":
        return TermDescriptor((0,) * m)
    u = _UNARY.match(name)
    if u:
        var = int(u.group(2)) - 1
        if not 0 <= var < m:
            raise ValueError(f"variable index out of range in {name!r}")
        return TermDescriptor((0,) * m, (u.group(1), var))
    exps = [0] * m
    for factor in name.split("*"):
        f = _MONO_FACTOR.match(factor.strip())
        if not f:
            raise ValueError(f"cannot parse term {name!r}")
        var = int(f.group(1)) - 1
        if not 0 <= var < m:
            raise ValueError(f"variable index out of range in {name!r}")
        exps[var] += int(f.group(2) or 1)
    return TermDescriptor(tuple(exps))


def term_names_json(lib: CandidateLibrary) -> str:
    """Ordered term-name list serialized as a JSON array."""
    return json.dumps([t.name for t in lib.terms])
