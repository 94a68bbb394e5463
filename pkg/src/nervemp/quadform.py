"""Convex quadratics over named variable sets, closed under message passing.

The fixed convention throughout the package is

    q(x) = x' A x + b' x + c        (no 1/2 factor on A)

with A symmetric positive semidefinite.  Partial minimization is the
generalized Schur complement

    A~ = A_xx - A_xy A_yy+ A_yx,  b~ = b_x - A_xy A_yy+ b_y,
    c~ = c - b_y' A_yy+ b_y / 4,

where A_yy+ is the pseudoinverse with singular values below
RANK_RCOND * sigma_max treated as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingVariable,
    UnboundedBelow,
    UnknownVariable,
)

# Construction tolerances (absolute asymmetry bound, relative PSD slack).
SYM_TOL = 1e-12
PSD_TOL = 1e-9
# Pseudoinverse rank cutoff, relative to the largest singular value.
RANK_RCOND = 1e-10
# Kernel component of b larger than this (relative to 1 + |b|) means -inf.
UNBOUNDED_TOL = 1e-8


def _sym(A: np.ndarray) -> np.ndarray:
    return (A + A.T) / 2.0


@dataclass(frozen=True)
class ArgminMap:
    """Affine minimizer map y*(x) = M x + m for the eliminated block.

    `inputs` are the retained variables, `eliminated` the minimized ones.
    """

    eliminated: tuple
    inputs: tuple
    M: np.ndarray
    m: np.ndarray

    def apply(self, assignment: Mapping) -> dict:
        x = np.array([float(assignment[v]) for v in self.inputs])
        y = self.M @ x + self.m if len(self.inputs) else self.m.copy()
        return dict(zip(self.eliminated, y.tolist()))


class QuadFunc:
    """q(x) = x'Ax + b'x + c over an ordered tuple of variables."""

    __slots__ = ("vars", "A", "b", "c")

    def __init__(self, variables: Iterable, A, b, c):
        variables = tuple(variables)
        if len(set(variables)) != len(variables):
            raise ValueError(f"duplicate variables in {variables}")
        n = len(variables)
        A = np.asarray(A, dtype=float).reshape(n, n)
        b = np.asarray(b, dtype=float).reshape(n)
        if n and np.max(np.abs(A - A.T)) > SYM_TOL:
            raise ValueError("A is asymmetric beyond tolerance")
        A = _sym(A)
        if n:
            w = np.linalg.eigvalsh(A)
            norm2 = max(abs(w[0]), abs(w[-1]))
            if w[0] < -PSD_TOL * (1.0 + norm2):
                raise ValueError(f"A is not positive semidefinite (lambda_min={w[0]:g})")
        object.__setattr__(self, "vars", variables)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(c))

    def __setattr__(self, name, value):  # value semantics: immutable
        raise AttributeError("QuadFunc is immutable")

    def __repr__(self):
        return f"QuadFunc(vars={self.vars}, c={self.c:g})"

    @classmethod
    def zero(cls, variables: Iterable = ()) -> "QuadFunc":
        variables = tuple(variables)
        n = len(variables)
        return cls(variables, np.zeros((n, n)), np.zeros(n), 0.0)

    def index_of(self, v) -> int:
        try:
            return self.vars.index(v)
        except ValueError:
            raise UnknownVariable(f"variable {v!r} not in {self.vars}") from None

    def evaluate(self, assignment) -> float:
        x = np.asarray(assignment, dtype=float).reshape(-1)
        if x.shape[0] != len(self.vars):
            raise DimensionMismatch(
                f"assignment has length {x.shape[0]}, expected {len(self.vars)}"
            )
        return float(x @ self.A @ x + self.b @ x + self.c)

    def evaluate_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.vars):
            raise DimensionMismatch(
                f"batch has shape {X.shape}, expected (*, {len(self.vars)})"
            )
        return np.einsum("bi,ij,bj->b", X, self.A, X) + X @ self.b + self.c

    def gradient_batch(self, X: np.ndarray) -> np.ndarray:
        return 2.0 * np.asarray(X, dtype=float) @ self.A + self.b

    def embed(self, superset: Iterable) -> "QuadFunc":
        superset = tuple(superset)
        pos = {v: i for i, v in enumerate(superset)}
        missing = [v for v in self.vars if v not in pos]
        if missing:
            raise MissingVariable(f"variables {missing} not in superset {superset}")
        idx = [pos[v] for v in self.vars]
        n = len(superset)
        A = np.zeros((n, n))
        b = np.zeros(n)
        A[np.ix_(idx, idx)] = self.A
        b[idx] = self.b
        return QuadFunc(superset, A, b, self.c)

    def add(self, other: "QuadFunc") -> "QuadFunc":
        if other.vars == self.vars:
            return QuadFunc(self.vars, self.A + other.A, self.b + other.b, self.c + other.c)
        union = tuple(sorted(set(self.vars) | set(other.vars)))
        a = self.embed(union)
        b = other.embed(union)
        return QuadFunc(union, a.A + b.A, a.b + b.b, a.c + b.c)

    def __add__(self, other):
        return self.add(other)

    def fix_vars(self, fixed: Mapping) -> "QuadFunc":
        unknown = [v for v in fixed if v not in self.vars]
        if unknown:
            raise UnknownVariable(f"cannot fix unknown variables {unknown}")
        keep = [v for v in self.vars if v not in fixed]
        ki = [self.vars.index(v) for v in keep]
        fi = [self.vars.index(v) for v in self.vars if v in fixed]
        f = np.array([float(fixed[self.vars[i]]) for i in fi])
        A_kk = self.A[np.ix_(ki, ki)]
        A_kf = self.A[np.ix_(ki, fi)]
        A_ff = self.A[np.ix_(fi, fi)]
        b_new = self.b[ki] + 2.0 * A_kf @ f
        c_new = float(f @ A_ff @ f + self.b[fi] @ f + self.c)
        return QuadFunc(tuple(keep), A_kk, b_new, c_new)

    def partial_minimize(self, elim: Iterable) -> tuple["QuadFunc", ArgminMap]:
        elim = set(elim)
        unknown = elim - set(self.vars)
        if unknown:
            raise UnknownVariable(f"cannot eliminate unknown variables {sorted(unknown)}")
        keep = tuple(v for v in self.vars if v not in elim)
        ys = tuple(v for v in self.vars if v in elim)
        if not ys:
            amap = ArgminMap((), keep, np.zeros((0, len(keep))), np.zeros(0))
            return self, amap
        xi = [self.vars.index(v) for v in keep]
        yi = [self.vars.index(v) for v in ys]
        A_xx = self.A[np.ix_(xi, xi)]
        A_xy = self.A[np.ix_(xi, yi)]
        A_yy = self.A[np.ix_(yi, yi)]
        b_x = self.b[xi]
        b_y = self.b[yi]
        P = np.linalg.pinv(A_yy, rcond=RANK_RCOND, hermitian=True)
        resid = b_y - A_yy @ (P @ b_y)
        if np.linalg.norm(resid) > UNBOUNDED_TOL * (1.0 + np.linalg.norm(self.b)):
            raise UnboundedBelow(
                "partial minimum is -inf: the linear term has a component in the "
                "kernel of the eliminated block"
            )
        A_new = _sym(A_xx - A_xy @ P @ A_xy.T)
        b_new = b_x - A_xy @ (P @ b_y)
        c_new = float(self.c - 0.25 * b_y @ P @ b_y)
        M = -P @ A_xy.T
        m = -0.5 * P @ b_y
        return QuadFunc(keep, A_new, b_new, c_new), ArgminMap(ys, keep, M, m)

    def global_minimize(self) -> tuple[float, np.ndarray, np.ndarray]:
        """Minimum value, minimum-norm minimizer, and kernel basis of A.

        The kernel columns span the direction set of the full minimizer
        affine subspace.  Raises UnboundedBelow when b has a kernel component.
        """
        n = len(self.vars)
        if n == 0:
            return self.c, np.zeros(0), np.zeros((0, 0))
        P = np.linalg.pinv(self.A, rcond=RANK_RCOND, hermitian=True)
        resid = self.b - self.A @ (P @ self.b)
        if np.linalg.norm(resid) > UNBOUNDED_TOL * (1.0 + np.linalg.norm(self.b)):
            raise UnboundedBelow("minimum is -inf along a kernel direction")
        minimizer = -0.5 * P @ self.b
        value = float(self.c - 0.25 * self.b @ P @ self.b)
        w, V = np.linalg.eigh(self.A)
        sigma_max = max(abs(w[0]), abs(w[-1]))
        kernel = V[:, np.abs(w) <= RANK_RCOND * sigma_max] if sigma_max > 0 else V
        return value, minimizer, kernel


def subspace_distance_quad(vectors: Sequence, variables: Iterable) -> QuadFunc:
    """Squared distance to the span of `vectors`: q(x) = ||(I - P)x||^2.

    A = I - P is the complement of the orthogonal projector onto the span,
    hence symmetric, PSD and idempotent; b = 0 and c = 0.
    """
    variables = tuple(variables)
    n = len(variables)
    vectors = [np.asarray(v, dtype=float).reshape(-1) for v in vectors]
    for v in vectors:
        if v.shape[0] != n:
            raise DimensionMismatch(
                f"basis vector has length {v.shape[0]}, expected {n}"
            )
    if not vectors:
        return QuadFunc(variables, np.eye(n), np.zeros(n), 0.0)
    Z = np.stack(vectors, axis=1)
    u, s, _ = np.linalg.svd(Z, full_matrices=False)
    if s.size and s[0] > 0:
        Q = u[:, s > s[0] * 1e-12]
    else:
        Q = u[:, :0]
    A = _sym(np.eye(n) - Q @ Q.T)
    return QuadFunc(variables, A, np.zeros(n), 0.0)
