"""One-dimensional quadrature rules and Lagrange bases on the reference interval.

Nodal bases live on Gauss-Lobatto-Legendre (GLL) points; quadrature is either
GLL (collocated when it coincides with the nodes) or Gauss-Legendre (GL).
Everything here is double precision and immutable once built.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_NEWTON_TOL = 1e-15
_NEWTON_MAXIT = 100


class QuadKind(str, enum.Enum):
    GLL = "gll"
    GL = "gl"


@dataclass(frozen=True)
class QuadRule1D:
    kind: QuadKind
    points: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)


def legendre(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P_n(x), P_n'(x))`` by the three-term recurrence."""
    x = np.asarray(x, dtype=np.float64)
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    dp0, dp1 = np.zeros_like(x), np.ones_like(x)
    for k in range(1, n):
        p2 = ((2 * k + 1) * x * p1 - k * p0) / (k + 1)
        dp2 = dp0 + (2 * k + 1) * p1
        p0, p1 = p1, p2
        dp0, dp1 = dp1, dp2
    return p1, dp1


def _bracketed_newton(func, guess, lo, hi):
    """Vectorized Newton iteration safeguarded by bisection.

    ``func(x)`` returns ``(f, f')``; each root must be the unique sign change
    of ``f`` inside ``[lo, hi]``.
    """
    x = np.clip(guess, lo, hi)
    flo, _ = func(lo)
    lo, hi = lo.copy(), hi.copy()
    for _ in range(_NEWTON_MAXIT):
        f, df = func(x)
        # shrink brackets so that bisection fallback stays valid
        same = np.sign(f) == np.sign(flo)
        lo = np.where(same, x, lo)
        hi = np.where(same, hi, x)
        flo = np.where(same, f, flo)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - f / df
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        step = np.abs(xn - x)
        x = xn
        if np.all(step <= _NEWTON_TOL * np.maximum(1.0, np.abs(x))):
            break
    return x


def _symmetrize(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    half = 0.5 * (x[: n // 2] - x[::-1][: n // 2])
    out = np.empty(n)
    out[: n // 2] = half
    out[n - n // 2:] = -half[::-1]
    if n % 2:
        out[n // 2] = 0.0
    return out


@lru_cache(maxsize=None)
def _gl_points(n: int) -> tuple[float, ...]:
    if n == 1:
        return (0.0,)
    # zeros of P_n interlace with those of P_{n-1}
    edges = np.concatenate(([-1.0], np.array(_gl_points(n - 1)), [1.0]))
    guess = -np.cos(np.pi * (2 * np.arange(n) + 1) / (2 * n))
    x = _bracketed_newton(lambda t: legendre(n, t), guess, edges[:-1], edges[1:])
    return tuple(_symmetrize(x))


def gl_rule(n: int) -> QuadRule1D:
    """Gauss-Legendre rule with ``n`` points (exact to degree ``2n - 1``)."""
    if n < 1:
        raise ValueError(f"Gauss-Legendre rule needs n >= 1, got {n}")
    x = np.array(_gl_points(n))
    _, dp = legendre(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    return QuadRule1D(QuadKind.GL, _frozen(x), _frozen(w))


def gll_rule(n: int) -> QuadRule1D:
    """Gauss-Lobatto-Legendre rule with ``n`` points including both endpoints.

    Interior points are the roots of ``P'_{n-1}``; they are bracketed by the
    roots of ``P_{n-1}`` and refined by safeguarded Newton iteration from
    Chebyshev-Gauss-Lobatto guesses.
    """
    if n < 2:
        raise ValueError(f"Gauss-Lobatto-Legendre rule needs n >= 2, got {n}")
    N = n - 1
    x = np.empty(n)
    x[0], x[-1] = -1.0, 1.0
    if n > 2:
        edges = np.array(_gl_points(N))

        def dlegendre(t):
            p, dp = legendre(N, t)
            # P'' from the Legendre ODE
            return dp, (2.0 * t * dp - N * (N + 1) * p) / (1.0 - t * t)

        guess = -np.cos(np.pi * np.arange(1, N) / N)
        x[1:-1] = _bracketed_newton(dlegendre, guess, edges[:-1], edges[1:])
        x = _symmetrize(x)
        x[0], x[-1] = -1.0, 1.0
    p, _ = legendre(N, x)
    w = 2.0 / (n * N * p * p)
    return QuadRule1D(QuadKind.GLL, _frozen(x), _frozen(w))


def quad_rule(kind: QuadKind | str, n: int) -> QuadRule1D:
    kind = QuadKind(kind)
    return gll_rule(n) if kind is QuadKind.GLL else gl_rule(n)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def barycentric_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def lagrange_matrices(nodes: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the Lagrange polynomials on ``nodes`` at ``y``.

    Returns ``(B, D)`` with ``B[a, j] = l_j(y_a)`` and ``D[a, j] = l_j'(y_a)``,
    evaluated in barycentric form.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lam = barycentric_weights(nodes)
    m, n = y.shape[0], nodes.shape[0]
    B = np.zeros((m, n))
    D = np.zeros((m, n))
    for a in range(m):
        d = y[a] - nodes
        hit = np.flatnonzero(d == 0.0)
        if hit.size:
            j = hit[0]
            B[a, j] = 1.0
            others = np.arange(n) != j
            D[a, others] = (lam[others] / lam[j]) / (nodes[j] - nodes[others])
            D[a, j] = -D[a, others].sum()
            continue
        t = lam / d
        B[a] = t / t.sum()
        inv = 1.0 / d
        D[a] = B[a] * (inv.sum() - inv)
    return B, D


@dataclass(frozen=True)
class TensorBasis:
    """Degree-``p`` Lagrange basis on GLL nodes evaluated at a 1D quadrature rule.

    ``B`` and ``D`` are ``q x (p+1)`` interpolation and derivative matrices;
    the 3D operators are their tensor products.
    """

    p: int
    nodes: QuadRule1D
    quad: QuadRule1D
    B: np.ndarray
    D: np.ndarray

    @property
    def n(self) -> int:
        return self.p + 1

    @property
    def q(self) -> int:
        return self.quad.n

    @property
    def collocated(self) -> bool:
        return self.quad.kind is QuadKind.GLL and self.q == self.n

    def weights3d(self) -> np.ndarray:
        """Tensor quadrature weights indexed ``[t, s, r]``."""
        w = self.quad.weights
        return w[:, None, None] * w[None, :, None] * w[None, None, :]


def build_basis(p: int, q: int | None = None, kind: QuadKind | str = QuadKind.GLL) -> TensorBasis:
    if p < 1:
        raise ValueError(f"polynomial degree must be >= 1, got {p}")
    if q is None:
        q = p + 1
    nodes = gll_rule(p + 1)
    quad = quad_rule(kind, q)
    if quad.kind is QuadKind.GLL and q == p + 1:
        B = np.eye(p + 1)
        _, D = lagrange_matrices(nodes.points, nodes.points)
    else:
        B, D = lagrange_matrices(nodes.points, quad.points)
    return TensorBasis(p, nodes, quad, _frozen(B), _frozen(D))
