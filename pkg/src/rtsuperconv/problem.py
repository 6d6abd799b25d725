"""Second-order elliptic problems and manufactured solutions.

The equation is ``-div(A grad u + b u) + c u = f`` on a polygon with either
``u = g`` (Dirichlet) or ``p.n = g`` (Neumann) on the boundary, where
``p = A grad u + b u`` is the flux.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Func = Callable[[np.ndarray], np.ndarray]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Coefficients, data and (optionally) the exact solution of a problem.

    All callables take points of shape ``(..., 2)``. ``A`` returns ``(..., 2, 2)``,
    ``b`` returns ``(..., 2)``, ``c``, ``f`` and ``g`` return ``(...)``. For Neumann
    problems ``g`` is called as ``g(x, n)`` with the outward unit normal ``n``.
    ``A=None`` means the identity and ``b=None``/``c=None`` mean zero; the
    assembler uses this to skip blocks.
    """

    f: Func
    g: Optional[Callable] = None
    A: Optional[Func] = None
    b: Optional[Func] = None
    c: Optional[Func] = None
    bc_kind: str = DIRICHLET
    exact_u: Optional[Func] = None
    exact_grad_u: Optional[Func] = None
    exact_p: Optional[Func] = None
    exact_div_p: Optional[Func] = None
    name: str = "problem"

    def __post_init__(self):
        if self.bc_kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary condition kind {self.bc_kind!r}")

    def A_at(self, x):
        x = np.asarray(x)
        if self.A is None:
            return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2))
        return np.asarray(self.A(x), dtype=float)

    def alpha_at(self, x):
        """Inverse of the diffusion tensor at ``x``, checked to be SPD."""
        A = self.A_at(x)
        if self.A is None:
            return A
        check_spd(A)
        return np.linalg.inv(A)

    def beta_at(self, x):
        if self.b is None:
            return None
        b = np.asarray(self.b(x), dtype=float)
        return np.einsum("...ij,...j->...i", self.alpha_at(x), b)

    def c_at(self, x):
        if self.c is None:
            return None
        return np.broadcast_to(np.asarray(self.c(x), dtype=float), np.shape(x)[:-1])


def check_spd(A, tol: float = 0.0):
    """Raise ``ValueError`` unless every 2x2 matrix in ``A`` is symmetric positive definite."""
    A = np.asarray(A)
    asym = np.abs(A[..., 0, 1] - A[..., 1, 0])
    scale = np.abs(A).max(axis=(-2, -1))
    if np.any(asym > 1e-12 * np.maximum(scale, 1.0)):
        raise ValueError("coefficient A is not symmetric")
    if np.any(np.linalg.eigvalsh(A)[..., 0] <= tol):
        raise ValueError("coefficient A is not positive definite")


@dataclass(frozen=True)
class ManufacturedSolution:
    """A smooth ``u`` with its gradient and Hessian."""

    u: Func
    grad: Func
    hess: Func
    name: str


def _sine():
    pi = np.pi

    def u(x):
        return np.sin(2 * pi * x[..., 0]) * np.sin(pi * x[..., 1])

    def grad(x):
        s1, c1 = np.sin(2 * pi * x[..., 0]), np.cos(2 * pi * x[..., 0])
        s2, c2 = np.sin(pi * x[..., 1]), np.cos(pi * x[..., 1])
        return np.stack([2 * pi * c1 * s2, pi * s1 * c2], axis=-1)

    def hess(x):
        s1, c1 = np.sin(2 * pi * x[..., 0]), np.cos(2 * pi * x[..., 0])
        s2, c2 = np.sin(pi * x[..., 1]), np.cos(pi * x[..., 1])
        uxx = -4 * pi**2 * s1 * s2
        uxy = 2 * pi**2 * c1 * c2
        uyy = -(pi**2) * s1 * s2
        return np.stack([np.stack([uxx, uxy], -1), np.stack([uxy, uyy], -1)], -2)

    return ManufacturedSolution(u, grad, hess, "sin(2 pi x) sin(pi y)")


def _cosine():
    pi = np.pi

    def u(x):
        return np.cos(pi * x[..., 0]) * np.cos(pi * x[..., 1])

    def grad(x):
        s1, c1 = np.sin(pi * x[..., 0]), np.cos(pi * x[..., 0])
        s2, c2 = np.sin(pi * x[..., 1]), np.cos(pi * x[..., 1])
        return np.stack([-pi * s1 * c2, -pi * c1 * s2], axis=-1)

    def hess(x):
        s1, c1 = np.sin(pi * x[..., 0]), np.cos(pi * x[..., 0])
        s2, c2 = np.sin(pi * x[..., 1]), np.cos(pi * x[..., 1])
        d = -(pi**2) * c1 * c2
        o = pi**2 * s1 * s2
        return np.stack([np.stack([d, o], -1), np.stack([o, d], -1)], -2)

    return ManufacturedSolution(u, grad, hess, "cos(pi x) cos(pi y)")


SINE = _sine()
COSINE = _cosine()


def manufactured_problem(
    solution: ManufacturedSolution = SINE,
    A=None,
    b=None,
    c: float = 1.0,
    bc_kind: str = DIRICHLET,
) -> ProblemSpec:
    """Problem with constant coefficients whose exact solution is ``solution``.

    ``f`` and ``g`` are derived in closed form from the gradient and Hessian.
    ``A`` is a constant SPD 2x2 matrix (identity if None), ``b`` a constant
    2-vector (zero if None), ``c`` a constant (``0`` drops the reaction block).
    """
    A_const = None if A is None else np.asarray(A, dtype=float)
    b_const = None if b is None or not np.any(b) else np.asarray(b, dtype=float)
    if A_const is not None:
        check_spd(A_const)
    Amat = np.eye(2) if A_const is None else A_const
    bvec = np.zeros(2) if b_const is None else b_const

    def p(x):
        return np.einsum("ij,...j->...i", Amat, solution.grad(x)) + bvec * solution.u(x)[..., None]

    def div_p(x):
        return np.einsum("ij,...ij->...", Amat, solution.hess(x)) + solution.grad(x) @ bvec

    def f(x):
        return -div_p(x) + c * solution.u(x)

    if bc_kind == DIRICHLET:
        g = solution.u
    else:
        def g(x, n):
            return np.sum(p(x) * n, axis=-1)

    return ProblemSpec(
        f=f,
        g=g,
        A=None if A_const is None else (lambda x: np.broadcast_to(Amat, np.shape(x)[:-1] + (2, 2))),
        b=None if b_const is None else (lambda x: np.broadcast_to(bvec, np.shape(x))),
        c=None if c == 0 else (lambda x: np.full(np.shape(x)[:-1], float(c))),
        bc_kind=bc_kind,
        exact_u=solution.u,
        exact_grad_u=solution.grad,
        exact_p=p,
        exact_div_p=div_p,
        name=f"{solution.name}, b={tuple(bvec)}, c={c}, {bc_kind}",
    )


def poisson_problem(solution: ManufacturedSolution = SINE) -> ProblemSpec:
    """``-Laplace u = f`` with homogeneous Dirichlet data for ``SINE``."""
    return manufactured_problem(solution, c=0.0)
