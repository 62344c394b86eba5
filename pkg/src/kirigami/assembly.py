"""P1 assembly of the regularized sesquilinear form, its load, residual and Jacobian.

Test functions are real hat functions, so conjugating them is a no-op and the
assembled operator is complex symmetric (not Hermitian).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .material import DiagTensor2, MaterialModel
from .mesh import Triangulation2D

# barycentric points (rows sum to 1) and weights (sum to 1) on the reference triangle
_A4, _B4 = 0.445948490915965, 0.091576213509771
_W4A, _W4B = 0.223381589678011, 0.109951743655322
_A5, _B5 = 0.059715871789770, 0.470142064105115
_C5, _D5 = 0.797426985353087, 0.101286507323456
_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]), np.full(3, 1 / 3)),
    4: (
        np.array([
            [_A4, _A4, 1 - 2 * _A4], [_A4, 1 - 2 * _A4, _A4], [1 - 2 * _A4, _A4, _A4],
            [_B4, _B4, 1 - 2 * _B4], [_B4, 1 - 2 * _B4, _B4], [1 - 2 * _B4, _B4, _B4],
        ]),
        np.array([_W4A] * 3 + [_W4B] * 3),
    ),
    5: (
        np.array([
            [1 / 3, 1 / 3, 1 / 3],
            [_A5, _B5, _B5], [_B5, _A5, _B5], [_B5, _B5, _A5],
            [_C5, _D5, _D5], [_D5, _C5, _D5], [_D5, _D5, _C5],
        ]),
        np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
    ),
}
_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def triangle_rule(order: int):
    """Barycentric quadrature rule exact for polynomials of degree ``order`` (1, 2, 4 or 5; 3 maps to 4)."""
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    if order == 3:
        order = 4
    return _RULES[min(order, 5)]


class MeshMismatchError(ValueError):
    pass


@dataclass
class ComplexField:
    mesh: Triangulation2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.mesh.n_vertices,):
            raise MeshMismatchError(
                f"field has {self.values.shape} values, mesh has {self.mesh.n_vertices} vertices")

    @property
    def real(self):
        return self.values.real

    @property
    def imag(self):
        return self.values.imag


class ConstantCoefficient:
    """Frozen coefficient diag(a, b), independent of xi (test and verification hook)."""

    def __init__(self, a, b):
        self.a, self.b = a, b

    def b_hat(self, xi):
        xi = np.asarray(xi, dtype=float)
        return DiagTensor2(np.full(xi.shape, self.a), np.full(xi.shape, self.b))

    def db_hat_dxi(self, xi):
        xi = np.asarray(xi, dtype=float)
        return DiagTensor2(np.zeros(xi.shape), np.zeros(xi.shape))


def _zero(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass
class ProblemSpec:
    """Data of the discrete nonlinear problem.

    ``coefficient`` overrides the material coefficient (anything with ``b_hat``
    and ``db_hat_dxi``); ``source`` adds a volumetric load, used only by
    manufactured-solution studies.
    """

    mesh: Triangulation2D
    material: Optional[MaterialModel]
    epsilon: float = 0.0
    dirichlet_data: Callable = _zero
    neumann_data: Callable = _zero
    quadrature_order: int = 2
    coefficient: Optional[object] = None
    source: Optional[Callable] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.mesh.dirichlet_vertices.size == 0:
            raise ValueError("the Dirichlet boundary is empty")
        if self.material is None and self.coefficient is None:
            raise ValueError("either a material or a coefficient is required")
        triangle_rule(self.quadrature_order)

    @property
    def coeff(self):
        return self.coefficient if self.coefficient is not None else self.material

    @property
    def dirichlet_dofs(self) -> np.ndarray:
        return self.mesh.dirichlet_vertices

    @property
    def dirichlet_values(self) -> np.ndarray:
        if "dv" not in self._cache:
            d = self.dirichlet_dofs
            x, y = self.mesh.vertices[d].T
            self._cache["dv"] = np.broadcast_to(np.asarray(self.dirichlet_data(x, y), dtype=float), d.shape).copy()
        return self._cache["dv"]

    def lift(self, values) -> np.ndarray:
        """Copy of ``values`` with the Dirichlet constraints imposed (real part = data, imaginary part = 0)."""
        out = np.array(values, dtype=complex)
        out[self.dirichlet_dofs] = self.dirichlet_values
        return out

    def initial_guess(self, value: complex = 0.0) -> ComplexField:
        return ComplexField(self.mesh, self.lift(np.full(self.mesh.n_vertices, value, dtype=complex)))


def _values(spec_or_mesh, xi):
    mesh = getattr(spec_or_mesh, "mesh", spec_or_mesh)
    if isinstance(xi, ComplexField):
        if xi.mesh is not mesh and not xi.mesh.same_as(mesh):
            raise MeshMismatchError("field and problem live on different meshes")
        return xi.values
    xi = np.asarray(xi, dtype=complex)
    if xi.shape != (mesh.n_vertices,):
        raise MeshMismatchError(f"field has shape {xi.shape}, mesh has {mesh.n_vertices} vertices")
    return xi


def quadrature_values(mesh: Triangulation2D, values, order: int = 2) -> np.ndarray:
    """P1 field evaluated at quadrature points, shape (nt, nq)."""
    lam, _ = triangle_rule(order)
    return np.asarray(values)[mesh.triangles] @ lam.T


def quadrature_points(mesh: Triangulation2D, order: int = 2) -> np.ndarray:
    lam, _ = triangle_rule(order)
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    return np.einsum("qk,tkd->tqd", lam, p)


def local_stiffness(vertices, coeff, quadrature_order: int = 2) -> np.ndarray:
    """3x3 complex element matrix of int coeff(x) grad(phi_j) . grad(phi_i).

    ``coeff`` maps an (nq, 2) array of points to a DiagTensor2 of (nq,) arrays
    (or scalars).
    """
    p = np.asarray(vertices, dtype=float)
    d1, d2 = p[1] - p[0], p[2] - p[0]
    area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
    h = max(np.linalg.norm(d1), np.linalg.norm(d2), np.linalg.norm(p[2] - p[1]))
    if abs(area) < 1e-14 * h * h:
        raise ValueError("degenerate triangle")
    x, y = p[:, 0], p[:, 1]
    gx = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / (2 * area)
    gy = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / (2 * area)
    lam, w = triangle_rule(quadrature_order)
    d = coeff(lam @ p)
    c11 = np.sum(w * np.broadcast_to(d[0], w.shape))
    c22 = np.sum(w * np.broadcast_to(d[1], w.shape))
    return abs(area) * (c11 * np.outer(gx, gx) + c22 * np.outer(gy, gy))


def _coo(mesh, local, n=None):
    n = n or mesh.n_vertices
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _mean_coefficients(spec: ProblemSpec, xr_q: np.ndarray):
    _, w = triangle_rule(spec.quadrature_order)
    d = spec.coeff.b_hat(xr_q)
    return np.asarray(d[0]) @ w, np.asarray(d[1]) @ w


def _operator_chunk(spec, tri_idx, xr):
    mesh = spec.mesh
    gx, gy = (g[tri_idx] for g in mesh.gradients)
    area = mesh.signed_areas[tri_idx]
    lam, _ = triangle_rule(spec.quadrature_order)
    c11, c22 = _mean_coefficients(spec, xr[mesh.triangles[tri_idx]] @ lam.T)
    ie = 1j * spec.epsilon
    local = (area * (c11 + ie))[:, None, None] * gx[:, :, None] * gx[:, None, :] + \
            (area * (c22 + ie))[:, None, None] * gy[:, :, None] * gy[:, None, :]
    rows = np.repeat(mesh.triangles[tri_idx], 3, axis=1).ravel()
    cols = np.tile(mesh.triangles[tri_idx], (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_raw_operator(spec: ProblemSpec, xi, workers: int = 1) -> sp.csr_matrix:
    """Operator of a_eps(Re xi; ., .) without boundary conditions.

    With ``workers > 1`` triangles are split into contiguous chunks assembled
    concurrently; the chunk matrices are summed in chunk order.
    """
    xr = _values(spec, xi).real
    nt = spec.mesh.n_triangles
    if workers <= 1 or nt < 2 * workers:
        return _operator_chunk(spec, np.arange(nt), xr)
    chunks = np.array_split(np.arange(nt), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda idx: _operator_chunk(spec, idx, xr), chunks))
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total.tocsr()


def _apply_dirichlet_matrix(A: sp.spmatrix, dofs: np.ndarray) -> sp.csr_matrix:
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    P = sp.diags(keep)
    D = sp.diags(1.0 - keep)
    return (P @ A @ P + D).tocsr()


def assemble_operator(spec: ProblemSpec, xi_current, workers: int = 1) -> sp.csr_matrix:
    """Operator with Dirichlet rows and columns replaced by the identity."""
    return _apply_dirichlet_matrix(assemble_raw_operator(spec, xi_current, workers), spec.dirichlet_dofs)


def assemble_load(spec: ProblemSpec) -> np.ndarray:
    """Neumann (plus optional source) load; Dirichlet rows are zero (no lifting)."""
    mesh = spec.mesh
    n = mesh.n_vertices
    b = np.zeros(n, dtype=complex)
    edges = mesh.neumann_edges
    if len(edges):
        pa, pb = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
        length = np.linalg.norm(pb - pa, axis=1)
        for s in _GAUSS2:
            q = (1 - s) * pa + s * pb
            gq = np.broadcast_to(np.asarray(spec.neumann_data(q[:, 0], q[:, 1])), length.shape)
            np.add.at(b, edges[:, 0], 0.5 * length * gq * (1 - s))
            np.add.at(b, edges[:, 1], 0.5 * length * gq * s)
    if spec.source is not None:
        lam, w = triangle_rule(5)
        pts = quadrature_points(mesh, 5)
        f = np.asarray(spec.source(pts[..., 0], pts[..., 1]))
        contrib = mesh.signed_areas[:, None] * ((f * w) @ lam)  # (nt, 3)
        np.add.at(b, mesh.triangles.ravel(), contrib.ravel())
    b[spec.dirichlet_dofs] = 0.0
    return b


def lift_dirichlet(spec: ProblemSpec, A_raw: sp.spmatrix, load: np.ndarray):
    """Return (A, rhs): identity Dirichlet rows/columns, data moved to the right-hand side."""
    dofs, vals = spec.dirichlet_dofs, spec.dirichlet_values
    xd = np.zeros(spec.mesh.n_vertices, dtype=complex)
    xd[dofs] = vals
    rhs = load - A_raw @ xd
    rhs[dofs] = vals
    return _apply_dirichlet_matrix(A_raw, dofs), rhs


def assemble_system(spec: ProblemSpec, xi_current, workers: int = 1):
    """Linear system of the frozen problem at Re(xi_current): returns (A, rhs)."""
    return lift_dirichlet(spec, assemble_raw_operator(spec, xi_current, workers), _load(spec))


def _load(spec):
    if "load" not in spec._cache:
        spec._cache["load"] = assemble_load(spec)
    return spec._cache["load"]


def assemble_residual(spec: ProblemSpec, xi) -> np.ndarray:
    """F_i = a_eps(Re xi; xi, phi_i) - l(phi_i) on free rows, zero on Dirichlet rows."""
    x = _values(spec, xi)
    F = assemble_raw_operator(spec, x) @ x - _load(spec)
    F[spec.dirichlet_dofs] = 0.0
    return F


def assemble_jacobian(spec: ProblemSpec, xi) -> sp.csr_matrix:
    """Real 2N x 2N Jacobian of (Re F, Im F) with respect to (Re xi, Im xi).

    The coefficient depends on Re xi only, so the residual is not holomorphic
    and the derivative is taken on the real split.
    """
    x = _values(spec, xi)
    mesh = spec.mesh
    n = mesh.n_vertices
    A = assemble_raw_operator(spec, x)

    lam, w = triangle_rule(spec.quadrature_order)
    gx, gy = mesh.gradients
    area = mesh.signed_areas
    xt = x[mesh.triangles]
    dd = spec.coeff.db_hat_dxi(xt.real @ lam.T)  # (nt, nq) each
    # sum_q w_q b'(q) lambda_j(q), shape (nt, 3)
    t11 = (np.asarray(dd[0]) * w) @ lam
    t22 = (np.asarray(dd[1]) * w) @ lam
    sx = np.einsum("tk,tk->t", gx, xt)
    sy = np.einsum("tk,tk->t", gy, xt)
    local = area[:, None, None] * (
        (sx[:, None, None] * gx[:, :, None]) * t11[:, None, :]
        + (sy[:, None, None] * gy[:, :, None]) * t22[:, None, :]
    )
    T = _coo(mesh, local)
    AT = A + T
    J = sp.bmat([[AT.real, -A.imag], [AT.imag, A.real]], format="csr")
    dofs = spec.dirichlet_dofs
    return _apply_dirichlet_matrix(J, np.concatenate([dofs, dofs + n]))


def stiffness_matrix(mesh: Triangulation2D) -> sp.csr_matrix:
    """Identity-coefficient P1 stiffness matrix."""
    if "stiffness" not in mesh._geom:
        gx, gy = mesh.gradients
        local = mesh.signed_areas[:, None, None] * (gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :])
        mesh._geom["stiffness"] = _coo(mesh, local)
    return mesh._geom["stiffness"]


def mass_matrix(mesh: Triangulation2D) -> sp.csr_matrix:
    if "mass" not in mesh._geom:
        base = (np.ones((3, 3)) + np.eye(3)) / 12.0
        local = mesh.signed_areas[:, None, None] * base[None]
        mesh._geom["mass"] = _coo(mesh, local)
    return mesh._geom["mass"]


def l2_norm(mesh: Triangulation2D, z) -> float:
    z = np.asarray(z)
    return float(np.sqrt(max(np.real(np.vdot(z, mass_matrix(mesh) @ z)), 0.0)))


def h1_seminorm(mesh: Triangulation2D, z) -> float:
    z = np.asarray(z)
    return float(np.sqrt(max(np.real(np.vdot(z, stiffness_matrix(mesh) @ z)), 0.0)))


def v_norm(mesh: Triangulation2D, z) -> float:
    """Full H1 norm of a complex P1 field."""
    return float(np.hypot(l2_norm(mesh, z), h1_seminorm(mesh, z)))
