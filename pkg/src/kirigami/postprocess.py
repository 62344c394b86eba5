"""Least-squares reconstruction of the panel rotation and effective deformation, plus export."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .assembly import ComplexField, _values, stiffness_matrix, triangle_rule
from .material import CutoffWarning, MaterialModel, rotation
from .mesh import Triangulation2D
from .solver import factorize

RECON_ORDER = 2
CSV_HEADER = ["vertex", "x", "y", "xi_re", "xi_im", "gamma", "yeff_x", "yeff_y"]


@dataclass
class ScalarField:
    mesh: Triangulation2D
    values: np.ndarray


@dataclass
class VectorField2:
    mesh: Triangulation2D
    values: np.ndarray  # (nv, 2)


@dataclass
class GammaTensorField:
    """Off-diagonal entries of Gamma at quadrature points, each (nt, nq); the diagonal is zero."""

    g12: np.ndarray
    g21: np.ndarray

    def matrices(self) -> np.ndarray:
        z = np.zeros_like(self.g12)
        return np.stack([np.stack([z, self.g12], -1), np.stack([self.g21, z], -1)], -2)


def _check_connected(mesh: Triangulation2D):
    t = mesh.triangles
    n = mesh.n_vertices
    adj = sp.coo_matrix((np.ones(t.size), (np.repeat(t[:, 0], 3), t.ravel())), shape=(n, n))
    ncomp, _ = connected_components(adj + adj.T, directed=False)
    if ncomp != 1:
        raise ValueError(f"mesh has {ncomp} connected components; the anchored normal equations are singular")


def gamma_tensor(material: MaterialModel, xi_real_q: np.ndarray, warn: bool = True) -> GammaTensorField:
    """Cut-off Gamma(xi) evaluated at quadrature values of Re(xi)."""
    clamped = material.clamp(xi_real_q)
    if warn and np.any(clamped != xi_real_q):
        warnings.warn("cut-off active: the reconstructed rotation uses clamped coefficients",
                      CutoffWarning, stacklevel=3)
    return GammaTensorField(material.gamma12(clamped), material.gamma21(clamped))


class GradientLeastSquares:
    """Minimiser of int |grad u - t|^2 over P1 fields with u(anchor) = 0.

    The anchored normal matrix is factorized once and reused for every target.
    """

    def __init__(self, mesh: Triangulation2D, anchor_vertex: int = 0):
        if not 0 <= anchor_vertex < mesh.n_vertices:
            raise IndexError(f"anchor vertex {anchor_vertex} out of range")
        _check_connected(mesh)
        self.mesh = mesh
        self.anchor = int(anchor_vertex)
        S = stiffness_matrix(mesh)
        keep = np.ones(mesh.n_vertices)
        keep[self.anchor] = 0.0
        P = sp.diags(keep)
        self.normal = S
        self._lu = factorize((P @ S @ P + sp.diags(1.0 - keep)).tocsc())

    def rhs(self, target: np.ndarray) -> np.ndarray:
        """b_i = int t . grad(phi_i) for a target given at quadrature points, shape (nt, nq, 2)."""
        mesh = self.mesh
        _, w = triangle_rule(RECON_ORDER)
        tbar = np.einsum("q,tqd->td", w, target) * mesh.signed_areas[:, None]
        gx, gy = mesh.gradients
        local = tbar[:, 0:1] * gx + tbar[:, 1:2] * gy
        b = np.zeros(mesh.n_vertices)
        np.add.at(b, mesh.triangles.ravel(), local.ravel())
        return b

    def solve(self, target: np.ndarray) -> np.ndarray:
        b = self.rhs(target)
        b[self.anchor] = 0.0
        return self._lu.solve(b)

    def normal_residual(self, u: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Residual of the normal equations on the free rows."""
        r = self.normal @ u - self.rhs(target)
        r[self.anchor] = 0.0
        return r


def _grad(mesh, u):
    gx, gy = mesh.gradients
    ut = np.asarray(u)[mesh.triangles]
    return np.stack([np.einsum("tk,tk->t", gx, ut), np.einsum("tk,tk->t", gy, ut)], axis=1)


def gamma_target(mesh: Triangulation2D, material: MaterialModel, xi, warn: bool = True) -> np.ndarray:
    """Gamma(Re xi) grad(Re xi) at quadrature points, shape (nt, nq, 2)."""
    xr = _values(mesh, xi).real
    lam, _ = triangle_rule(RECON_ORDER)
    G = gamma_tensor(material, xr[mesh.triangles] @ lam.T, warn)
    g = _grad(mesh, xr)
    return np.stack([G.g12 * g[:, None, 1], G.g21 * g[:, None, 0]], axis=-1)


def reconstruct_gamma(mesh: Triangulation2D, material: MaterialModel, xi, anchor_vertex: int = 0,
                      target=None) -> ScalarField:
    """Least-squares panel rotation gamma_h with gamma_h(anchor) = 0.

    ``target`` (quadrature values of the gradient field) bypasses the Gamma
    evaluation; used for verification.
    """
    if target is None:
        target = gamma_target(mesh, material, xi)
    ls = GradientLeastSquares(mesh, anchor_vertex)
    return ScalarField(mesh, ls.solve(target))


def yeff_target(mesh: Triangulation2D, material: MaterialModel, xi, gamma) -> np.ndarray:
    """R(gamma_h) A_eff(Re xi_h) at quadrature points, shape (nt, nq, 2, 2)."""
    xr = _values(mesh, xi).real
    g = np.asarray(getattr(gamma, "values", gamma), dtype=float)
    lam, _ = triangle_rule(RECON_ORDER)
    xq = xr[mesh.triangles] @ lam.T
    gq = g[mesh.triangles] @ lam.T
    a = material.a_eff(xq)
    R = rotation(gq)
    return R * np.stack([a.d11, a.d22], axis=-1)[..., None, :]


def reconstruct_yeff(mesh: Triangulation2D, material: MaterialModel, xi, gamma, anchor_vertex: int = 0,
                     target=None) -> VectorField2:
    """Least-squares effective deformation with y_eff(anchor) = (0, 0); both components share one factorization."""
    if target is None:
        target = yeff_target(mesh, material, xi, gamma)
    ls = GradientLeastSquares(mesh, anchor_vertex)
    comps = [ls.solve(target[..., k, :]) for k in range(2)]
    return VectorField2(mesh, np.column_stack(comps))


def kinematic_residual(mesh: Triangulation2D, material: MaterialModel, epsilon: float, xi,
                       load=None, dirichlet_dofs=None, quadrature_order: int = 2) -> np.ndarray:
    """Weak residual of -div((R(pi/2) Gamma(Re xi) + i eps) grad xi) with Gamma rebuilt here.

    Independent of the assembly coefficient path; used to guard against sign
    or transpose drift between the two.
    """
    x = _values(mesh, xi)
    lam, w = triangle_rule(quadrature_order)
    G = gamma_tensor(material, x.real[mesh.triangles] @ lam.T, warn=False).matrices()
    Bq = rotation(np.pi / 2) @ G  # (nt, nq, 2, 2)
    Bbar = np.einsum("q,tqij->tij", w, Bq) + 1j * epsilon * np.eye(2)
    g = _grad(mesh, x)
    flux = np.einsum("tij,tj->ti", Bbar, g) * mesh.signed_areas[:, None]
    gx, gy = mesh.gradients
    local = flux[:, 0:1] * gx + flux[:, 1:2] * gy
    r = np.zeros(mesh.n_vertices, dtype=complex)
    np.add.at(r, mesh.triangles.ravel(), local.ravel())
    if load is not None:
        r -= load
    if dirichlet_dofs is None:
        dirichlet_dofs = mesh.dirichlet_vertices
    r[dirichlet_dofs] = 0.0
    return r


def _zeros_if_none(mesh, v, shape=()):
    if v is None:
        return np.zeros((mesh.n_vertices,) + shape)
    return np.asarray(getattr(v, "values", v))


def _fields(mesh, xi, gamma, yeff):
    for f in (xi, gamma, yeff):
        m = getattr(f, "mesh", None)
        if m is not None and m is not mesh and not m.same_as(mesh):
            raise ValueError("all exported fields must share one mesh")
    x = np.asarray(getattr(xi, "values", xi), dtype=complex) if xi is not None else np.zeros(mesh.n_vertices, complex)
    g = _zeros_if_none(mesh, gamma)
    y = _zeros_if_none(mesh, yeff, (2,))
    if x.shape != (mesh.n_vertices,) or g.shape != (mesh.n_vertices,) or y.shape != (mesh.n_vertices, 2):
        raise ValueError("field sizes do not match the mesh")
    return x, g, y


def vtk_text(mesh: Triangulation2D, xi=None, gamma=None, yeff=None) -> str:
    x, g, y = _fields(mesh, xi, gamma, yeff)
    nv, nt = mesh.n_vertices, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", "kirigami slit-opening solution", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out += [f"{a:.17g} {b:.17g} 0" for a, b in mesh.vertices]
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {nt}")
    out += ["5"] * nt
    out.append(f"POINT_DATA {nv}")
    for name, vals in (("xi_re", x.real), ("xi_im", x.imag), ("gamma", g)):
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [f"{v:.17g}" for v in vals]
    out.append("VECTORS yeff double")
    out += [f"{a:.17g} {b:.17g} 0" for a, b in y]
    return "\n".join(out) + "\n"


def export_vtk(path, mesh: Triangulation2D, xi=None, gamma=None, yeff=None) -> Path:
    path = Path(path)
    path.write_text(vtk_text(mesh, xi, gamma, yeff), encoding="utf-8")
    return path


def csv_text(mesh: Triangulation2D, xi=None, gamma=None, yeff=None) -> str:
    x, g, y = _fields(mesh, xi, gamma, yeff)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i in range(mesh.n_vertices):
        vx, vy = mesh.vertices[i]
        writer.writerow([i] + [f"{v:.17g}" for v in (vx, vy, x[i].real, x[i].imag, g[i], y[i, 0], y[i, 1])])
    return buf.getvalue()


def export_csv(path, mesh: Triangulation2D, xi=None, gamma=None, yeff=None) -> Path:
    path = Path(path)
    path.write_text(csv_text(mesh, xi, gamma, yeff), encoding="utf-8")
    return path


def postprocess(mesh: Triangulation2D, material: MaterialModel, xi: ComplexField, anchor_vertex: int = 0):
    """Return (gamma, yeff) reconstructed from Re(xi)."""
    gamma = reconstruct_gamma(mesh, material, xi, anchor_vertex)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CutoffWarning)
        yeff = reconstruct_yeff(mesh, material, xi, gamma, anchor_vertex)
    return gamma, yeff
