import math
import warnings

import numpy as np
import pytest

from kirigami.assembly import ComplexField, triangle_rule, v_norm
from kirigami.config import preset
from kirigami.experiments import solve_case
from kirigami.material import CutoffWarning, MaterialModel, rotation
from kirigami.mesh import Triangulation2D, generate_crossed_mesh
from kirigami.postprocess import (
    CSV_HEADER,
    GradientLeastSquares,
    RECON_ORDER,
    csv_text,
    export_csv,
    export_vtk,
    gamma_tensor,
    kinematic_residual,
    postprocess,
    reconstruct_gamma,
    reconstruct_yeff,
    vtk_text,
)

AUX = MaterialModel(-0.9, 0.9)


def parse_vtk(text):
    """Minimal legacy-VTK reader written for the tests."""
    tok = text.split("\n")
    assert tok[0] == "# vtk DataFile Version 3.0"
    assert tok[2] == "ASCII" and tok[3] == "DATASET UNSTRUCTURED_GRID"
    i = 4
    out = {}
    while i < len(tok):
        head = tok[i].split()
        if not head:
            i += 1
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([[float(v) for v in l.split()] for l in tok[i + 1:i + 1 + n]])
            i += 1 + n
        elif head[0] == "CELLS":
            n = int(head[1])
            rows = [[int(v) for v in l.split()] for l in tok[i + 1:i + 1 + n]]
            assert sum(len(r) for r in rows) == int(head[2])
            out["cells"] = np.array(rows)
            i += 1 + n
        elif head[0] == "CELL_TYPES":
            n = int(head[1])
            out["types"] = [int(v) for v in tok[i + 1:i + 1 + n]]
            i += 1 + n
        elif head[0] == "POINT_DATA":
            out["npd"] = int(head[1])
            i += 1
        elif head[0] == "SCALARS":
            assert tok[i + 1] == "LOOKUP_TABLE default"
            n = out["npd"]
            out[head[1]] = np.array([float(v) for v in tok[i + 2:i + 2 + n]])
            i += 2 + n
        elif head[0] == "VECTORS":
            n = out["npd"]
            out[head[1]] = np.array([[float(v) for v in l.split()] for l in tok[i + 1:i + 1 + n]])
            i += 1 + n
        else:
            raise AssertionError(f"unexpected line {tok[i]!r}")
    return out


def grad_target(mesh, u):
    """Quadrature-point copy of the (piecewise constant) gradient of a P1 field."""
    gx, gy = mesh.gradients
    ut = u[mesh.triangles]
    g = np.stack([(gx * ut).sum(1), (gy * ut).sum(1)], axis=1)
    nq = len(triangle_rule(RECON_ORDER)[1])
    return np.repeat(g[:, None, :], nq, axis=1)


def test_constant_xi_gives_zero_gamma():
    m = generate_crossed_mesh(6, 6, 1.5)
    g = reconstruct_gamma(m, AUX, np.full(m.n_vertices, 0.4))
    assert np.abs(g.values).max() <= 1e-14


def test_compatible_gamma_recovered():
    m = generate_crossed_mesh(10, 10, 1.5)
    rng = np.random.default_rng(0)
    star = rng.normal(size=m.n_vertices)
    anchor = 17
    got = reconstruct_gamma(m, AUX, np.zeros(m.n_vertices), anchor, target=grad_target(m, star)).values
    expected = star - star[anchor]
    assert np.abs(got - expected).max() <= 1e-10
    assert v_norm(m, got - expected) <= 1e-9 * v_norm(m, expected)


def test_incompatible_target_is_least_squares():
    m = generate_crossed_mesh(8, 8, 1.5)
    rng = np.random.default_rng(1)
    nq = len(triangle_rule(RECON_ORDER)[1])
    target = rng.normal(size=(m.n_triangles, nq, 2))
    ls = GradientLeastSquares(m, 3)
    u = ls.solve(target)
    assert np.abs(ls.normal_residual(u, target)).max() <= 1e-10
    # perturbing the minimizer in any free direction does not lower the misfit
    def misfit(v):
        g = grad_target(m, v)[:, 0, :]
        mean_t = target.mean(axis=1)
        return np.sum(m.signed_areas * np.sum((g - mean_t) ** 2, axis=1))
    base = misfit(u)
    for _ in range(5):
        d = rng.normal(size=m.n_vertices)
        d[3] = 0
        assert misfit(u + 1e-3 * d) >= base


def test_yeff_identity():
    L = 1.5
    m = generate_crossed_mesh(5, 5, L)
    zero = np.zeros(m.n_vertices)
    y = reconstruct_yeff(m, AUX, zero, zero, anchor_vertex=7).values
    assert np.allclose(y, m.vertices - m.vertices[7], atol=1e-12)


def test_yeff_rigid_rotation():
    m = generate_crossed_mesh(5, 5, 1.5)
    zero = np.zeros(m.n_vertices)
    y = reconstruct_yeff(m, AUX, zero, np.full(m.n_vertices, math.pi / 2), anchor_vertex=0).values
    expected = (m.vertices - m.vertices[0]) @ rotation(math.pi / 2).T
    assert np.allclose(y, expected, atol=1e-12)


def test_gauge_invariance_on_solution():
    res = solve_case(preset("non_auxetic", nx=16, ny=16))
    m, mat = res.spec.mesh, res.spec.material
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CutoffWarning)
        g0 = reconstruct_gamma(m, mat, res.xi, 0)
        g1 = reconstruct_gamma(m, mat, res.xi, 100)
        y0 = reconstruct_yeff(m, mat, res.xi, g0, 0)
        y1 = reconstruct_yeff(m, mat, res.xi, g1, 100)
    dg = g0.values - g1.values
    assert dg.max() - dg.min() <= 1e-10
    # gamma differs by a constant, so R(gamma) differs by a constant rotation
    c = float(np.mean(dg))
    rotated = y1.values @ rotation(c).T
    dy = y0.values - rotated
    assert np.ptp(dy, axis=0).max() <= 1e-10


def test_gamma_tensor_has_zero_diagonal():
    G = gamma_tensor(AUX, np.linspace(-0.5, 1.0, 12).reshape(3, 4)).matrices()
    assert G.shape == (3, 4, 2, 2)
    assert np.all(G[..., 0, 0] == 0) and np.all(G[..., 1, 1] == 0)
    assert np.allclose(G[..., 0, 1], AUX.gamma12(np.linspace(-0.5, 1.0, 12).reshape(3, 4)))


def test_cutoff_warning():
    m = generate_crossed_mesh(3, 3, 1.0)
    with pytest.warns(CutoffWarning):
        reconstruct_gamma(m, AUX, np.full(m.n_vertices, 2.0))


def test_auxetic_lateral_expansion_and_kinematics():
    cfg = preset("auxetic", nx=32, ny=32, dirichlet_ramp=(0.1, 0.5))
    res = solve_case(cfg)
    assert res.report.converged and res.report.iterations > 1
    m, mat = res.spec.mesh, res.spec.material
    xr = res.xi.values.real
    assert np.all(xr > 0)
    assert np.mean(mat.mu2(xr)) > 1
    gamma, yeff = postprocess(m, mat, res.xi)
    height = yeff.values[:, 1].max() - yeff.values[:, 1].min()
    assert height > cfg.L
    from kirigami.assembly import assemble_load
    kin = kinematic_residual(m, mat, res.spec.epsilon, res.xi, load=assemble_load(res.spec))
    assert np.linalg.norm(kin) <= cfg.r_tol * res.report.residual_history[0]


def test_kinematic_residual_matches_assembly_on_random_field():
    from kirigami.assembly import ProblemSpec, assemble_residual
    m = generate_crossed_mesh(8, 8, 1.5)
    mat = MaterialModel(-1.6, 0.4, xi_minus=-math.pi / 6)
    x = np.random.default_rng(2).uniform(-0.4, 1.0, m.n_vertices) + 0.1j
    spec = ProblemSpec(m, mat, epsilon=0.071)
    F = assemble_residual(spec, x)
    kin = kinematic_residual(m, mat, 0.071, x)
    assert np.allclose(F, kin, atol=1e-13)


def test_vtk_one_cell_zero_fields():
    m = generate_crossed_mesh(1, 1, 1.0)
    d = parse_vtk(vtk_text(m))
    assert d["points"].shape == (5, 3) and d["cells"].shape == (4, 4)
    assert d["types"] == [5] * 4
    for k in ("xi_re", "xi_im", "gamma"):
        assert np.all(d[k] == 0)
    assert np.all(d["yeff"] == 0)


def test_vtk_round_trip(tmp_path):
    m = generate_crossed_mesh(4, 3, 1.5)
    rng = np.random.default_rng(3)
    xi = ComplexField(m, rng.normal(size=m.n_vertices) + 1j * rng.normal(size=m.n_vertices))
    g = rng.normal(size=m.n_vertices)
    y = rng.normal(size=(m.n_vertices, 2))
    path = export_vtk(tmp_path / "f.vtk", m, xi, g, y)
    d = parse_vtk(path.read_text())
    assert np.array_equal(d["points"][:, :2], m.vertices)
    assert np.array_equal(d["cells"][:, 1:], m.triangles)
    assert np.array_equal(d["xi_re"], xi.real) and np.array_equal(d["xi_im"], xi.imag)
    assert np.array_equal(d["gamma"], g)
    assert np.array_equal(d["yeff"][:, :2], y)


def test_csv_layout(tmp_path):
    import csv
    m = generate_crossed_mesh(2, 2, 1.0)
    xi = np.arange(m.n_vertices) * (1 + 2j)
    path = export_csv(tmp_path / "f.csv", m, xi)
    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == CSV_HEADER == ["vertex", "x", "y", "xi_re", "xi_im", "gamma", "yeff_x", "yeff_y"]
    assert len(rows) == m.n_vertices + 1
    for i, r in enumerate(rows[1:]):
        assert int(r[0]) == i
        assert float(r[3]) == i and float(r[4]) == 2 * i


def test_export_rejects_mismatched_fields():
    m = generate_crossed_mesh(2, 2, 1.0)
    other = generate_crossed_mesh(3, 2, 1.0)
    with pytest.raises(ValueError):
        csv_text(m, ComplexField(other, np.zeros(other.n_vertices)))
    with pytest.raises(ValueError):
        vtk_text(m, np.zeros(3))


def test_disconnected_mesh_rejected():
    m = generate_crossed_mesh(1, 1, 1.0)
    verts = np.vstack([m.vertices, m.vertices + [3.0, 0.0]])
    tris = np.vstack([m.triangles, m.triangles + 5])
    edges = np.vstack([m.boundary_edges, m.boundary_edges + 5])
    two = Triangulation2D(verts, tris, edges, m.boundary_tags + m.boundary_tags)
    with pytest.raises(ValueError, match="connected components"):
        GradientLeastSquares(two)
    with pytest.raises(IndexError):
        GradientLeastSquares(m, 99)
