"""Orchestration of single runs, mesh-refinement studies and epsilon sweeps."""
from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .assembly import (
    ConstantCoefficient,
    ProblemSpec,
    assemble_load,
    l2_norm,
    quadrature_points,
    quadrature_values,
    triangle_rule,
    v_norm,
)
from .config import RunConfig
from .material import CutoffWarning, MaterialModel, PdeType
from .mesh import Triangulation2D, generate_crossed_mesh, read_mesh
from .postprocess import csv_text, kinematic_residual, postprocess, vtk_text
from .solver import NonlinearSettings, SingularMatrixError, SolverReport, solve

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2
REFERENCE_TIGHTENING = 1e-2


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("KIRIGAMI_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    """Ordered map, run concurrently up to KIRIGAMI_THREADS workers."""
    items = list(items)
    workers = min(max_threads(), max(1, len(items)))
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def build_mesh(cfg: RunConfig, nx=None, ny=None) -> Triangulation2D:
    if cfg.mesh_file:
        return read_mesh(Path(cfg.mesh_file).read_text(encoding="utf-8"))
    return generate_crossed_mesh(nx or cfg.nx, ny or cfg.ny, cfg.L)


def build_material(cfg: RunConfig) -> MaterialModel:
    return MaterialModel(cfg.alpha, cfg.beta, cfg.xi_minus, cfg.xi_plus)


def build_problem(cfg: RunConfig, mesh=None, material=None, epsilon=None) -> ProblemSpec:
    mesh = mesh if mesh is not None else build_mesh(cfg)
    g = float(cfg.neumann)
    return ProblemSpec(
        mesh=mesh,
        material=material if material is not None else build_material(cfg),
        epsilon=cfg.epsilon if epsilon is None else epsilon,
        dirichlet_data=cfg.dirichlet.function(cfg.L),
        neumann_data=lambda x, y: np.full(np.shape(x), g),
        quadrature_order=cfg.quadrature_order,
    )


def settings_for(cfg: RunConfig) -> NonlinearSettings:
    return NonlinearSettings(r_tol=cfg.r_tol, a_tol=cfg.a_tol, max_iterations=cfg.max_iterations)


def type_census(spec: ProblemSpec, xi) -> dict:
    """Number of quadrature points per PDE type of the frozen operator at Re(xi)."""
    xq = quadrature_values(spec.mesh, np.asarray(getattr(xi, "values", xi)).real, spec.quadrature_order)
    return spec.material.type_census(xq)


@dataclass
class RunResult:
    spec: ProblemSpec
    xi: object
    report: SolverReport
    gamma: object = None
    yeff: object = None
    census: dict = None
    error: str = ""


def solve_case(cfg: RunConfig, mesh=None, epsilon=None, method=None) -> RunResult:
    spec = build_problem(cfg, mesh=mesh, epsilon=epsilon)
    xi, report = solve(spec, settings_for(cfg), method or cfg.solver)
    return RunResult(spec, xi, report, census=type_census(spec, xi))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def report_text(cfg: RunConfig, res: RunResult) -> str:
    spec, rep = res.spec, res.report
    mesh, mat = spec.mesh, spec.material
    rows = [
        ("case", cfg.case), ("alpha", cfg.alpha), ("beta", cfg.beta), ("epsilon", spec.epsilon),
        ("xi_minus", mat.xi_minus), ("xi_plus", mat.xi_plus), ("M", mat.M), ("K", mat.K),
        ("nx", cfg.nx), ("ny", cfg.ny), ("L", cfg.L), ("h", mesh.h), ("dofs", mesh.n_vertices),
        ("triangles", mesh.n_triangles), ("dirichlet", str(cfg.dirichlet)), ("neumann", float(cfg.neumann)),
        ("solver", rep.method or cfg.solver), ("r_tol", cfg.r_tol), ("a_tol", cfg.a_tol),
        ("max_iterations", cfg.max_iterations), ("quadrature_order", cfg.quadrature_order),
    ]
    if res.error:
        rows.append(("error", res.error))
    rows += [
        ("converged", str(rep.converged).lower()), ("iterations", rep.iterations),
        ("picard_fallbacks", rep.picard_fallbacks),
        ("final_relative_residual", float(rep.final_relative_residual)),
        ("residual_history", ", ".join(f"{r:.6e}" for r in rep.residual_history)),
    ]
    if res.xi is not None:
        x = res.xi.values
        census = res.census or type_census(spec, x)
        total = max(sum(census.values()), 1)
        for t in PdeType:
            rows.append((f"census_{t.value.lower()}", census[t]))
        for t in PdeType:
            rows.append((f"census_{t.value.lower()}_fraction", census[t] / total))
        kin = kinematic_residual(mesh, mat, spec.epsilon, x, load=assemble_load(spec),
                                 quadrature_order=spec.quadrature_order)
        r0 = rep.residual_history[0] if rep.residual_history else 0.0
        rows += [
            ("cutoff_active", str(bool(np.any((x.real < mat.xi_minus) | (x.real > mat.xi_plus)))).lower()),
            ("xi_re_min", float(x.real.min())), ("xi_re_max", float(x.real.max())),
            ("xi_v_norm", v_norm(mesh, x)), ("xi_im_l2", l2_norm(mesh, x.imag)),
            ("kinematic_residual_relative", float(np.linalg.norm(kin) / r0) if r0 > 0 else 0.0),
        ]
    return "".join(f"{k}: {_fmt(v)}\n" for k, v in rows)


def run(cfg: RunConfig) -> int:
    """Solve one configuration and write <prefix>.vtk, <prefix>.csv and <prefix>.report.txt."""
    try:
        cfg.validate()
        mesh = build_mesh(cfg)
        build_material(cfg)
    except (ValueError, OSError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID

    prefix = Path(cfg.output_prefix)
    if prefix.parent and not prefix.parent.exists():
        prefix.parent.mkdir(parents=True, exist_ok=True)
    try:
        res = solve_case(cfg, mesh=mesh)
    except SingularMatrixError as exc:
        spec = build_problem(cfg, mesh=mesh)
        res = RunResult(spec, None, SolverReport(method=cfg.solver), error=str(exc))
    log.info("%s: converged=%s after %d iterations (%.2f s)", cfg.case, res.report.converged,
             res.report.iterations, res.report.wall_time)

    if res.xi is not None:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", CutoffWarning)
            res.gamma, res.yeff = postprocess(res.spec.mesh, res.spec.material, res.xi)
        for w in caught:
            log.warning("%s", w.message)
        Path(f"{prefix}.vtk").write_text(vtk_text(mesh, res.xi, res.gamma, res.yeff), encoding="utf-8")
        Path(f"{prefix}.csv").write_text(csv_text(mesh, res.xi, res.gamma, res.yeff), encoding="utf-8")
    Path(f"{prefix}.report.txt").write_text(report_text(cfg, res), encoding="utf-8")
    return EXIT_OK if res.report.converged else EXIT_NOT_CONVERGED


# manufactured frozen-coefficient problem: u = sin(pi x / L) sin(pi y / L),
# coefficient diag(a, b) + i eps, Dirichlet u = 0 on x = 0, L, Neumann flux on y = 0, L
MMS_A, MMS_B = 1.0, 2.0


def manufactured_problem(mesh: Triangulation2D, L: float, a=MMS_A, b=MMS_B, epsilon=0.0, quadrature_order=2):
    k = np.pi / L
    ca, cb = a + 1j * epsilon, b + 1j * epsilon

    def exact(x, y):
        return np.sin(k * x) * np.sin(k * y)

    def source(x, y):
        return (ca + cb) * k * k * np.sin(k * x) * np.sin(k * y)

    def flux(x, y):
        # (cb du/dy) n_y on y = 0 (n_y = -1) and y = L (n_y = 1) coincide
        return -cb * k * np.sin(k * x)

    spec = ProblemSpec(
        mesh=mesh, material=None, epsilon=epsilon,
        dirichlet_data=lambda x, y: np.zeros(np.shape(x)), neumann_data=flux,
        quadrature_order=quadrature_order, coefficient=ConstantCoefficient(a, b), source=source,
    )
    return spec, exact


def l2_error(mesh: Triangulation2D, values, exact) -> float:
    lam, w = triangle_rule(5)
    pts = quadrature_points(mesh, 5)
    uh = np.asarray(values)[mesh.triangles] @ lam.T
    diff = np.abs(uh - exact(pts[..., 0], pts[..., 1])) ** 2
    return float(np.sqrt(np.sum(mesh.signed_areas * (diff @ w))))


def interpolate_p1(mesh: Triangulation2D, values, points, k: int = 12) -> np.ndarray:
    """Evaluate a P1 field at arbitrary points inside the mesh."""
    values = np.asarray(values)
    points = np.asarray(points, dtype=float)
    p = mesh.vertices[mesh.triangles]
    tree = cKDTree(p.mean(axis=1))
    k = min(k, mesh.n_triangles)
    _, cand = tree.query(points, k=k)
    cand = cand.reshape(len(points), -1)
    out = np.full(len(points), np.nan, dtype=values.dtype if np.iscomplexobj(values) else float)
    todo = np.ones(len(points), dtype=bool)
    for j in range(cand.shape[1]):
        t = cand[todo, j]
        q = points[todo]
        a, b, c = p[t, 0], p[t, 1], p[t, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        l1 = ((q[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (q[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (q[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (q[:, 0] - a[:, 0])) / det
        l0 = 1 - l1 - l2
        inside = (l0 >= -1e-10) & (l1 >= -1e-10) & (l2 >= -1e-10)
        idx = np.flatnonzero(todo)[inside]
        tri = mesh.triangles[t[inside]]
        out[idx] = l0[inside] * values[tri[:, 0]] + l1[inside] * values[tri[:, 1]] + l2[inside] * values[tri[:, 2]]
        todo[idx] = False
        if not todo.any():
            break
    if todo.any():
        raise ValueError(f"{int(todo.sum())} points could not be located in the mesh")
    return out


def _rate(a, b):
    return float(np.log2(a / b)) if a > 0 and b > 0 else float("nan")


def convergence_study(cfg: RunConfig, levels: int | None = None, sizes=None) -> list[dict]:
    """Mesh-refinement table over nx = base_n * 2**k.

    Manufactured runs report errors against the exact solution; other runs
    report Cauchy differences between consecutive levels.
    """
    levels = cfg.levels if levels is None else levels
    if sizes is None:
        if levels < 3:
            raise ValueError("a convergence study needs at least 3 levels")
        sizes = [cfg.base_n * 2 ** k for k in range(levels)]

    def one(n):
        mesh = generate_crossed_mesh(n, n, cfg.L)
        if cfg.manufactured:
            spec, exact = manufactured_problem(mesh, cfg.L, epsilon=cfg.epsilon, quadrature_order=cfg.quadrature_order)
        else:
            spec, exact = build_problem(cfg, mesh=mesh), None
        xi, rep = solve(spec, settings_for(cfg), cfg.solver)
        row = {"nx": n, "h": mesh.h, "dofs": mesh.n_vertices, "iterations": rep.iterations,
               "converged": rep.converged, "xi": xi.values, "mesh": mesh}
        if exact is not None:
            row["l2_error"] = l2_error(mesh, xi.values, exact)
        if cfg.compare_picard:
            other = "picard" if cfg.solver == "newton" else "newton"
            # the reference run is tightened so its stopping error does not mask the limit comparison
            s = settings_for(cfg)
            s.r_tol = cfg.r_tol * REFERENCE_TIGHTENING
            s.max_iterations = max(s.max_iterations, 500)
            xo, _ = solve(spec, s, other)
            row["picard_newton_v_diff"] = v_norm(mesh, xo.values - xi.values) / max(v_norm(mesh, xi.values), 1e-300)
        if not rep.converged:
            raise RuntimeError(f"solver did not converge at nx = {n}")
        return row

    rows = _map(one, sizes)
    for k in range(1, len(rows)):
        fine, coarse = rows[k], rows[k - 1]
        ci = interpolate_p1(coarse["mesh"], coarse["xi"], fine["mesh"].vertices)
        d = fine["xi"] - ci
        fine["cauchy_l2"] = l2_norm(fine["mesh"], d)
        fine["cauchy_v"] = v_norm(fine["mesh"], d)
        if k >= 2:
            fine["cauchy_l2_rate"] = _rate(coarse["cauchy_l2"], fine["cauchy_l2"])
            fine["cauchy_v_rate"] = _rate(coarse["cauchy_v"], fine["cauchy_v"])
        if "l2_error" in fine:
            fine["l2_rate"] = _rate(coarse["l2_error"], fine["l2_error"])
    for r in rows:
        r.pop("xi")
        r.pop("mesh")
    return rows


def epsilon_sweep(cfg: RunConfig, epsilons) -> list[dict]:
    """One row per epsilon, in input order; failures are recorded and the sweep continues."""
    epsilons = list(epsilons)
    if not epsilons:
        return []
    mesh = build_mesh(cfg)
    material = build_material(cfg)

    def one(eps):
        row = {"epsilon": eps, "converged": False, "iterations": 0,
               "v_norm": float("nan"), "imag_l2": float("nan"), "error": ""}
        try:
            spec = build_problem(cfg, mesh=mesh, material=material, epsilon=eps)
            xi, rep = solve(spec, settings_for(cfg), cfg.solver)
            row.update(converged=rep.converged, iterations=rep.iterations,
                       v_norm=v_norm(mesh, xi.values), imag_l2=l2_norm(mesh, xi.values.imag))
        except (SingularMatrixError, ValueError) as exc:
            row["error"] = str(exc)
        return row

    return _map(one, epsilons)


def table_text(rows: list[dict], columns=None) -> str:
    """Comma-separated table with a header line."""
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(c, "")) for c in columns))
    return "\n".join(lines) + "\n"


STUDY_COLUMNS = ["nx", "h", "dofs", "iterations", "converged", "l2_error", "l2_rate",
                 "cauchy_l2", "cauchy_l2_rate", "cauchy_v", "cauchy_v_rate", "picard_newton_v_diff"]
SWEEP_COLUMNS = ["epsilon", "converged", "iterations", "v_norm", "imag_l2", "error"]

