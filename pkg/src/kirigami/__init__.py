"""Finite-element solver for the slit-opening field of rhombi-slit kirigami."""
from .assembly import ComplexField, ConstantCoefficient, ProblemSpec
from .material import DiagTensor2, MaterialModel, PdeType, rotation
from .mesh import Triangulation2D, generate_crossed_mesh, mesh_statistics, read_mesh, write_mesh
from .postprocess import reconstruct_gamma, reconstruct_yeff
from .solver import NonlinearSettings, SolverReport, newton_solve, picard_solve, solve_linear

__all__ = [
    "ComplexField", "ConstantCoefficient", "ProblemSpec", "DiagTensor2", "MaterialModel", "PdeType",
    "rotation", "Triangulation2D", "generate_crossed_mesh", "mesh_statistics", "read_mesh", "write_mesh",
    "reconstruct_gamma", "reconstruct_yeff", "NonlinearSettings", "SolverReport", "newton_solve",
    "picard_solve", "solve_linear",
]
