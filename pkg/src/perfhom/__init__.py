"""Numerical laboratory for homogenization on periodically perforated domains."""

from .cellgeom import (
    DomainMesh,
    HoleSpec,
    PerforatedCell,
    build_cell_mesh,
    build_domain_mesh,
    default_cell,
)
from .cellsolve import (
    CorrectorSolution,
    EffectiveOperator,
    FluxCorrector,
    build_corrector_table,
    effective_eval,
    read_table,
    solve_corrector,
    solve_flux,
    write_table,
)
from .errors import PerfhomError
from .monotone import VectorField, audit_structure, make_paper_example

__version__ = "0.1.0"

__all__ = [
    "DomainMesh",
    "HoleSpec",
    "PerforatedCell",
    "build_cell_mesh",
    "build_domain_mesh",
    "default_cell",
    "CorrectorSolution",
    "EffectiveOperator",
    "FluxCorrector",
    "build_corrector_table",
    "effective_eval",
    "read_table",
    "solve_corrector",
    "solve_flux",
    "write_table",
    "PerfhomError",
    "VectorField",
    "audit_structure",
    "make_paper_example",
    "__version__",
]
