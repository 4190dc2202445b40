"""Numerical laboratory for square-based self-similar carpets.

Exact cell geometry, resistance networks with renormalization diagnostics,
shortest-path metrics on boundary skeletons, boundary-trace energies, carpet
family convergence reports, and random-walk probes, plus a CLI (`carpet`).
"""
from .geometry import (  # noqa: F401
    BudgetError,
    Contact,
    SpecError,
    Symmetry,
    SYMMETRIES,
    USCSpec,
    ValidationReport,
    apply_symmetry,
    boundary_ring,
    boundary_words,
    cell_adjacency,
    cell_map,
    complete_symmetry_orbit,
    estimate_c0,
    hausdorff_distance,
    load_spec,
    make_spec,
    match_ifs,
    parse_spec,
    render_svg,
    spec_from_dict,
    standard_carpet,
    validate_usc,
)

__version__ = "0.1.0"
