"""geoflow: two-phase viscoelastoplastic flow stepper and inequality checks."""

from geoflow.grid import (
    BC_NEUMANN,
    BC_VELOCITY,
    BoundaryCondition,
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
)

__all__ = [
    "Grid",
    "BoundaryCondition",
    "BC_VELOCITY",
    "BC_NEUMANN",
    "ScalarField",
    "VectorField",
    "SymTensorField",
]
