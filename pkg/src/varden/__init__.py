"""Conservative Galerkin solver for 2D variable-density incompressible flow."""

__version__ = "0.1.0"
