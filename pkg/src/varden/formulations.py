"""Named formulations and the parameter conditions for discrete conservation.

Each formulation is a choice of (alpha_rho, alpha_m, alpha_P), a mean-density
mode and, for SI-MEDMAC, a density-degree constraint.  The predicates map
those parameters (plus polynomial degrees) to the set of quantities the
semi-discrete Galerkin method conserves.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .forms import FormulationParams

__all__ = [
    "FormulationPreset",
    "PropertyPrediction",
    "PRESET_NAMES",
    "preset",
    "predicted_properties",
    "viscous_predicted_properties",
    "dissipation_bound",
]


@dataclass(frozen=True)
class FormulationPreset:
    name: str
    params: FormulationParams
    requires_k_rho_le_k_P: bool = False


@dataclass(frozen=True)
class PropertyPrediction:
    kinetic_energy: bool
    momentum: bool
    angular_momentum: bool
    squared_density_modified: bool
    squared_density_plain: bool
    mass: bool
    shift_invariance: bool

    def as_dict(self) -> dict:
        return {
            "kinetic_energy": self.kinetic_energy,
            "momentum": self.momentum,
            "angular_momentum": self.angular_momentum,
            "squared_density_modified": self.squared_density_modified,
            "squared_density_plain": self.squared_density_plain,
            "mass": self.mass,
            "shift_invariance": self.shift_invariance,
        }


_PRESETS = {
    "LSI-EMAC": (0.0, 1.0, 0.5, "none", False),
    "MEMAC": (1.0, 1.0, 0.0, "zero", False),
    "EDMAC": (0.5, 1.0, 0.25, "zero", False),
    "SI-MEMAC": (1.0, 1.0, 0.0, "global_mean", False),
    "SI-EDMAC": (0.5, 1.0, 0.25, "global_mean", False),
    "SI-MEDMAC": (0.5, 1.0, 0.25, "global_mean", True),
    "LSI-EC": (0.0, 0.5, 0.0, "none", False),
    "CONVECTIVE": (0.0, 0.0, 0.0, "none", False),
}

PRESET_NAMES = tuple(
    n if n != "CONVECTIVE" else "Convective" for n in _PRESETS
)


def preset(name: str) -> FormulationPreset:
    """Look up a named formulation (case-insensitive)."""
    key = name.strip().upper()
    if key not in _PRESETS:
        raise KeyError(
            f"unknown formulation {name!r}; known: {', '.join(PRESET_NAMES)}"
        )
    a_rho, a_m, a_p, rb, constraint = _PRESETS[key]
    canonical = "Convective" if key == "CONVECTIVE" else key
    return FormulationPreset(
        canonical,
        FormulationParams(alpha_rho=a_rho, alpha_m=a_m, alpha_P=a_p,
                          rho_bar_mode=rb),
        constraint,
    )


def _close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def predicted_properties(params: FormulationParams, k_rho: int,
                         k_P: int) -> PropertyPrediction:
    """Conservation predictions for the given parameters and degrees.

    The kinetic-energy and momentum conditions depend on which equation form
    (momentum / velocity / mixed) is discretized; the density-equation
    properties do not.
    """
    a_rho, a_m, a_p = params.alpha_rho, params.alpha_m, params.alpha_P
    mean_mode = params.rho_bar_mode == "global_mean"

    if params.form == "momentum":
        ke = _close(a_m - a_p - a_rho / 2, 0.5)
        mom = _close(a_m, 1.0)
    elif params.form == "velocity":
        ke = _close(a_m - a_p + a_rho / 2, 0.5)
        mom = _close(a_rho + a_m, 1.0)
    elif params.form == "mixed":
        ke = _close(a_m - a_p, 0.5)
        mom = _close(a_rho / 2 + a_m, 1.0)
    else:
        raise ValueError(f"unknown form {params.form!r}")

    mass = k_rho <= k_P or _close(a_rho, 1.0)
    sq_mod = _close(a_rho, 0.5) and mean_mode
    sq_plain = (_close(a_rho, 0.5) and k_rho <= k_P) or (2 * k_rho <= k_P)
    shift = _close(a_rho, 0.0) or mean_mode
    return PropertyPrediction(
        kinetic_energy=ke,
        momentum=mom,
        angular_momentum=mom,
        squared_density_modified=sq_mod,
        squared_density_plain=sq_plain,
        mass=mass,
        shift_invariance=shift,
    )


def viscous_predicted_properties(A) -> dict:
    """Theorem conditions on the five-parameter viscous momentum flux."""
    a1, a2, a3, a4, a5 = A
    return {
        "dissipates_KE": _close(a1 + a2 - a3, 0.0) and _close(a5 - 0.5 * a4, 0.5),
        "conserves_momentum": _close(a1 - a3, 0.0) and _close(a5 - a4, 0.0),
        "conserves_angular_momentum": (
            _close(a1 - a3, 0.0) and _close(a5 - a4, 0.0) and _close(a2, a4)
        ),
    }


def dissipation_bound(mu: float, rho_max: float, rho_min: float) -> float:
    """Upper bound on the mass diffusivity for guaranteed KE dissipation."""
    return 2.0 * mu / (rho_max - rho_min)
