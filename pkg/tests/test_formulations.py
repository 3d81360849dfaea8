import pytest

from varden.formulations import (PRESET_NAMES, dissipation_bound, preset,
                                 predicted_properties,
                                 viscous_predicted_properties)
from varden.forms import FormulationParams


def test_preset_table_values():
    table = {
        "LSI-EMAC": (0.0, 1.0, 0.5, "none"),
        "MEMAC": (1.0, 1.0, 0.0, "zero"),
        "EDMAC": (0.5, 1.0, 0.25, "zero"),
        "SI-MEMAC": (1.0, 1.0, 0.0, "global_mean"),
        "SI-EDMAC": (0.5, 1.0, 0.25, "global_mean"),
        "SI-MEDMAC": (0.5, 1.0, 0.25, "global_mean"),
        "LSI-EC": (0.0, 0.5, 0.0, "none"),
        "Convective": (0.0, 0.0, 0.0, "none"),
    }
    for name, (ar, am, ap, rb) in table.items():
        p = preset(name)
        assert (p.params.alpha_rho, p.params.alpha_m, p.params.alpha_P) == \
            (ar, am, ap)
        assert p.params.rho_bar_mode == rb
    assert preset("SI-MEDMAC").requires_k_rho_le_k_P
    assert not preset("EDMAC").requires_k_rho_le_k_P


def test_preset_case_insensitive():
    assert preset("si-medmac").name == "SI-MEDMAC"
    assert preset("convective").name == "Convective"


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("EMAC-TURBO")


def test_si_medmac_all_properties():
    p = preset("SI-MEDMAC")
    pred = predicted_properties(p.params, k_rho=2, k_P=2)
    assert all(pred.as_dict().values())


def test_convective_only_shift_invariant():
    pred = predicted_properties(preset("Convective").params, k_rho=3, k_P=2)
    d = pred.as_dict()
    assert d.pop("shift_invariance") is True
    assert not any(d.values())


def test_memac_properties():
    pred = predicted_properties(preset("MEMAC").params, k_rho=3, k_P=2)
    assert pred.kinetic_energy and pred.momentum and pred.angular_momentum
    assert pred.mass
    assert not pred.shift_invariance
    assert not pred.squared_density_modified


def test_edmac_properties():
    pred = predicted_properties(preset("EDMAC").params, k_rho=3, k_P=2)
    assert pred.kinetic_energy and pred.momentum and pred.angular_momentum
    assert not pred.mass  # k_rho > k_P and alpha_rho != 1
    pred2 = predicted_properties(preset("EDMAC").params, k_rho=2, k_P=2)
    assert pred2.mass and pred2.squared_density_plain


def test_degree_condition_branches():
    fp = FormulationParams(0.7, 1.0, 0.0, "zero")
    assert predicted_properties(fp, k_rho=1, k_P=2).squared_density_plain
    assert not predicted_properties(fp, k_rho=2, k_P=2).squared_density_plain


def test_form_variant_conditions():
    # mixed-form KE condition: alpha_m - alpha_P = 1/2
    fp = FormulationParams(0.0, 1.0, 0.5, "none", form="mixed")
    assert predicted_properties(fp, 3, 2).kinetic_energy
    fp2 = FormulationParams(0.0, 1.0, 0.25, "none", form="mixed")
    assert not predicted_properties(fp2, 3, 2).kinetic_energy
    # velocity-form momentum condition: alpha_rho + alpha_m = 1
    fp3 = FormulationParams(0.5, 0.5, 0.25, "zero", form="velocity")
    assert predicted_properties(fp3, 3, 2).momentum
    # velocity-form KE: alpha_m - alpha_P + alpha_rho/2 = 1/2
    assert predicted_properties(fp3, 3, 2).kinetic_energy


def test_viscous_predicates():
    gp = viscous_predicted_properties((0.3, 0.0, 0.3, 1.0, 1.0))
    assert gp["dissipates_KE"] and gp["conserves_momentum"]
    assert not gp["conserves_angular_momentum"]
    zero = viscous_predicted_properties((0.0,) * 5)
    assert not zero["dissipates_KE"]
    assert zero["conserves_momentum"] and zero["conserves_angular_momentum"]
    ks = viscous_predicted_properties((0.0, 1.0, 0.0, 1.0, 1.0))
    assert not ks["dissipates_KE"]
    assert ks["conserves_momentum"] and ks["conserves_angular_momentum"]


def test_dissipation_condition_counterexample():
    bound = dissipation_bound(15.3e-6, 6.07, 0.0838)
    assert abs(bound - 5.1e-6) <= 0.02 * 5.1e-6
    kappa = 4.12e-5
    assert kappa > bound  # the condition is violated for this gas pair


def test_all_presets_listed():
    assert len(PRESET_NAMES) == 8
