"""Command-line entry point, configuration and output writing.

Subcommands: run, verify, convergence, gresho, viscous-compare,
lock-exchange, mesh dump.  Exit codes: 0 ok, 2 configuration error, 3 solver
failure, 4 verification failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import bench
from .diagnostics import CSV_HEADER, report
from .fem import Field, build_space, l2_error
from .formulations import PRESET_NAMES, predicted_properties, preset
from .forms import FormulationParams, SystemState, ViscousParams
from .mesh import build_rect_mesh, read_mesh_text, write_mesh_text, \
    apply_periodic
from .quadrature import quadrature_rule
from .stepping import (NewtonConfig, NewtonFailure, StepControl, advance,
                       replay_density_twin)

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "main"]

CASES = ("manufactured", "gresho", "smooth_gresho", "lock_exchange")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str = "gresho"
    formulation: str = ""          # preset name; empty = explicit alphas
    alpha_rho: float = 0.0
    alpha_m: float = 1.0
    alpha_P: float = 0.5
    rho_bar: str = "none"
    form: str = "momentum"
    energy_mode: str = "u_n_dot_u_np1"
    ke_pairing: str = "projected"
    k_rho: int = 3
    k_u: int = 3
    k_P: int = 2
    cells: int = 16
    diagonal_rule: str = "alternating"
    mesh_file: str = ""
    viscous: str = ""              # GP | KS | zero; empty = case default
    A1: float = 0.0
    A2: float = 0.0
    A3: float = 0.0
    A4: float = 0.0
    A5: float = 0.0
    use_A: bool = False
    flux_form: str = "divergence_weak"
    kappa: float = -1.0            # < 0: case default
    mu: float = -1.0
    cfl: float = -1.0
    s_min: float = 0.98
    s_max: float = 1.02
    dt_mode: str = ""              # constant_dt | adaptive; empty = case default
    dt0: float = -1.0
    t_end: float = -1.0
    max_steps: int = 0
    newton_rel_tol: float = 1e-12
    newton_abs_tol: float = 1e-14
    newton_max_iter: int = 30
    jacobian_reuse: str = "auto"
    out_dir: str = "out"
    field_stride: int = 0
    vortex_center: tuple = (0.0, 0.0)


_BOOL_KEYS = {"use_A"}
_INT_KEYS = {"k_rho", "k_u", "k_P", "cells", "max_steps", "field_stride",
             "newton_max_iter"}
_FLOAT_KEYS = {"alpha_rho", "alpha_m", "alpha_P", "A1", "A2", "A3", "A4",
               "A5", "kappa", "mu", "cfl", "s_min", "s_max", "dt0", "t_end",
               "newton_rel_tol", "newton_abs_tol"}


def parse_config(text: str) -> RunConfig:
    """Parse 'key = value' lines; '#' starts a comment; unknown keys rejected."""
    known = {f.name for f in fields(RunConfig)}
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                setattr(cfg, key, int(value))
            elif key in _FLOAT_KEYS:
                setattr(cfg, key, float(value))
            elif key in _BOOL_KEYS:
                setattr(cfg, key, value.lower() in ("1", "true", "yes"))
            elif key == "vortex_center":
                x, y = value.split(",")
                cfg.vortex_center = (float(x), float(y))
            else:
                setattr(cfg, key, value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.case not in CASES:
        raise ConfigError(f"unknown case {cfg.case!r}; choose from {CASES}")
    for key in ("k_rho", "k_u", "k_P"):
        if getattr(cfg, key) not in (1, 2, 3):
            raise ConfigError(f"{key} must be 1, 2 or 3")
    if not cfg.k_P < cfg.k_u:
        raise ConfigError(
            f"inf-sup ordering requires k_P < k_u (got k_P={cfg.k_P}, "
            f"k_u={cfg.k_u})")
    if cfg.formulation:
        try:
            pre = preset(cfg.formulation)
        except KeyError as exc:
            raise ConfigError(str(exc))
        if pre.requires_k_rho_le_k_P and cfg.k_rho > cfg.k_P:
            cfg.k_rho = cfg.k_P  # preset constraint: force k_rho <= k_P
    if cfg.dt_mode and cfg.dt_mode not in ("constant_dt", "adaptive"):
        raise ConfigError(f"unknown dt_mode {cfg.dt_mode!r}")
    if cfg.dt_mode == "adaptive" and cfg.cfl <= 0:
        raise ConfigError("adaptive stepping needs the key 'cfl'")


def formulation_from_config(cfg: RunConfig) -> FormulationParams:
    if cfg.formulation:
        params = preset(cfg.formulation).params
    else:
        params = FormulationParams(cfg.alpha_rho, cfg.alpha_m, cfg.alpha_P,
                                   cfg.rho_bar)
    return replace(params, form=cfg.form,
                   midpoint_energy_mode=cfg.energy_mode,
                   ke_pairing=cfg.ke_pairing)


def viscous_from_config(cfg: RunConfig, case) -> ViscousParams:
    vp = case.viscous
    kappa = cfg.kappa if cfg.kappa >= 0 else vp.kappa
    mu = cfg.mu if cfg.mu >= 0 else vp.mu
    if cfg.use_A:
        return ViscousParams(preset=None, A=(cfg.A1, cfg.A2, cfg.A3, cfg.A4,
                                             cfg.A5),
                             kappa=kappa, mu=mu, mu_mode=vp.mu_mode,
                             flux_form="literal")
    pre = cfg.viscous if cfg.viscous else (vp.preset or "zero")
    return ViscousParams(preset=pre, kappa=kappa, mu=mu, mu_mode=vp.mu_mode,
                         flux_form=cfg.flux_form)


def make_case(cfg: RunConfig):
    if cfg.case == "manufactured":
        return bench.manufactured_case()
    if cfg.case == "gresho":
        return bench.gresho_case(center=cfg.vortex_center)
    if cfg.case == "smooth_gresho":
        return bench.smooth_gresho_case(center=cfg.vortex_center)
    return bench.lock_exchange_case(max(cfg.cells, 8))


def setup_state(case, cfg: RunConfig):
    if cfg.mesh_file:
        mesh = read_mesh_text(cfg.mesh_file)
        if case.periodic:
            mesh = apply_periodic(mesh, case.periodic)
    elif case.name == "lock_exchange":
        mesh = case.build_mesh(max(cfg.cells // case.aspect[0], 8)
                               if cfg.cells >= 8 * case.aspect[0]
                               else max(cfg.cells, 8))
    else:
        mesh = case.build_mesh(cfg.cells, cfg.diagonal_rule)
    Ms = build_space(mesh, cfg.k_rho, 1)
    Vs = build_space(mesh, cfg.k_u, 2)
    Qs = build_space(mesh, cfg.k_P, 1)
    state = SystemState(Ms.interpolate(case.rho0), Vs.interpolate(case.u0),
                        Qs.zero_field())
    return state, case.velocity_bc()


def control_from_config(cfg: RunConfig, case) -> StepControl:
    ctrl = case.control
    return StepControl(
        cfl=cfg.cfl if cfg.cfl > 0 else ctrl.cfl,
        s_min=cfg.s_min, s_max=cfg.s_max,
        dt0=cfg.dt0 if cfg.dt0 > 0 else ctrl.dt0,
        mode=cfg.dt_mode if cfg.dt_mode else ctrl.mode,
        velocity_scale=ctrl.velocity_scale)


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------

def write_report_csv(path, reports) -> None:
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for rep in reports:
            f.write(rep.to_csv_row() + "\n")


def write_vtk(path, state: SystemState) -> None:
    """Legacy ASCII VTK with vertex-sampled rho, u and P."""
    mesh = state.rho.space.mesh
    rho_v = state.rho.coeffs[state.rho.space.vertex_nodes]
    u_v = state.u.coeffs.reshape(-1, 2)[state.u.space.vertex_nodes]
    P_v = state.P_mod.coeffs[state.P_mod.space.vertex_nodes]
    nv, nk = mesh.num_vertices, mesh.num_triangles
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\nvarden fields\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x} {y} 0.0\n")
        f.write(f"CELLS {nk} {4 * nk}\n")
        for a, b, c in mesh.triangles:
            f.write(f"3 {a} {b} {c}\n")
        f.write(f"CELL_TYPES {nk}\n")
        f.write("5\n" * nk)
        f.write(f"POINT_DATA {nv}\n")
        f.write("SCALARS rho double 1\nLOOKUP_TABLE default\n")
        for v in rho_v:
            f.write(f"{v}\n")
        f.write("SCALARS P double 1\nLOOKUP_TABLE default\n")
        for v in P_v:
            f.write(f"{v}\n")
        f.write("VECTORS velocity double\n")
        for vx, vy in u_v:
            f.write(f"{vx} {vy} 0.0\n")


def conservation_drifts(reports) -> dict:
    """Relative drifts of the ledger quantities over a report series."""
    def series(name):
        return np.array([getattr(r, name) for r in reports])

    def rel(name, scale=None):
        q = series(name)
        s = scale if scale is not None else max(abs(q[0]), 1e-30)
        return float(np.abs(q - q[0]).max() / s)

    ke0 = reports[0].kinetic_energy
    mom_scale = max(np.sqrt(2 * max(ke0, 0.0) * max(reports[0].mass, 0.0)),
                    1e-30)
    mx = np.array([r.momentum[0] for r in reports])
    my = np.array([r.momentum[1] for r in reports])
    return {
        "kinetic_energy": rel("kinetic_energy"),
        "mass": rel("mass"),
        "squared_density_modified": rel("modified_squared_density"),
        "squared_density_plain": rel("squared_density"),
        "momentum": float(max(np.abs(mx - mx[0]).max(),
                              np.abs(my - my[0]).max()) / mom_scale),
        "angular_momentum": rel("angular_momentum", scale=mom_scale),
    }


def shift_invariance_drift(state0, velocity_log, dts, fp, kappa,
                           shift=100.0) -> float:
    base = replay_density_twin(state0.rho, velocity_log, dts, fp, kappa)
    twin0 = Field(state0.rho.space, state0.rho.coeffs + shift)
    twin = replay_density_twin(twin0, velocity_log, dts, fp, kappa)
    num = max(np.abs(t.coeffs - shift - b.coeffs).max()
              for t, b in zip(twin, base))
    return float(num / max(np.abs(state0.rho.coeffs).max(), 1e-30))


def write_summary(path, cfg, fp, drifts, predicted, si_drift=None,
                  extra=None) -> None:
    lines = [f"case = {cfg.case}"]
    if cfg.formulation:
        lines.append(f"formulation = {cfg.formulation}")
    lines.append(f"alphas = ({fp.alpha_rho}, {fp.alpha_m}, {fp.alpha_P}), "
                 f"rho_bar = {fp.rho_bar_mode}, form = {fp.form}")
    lines.append(f"degrees = (k_rho={cfg.k_rho}, k_u={cfg.k_u}, "
                 f"k_P={cfg.k_P})")
    lines.append("")
    lines.append(f"{'property':28s} {'predicted':>9s} {'measured drift':>15s}")
    checks = {
        "kinetic_energy": drifts.get("kinetic_energy"),
        "mass": drifts.get("mass"),
        "squared_density_modified": drifts.get("squared_density_modified"),
        "squared_density_plain": drifts.get("squared_density_plain"),
        "momentum": drifts.get("momentum"),
        "angular_momentum": drifts.get("angular_momentum"),
        "shift_invariance": si_drift,
    }
    pred = predicted.as_dict()
    for name, val in checks.items():
        mark = "conserved" if pred[name] else "drifts"
        shown = "n/a" if val is None else f"{val:.3e}"
        lines.append(f"{name:28s} {mark:>9s} {shown:>15s}")
    if extra:
        lines.append("")
        lines.extend(extra)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def run(cfg: RunConfig) -> int:
    """Execute one configured simulation; writes report.csv and summary.txt."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    case = make_case(cfg)
    fp = formulation_from_config(cfg)
    vp = viscous_from_config(cfg, case)
    state, bc = setup_state(case, cfg)
    ctrl = control_from_config(cfg, case)
    ncfg = NewtonConfig(rel_tol=cfg.newton_rel_tol,
                        abs_tol=cfg.newton_abs_tol,
                        max_iter=cfg.newton_max_iter,
                        reuse_jacobian=cfg.jacobian_reuse)
    t_end = cfg.t_end if cfg.t_end > 0 else case.T
    forcing = case.forcing
    log = [] if cfg.case in ("gresho", "smooth_gresho") else None

    stride_count = [0]

    def on_step(st, rep):
        stride_count[0] += 1
        if cfg.field_stride and stride_count[0] % cfg.field_stride == 0:
            write_vtk(os.path.join(
                cfg.out_dir, f"fields_{stride_count[0]:04d}.vtk"), st)

    try:
        final, reports = advance(
            state, t_end, fp, vp, forcing, ctrl, ncfg, bc,
            max_steps=cfg.max_steps or None, velocity_log=log,
            on_step=on_step)
    except NewtonFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    write_report_csv(os.path.join(cfg.out_dir, "report.csv"), reports)
    if cfg.field_stride:
        write_vtk(os.path.join(cfg.out_dir, "fields_final.vtk"), final)

    drifts = conservation_drifts(reports)
    predicted = predicted_properties(fp, cfg.k_rho, cfg.k_P)
    si = None
    if log is not None and len(reports) > 1:
        dts = [r.dt for r in reports[1:]]
        si = shift_invariance_drift(state, log, dts, fp, vp.kappa)
    write_summary(os.path.join(cfg.out_dir, "summary.txt"), cfg, fp, drifts,
                  predicted, si)
    return 0


def verify(preset_name: str, cells: int = 12, steps: int = 80,
           out_dir: str = "out", tol: float = 1e-9) -> int:
    """Run the conservation check for one formulation preset.

    Exact discrete conservation holds on any mesh, so a small torus and a
    few hundred steps give a decisive verdict.
    """
    cfg = RunConfig(case="gresho", formulation=preset_name, cells=cells,
                    max_steps=steps, out_dir=out_dir,
                    newton_rel_tol=1e-13, t_end=1e9)
    validate_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    case = make_case(cfg)
    fp = formulation_from_config(cfg)
    vp = ViscousParams()
    state, _ = setup_state(case, cfg)
    log = []
    ncfg = NewtonConfig(rel_tol=1e-13, reuse_jacobian="auto")
    try:
        _, reports = advance(state, 1e9, fp, vp, None,
                             control_from_config(cfg, case), ncfg,
                             max_steps=steps, velocity_log=log)
    except NewtonFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    write_report_csv(os.path.join(out_dir, "report.csv"), reports)
    drifts = conservation_drifts(reports)
    si = shift_invariance_drift(state, log, [r.dt for r in reports[1:]],
                                fp, 0.0)
    predicted = predicted_properties(fp, cfg.k_rho, cfg.k_P)
    write_summary(os.path.join(out_dir, "summary.txt"), cfg, fp, drifts,
                  predicted, si)
    testable = {
        "kinetic_energy": drifts["kinetic_energy"],
        "mass": drifts["mass"],
        "squared_density_modified": drifts["squared_density_modified"],
        "shift_invariance": si,
    }
    ok = True
    for name, val in testable.items():
        if predicted.as_dict()[name] and val > tol:
            ok = False
            print(f"VIOLATED: {name} predicted conserved, drift {val:.3e}")
        else:
            verdict = "conserved" if predicted.as_dict()[name] else "free"
            print(f"{name:26s} {verdict:>9s}  drift {val:.3e}")
    return 0 if ok else 4


def convergence(levels: int = 3, formulation: str = "LSI-EMAC",
                out_dir: str = "out", t_end: float = 0.5,
                base_cells: int = 8, newton_rel_tol: float = 1e-10) -> int:
    """Manufactured-solution refinement study; writes convergence.csv."""
    os.makedirs(out_dir, exist_ok=True)
    rows = run_convergence_study(levels, formulation, t_end, base_cells,
                                 newton_rel_tol)
    path = os.path.join(out_dir, "convergence.csv")
    with open(path, "w") as f:
        f.write("dofs,err_rho,err_u,err_P\n")
        for row in rows:
            f.write(",".join(repr(v) for v in row) + "\n")
    from .diagnostics import convergence_table
    for name, col in (("rho", 1), ("u", 2), ("P", 3)):
        rates = convergence_table([(r[0], r[col]) for r in rows])
        print(f"{name}: errors "
              + " ".join(f"{r[col]:.3e}" for r in rows)
              + "  rates " + " ".join(f"{x:.2f}" for x in rates))
    print(f"wrote {path}")
    return 0


def run_convergence_study(levels, formulation, t_end, base_cells,
                          newton_rel_tol, k_rho=None):
    """Returns [(dofs, err_rho, err_u, err_P), ...] per refinement level.

    The study runs the scheme with the literal energy pairing (exact
    Jacobian, quadratic Newton) and a degree-8 rule: above the 2k-1
    variational-crime threshold for P3, and the per-step cost matters here.
    """
    case = bench.manufactured_case()
    rows = []
    for level in range(levels):
        cfg = RunConfig(case="manufactured", formulation=formulation,
                        cells=base_cells * 2**level, t_end=t_end,
                        newton_rel_tol=newton_rel_tol, ke_pairing="raw")
        if k_rho is not None:
            cfg.k_rho = k_rho
        validate_config(cfg)
        rows.append(manufactured_errors(case, cfg))
    return rows


def manufactured_errors(case, cfg: RunConfig):
    fp = formulation_from_config(cfg)
    vp = viscous_from_config(cfg, case)
    state, bc = setup_state(case, cfg)
    ctrl = control_from_config(cfg, case)
    ncfg = NewtonConfig(rel_tol=cfg.newton_rel_tol, abs_tol=1e-13,
                        reuse_jacobian=cfg.jacobian_reuse)
    t_end = cfg.t_end if cfg.t_end > 0 else case.T
    final, reports = advance(state, t_end, fp, vp, case.forcing, ctrl, ncfg,
                             bc, rule=quadrature_rule(8))
    rule = quadrature_rule(14)
    err_rho = l2_error(final.rho, lambda p: case.exact["rho"](p, t_end),
                       rule, relative=True)
    err_u = l2_error(final.u, lambda p: case.exact["u"](p, t_end), rule,
                     relative=True)
    # modified pressure: compare after removing both means
    P_ex = bench.exact_modified_pressure(case, fp, 1.0)
    areas, _ = final.P_mod.space.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    pts = np.einsum("qj,kjd->kqd", rule.points,
                    final.P_mod.space.mesh.vertices[
                        final.P_mod.space.mesh.triangles])
    exv = P_ex(pts.reshape(-1, 2), t_end).reshape(pts.shape[:2])
    area = float(areas.sum())
    ex_mean = float(np.sum(wdet * exv)) / area
    Pv = final.P_mod.cell_values(rule)
    P_mean = float(np.sum(wdet * Pv)) / area
    diff2 = float(np.sum(wdet * (Pv - P_mean - exv + ex_mean) ** 2))
    ref2 = float(np.sum(wdet * (exv - ex_mean) ** 2))
    err_P = np.sqrt(diff2 / ref2)
    dofs = (final.rho.space.num_nodes + final.u.space.num_dofs
            + final.P_mod.space.num_nodes)
    return (dofs, err_rho, err_u, err_P)


def viscous_compare(cells: int = 32, out_dir: str = "out",
                    t_end: float = 1.0) -> int:
    """Run the smooth vortex with the three momentum fluxes."""
    os.makedirs(out_dir, exist_ok=True)
    for label, flux in (("f0", "zero"), ("fKS", "KS"), ("fGP", "GP")):
        case = bench.smooth_gresho_case(
            ViscousParams(preset=flux, kappa=0.01, mu=0.0))
        cfg = RunConfig(case="smooth_gresho", formulation="SI-MEDMAC",
                        cells=cells, t_end=t_end, out_dir=out_dir,
                        energy_mode="u_half_dot_u_half")
        validate_config(cfg)
        fp = formulation_from_config(cfg)
        state, _ = setup_state(case, cfg)
        ncfg = NewtonConfig(rel_tol=1e-12, reuse_jacobian="auto")
        try:
            _, reports = advance(state, t_end, fp, case.viscous, None,
                                 case.control, ncfg)
        except NewtonFailure as exc:
            print(f"solver failure ({label}): {exc}", file=sys.stderr)
            return 3
        path = os.path.join(out_dir, f"report_{label}.csv")
        write_report_csv(path, reports)
        d = conservation_drifts(reports)
        print(f"{label}: KE drift {d['kinetic_energy']:.3e}, momentum "
              f"{d['momentum']:.3e}, angular {d['angular_momentum']:.3e}")
    return 0


def main(argv=None) -> int:
    threads = os.environ.get("VARDEN_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)

    ap = argparse.ArgumentParser(
        prog="varden",
        description="Conservative Galerkin solver for 2D variable-density "
                    "incompressible flow")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a simulation from a config file")
    p_run.add_argument("config", help="plain-text 'key = value' file")
    p_run.add_argument("--out", default=None, help="output directory")

    p_ver = sub.add_parser("verify",
                           help="check the conservation properties of a "
                                "formulation preset")
    p_ver.add_argument("--preset", required=True,
                       help=f"one of {', '.join(PRESET_NAMES)}")
    p_ver.add_argument("--cells", type=int, default=12)
    p_ver.add_argument("--steps", type=int, default=80)
    p_ver.add_argument("--out", default="out")

    p_conv = sub.add_parser("convergence",
                            help="manufactured-solution refinement study")
    p_conv.add_argument("--levels", type=int, default=3)
    p_conv.add_argument("--formulation", default="LSI-EMAC")
    p_conv.add_argument("--t-end", type=float, default=0.5)
    p_conv.add_argument("--out", default="out")

    p_gre = sub.add_parser("gresho", help="run the Gresho vortex benchmark")
    p_gre.add_argument("--preset", default="SI-MEDMAC")
    p_gre.add_argument("--cells", type=int, default=16)
    p_gre.add_argument("--steps", type=int, default=200)
    p_gre.add_argument("--out", default="out")

    p_vis = sub.add_parser("viscous-compare",
                           help="compare the three viscous momentum fluxes")
    p_vis.add_argument("--cells", type=int, default=32)
    p_vis.add_argument("--t-end", type=float, default=1.0)
    p_vis.add_argument("--out", default="out")

    p_le = sub.add_parser("lock-exchange",
                          help="run the truncated lock-exchange channel")
    p_le.add_argument("--resolution", type=int, default=8)
    p_le.add_argument("--t-end", type=float, default=5.0)
    p_le.add_argument("--flux", default="KS")
    p_le.add_argument("--out", default="out")

    p_mesh = sub.add_parser("mesh", help="mesh utilities")
    mesh_sub = p_mesh.add_subparsers(dest="mesh_command", required=True)
    p_dump = mesh_sub.add_parser("dump", help="write a mesh as plain text")
    p_dump.add_argument("--nx", type=int, required=True)
    p_dump.add_argument("--ny", type=int, required=True)
    p_dump.add_argument("--box", default="0,1,0,1",
                        help="x_min,x_max,y_min,y_max")
    p_dump.add_argument("--diagonal", default="alternating",
                        choices=("right", "alternating"))
    p_dump.add_argument("-o", "--output", required=True)

    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            try:
                with open(args.config) as f:
                    cfg = parse_config(f.read())
            except OSError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return 2
            if args.out:
                cfg.out_dir = args.out
            return run(cfg)
        if args.command == "verify":
            return verify(args.preset, args.cells, args.steps, args.out)
        if args.command == "convergence":
            return convergence(args.levels, args.formulation, args.out,
                               args.t_end)
        if args.command == "gresho":
            cfg = RunConfig(case="gresho", formulation=args.preset,
                            cells=args.cells, max_steps=args.steps,
                            t_end=1e9, out_dir=args.out,
                            newton_rel_tol=1e-13)
            validate_config(cfg)
            return run(cfg)
        if args.command == "viscous-compare":
            return viscous_compare(args.cells, args.out, args.t_end)
        if args.command == "lock-exchange":
            cfg = RunConfig(case="lock_exchange", formulation="SI-MEDMAC",
                            cells=args.resolution, viscous=args.flux,
                            t_end=args.t_end, out_dir=args.out,
                            k_rho=2)
            validate_config(cfg)
            return run(cfg)
        if args.command == "mesh" and args.mesh_command == "dump":
            box = tuple(float(v) for v in args.box.split(","))
            if len(box) != 4:
                raise ConfigError("box needs four comma-separated numbers")
            mesh = build_rect_mesh(box, args.nx, args.ny, args.diagonal)
            write_mesh_text(mesh, args.output)
            print(f"wrote {args.output}")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NewtonFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    return 2


if __name__ == "__main__":
    sys.exit(main())
