#!/usr/bin/env python3
"""Figures from solver CSV output.

Three plot kinds:
  convergence     log-log relative L2 error vs DOF count with reference
                  slope guides (3 and 4); input: convergence tables with
                  header dofs,err_rho,err_u,err_P
  conservation    drift of each conserved quantity relative to its initial
                  value over time; input: solver report.csv files
  viscous_compare kinetic-energy / momentum / angular-momentum drift of
                  several runs overlaid; input: two or more report.csv files

Usage: plots.py <kind> <csv...> -o out.png [--labels a,b,...]

Only the documented CSV schemas are read; the tool has no dependency on the
solver package.
"""
from __future__ import annotations

import argparse
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REPORT_HEADER = ("t,dt,mass,mom_x,mom_y,ang_mom,kinetic_energy,"
                 "squared_density,mod_squared_density,min_rho,div_norm,"
                 "newton_iters,newton_residual")
CONV_HEADER = "dofs,err_rho,err_u,err_P"

CONSERVED = [
    ("mass", "mass"),
    ("kinetic_energy", "kinetic energy"),
    ("mom_x", "momentum x"),
    ("mom_y", "momentum y"),
    ("ang_mom", "angular momentum"),
    ("mod_squared_density", "squared density (modified)"),
]


class SchemaError(ValueError):
    pass


def read_csv(path: str, expected_header: str) -> dict:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty CSV")
    header = lines[0].split(",")
    expected = expected_header.split(",")
    for col in expected:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    if len(lines) < 2:
        raise SchemaError(f"{path}: no data rows")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: ragged rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def _new_figure(n_panels: int):
    cols = 2 if n_panels > 1 else 1
    rows = (n_panels + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(5.0 * cols, 3.2 * rows),
                             squeeze=False)
    return fig, [ax for row in axes for ax in row]


def plot_convergence(paths, out, labels=None):
    fig, (ax,) = _new_figure(1)
    labels = labels or [os.path.splitext(os.path.basename(p))[0]
                        for p in paths]
    all_dofs = []
    for path, label in zip(paths, labels):
        tab = read_csv(path, CONV_HEADER)
        dofs = tab["dofs"]
        all_dofs.append(dofs)
        for col, style in (("err_rho", "o-"), ("err_u", "s-"),
                           ("err_P", "^-")):
            ax.loglog(dofs, tab[col], style,
                      label=f"{label}: {col.replace('err_', '')}")
    dofs = np.concatenate(all_dofs)
    x = np.array([dofs.min(), dofs.max()])
    y0 = min(read_csv(paths[0], CONV_HEADER)["err_u"])
    for slope in (3, 4):
        # error ~ h^slope ~ dofs^(-slope/2)
        guide = y0 * (x / x.max()) ** (-slope / 2.0)
        ax.loglog(x, guide, "k--", linewidth=0.8)
        ax.annotate(f"slope {slope}", (x[0], guide[0]), fontsize=8,
                    textcoords="offset points", xytext=(2, 2))
    ax.set_xlabel("degrees of freedom")
    ax.set_ylabel("relative L2 error")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=130, metadata={"Software": "plots"})
    plt.close(fig)


def plot_conservation(paths, out, labels=None):
    labels = labels or [os.path.splitext(os.path.basename(p))[0]
                        for p in paths]
    fig, axes = _new_figure(len(CONSERVED))
    tables = [read_csv(p, REPORT_HEADER) for p in paths]
    for ax, (col, title) in zip(axes, CONSERVED):
        for tab, label in zip(tables, labels):
            q = tab[col]
            ax.plot(tab["t"], q - q[0], label=label)
        ax.set_title(f"{title} drift", fontsize=9)
        ax.set_xlabel("t", fontsize=8)
        ax.tick_params(labelsize=7)
        if len(tables) > 1:
            ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(out, dpi=130, metadata={"Software": "plots"})
    plt.close(fig)


def plot_viscous_compare(paths, out, labels=None):
    labels = labels or [os.path.splitext(os.path.basename(p))[0]
                        for p in paths]
    fig, axes = _new_figure(4)
    tables = [read_csv(p, REPORT_HEADER) for p in paths]
    panels = [("kinetic_energy", "kinetic energy drift"),
              ("mom_x", "momentum-x drift"),
              ("mom_y", "momentum-y drift"),
              ("ang_mom", "angular-momentum drift")]
    for ax, (col, title) in zip(axes, panels):
        for tab, label in zip(tables, labels):
            q = tab[col]
            ax.semilogy(tab["t"], np.maximum(np.abs(q - q[0]), 1e-18),
                        label=label)
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("t", fontsize=8)
        ax.tick_params(labelsize=7)
        ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(out, dpi=130, metadata={"Software": "plots"})
    plt.close(fig)


KINDS = {
    "convergence": plot_convergence,
    "conservation": plot_conservation,
    "viscous_compare": plot_viscous_compare,
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=sorted(KINDS))
    ap.add_argument("csv", nargs="+", help="input CSV file(s)")
    ap.add_argument("-o", "--output", required=True, help="output image")
    ap.add_argument("--labels", default=None,
                    help="comma-separated series labels")
    args = ap.parse_args(argv)
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(args.csv):
        print("error: need one label per CSV", file=sys.stderr)
        return 2
    try:
        KINDS[args.kind](args.csv, args.output, labels)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
