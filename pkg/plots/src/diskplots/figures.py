"""The three figure kinds: converge, profile, gap.

Each kind declares the CSV columns it needs; `plot` validates the header
before touching matplotlib and never writes a file on error. Figures are
deterministic: fixed sizes, fixed dpi, no timestamps in metadata.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = {
    "converge": ["epsilon", "kind", "order", "error_linf", "grid_id"],
    "profile": ["eta", "phi", "f", "fbar", "flux"],
    "gap": ["epsilon", "n", "u_classical", "u_geometric",
            "pred_classical", "pred_geometric", "gap"],
}

FIGSIZE = (6.0, 4.0)
DPI = 150


class SchemaError(ValueError):
    pass


@dataclass
class FigureSpec:
    csv_path: str
    kind: str
    out_path: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(
                f"unknown figure kind {self.kind!r}; expected one of "
                f"{sorted(KINDS)}")


def read_table(path, kind):
    """Read the CSV and return a dict of column -> array, validated."""
    expected = KINDS[kind]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file, expected header {expected}")
    header = rows[0]
    missing = [c for c in expected if c not in header]
    if missing:
        raise SchemaError(
            f"{path}: header {header} does not match the {kind!r} schema; "
            f"missing columns {missing}")
    if len(rows) == 1:
        raise SchemaError(f"{path}: no data rows")
    idx = {c: header.index(c) for c in expected}
    cols = {}
    for c in expected:
        vals = [r[idx[c]] for r in rows[1:]]
        try:
            cols[c] = np.array([float(v) for v in vals])
        except ValueError:
            cols[c] = np.array(vals)
    return cols


def _plot_converge(cols, ax):
    """Log-log error vs epsilon, one series per expansion kind."""
    kinds = []
    for k in cols["kind"]:
        if k not in kinds:
            kinds.append(k)
    for k in kinds:
        sel = cols["kind"] == k
        eps = cols["epsilon"][sel]
        err = cols["error_linf"][sel]
        order = np.argsort(eps)
        ax.loglog(eps[order], np.maximum(err[order], 1e-16), "o-", label=k)
    # slope-1 reference guide anchored at the largest epsilon present
    eps_all = np.sort(np.unique(cols["epsilon"]))
    anchor = max(np.max(cols["error_linf"]), 1e-16)
    ax.loglog(eps_all, anchor * eps_all / eps_all[-1], "k--", lw=0.8,
              label="slope 1")
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel(r"$L^\infty$ error")
    ax.legend()
    ax.set_title("expansion error vs epsilon")


def _fbar_profile(cols):
    """Collapse the (eta, phi) table to per-eta fbar and fluctuation."""
    eta_u, inv = np.unique(cols["eta"], return_inverse=True)
    fbar = np.zeros(eta_u.size)
    amp = np.zeros(eta_u.size)
    for i in range(eta_u.size):
        sel = inv == i
        fbar[i] = cols["fbar"][sel][0]
        amp[i] = np.sqrt(np.mean((cols["f"][sel] - fbar[i]) ** 2))
    return eta_u, fbar, amp


def _plot_profile(cols, ax):
    """Semilog fbar(eta) and |fbar - f_inf| with a fitted decay line."""
    eta, fbar, amp = _fbar_profile(cols)
    f_inf = fbar[-1]
    dev = np.abs(fbar - f_inf)
    # the counterexample datum has fbar constant by symmetry: fall back
    # to the angular fluctuation amplitude for the decay panel
    decay = dev if np.max(dev) > 1e-10 else amp
    ax.plot(eta, fbar, "-", color="C0", label=r"$\bar f(\eta)$")
    ax.set_xlabel(r"$\eta$")
    ax.set_ylabel(r"$\bar f$", color="C0")
    ax2 = ax.twinx()
    pos = decay > 1e-15
    ax2.semilogy(eta[pos], decay[pos], ".", color="C1", ms=3,
                 label="layer amplitude")
    # fit log decay over the window where the profile is resolved
    win = pos & (eta > 0) & (decay > 1e-12 * max(np.max(decay), 1e-300))
    if np.count_nonzero(win) >= 2:
        k, b = np.polyfit(eta[win], np.log(decay[win]), 1)
        ax2.semilogy(eta[win], np.exp(b + k * eta[win]), "k--", lw=0.8,
                     label=f"fit: decay rate {-k:.3f}")
    ax2.set_ylabel("layer amplitude", color="C1")
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, loc="upper right")
    ax.set_title("Milne layer profile")


def _plot_gap(cols, ax):
    """Gap vs epsilon with the 0.02 acceptance floor marked."""
    order = np.argsort(cols["epsilon"])
    eps = cols["epsilon"][order]
    ax.plot(eps, cols["gap"][order], "o-", label="measured gap")
    ax.plot(eps, np.abs(cols["pred_geometric"]
                        - cols["pred_classical"])[order], "s--",
            label="predicted gap")
    ax.axhline(0.02, color="k", lw=0.8, ls=":", label="0.02 floor")
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel(r"$|U - u|$ at the read-off point")
    ax.set_ylim(bottom=0.0)
    ax.legend()
    ax.set_title("classical vs geometric gap")


_RENDERERS = {
    "converge": _plot_converge,
    "profile": _plot_profile,
    "gap": _plot_gap,
}


def plot(spec: FigureSpec) -> str:
    """Render the figure for `spec`; returns the output path.

    The CSV is fully read and validated before any file is created, so a
    schema error never leaves a partial image behind.
    """
    cols = read_table(spec.csv_path, spec.kind)
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    try:
        _RENDERERS[spec.kind](cols, ax)
        fig.tight_layout()
        out_dir = os.path.dirname(os.path.abspath(spec.out_path))
        os.makedirs(out_dir, exist_ok=True)
        fig.savefig(spec.out_path, metadata=_clean_metadata(spec.out_path))
    finally:
        plt.close(fig)
    return spec.out_path


def _clean_metadata(path):
    """Deterministic image metadata: no timestamps, fixed software tag."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        return {"Software": "diskplots"}
    if ext == ".svg":
        return {"Date": None, "Creator": "diskplots"}
    return None
