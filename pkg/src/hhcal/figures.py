"""Matplotlib rendering for scenario outputs.

Figures accompany the delimited outputs of the report path: voltage
traces (with the drive and spike/ADP markers), phase portraits
(nullclines, fixed points, saddle manifolds, section loci), current
profiles, and the pulse-robustness comparison.  Rendering is
deterministic for byte-identical re-runs: explicit Figure objects (no
pyplot global state), fixed sizes and DPI, no timestamps.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_DPI = 110

_KIND_STYLE = {
    "stable-node": dict(marker="o", color="black", fill=True),
    "stable-focus": dict(marker="o", color="black", fill=True),
    "unstable-node": dict(marker="o", color="black", fill=False),
    "unstable-focus": dict(marker="o", color="black", fill=False),
    "saddle": dict(marker="x", color="black", fill=True),
    "nonhyperbolic": dict(marker="s", color="gray", fill=False),
}


def _new_fig(width=6.0, height=4.0, nrows=1, height_ratios=None):
    fig = Figure(figsize=(width, height), dpi=_DPI)
    FigureCanvasAgg(fig)
    if nrows == 1:
        return fig, fig.add_subplot(111)
    axes = fig.subplots(nrows, 1, sharex=True,
                        height_ratios=height_ratios or [3] + [1] * (nrows - 1))
    return fig, axes


def _save(fig, path):
    fig.savefig(path, format="png")


def render_trace(traj, path, protocol=None, state_index=0, label="V (mV)",
                 spike_times=None, adp_apex=None, title=None):
    """Voltage trace with the applied current below; optional markers."""
    t = traj.times
    v = traj.states[:, state_index]
    if protocol is not None:
        fig, (ax, axi) = _new_fig(6.5, 4.2, nrows=2)
    else:
        fig, ax = _new_fig(6.5, 3.2)
        axi = None
    ax.plot(t, v, lw=0.9, color="#1f3d7a")
    if spike_times is not None and len(spike_times):
        ax.plot(spike_times, np.interp(spike_times, t, v), ".", ms=4,
                color="#c23b22", label="spikes")
    if adp_apex:
        ax.plot([adp_apex[0]], [adp_apex[1]], "v", ms=7, color="#2a9d2a",
                label="ADP apex")
    if (spike_times is not None and len(spike_times)) or adp_apex:
        ax.legend(loc="upper right", fontsize=8, frameon=False)
    ax.set_ylabel(label)
    if title:
        ax.set_title(title, fontsize=10)
    if axi is not None:
        ts = np.linspace(t[0], t[-1], 2001)
        axi.plot(ts, [protocol.current(x) for x in ts], lw=0.9, color="#444444")
        axi.set_ylabel("I")
        axi.set_xlabel("t (ms)")
    else:
        ax.set_xlabel("t (ms)")
    fig.tight_layout()
    _save(fig, path)


def render_phase(path, nullclines=None, fixed_points=None, manifolds=None,
                 trajectory=None, loci=None, box=None, labels=("V", "n"),
                 title=None):
    """Phase portrait: nullclines, classified fixed points, manifolds."""
    fig, ax = _new_fig(5.4, 4.6)
    if nullclines is not None:
        for poly in nullclines.v_nullcline:
            ax.plot(poly[:, 0], poly[:, 1], "-", color="#1f3d7a", lw=1.1)
        if len(nullclines.n_nullcline):
            ax.plot(nullclines.n_nullcline[:, 0], nullclines.n_nullcline[:, 1],
                    "--", color="#777777", lw=1.0)
    if loci:
        for name, polys in loci.items():
            style = ":" if "V" in name else "-."
            for poly in polys:
                ax.plot(poly[:, 0], poly[:, 1], style, color="#999999", lw=0.8)
    if manifolds:
        colors = {"stable": "#2a9d2a", "unstable": "#c23b22"}
        for man in manifolds:
            c = colors["stable" if man.branch.startswith("stable") else "unstable"]
            ax.plot(man.polyline[:, 0], man.polyline[:, 1], "-", color=c, lw=1.0)
    if trajectory is not None:
        ax.plot(trajectory[:, 0], trajectory[:, 1], "-", color="#b0452c",
                lw=0.8, alpha=0.85)
    for fp in fixed_points or ():
        st = _KIND_STYLE.get(fp.kind, _KIND_STYLE["nonhyperbolic"])
        ax.plot([fp.location[0]], [fp.location[1]], st["marker"],
                color=st["color"],
                markerfacecolor=st["color"] if st["fill"] else "white",
                ms=7, mew=1.2)
    if box is not None:
        ax.set_xlim(box.x_min, box.x_max)
        ax.set_ylim(box.y_min, box.y_max)
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def render_current_profile(path, n_grid, profiles, title=None):
    """Total ionic current versus the recovery variable, one curve per mode."""
    fig, ax = _new_fig(5.6, 3.6)
    for label, values in profiles.items():
        ax.plot(n_grid, values, lw=1.1, label=label)
    ax.axhline(0.0, color="#aaaaaa", lw=0.6)
    ax.set_xlabel("n")
    ax.set_ylabel("total ionic current")
    ax.legend(fontsize=8, frameon=False)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def render_robustness(path, comparison, title=None):
    """Bar chart of the minimum extra-spike pulse amplitudes."""
    fig, ax = _new_fig(4.4, 3.4)
    names = ["transcritical", "fold"]
    vals = [comparison[n]["threshold_amplitude"] for n in names]
    shown = [v if v is not None else 0.0 for v in vals]
    ax.bar(names, shown, color=["#1f3d7a", "#c23b22"], width=0.5)
    for i, v in enumerate(vals):
        ax.text(i, shown[i], "none" if v is None else f"{v:.3f}",
                ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("min pulse amplitude for extra spike")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)
