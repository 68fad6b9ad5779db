"""
Diagnostic figures written as SVG next to the CSV data.

The Agg backend is selected explicitly and the SVG writer is pinned
(fixed hash salt, no date stamp) so identical data give identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 4.5

params = {
    "font.family": "sans-serif",
    "font.size": 8,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "lines.markersize": 3,
    "figure.figsize": (fig_width, fig_width * golden_mean),
    "svg.hashsalt": "pbvsim",
    "svg.fonttype": "path",
    "path.simplify": False,
}


def _figure():
    with plt.rc_context(params):
        fig, ax = plt.subplots(constrained_layout=True)
    return fig, ax


def save(fig, path):
    with plt.rc_context(params):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def ple_map(path, fields_tesla, detuning_hz, spectra):
    """Stacked PLE spectra, one trace per field, offset vertically."""
    fig, ax = _figure()
    spectra = np.asarray(spectra)
    step = 1.1 * spectra.max() if spectra.size else 1.0
    for i, (b, s) in enumerate(zip(fields_tesla, spectra)):
        ax.plot(np.asarray(detuning_hz) / 1e9, s + i * step, color="C0")
        ax.text(detuning_hz[-1] / 1e9, i * step, f"{b * 1e3:.0f} mT", ha="right", va="bottom",
                fontsize=6)
    ax.set_xlabel("Detuning from C line (GHz)")
    ax.set_ylabel("PLE intensity (offset)")
    ax.set_yticks([])
    save(fig, path)


def trace(path, x, y, fit_y=None, xlabel="", ylabel="", xscale=1.0, logx=False, logy=False,
          data_label="simulated", fit_label="fit"):
    """Points with an optional fitted curve."""
    fig, ax = _figure()
    x = np.asarray(x) * xscale
    ax.plot(x, y, "o", color="C0", label=data_label)
    if fit_y is not None:
        ax.plot(x, fit_y, "-", color="C3", label=fit_label)
        ax.legend(frameon=False)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    save(fig, path)


def histograms(path, counts, readout, dark, readout_pmf=None, dark_pmf=None):
    """Readout and dark photon-number histograms with analytic pmfs."""
    fig, ax = _figure()
    counts = np.asarray(counts)
    ax.bar(counts - 0.2, readout, width=0.4, color="C0", label="readout")
    ax.bar(counts + 0.2, dark, width=0.4, color="C1", label="dark")
    if readout_pmf is not None:
        ax.plot(counts, readout_pmf, "k.-", lw=0.6, label="pmf")
        ax.plot(counts, dark_pmf, "k.--", lw=0.6)
    ax.set_xlabel("Photon counts")
    ax.set_ylabel("Probability")
    ax.legend(frameon=False)
    save(fig, path)


def cpt_spectra(path, offsets_hz, spectra, labels, center_hz):
    """Normalized CPT dips, one per power."""
    fig, ax = _figure()
    for off, s, lab in zip(offsets_hz, spectra, labels):
        ax.plot((np.asarray(off) - center_hz) / 1e6, s, label=lab)
    ax.set_xlabel(f"Raman offset - {center_hz / 1e9:.4f} GHz (MHz)")
    ax.set_ylabel("Normalized fluorescence")
    ax.legend(frameon=False)
    save(fig, path)


def bars(path, names, values, ylabel=""):
    fig, ax = _figure()
    ax.bar(range(len(names)), values, color="C0")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel(ylabel)
    save(fig, path)
