"""Figures for benchmark and retrieval reports (SVG/PNG via matplotlib)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"fkkec": "#1f77b4", "ml+train": "#2ca02c", "ml-train": "#d62728",
          "conventional": "#7f7f7f"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (4.5, 3.2),
    "svg.hashsalt": "fkkec",
    "svg.fonttype": "none",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)
    return path


def plot_enhancement(series, path, title=None):
    """Speedup vs number of spectra.

    `series` maps a label to ``(spectra, mean, std)`` sequences; the std is
    drawn as a shaded band.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, (n, mean, std) in series.items():
            n, mean, std = (np.asarray(v, dtype=float) for v in (n, mean, std))
            color = COLORS.get(label)
            ax.plot(n, mean, "o-", color=color, label=label)
            ax.fill_between(n, mean - std, mean + std, color=color, alpha=0.25, lw=0)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("spectra")
        ax.set_ylabel("speedup vs conventional")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_step_fractions(fractions, path):
    """Stacked bars of the fraction of time per step.

    `fractions` maps a bar label to an ordered ``{step: fraction}`` dict.
    """
    steps = []
    for d in fractions.values():
        steps += [s for s in d if s not in steps]
    labels = list(fractions)
    cmap = plt.get_cmap("tab10")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bottom = np.zeros(len(labels))
        for i, step in enumerate(steps):
            vals = np.array([fractions[lab].get(step, 0.0) for lab in labels])
            ax.bar(labels, vals, bottom=bottom, color=cmap(i % 10), label=step)
            bottom += vals
        ax.set_ylim(0, 1)
        ax.set_ylabel("fraction of time")
        ax.legend(frameon=False, ncol=2, loc="upper center", bbox_to_anchor=(0.5, -0.12))
        return _save(fig, path)


def plot_rss(values, path, null=None):
    """Bar chart of mean RSS per method, with the Null RSS as a dashed line."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = list(values)
        ax.bar(labels, [values[k] for k in labels],
               color=[COLORS.get(k, "#9467bd") for k in labels])
        if null is not None:
            ax.axhline(null, color="k", ls="--", lw=0.8, label="Null RSS")
            ax.legend(frameon=False)
        ax.set_ylabel(r"$\langle$RSS$\rangle$")
        return _save(fig, path)


def plot_spectra(freq, spectra, path, xlabel="Raman shift (cm$^{-1}$)", ylabel=r"Im$\{K\}$"):
    """Overlay of named spectra on a shared axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in spectra.items():
            ax.plot(freq, y, label=label, color=COLORS.get(label))
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        return _save(fig, path)
