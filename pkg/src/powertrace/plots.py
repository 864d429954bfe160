"""Report figures: actual-vs-predicted traces and uncertainty bands.

Figures are static SVG rendered through matplotlib with a fixed hash salt
and no creation date, so identical runs produce byte-identical files. Each
figure embeds its source numbers as a CSV table in an XML comment, keeping
plots reviewable in version control.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SVG_HASHSALT = "powertrace"


def _configure():
    plt.rcParams["svg.hashsalt"] = SVG_HASHSALT
    plt.rcParams["figure.figsize"] = (8.0, 5.0)
    plt.rcParams["axes.grid"] = True
    plt.rcParams["grid.alpha"] = 0.3


def _save_with_table(fig, path, table_header: list[str], table_rows) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    lines = [",".join(table_header)]
    for row in table_rows:
        lines.append(",".join(repr(float(v)) for v in row))
    # XML comments cannot contain '--'
    table = "\n".join(lines).replace("--", "- -")
    with open(path, "r", encoding="utf-8") as fh:
        svg = fh.read()
    svg = svg.replace("</svg>", f"<!-- data-table\n{table}\n-->\n</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)


def plot_prediction(
    t: np.ndarray,
    actual_instant: np.ndarray,
    predicted_instant: np.ndarray,
    actual_cumulative: np.ndarray,
    predicted_cumulative: np.ndarray,
    path,
    title: str = "",
) -> None:
    """Two stacked panels: instantaneous power and its running integral."""
    _configure()
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    ax1.plot(t, actual_instant, label="actual", color="tab:blue", lw=1.0)
    ax1.plot(t, predicted_instant, label="predicted", color="tab:orange", lw=1.0)
    ax1.set_ylabel("instantaneous power [kW]")
    ax1.legend(loc="upper right")
    if title:
        ax1.set_title(title)
    ax2.plot(t, actual_cumulative, label="actual", color="tab:blue", lw=1.2)
    ax2.plot(t, predicted_cumulative, label="predicted", color="tab:orange", lw=1.2)
    ax2.set_ylabel("cumulative power [kW·s]")
    ax2.set_xlabel("time [s]")
    ax2.legend(loc="upper left")
    fig.tight_layout()
    rows = zip(t, actual_instant, predicted_instant, actual_cumulative, predicted_cumulative)
    _save_with_table(
        fig,
        path,
        ["t_end_s", "actual_kw", "predicted_kw", "actual_cum_kws", "predicted_cum_kws"],
        rows,
    )


def plot_uncertainty(
    t: np.ndarray,
    mean_instant: np.ndarray,
    std_instant: np.ndarray,
    mean_cumulative: np.ndarray,
    std_cumulative: np.ndarray,
    path,
    title: str = "",
) -> None:
    """Mean prediction with +-1 std bands, instant and cumulative."""
    _configure()
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    ax1.plot(t, mean_instant, color="tab:blue", lw=1.0, label="mean")
    ax1.fill_between(
        t, mean_instant - std_instant, mean_instant + std_instant,
        color="tab:blue", alpha=0.25, label="±1 std",
    )
    ax1.set_ylabel("instantaneous power [kW]")
    ax1.legend(loc="upper right")
    if title:
        ax1.set_title(title)
    ax2.plot(t, mean_cumulative, color="tab:green", lw=1.2, label="mean")
    ax2.fill_between(
        t, mean_cumulative - std_cumulative, mean_cumulative + std_cumulative,
        color="tab:green", alpha=0.25, label="±1 std",
    )
    ax2.set_ylabel("cumulative power [kW·s]")
    ax2.set_xlabel("time [s]")
    ax2.legend(loc="upper left")
    fig.tight_layout()
    rows = zip(t, mean_instant, std_instant, mean_cumulative, std_cumulative)
    _save_with_table(
        fig,
        path,
        ["t_end_s", "mean_kw", "std_kw", "mean_cum_kws", "std_cum_kws"],
        rows,
    )
