"""Figure rendering for the report paths.

Each CLI report command writes a delimited table and, next to it, a PNG of
the same data.  Rendering is headless (Agg backend) and deterministic.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_gain_figure(rows: list[dict], path: str) -> None:
    """Secure gain per pulse versus channel attenuation, log scale.

    ``rows`` are the simulate-gain CSV rows (dicts with attenuation_db,
    g_sps, g_wcp_fixed_mu, g_wcp_opt).  Zero-gain points are omitted from
    the log axis.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.6))
    curves = [
        ("g_sps", "sub-Poissonian source", "solid", "#c2272d"),
        ("g_wcp_fixed_mu", "coherent pulses, fixed intensity", (0, (6, 3)), "#1f4e9c"),
        ("g_wcp_opt", "coherent pulses, optimized intensity", (0, (2, 2)), "#3c8a3f"),
    ]
    for field, label, style, color in curves:
        xs = [r["attenuation_db"] for r in rows if r[field] > 0]
        ys = [r[field] for r in rows if r[field] > 0]
        if xs:
            ax.semilogy(xs, ys, linestyle=style, color=color, label=label)
    ax.set_xlabel("channel attenuation (dB)")
    ax.set_ylabel("secure bits per pulse")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_detection_figure(rows: list[dict], path: str) -> None:
    """Detection probability and error rate versus attenuation (two panels)."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.2))
    db = [r["attenuation_db"] for r in rows]
    ax1.errorbar(db, [r["p_exp_mean"] for r in rows],
                 yerr=[r["p_exp_stderr"] for r in rows],
                 marker="o", color="#1f4e9c", capsize=3)
    ax1.set_yscale("log")
    ax1.set_xlabel("channel attenuation (dB)")
    ax1.set_ylabel("detection probability per slot")
    ax1.grid(True, which="both", alpha=0.3)
    ax2.errorbar(db, [100 * r["qber_mean"] for r in rows],
                 yerr=[100 * r["qber_stderr"] for r in rows],
                 marker="s", color="#c2272d", capsize=3)
    ax2.set_xlabel("channel attenuation (dB)")
    ax2.set_ylabel("error rate (%)")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
