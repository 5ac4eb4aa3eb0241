"""Figures for run and bench reports, written next to the delimited output."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

EVENT_COLORS = {"fork": "tab:blue", "transition": "tab:green", "drop": "tab:red",
                "suspend": "tab:orange", "done": "0.5"}


def plot_timeline(transcript, path, title=None):
    """One row per channel role; a mark wherever that role fed a token at a step."""
    fig, ax = plt.subplots(figsize=(10, 2.8))
    out = [r.step for r in transcript.timeline if r.output_token is not None]
    real = [r.step for r in transcript.timeline if r.input_token is not None and not r.input_speculative]
    spec = [r.step for r in transcript.timeline if r.input_speculative]
    ax.scatter(out, [2] * len(out), marker="|", s=120, color="k", label="output")
    ax.scatter(real, [1] * len(real), marker="|", s=120, color="tab:purple", label="input prefill")
    ax.scatter(spec, [0] * len(spec), marker="|", s=120, color="tab:cyan", label="speculation")
    seen = set()
    for ev in transcript.events:
        kind = ev["kind"]
        ax.axvline(ev["step"] - 0.5, color=EVENT_COLORS.get(kind, "0.7"), lw=1, ls="--",
                   label=kind if kind not in seen else None)
        seen.add(kind)
    ax.set_yticks([0, 1, 2])
    ax.set_yticklabels(["speculative", "input", "output"])
    ax.set_xlabel("forward step")
    ax.set_ylim(-0.7, 2.7)
    ax.legend(loc="upper left", bbox_to_anchor=(1.0, 1.0), fontsize=8, frameon=False)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_bench(rows, path):
    """Grouped bars of duplex vs standard forward counts; rows are (name, duo, standard)."""
    names = [r[0] for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 0.18 * len(rows) + 2), 3.2))
    ax.bar([i - 0.2 for i in x], [r[1] for r in rows], width=0.4, label="duplex")
    ax.bar([i + 0.2 for i in x], [r[2] for r in rows], width=0.4, label="standard")
    ax.set_xticks(list(x))
    ax.set_xticklabels([os.path.splitext(n)[0][-4:] for n in names], rotation=90, fontsize=6)
    ax.set_ylabel("forward passes")
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
