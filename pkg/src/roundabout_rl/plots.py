"""Matplotlib figure rendering for the report outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import HistogramSpec

_METRIC_LABELS = {
    "travel_time": "travel time (s)",
    "mean_speed": "mean speed (m/s)",
}


def reward_curve(entries: list, path) -> None:
    """Mean episode reward per iteration, with the adversary mirror if present."""
    iterations = [e.iteration for e in entries]
    rewards = [e.mean_episode_reward for e in entries]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iterations, rewards, label="agent")
    if entries and entries[0].mean_adversary_reward is not None:
        ax.plot(
            iterations,
            [e.mean_adversary_reward for e in entries],
            label="adversary",
            linestyle="--",
        )
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean episode reward")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def histogram_overlay(specs: dict[str, HistogramSpec], path) -> None:
    """Relative-frequency histograms for one metric, one bar set per label."""
    fig, ax = plt.subplots(figsize=(6, 4))
    metric = None
    n = len(specs)
    for k, (label, spec) in enumerate(specs.items()):
        metric = spec.metric
        edges = spec.bin_edges
        widths = (edges[1:] - edges[:-1]) / n
        ax.bar(
            edges[:-1] + k * widths,
            spec.frequencies,
            width=widths,
            align="edge",
            label=label,
            alpha=0.8,
        )
    ax.set_xlabel(_METRIC_LABELS.get(metric, metric))
    ax.set_ylabel("relative frequency")
    if len(specs) > 1:
        ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
