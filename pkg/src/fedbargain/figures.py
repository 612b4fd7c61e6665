"""Render sweep tables and training traces to PNG files.

Figures are a convenience view of the CSV outputs; the delimited files stay
the canonical, byte-reproducible artifacts.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import RunReport, SweepResult


def _per_ue_series(result: SweepResult, x_col: str) -> dict[int, tuple[list, list]]:
    xs = result.column(x_col)
    ids = result.column("ue_id")
    thetas = result.column("theta_star")
    series: dict[int, tuple[list, list]] = {}
    for x, ue, theta in zip(xs, ids, thetas):
        series.setdefault(ue, ([], []))
        series[ue][0].append(x)
        series[ue][1].append(theta)
    return series


def render_reward_sweep(result: SweepResult, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for ue, (xs, ys) in sorted(_per_ue_series(result, "r").items()):
        ax.plot(xs, ys, marker=".", markersize=4, label=f"device {ue}")
    ax.set_xlabel("offered reward rate")
    ax.set_ylabel("best-response local relative accuracy")
    ax.set_title("Device responses vs offered reward")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_commtime_sweep(result: SweepResult, path: Path) -> None:
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    taus = result.column("tau")
    ax.plot(taus, result.column("theta_star"), marker="o", color="tab:blue")
    ax.set_xlabel("normalized communication time")
    ax.set_ylabel("best-response local relative accuracy")
    ax.grid(alpha=0.3)
    ax2.plot(taus, result.column("local_iters"), marker="s", color="tab:red")
    ax2.set_xlabel("normalized communication time")
    ax2.set_ylabel("local iterations per round")
    ax2.grid(alpha=0.3)
    fig.suptitle(f"Channel quality vs local effort (device {result.metadata['ue_id']})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_leader_curve(result: SweepResult, path: Path) -> None:
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    rewards = result.column("r")
    norm = result.column("normalized_utility")
    ax.plot(rewards, norm, marker=".", color="tab:green")
    r_star = result.metadata.get("reward_star")
    if r_star is not None:
        ax.axvline(r_star, color="gray", linestyle="--", linewidth=1,
                   label=f"equilibrium reward {r_star:.3g}")
        ax.legend(fontsize=8)
    ax.set_xlabel("offered reward rate")
    ax.set_ylabel("normalized server utility")
    ax.grid(alpha=0.3)
    ax2.plot(result.column("theta_hat"), norm, marker=".", color="tab:purple")
    ax2.set_xlabel("worst local relative accuracy")
    ax2.set_ylabel("normalized server utility")
    ax2.grid(alpha=0.3)
    fig.suptitle("Server utility across the reward grid")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_rounds(report: RunReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    rounds = [r.round for r in report.records]
    ax.semilogy(
        rounds,
        [r.global_grad_norm for r in report.records],
        marker=".",
        color="tab:blue",
        label="global gradient norm",
    )
    ax.semilogy(
        rounds,
        [r.global_loss for r in report.records],
        marker=".",
        color="tab:orange",
        label="global loss",
    )
    ax.set_xlabel("round")
    ax.set_ylabel("loss / gradient norm")
    ax.grid(alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(
        rounds,
        [r.global_accuracy for r in report.records],
        marker=".",
        color="tab:green",
        label="training accuracy",
    )
    ax2.set_ylabel("training accuracy")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=8, loc="center right")
    ax.set_title("Federated training progress")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
