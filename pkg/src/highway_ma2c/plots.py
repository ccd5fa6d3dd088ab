"""Figure rendering for run reports.

Figures are written next to the delimited outputs they visualize; every
plotting entry point takes already-parsed rows so the CSV/JSONL files stay
the single source of truth.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def learning_curve(rows, path: Path) -> Path:
    """Evaluation return and collision rate over training steps."""
    steps = [row.step for row in rows]
    means = [row.eval_return_mean for row in rows]
    stds = [row.eval_return_std for row in rows]
    collisions = [row.collision_rate for row in rows]

    fig, (ax_ret, ax_col) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_ret.plot(steps, means, marker="o", color="tab:blue")
    ax_ret.fill_between(
        steps,
        [m - s for m, s in zip(means, stds)],
        [m + s for m, s in zip(means, stds)],
        alpha=0.25,
        color="tab:blue",
    )
    ax_ret.set_ylabel("eval return")
    ax_ret.grid(alpha=0.3)

    ax_col.plot(steps, collisions, marker="o", color="tab:red")
    ax_col.set_ylabel("collision rate")
    ax_col.set_xlabel("training step")
    ax_col.set_ylim(-0.05, 1.05)
    ax_col.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def ablation_comparison(rows: list[dict], axis: str, path: Path) -> Path:
    """Grouped bars of final return and acceleration spread per arm."""
    arms = sorted({row["arm"] for row in rows})
    by_arm = {arm: [r for r in rows if r["arm"] == arm] for arm in arms}

    def mean(arm: str, key: str) -> float:
        values = [r[key] for r in by_arm[arm]]
        return sum(values) / len(values)

    fig, (ax_ret, ax_acc) = plt.subplots(1, 2, figsize=(9, 4))
    positions = range(len(arms))
    ax_ret.bar(
        positions,
        [mean(a, "final_eval_return_mean") for a in arms],
        yerr=[mean(a, "final_eval_return_std") for a in arms],
        color="tab:blue",
        capsize=4,
    )
    ax_ret.set_xticks(list(positions), arms)
    ax_ret.set_ylabel("final eval return")
    ax_ret.set_title(f"{axis}: return")

    ax_acc.bar(
        positions,
        [mean(a, "accel_std") for a in arms],
        color="tab:orange",
    )
    ax_acc.set_xticks(list(positions), arms)
    ax_acc.set_ylabel("acceleration std (m/s$^2$)")
    ax_acc.set_title(f"{axis}: comfort")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def rollout_figure(records: list[dict], path: Path) -> Path:
    """Per-vehicle position and speed traces of one exported episode."""
    by_vehicle: dict[int, dict[str, list]] = {}
    kinds: dict[int, str] = {}
    for record in records:
        for veh in record["vehicles"]:
            series = by_vehicle.setdefault(
                veh["id"], {"t": [], "x": [], "v": [], "lane": []}
            )
            series["t"].append(record["time_s"])
            series["x"].append(veh["x"])
            series["v"].append(veh["v"])
            series["lane"].append(veh["lane"])
            kinds[veh["id"]] = veh["kind"]

    fig, (ax_x, ax_v) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    for vid, series in sorted(by_vehicle.items()):
        style = "-" if kinds[vid] == "AV" else "--"
        label = f"{kinds[vid]} {vid}"
        ax_x.plot(series["t"], series["x"], style, label=label)
        ax_v.plot(series["t"], series["v"], style, label=label)
    ax_x.set_ylabel("position x (m)")
    ax_x.grid(alpha=0.3)
    ax_x.legend(fontsize=8, ncols=2)
    ax_v.set_ylabel("speed (m/s)")
    ax_v.set_xlabel("time (s)")
    ax_v.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
