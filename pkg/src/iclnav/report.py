"""Artifact emission: run/sweep CSV files and SVG figures.

Output is byte-reproducible: floats are written with 17 significant
digits and LF line endings, and the SVG backend runs with a fixed hash
salt and no embedded creation date.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import RunLog, SweepResult

_SVG_RC = {
    "svg.hashsalt": "iclnav",
    "figure.figsize": (7.0, 3.5),
    "axes.grid": True,
    "font.size": 9,
}


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def run_csv_header(n: int) -> list[str]:
    cols = ["t"]
    cols += [f"d_true_c_s_{i}" for i in range(n)]
    cols += ["d_true_c_g"]
    cols += [f"d_true_g_s_{i}" for i in range(n)]
    cols += [f"d_hat_c_s_{i}" for i in range(n)]
    cols += ["d_hat_c_g"]
    cols += [f"d_hat_g_s_{i}" for i in range(n)]
    cols += [f"d_tilde_c_s_{i}" for i in range(n)]
    cols += ["d_tilde_c_g"]
    cols += [f"d_tilde_g_s_{i}" for i in range(n)]
    cols += ["p_cg_x", "p_cg_y", "p_cg_z"]
    cols += ["p_hat_cg_x", "p_hat_cg_y", "p_hat_cg_z"]
    cols += ["v_c_x", "v_c_y", "v_c_z"]
    cols += [f"sigma_Y_{i}" for i in range(n)]
    cols += [f"tau_flag_{i}" for i in range(n)]
    cols += ["L", "Jstar"]
    cols += [f"cond_{i}" for i in range(n)]
    cols += ["cost"]
    return cols


def write_run_csv(log: RunLog, path: Path) -> None:
    n = log.feature_count
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(run_csv_header(n)) + "\n")
        for k in range(log.rows):
            vals = [_fmt(log.t[k])]
            vals += [_fmt(x) for x in log.d_true_c_s[k]]
            vals.append(_fmt(log.d_true_c_g[k]))
            vals += [_fmt(x) for x in log.d_true_g_s[k]]
            vals += [_fmt(x) for x in log.d_hat_c_s[k]]
            vals.append(_fmt(log.d_hat_c_g[k]))
            vals += [_fmt(x) for x in log.d_hat_g_s[k]]
            vals += [_fmt(x) for x in log.d_tilde_c_s[k]]
            vals.append(_fmt(log.d_tilde_c_g[k]))
            vals += [_fmt(x) for x in log.d_tilde_g_s[k]]
            vals += [_fmt(x) for x in log.p_cg[k]]
            vals += [_fmt(x) for x in log.p_hat_cg[k]]
            vals += [_fmt(x) for x in log.v_c[k]]
            vals += [_fmt(x) for x in log.sigma_y[k]]
            vals += [str(int(x)) for x in log.tau_flag[k]]
            vals.append(_fmt(log.lyap[k]))
            vals.append(_fmt(log.jstar[k]))
            vals += [_fmt(x) for x in log.cond[k]]
            vals.append(_fmt(log.cost[k]))
            f.write(",".join(vals) + "\n")


def write_sweep_csv(result: SweepResult, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("gamma,avg_cond,final_pos_err,total_cost\n")
        for i in range(result.gammas.size):
            f.write(",".join([
                _fmt(result.gammas[i]),
                _fmt(result.avg_cond[i]),
                _fmt(result.final_pos_err[i]),
                _fmt(result.total_cost[i]),
            ]) + "\n")


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _per_feature_plot(t, series, ylabel, label_stem, path):
    fig, ax = plt.subplots()
    for i in range(series.shape[1]):
        ax.plot(t, series[:, i], lw=1.2, label=f"{label_stem} {i}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def _component_plot(t, vecs, ylabel, path):
    fig, ax = plt.subplots()
    for i, name in enumerate("xyz"):
        ax.plot(t, vecs[:, i], lw=1.2, label=name)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def _run_figures(log: RunLog, out_dir: Path) -> list[Path]:
    paths = []

    def p(name: str) -> Path:
        path = out_dir / name
        paths.append(path)
        return path

    _per_feature_plot(log.t, log.d_tilde_c_s,
                      "camera-to-feature distance error [m]", "feature",
                      p("fig_feature_distance_errors.svg"))
    _per_feature_plot(log.t, log.d_tilde_g_s,
                      "goal-to-feature distance error [m]", "feature",
                      p("fig_goal_feature_distance_errors.svg"))

    fig, ax = plt.subplots()
    ax.plot(log.t, log.d_tilde_c_g, lw=1.2)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("camera-to-goal distance error [m]")
    fig.tight_layout()
    _save(fig, p("fig_goal_distance_error.svg"))

    _component_plot(log.t, log.p_cg_world,
                    "goal position, world axes [m]",
                    p("fig_goal_position_world.svg"))
    _component_plot(log.t, log.p_hat_cg_world,
                    "estimated goal position, world axes [m]",
                    p("fig_goal_position_estimate_world.svg"))

    fig, ax = plt.subplots()
    err_norm = np.sqrt(2.0 * log.lyap)
    ax.semilogy(log.t, np.maximum(err_norm, 1e-17), lw=1.2,
                label="distance error norm")
    ax.semilogy(log.t, np.maximum(log.jstar, 1e-17), lw=1.2,
                label="cost-to-go")
    tau = log.tau
    if np.isfinite(tau):
        k0 = int(np.searchsorted(log.t, tau))
        env = err_norm[k0] * np.exp(-log.kappa_min * (log.t[k0:] - log.t[k0]))
        ax.semilogy(log.t[k0:], np.maximum(env, 1e-17), "k--", lw=1.0,
                    label="exponential envelope")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("decay diagnostics")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, p("fig_convergence_diagnostics.svg"))
    return paths


def _sweep_figure(result: SweepResult, out_dir: Path) -> list[Path]:
    path = out_dir / "fig_sweep_conditioning.svg"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    ax1.plot(result.gammas, result.avg_cond, "o-", lw=1.2)
    ax1.set_xlabel("orthogonality penalty")
    ax1.set_ylabel("avg condition number")
    ax2.semilogy(result.gammas, np.maximum(result.final_pos_err, 1e-17), "s-",
                 lw=1.2)
    ax2.set_xlabel("orthogonality penalty")
    ax2.set_ylabel("final goal error [m]")
    fig.tight_layout()
    _save(fig, path)
    return [path]


def emit_artifacts(log, out_dir) -> list[Path]:
    """Write the CSV and figure set for a run log or sweep result.

    Returns the list of written paths.  I/O failures surface as OSError
    with the failing path attached.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(_SVG_RC):
        if isinstance(log, RunLog):
            csv_path = out_dir / "run_log.csv"
            write_run_csv(log, csv_path)
            return [csv_path] + _run_figures(log, out_dir)
        if isinstance(log, SweepResult):
            csv_path = out_dir / "sweep_table.csv"
            write_sweep_csv(log, csv_path)
            return [csv_path] + _sweep_figure(log, out_dir)
    raise TypeError(f"cannot emit artifacts for {type(log).__name__}")
