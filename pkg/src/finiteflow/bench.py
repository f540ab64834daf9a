"""Experiment runner: sweeps, CSV artifacts, summaries, bound and closeness checks."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import (check_gradient_dominance, closeness_epsilon,
                       dominance_params, energy_decay_envelope, k_star,
                       settling_time_bound, verify_envelope, weak_bound)
from .config import ExperimentConfig, NamedOptimizer
from .integrators import (DiscretizerConfig, StopCriteria, Trajectory,
                          integrate_reference, run)
from .objectives import BatchContext, Objective

CSV_HEADER = "k,t,f,f_gap,grad_norm2,grad_norm1,wall_s"
ITERS_SENTINEL = -1

WORKERS_ENV = "FINITEFLOW_WORKERS"


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def emit_csv(traj: Trajectory, path: str | Path, f_star: float | None = None) -> Path:
    """Write one trajectory as CSV with 17-significant-digit floats, LF newlines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [CSV_HEADER]
    for k, t, _x, f, gn2, gn1, wall in traj.records():
        gap = f - f_star if f_star is not None else math.nan
        lines.append(",".join([str(k), _fmt(t), _fmt(f), _fmt(gap),
                               _fmt(gn2), _fmt(gn1), _fmt(wall)]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a trajectory or summary-free CSV back into column arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: np.array([float(r[i]) for r in rows])
            for i, name in enumerate(header)}
    return cols


@dataclass
class CellResult:
    """Outcome of one (optimizer, seed) run."""

    optimizer: str
    seed: int
    final_f: float
    final_f_gap: float
    iters_to_tol: float
    wall_s: float
    terminal_reason: str
    csv_path: Path


@dataclass
class RunSummary:
    cells: list[CellResult]
    out_dir: Path

    def for_optimizer(self, name: str) -> list[CellResult]:
        return [c for c in self.cells if c.optimizer == name]

    def aggregate(self, name: str) -> dict[str, float]:
        cells = self.for_optimizer(name)
        if not cells:
            raise KeyError(f"no cells for optimizer {name!r}")
        stats = {}
        for field_name in ("final_f", "final_f_gap", "iters_to_tol", "wall_s"):
            vals = np.array([getattr(c, field_name) for c in cells])
            stats[f"median_{field_name}"] = float(np.median(vals))
            stats[f"min_{field_name}"] = float(np.min(vals))
            stats[f"max_{field_name}"] = float(np.max(vals))
        return stats


def _iters_to_tolerance(traj: Trajectory, f_star: float | None, f_tol: float) -> float:
    """First step index with f - f_star <= f_tol; +inf when never reached."""
    if f_star is None or f_tol <= 0:
        return math.inf
    hits = np.nonzero(traj.f - f_star <= f_tol)[0]
    return float(traj.k[hits[0]]) if len(hits) else math.inf


def _cell_paths(out_dir: Path, optimizer: str, seed: int) -> Path:
    return out_dir / f"{optimizer}__seed{seed}.csv"


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunSummary:
    """Execute every (optimizer, seed) cell of the config and write artifacts.

    Per cell: one trajectory CSV. Per experiment: a summary CSV with per-cell
    rows plus median/min/max rows per optimizer, and one mean-over-seeds loss
    curve CSV per optimizer. A failed cell is recorded in the summary and
    leaves its (possibly partial) trajectory file in place; the sweep
    continues. Initial points and mini-batch schedules depend only on
    (base_seed, seed index), so re-runs are reproducible.
    """
    out = Path(out_dir) if out_dir is not None else Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    obj = cfg.build_objective()
    if cfg.batch is not None and not obj.batch_support:
        raise ValueError(
            f"config {cfg.name!r} requests mini-batches but objective "
            f"{cfg.objective_name!r} has no batch gradient")
    f_star = obj.metadata.f_star if obj.metadata is not None else None

    cells_plan = [(opt, cfg.init.base_seed + i)
                  for opt in cfg.optimizers for i in range(cfg.init.n_seeds)]

    def execute(plan: tuple[NamedOptimizer, int]) -> tuple[CellResult, Trajectory | None]:
        opt, seed = plan
        x0 = cfg.init.draw(obj.dimension, seed)
        batch = None
        if cfg.batch is not None:
            batch = BatchContext(rng_seed=seed, batch_size=cfg.batch.size,
                                 dataset_size=obj.aux.get("dataset_size",
                                                          cfg.batch.size))
        path = _cell_paths(out, opt.name, seed)
        try:
            traj = run(opt.config, obj, x0, cfg.stop, batch=batch)
        except Exception:
            emit_csv(Trajectory(k=np.zeros(0, dtype=int), t=np.zeros(0),
                                x=np.zeros((0, obj.dimension)), f=np.zeros(0),
                                grad_norm2=np.zeros(0), grad_norm1=np.zeros(0),
                                wall_s=np.zeros(0),
                                terminal_reason="numerical_failure"),
                     path, f_star)
            return CellResult(opt.name, seed, math.nan, math.nan, math.inf,
                              math.nan, "numerical_failure", path), None
        emit_csv(traj, path, f_star)
        final_f = float(traj.f[-1])
        return CellResult(
            optimizer=opt.name,
            seed=seed,
            final_f=final_f,
            final_f_gap=final_f - f_star if f_star is not None else math.nan,
            iters_to_tol=_iters_to_tolerance(traj, f_star, cfg.stop.f_tol),
            wall_s=float(traj.wall_s[-1]),
            terminal_reason=traj.terminal_reason,
            csv_path=path,
        ), traj

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(execute, cells_plan))
    else:
        outcomes = [execute(plan) for plan in cells_plan]

    cells = [c for c, _ in outcomes]
    summary = RunSummary(cells=cells, out_dir=out)
    _write_summary(summary, cfg, out)
    _write_mean_curves(cfg, outcomes, f_star, out)
    if cfg.analysis.run_bounds or cfg.analysis.run_closeness or cfg.analysis.dominance:
        reports = analysis_reports(cfg, obj)
        _write_reports(reports, cfg, out)
    return summary


def _write_summary(summary: RunSummary, cfg: ExperimentConfig, out: Path) -> None:
    lines = ["optimizer,seed,final_f,final_f_gap,iters_to_tol,wall_s,terminal_reason"]
    for c in summary.cells:
        iters = ITERS_SENTINEL if math.isinf(c.iters_to_tol) else int(c.iters_to_tol)
        lines.append(f"{c.optimizer},{c.seed},{_fmt(c.final_f)},{_fmt(c.final_f_gap)},"
                     f"{iters},{_fmt(c.wall_s)},{c.terminal_reason}")
    for opt in cfg.optimizers:
        stats = summary.aggregate(opt.name)
        for stat in ("median", "min", "max"):
            iters = stats[f"{stat}_iters_to_tol"]
            iters_txt = str(ITERS_SENTINEL) if math.isinf(iters) else _fmt(iters)
            lines.append(f"{opt.name},{stat},{_fmt(stats[f'{stat}_final_f'])},"
                         f"{_fmt(stats[f'{stat}_final_f_gap'])},{iters_txt},"
                         f"{_fmt(stats[f'{stat}_wall_s'])},aggregate")
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    if "json" in cfg.output.formats:
        payload = {opt.name: summary.aggregate(opt.name) for opt in cfg.optimizers}
        (out / "summary.json").write_text(json.dumps(payload, indent=2, default=str))


def _write_mean_curves(cfg: ExperimentConfig, outcomes, f_star, out: Path) -> None:
    # mean-over-seeds cost per step; shorter runs are padded with their final
    # value so converged runs keep contributing to the average
    by_opt: dict[str, list[Trajectory]] = {}
    for cell, traj in outcomes:
        if traj is not None:
            by_opt.setdefault(cell.optimizer, []).append(traj)
    for name, trajs in by_opt.items():
        longest = max(len(t) for t in trajs)
        stacked = np.full((len(trajs), longest), np.nan)
        for i, t in enumerate(trajs):
            stacked[i, :len(t)] = t.f
            stacked[i, len(t):] = t.f[-1]
        mean_f = stacked.mean(axis=0)
        lines = ["k,mean_f,mean_f_gap"]
        for k in range(longest):
            gap = mean_f[k] - f_star if f_star is not None else math.nan
            lines.append(f"{k},{_fmt(mean_f[k])},{_fmt(gap)}")
        (out / f"{name}__mean_curve.csv").write_text("\n".join(lines) + "\n")


def flow_optimizers(cfg: ExperimentConfig) -> list[NamedOptimizer]:
    return [o for o in cfg.optimizers if o.config.flow is not None]


def bound_report(obj: Objective, opt: DiscretizerConfig, x0: np.ndarray,
                 p: float, mu: float, h_ref: float | None = None,
                 arrival_grad_tol: float = 1e-6,
                 envelope_slack: float = 1e-6,
                 horizon_factor: float = 1.3) -> dict:
    """Evaluate the theoretical bounds for one flow-driven optimizer.

    Computes the settling-time bound at x0, integrates the reference flow to
    measure arrival, checks the energy envelope along it, and checks the
    discrete weak bound using the measured trajectory closeness.
    """
    if opt.flow is None:
        raise ValueError("bound report needs a flow-driven optimizer")
    if obj.metadata is None:
        raise ValueError("bound report needs optimum metadata")
    flow = opt.flow
    x0 = np.asarray(x0, dtype=float)
    f_star = obj.metadata.f_star
    params = dominance_params(p, mu, flow.q, flow.c)

    grad0 = float(np.linalg.norm(obj.gradient(x0)))
    f_gap0 = float(obj.value(x0)) - f_star
    t_bound = settling_time_bound(params, flow.c, grad0)
    h = h_ref if h_ref is not None else opt.eta / 100.0

    ref = integrate_reference(
        flow, obj, x0, h,
        StopCriteria(max_iters=int(math.ceil(horizon_factor * t_bound / h)),
                     grad_tol=arrival_grad_tol))
    arrival = float(ref.t[-1]) if ref.terminal_reason == "grad_tol" else math.nan

    env_report = verify_envelope(
        ref, lambda t: energy_decay_envelope(params, flow.c, f_gap0, t),
        f_star, slack=envelope_slack, key="t")

    ks = k_star(params, flow.c, opt.eta, f_gap0)
    k_max = int(math.ceil(1.1 * ks))
    disc = run(opt, obj, x0, StopCriteria(max_iters=k_max, grad_tol=0.0, f_tol=0.0))
    horizon = k_max * opt.eta
    dense = integrate_reference(
        flow, obj, x0, opt.eta / 10.0,
        StopCriteria(max_iters=int(math.ceil(horizon / (opt.eta / 10.0))),
                     grad_tol=0.0))
    eps = closeness_epsilon(dense, disc, T=horizon, eta=opt.eta)
    lipschitz = float(np.max(disc.grad_norm2))
    weak_report = verify_envelope(
        disc,
        lambda k: weak_bound(params, flow.c, opt.eta, f_gap0, lipschitz, eps, k),
        f_star, slack=envelope_slack, key="k")

    return {
        "t_star_bound": t_bound,
        "arrival_time": arrival,
        "arrival_grad_tol": arrival_grad_tol,
        "envelope_pass": env_report.verdict,
        "envelope_violations": len(env_report.violations),
        "k_star": ks,
        "eps_measured": eps,
        "lipschitz_estimate": lipschitz,
        "weak_bound_pass": weak_report.verdict,
        "weak_bound_violations": len(weak_report.violations),
    }


def closeness_table(obj: Objective, opt: DiscretizerConfig, x0: np.ndarray,
                    horizon: float, n_halvings: int = 3) -> list[tuple[float, float]]:
    """Measured closeness eps for a halving sequence of step sizes.

    One dense reference (spacing fine enough for the smallest step size) is
    shared by all entries; each discrete run covers the same horizon.
    """
    if opt.flow is None:
        raise ValueError("closeness table needs a flow-driven optimizer")
    etas = [opt.eta / 2 ** j for j in range(n_halvings)]
    h = etas[-1] / 10.0
    ref = integrate_reference(
        opt.flow, obj, x0, h,
        StopCriteria(max_iters=int(math.ceil(horizon / h)) + 1, grad_tol=0.0))
    rows = []
    for eta in etas:
        cfg = DiscretizerConfig(scheme=opt.scheme, eta=eta, beta=opt.beta,
                                flow=opt.flow, stages=opt.stages,
                                alphas=opt.alphas, betas=opt.betas)
        k_max = int(math.floor(horizon / eta + 1e-9))
        disc = run(cfg, obj, x0, StopCriteria(max_iters=k_max, grad_tol=0.0, f_tol=0.0))
        rows.append((eta, closeness_epsilon(ref, disc, T=horizon, eta=eta)))
    return rows


def analysis_reports(cfg: ExperimentConfig, obj: Objective | None = None) -> dict:
    """Run the analysis passes requested by the config (bounds, closeness,
    gradient dominance) and return one report per flow-driven optimizer."""
    if obj is None:
        obj = cfg.build_objective()
    reports: dict = {"dominance": None, "bounds": {}, "closeness": {}}

    dom = cfg.analysis.dominance
    if dom is not None and obj.metadata is not None:
        rep = check_gradient_dominance(obj, dom.p, dom.mu, dom.radius,
                                       dom.n_samples, seed=cfg.init.base_seed)
        reports["dominance"] = {
            "holds": rep.holds,
            "worst_margin": rep.worst_margin,
            "mu_max_estimate": rep.mu_max_estimate,
            "n_evaluated": rep.n_evaluated,
        }

    needs_params = cfg.analysis.run_bounds or cfg.analysis.run_closeness
    if not needs_params:
        return reports
    if dom is None:
        raise ValueError("bounds/closeness analysis requires a dominance section "
                         "providing p and mu")

    x0 = cfg.init.draw(obj.dimension, cfg.init.base_seed)
    for opt in flow_optimizers(cfg):
        if cfg.analysis.run_bounds:
            reports["bounds"][opt.name] = bound_report(
                obj, opt.config, x0, dom.p, dom.mu, h_ref=cfg.analysis.h_ref)
        if cfg.analysis.run_closeness:
            params = dominance_params(dom.p, dom.mu, opt.config.flow.q,
                                      opt.config.flow.c)
            grad0 = float(np.linalg.norm(obj.gradient(x0)))
            horizon = 1.2 * settling_time_bound(params, opt.config.flow.c, grad0)
            reports["closeness"][opt.name] = closeness_table(
                obj, opt.config, x0, horizon)
    return reports


def _write_reports(reports: dict, cfg: ExperimentConfig, out: Path) -> None:
    payload = {
        "dominance": reports["dominance"],
        "bounds": reports["bounds"],
        "closeness": {name: [{"eta": e, "eps": v} for e, v in rows]
                      for name, rows in reports["closeness"].items()},
    }
    (out / "analysis.json").write_text(json.dumps(payload, indent=2))
