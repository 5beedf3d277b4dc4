"""Deterministic multi-seed benchmark runner.

Each ``(method, seed)`` pair writes ``{method}_seed{seed}.csv`` with header
``iter,loss_1..m,lambda_1..m,rho_1..m,stat_gap,decrement,weighted_gevals,
pertask_gevals,elapsed_ms``. Losses and the stationarity gap are measured on
the full pool with the evaluation counter paused; the two counter columns are
cumulative. After all runs finish, ``summary.csv`` collects final losses,
relative degradation against the baseline method, mean rank and per-iteration
evaluation costs.

The random stream of a run depends only on ``(seed, method)``, and the initial
parameters only on ``seed``, so runs are independent of the order (and the
process) in which they execute.
"""

from __future__ import annotations

import csv
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balancers import GRADIENT_BALANCERS, gradient_balance, loss_balance_weights
from .bilevel import (MarigoldOptions, init_auxiliary_state, init_marigold_state,
                      auxiliary_step, marigold_step)
from .config import RunConfig
from .core import make_rng, uniform_simplex
from .errors import DomainError, MarigoldError
from .metrics import delta_k, lower, mean_rank, pareto_stationarity_gap
from .optimizers import COMMIT, apply_weighted_update, make_optimizer
from .problems import (AuxProblemSpec, MlpSpec, QuadraticSpec, conflicting_quadratics,
                       make_aux_problem, make_mlp_problem, make_quadratic_suite,
                       random_quadratic_spec)

OUT_ENV = "MARIGOLD_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def build_problem(cfg: RunConfig):
    """A fresh problem instance (with its own evaluation counter)."""
    p = cfg.problem
    if p.kind == "quadratic":
        if p.curvature == "identity":
            return conflicting_quadratics(p.m, p.d, p.spread)
        spec = random_quadratic_spec(make_rng(p.data_seed), p.m, p.d, p.cond, p.center_scale)
        return make_quadratic_suite(spec)
    mlp = MlpSpec(p.input_dim, tuple(p.shared), p.m, p.pool_size, p.noise, p.correlation,
                  p.teacher_hidden, p.data_seed)
    if p.kind == "mlp":
        return make_mlp_problem(mlp)
    main = mlp if p.base == "mlp" else QuadraticSpec(p.spread * np.eye(p.m, p.d))
    return make_aux_problem(AuxProblemSpec(main, p.target))


def initial_params(problem, seed: int, scale: float) -> np.ndarray:
    # tagged so the stream never coincides with a problem's data stream
    rng = make_rng([seed, zlib.crc32(b"init")])
    if hasattr(problem, "init_params"):
        return problem.init_params(rng, scale)
    return scale * rng.standard_normal(problem.d)


def run_stream(seed: int, method: str) -> np.random.Generator:
    return make_rng([seed, zlib.crc32(method.encode())])


def resolve_out_dir(cfg: RunConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.run.out:
        return Path(cfg.run.out)
    return Path(os.environ.get(OUT_ENV, "runs"))


# ---------------------------------------------------------------------------
# one run

@dataclass
class RunRecord:
    method: str
    seed: int
    m: int
    iterations: int
    final_losses: np.ndarray
    final_gap: float
    counts: dict
    status: str = "ok"
    path: str = ""
    extra: dict = field(default_factory=dict)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def csv_header(m: int) -> list[str]:
    cols = ["iter"]
    for name in ("loss", "lambda", "rho"):
        cols += [f"{name}_{i + 1}" for i in range(m)]
    return cols + ["stat_gap", "decrement", "weighted_gevals", "pertask_gevals", "elapsed_ms"]


class _Stepper:
    """Holds the per-method state and advances one iteration at a time."""

    def __init__(self, method, cfg, problem, rng):
        self.method = method
        self.cfg = cfg
        self.problem = problem
        self.rng = rng
        o = cfg.optimizer
        self.opt = make_optimizer(o.kind, o.lr, o.beta1, o.beta2, o.eps)
        self.batch_size = cfg.run.batch_size or None
        mg = cfg.marigold
        self.options = MarigoldOptions(self.batch_size, mg.perturb_mode, mg.batch_policy,
                                       mg.update_schedule, mg.antithetic)
        self.aux = cfg.problem.kind == "aux"
        if method == "marigold" and self.aux:
            a = cfg.aux
            self.state = init_auxiliary_state(a.omega, a.r, a.lr, a.upper_optimizer)
        elif method == "marigold":
            self.state = init_marigold_state(problem.m, mg.beta, mg.r, mg.upper_lr_u,
                                             mg.upper_lr_v, mg.upper_optimizer)

    def initial_weights(self):
        m = self.problem.m
        if self.aux:
            omega = self.state.omega if self.method == "marigold" else self.cfg.aux.omega
            return self.problem.lower_weights(omega), np.full(m, np.nan)
        rho = uniform_simplex(m) if self.method == "marigold" else np.full(m, np.nan)
        if self.method == "pcgrad":
            return np.full(m, np.nan), rho
        return uniform_simplex(m), rho

    def step(self, theta):
        """Advance once; returns ``(theta', lam, rho, decrement)``."""
        p, m = self.problem, self.problem.m
        nan = np.full(m, np.nan)
        if self.method == "marigold":
            if self.aux:
                res = auxiliary_step(self.state, theta, p, self.opt, self.rng, self.options)
            else:
                res = marigold_step(self.state, theta, p, self.opt, self.rng, self.options)
            self.state, self.opt = res.state, res.optimizer
            rho = nan if res.rho is None else res.rho
            return res.theta, res.lam, rho, res.decrement

        batch = p.sample_batch(self.rng, self.batch_size)
        with p.counter.paused():
            before = p.eval_losses(theta, batch)
        if self.method in GRADIENT_BALANCERS:
            G = p.eval_gradients(theta, batch)
            out = gradient_balance(self.method, G, self.rng, self.opt.lr)
            self.opt, theta_new = self.opt.step(theta, out.direction)
            lam = nan if out.weights is None else out.weights
        else:
            if self.aux:
                lam = p.lower_weights(self.cfg.aux.omega)
            else:
                losses = p.eval_losses(theta, batch) if self.method == "si" else before
                lam = loss_balance_weights(self.method, losses, self.rng)
            theta_new, self.opt = apply_weighted_update(self.opt, lam, theta, p, batch, COMMIT)
        with p.counter.paused():
            dec = float(np.max(p.eval_losses(theta_new, batch) - before))
        return theta_new, lam, nan, dec


def _full_metrics(problem, theta):
    with problem.counter.paused():
        losses = problem.eval_losses(theta)
        gap = pareto_stationarity_gap(problem.eval_gradients(theta)) if np.all(np.isfinite(losses)) else np.nan
    return losses, gap


def run_single(cfg: RunConfig, method: str, seed: int, out_dir) -> RunRecord:
    """Run one ``(method, seed)`` pair and write its trajectory CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    m, K = problem.m, cfg.run.iterations
    theta = initial_params(problem, seed, cfg.problem.init_scale)
    stepper = _Stepper(method, cfg, problem, run_stream(seed, method))
    timing = cfg.run.timing
    t0 = time.perf_counter()
    path = out_dir / f"{method}_seed{seed}.csv"
    status = "ok"

    def row(k, losses, lam, rho, gap, dec):
        c = problem.counter
        ms = (time.perf_counter() - t0) * 1e3 if timing else 0.0
        return ([_fmt(k)] + [_fmt(x) for x in losses] + [_fmt(x) for x in lam]
                + [_fmt(x) for x in rho] + [_fmt(gap), _fmt(dec), _fmt(c.weighted_gevals),
                                            _fmt(c.pertask_gevals), _fmt(ms)])

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(m))
        losses, gap = _full_metrics(problem, theta)
        lam, rho = stepper.initial_weights()
        w.writerow(row(0, losses, lam, rho, gap, np.nan))
        for k in range(1, K + 1):
            reason = None
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    theta, lam, rho, dec = stepper.step(theta)
                    losses, gap = None, np.nan
                    if np.all(np.isfinite(theta)):
                        losses, gap = _full_metrics(problem, theta)
                if losses is None or not np.all(np.isfinite(losses)):
                    reason = "non-finite loss"
            except (MarigoldError, FloatingPointError) as exc:
                reason = str(exc).replace(",", ";")
            if reason is not None:
                status = f"diverged:iter={k}"
                w.writerow([f"#status:{status}:{reason}"])
                break
            if k % cfg.run.log_every == 0 or k == K:
                w.writerow(row(k, losses, lam, rho, gap, dec))

    if status != "ok":
        losses, gap = np.full(m, np.nan), np.nan
        k_done = k - 1
    else:
        k_done = K
    extra = {}
    if method == "marigold" and cfg.problem.kind == "aux":
        extra["omega"] = stepper.state.omega
    return RunRecord(method, seed, m, k_done, np.asarray(losses, dtype=float), float(gap),
                     problem.counter.snapshot(), status, str(path), extra)


def _run_job(args):
    return run_single(*args)


# ---------------------------------------------------------------------------
# experiment

@dataclass
class SummaryTable:
    methods: list
    seeds: list
    final_losses: dict      # method -> (n_seeds, m) array
    final_gap: dict         # method -> mean gap
    delta_k: dict           # method -> percent vs baseline
    mean_rank: dict         # method -> MR
    per_iter: dict          # method -> {counter: evals per iteration}
    status: dict
    baseline: str
    records: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if all(s == "ok" for s in self.status.values()) else EXIT_NUMERIC

    def header(self, m: int) -> list[str]:
        return (["method", "seeds", "status"] + [f"final_loss_{i + 1}" for i in range(m)]
                + ["final_stat_gap", "delta_k_pct", "mean_rank", "weighted_gevals_per_iter",
                   "pertask_gevals_per_iter", "loss_evals_per_iter",
                   "weighted_gevals_total", "pertask_gevals_total"])


def summarize(records: list[RunRecord], methods, baseline: str) -> SummaryTable:
    methods = list(methods)
    seeds = sorted({r.seed for r in records})
    by = {(r.method, r.seed): r for r in records}
    m = records[0].m
    specs = [lower(f"loss_{i + 1}") for i in range(m)]
    final = {mt: np.array([by[mt, s].final_losses for s in seeds]) for mt in methods}
    gap = {mt: float(np.mean([by[mt, s].final_gap for s in seeds])) for mt in methods}
    status = {mt: "ok" if all(by[mt, s].status == "ok" for s in seeds) else "diverged" for mt in methods}

    dk = {}
    base_mean = final[baseline].mean(axis=0)
    for mt in methods:
        try:
            dk[mt] = delta_k(final[mt].mean(axis=0), base_mean, specs)
        except (DomainError, ValueError):
            dk[mt] = float("nan")

    # rank per seed, then average over seeds
    mr = {mt: float("nan") for mt in methods}
    if len(methods) == 1:
        mr[methods[0]] = 1.0
    elif all(s == "ok" for s in status.values()):
        ranks = np.mean([mean_rank(np.array([by[mt, s].final_losses for mt in methods]), specs)
                         for s in seeds], axis=0)
        mr = {mt: float(x) for mt, x in zip(methods, ranks)}

    per_iter, totals = {}, {}
    for mt in methods:
        iters = sum(by[mt, s].iterations for s in seeds)
        counts = {key: sum(by[mt, s].counts[key] for s in seeds)
                  for key in ("weighted_gevals", "pertask_gevals", "loss_evals")}
        per_iter[mt] = {key: (v / iters if iters else float("nan")) for key, v in counts.items()}
        totals[mt] = counts
    table = SummaryTable(methods, seeds, final, gap, dk, mr, per_iter, status, baseline, records)
    table.totals = totals
    return table


def write_summary(table: SummaryTable, path) -> None:
    m = next(iter(table.final_losses.values())).shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header(m))
        for mt in table.methods:
            pi, tot = table.per_iter[mt], table.totals[mt]
            w.writerow([mt, " ".join(str(s) for s in table.seeds), table.status[mt]]
                       + [_fmt(x) for x in table.final_losses[mt].mean(axis=0)]
                       + [_fmt(table.final_gap[mt]), _fmt(table.delta_k[mt]), _fmt(table.mean_rank[mt]),
                          _fmt(pi["weighted_gevals"]), _fmt(pi["pertask_gevals"]), _fmt(pi["loss_evals"]),
                          _fmt(tot["weighted_gevals"]), _fmt(tot["pertask_gevals"])])


def run_experiment(cfg: RunConfig, out_dir=None, seeds=None, jobs: int = 1) -> SummaryTable:
    """Run every configured method on every seed, then write ``summary.csv``."""
    out = resolve_out_dir(cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.run.seeds if seeds is None else seeds)
    jobs_args = [(cfg, mt, s, out) for mt in cfg.methods for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_job, jobs_args))
    else:
        records = [_run_job(a) for a in jobs_args]
    table = summarize(records, cfg.methods, cfg.baseline)
    write_summary(table, out / "summary.csv")
    return table
