"""Independent numerical checks of the library's core claims.

Each oracle is deterministic (fixed seeds) and returns an ``OracleResult``
holding a pass flag, a one-line summary and the measured numbers. They are
shared by the test suite and by ``marigold-bench oracle <name>``.
"""

from __future__ import annotations

import filecmp
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import roots_legendre

from .balancers import min_norm_solve
from .bench import run_experiment
from .bilevel import (MarigoldOptions, WorstCaseDecrement, exact_surrogate_hypergrad_fd,
                      generalized_step, hypergrad, init_marigold_state, marigold_step,
                      surrogate_in_logits, surrogate_value, worst_case_decrement)
from .config import parse_config_text
from .core import make_rng, smoothed_value_mc, zo_gradient_mc
from .metrics import delta_k, higher, lower
from .optimizers import SGD
from .problems import (FULL, MlpSpec, QuadraticProblem, make_mlp_problem,
                       random_quadratic_spec)


@dataclass
class OracleResult:
    name: str
    passed: bool
    summary: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.summary} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# 1. smoothing bias bounds

@_timed
def smoothing_bias(n_samples: int = 200_000, seed: int = 0, d: int = 8) -> OracleResult:
    """Value and gradient bias of ball smoothing on a quadratic with known smoothness."""
    rng = make_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    a = (q * np.linspace(1.0, 4.0, d)) @ q.T
    a = 0.5 * (a + a.T)
    ell = float(np.linalg.eigvalsh(a)[-1])
    c = rng.standard_normal(d)
    x = rng.standard_normal(d)

    def f(pts):
        r = np.atleast_2d(pts) - c
        return 0.5 * np.einsum("ij,jk,ik->i", r, a, r)

    f0, g0 = float(f(x)[0]), a @ (x - c)
    rows, ok = [], True
    for r in (1e-1, 1e-2, 1e-3):
        fr, se_f = smoothed_value_mc(f, x, r, n_samples, rng, batched=True, return_stderr=True)
        val_err = abs(fr - f0)
        val_bound = ell * r * r / 2 + 3 * se_f
        mean, se = zo_gradient_mc(f, x, r, n_samples, rng)
        grad_err = float(np.linalg.norm(mean - g0))
        grad_bound = ell * r + 3 * float(np.sqrt(np.sum(se ** 2)))
        ok &= val_err <= val_bound and grad_err <= grad_bound
        rows.append({"r": r, "value_err": val_err, "value_bound": val_bound,
                     "exact_value_bias": r * r * np.trace(a) / (2 * (d + 2)),
                     "grad_err": grad_err, "grad_bound": grad_bound})
    worst = max(max(x["value_err"] / x["value_bound"], x["grad_err"] / x["grad_bound"]) for x in rows)
    return OracleResult("smoothing_bias", bool(ok),
                        f"worst error/bound ratio {worst:.3f} over r in (1e-1, 1e-2, 1e-3)",
                        {"rows": rows, "ell": ell})


# ---------------------------------------------------------------------------
# 2. min-norm solver vs grid search

def _simplex_grid(m: int, res: int) -> np.ndarray:
    if m == 2:
        t = np.arange(res + 1) / res
        return np.column_stack([t, 1 - t])
    i, j = np.meshgrid(np.arange(res + 1), np.arange(res + 1), indexing="ij")
    keep = i + j <= res
    i, j = i[keep], j[keep]
    return np.column_stack([i, j, res - i - j]) / res


@_timed
def min_norm_grid(n_instances: int = 50, seed: int = 1, res: int = 1000) -> OracleResult:
    """``min_norm_solve`` against brute-force simplex grids, plus the descent property."""
    rng = make_rng(seed)
    worst_gap, worst_desc = 0.0, -np.inf
    for m in (2, 3):
        grid = _simplex_grid(m, res)
        for _ in range(n_instances):
            d = int(rng.integers(2, 6))
            G = rng.standard_normal((m, d)) * rng.uniform(0.1, 3.0)
            lam, gap = min_norm_solve(G)
            grid_gap = float(np.min(np.linalg.norm(grid @ G, axis=1)))
            worst_gap = max(worst_gap, abs(gap - grid_gap))
            dstar = G.T @ lam
            worst_desc = max(worst_desc, float(np.max(dstar @ dstar - G @ dstar)))
    ok = worst_gap <= 1e-3 and worst_desc <= 1e-8
    return OracleResult("min_norm_grid", bool(ok),
                        f"max |gap - grid gap| {worst_gap:.2e} (tol 1e-3), "
                        f"max descent violation {worst_desc:.2e} (tol 1e-8)",
                        {"max_gap_diff": worst_gap, "max_descent_violation": worst_desc})


# ---------------------------------------------------------------------------
# 3. hypergradient fidelity

def _hypergrad_setup(seed: int = 2):
    rng = make_rng(seed)
    problem = QuadraticProblem(*random_quadratic_spec(rng, 3, 4, cond=5.0).validate())
    theta = rng.standard_normal(4)
    u = 0.5 * rng.standard_normal(3)
    v = 0.5 * rng.standard_normal(3)
    return problem, theta, u, v, SGD(0.05)


def _sphere_rule(n: int = 16, n_phi: int = 32):
    """Product quadrature on the unit sphere in R^3 (exact for low-degree polynomials)."""
    z, wz = roots_legendre(n)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1 - zz ** 2)
    pts = np.column_stack([(s * np.cos(pp)).ravel(), (s * np.sin(pp)).ravel(), zz.ravel()])
    w = np.repeat(wz, n_phi) / (2 * n_phi)   # weights sum to 1
    return pts, w


def smoothed_hypergrad_quadrature(problem, theta, u, v, beta, opt, r, losses) -> np.ndarray:
    """Expectation of the single-point estimator (gradient of the smoothed
    surrogate) by deterministic quadrature of its mirrored form."""
    pts, w = _sphere_rule()
    m = u.size
    with problem.counter.paused():
        vals = np.array([surrogate_in_logits(u + r * p, v, beta, theta, problem, FULL, opt, losses)
                         - surrogate_in_logits(u - r * p, v, beta, theta, problem, FULL, opt, losses)
                         for p in pts])
    return (m / (2 * r)) * (w * vals) @ pts


@_timed
def hypergrad_fidelity(n_samples: int = 100_000, seed: int = 2, r: float = 1e-2) -> OracleResult:
    """Mean of many single-point hypergradient estimates against the finite-difference oracle."""
    problem, theta, u, v, opt = _hypergrad_setup(seed)
    beta = 1.0
    with problem.counter.paused():
        base = problem.eval_losses(theta)
    fd = exact_surrogate_hypergrad_fd(u, v, beta, theta, problem, FULL, opt, losses=base)
    bias = {}
    for rr in (1e-1, 1e-2):
        smooth = smoothed_hypergrad_quadrature(problem, theta, u, v, beta, opt, rr, base)
        bias[rr] = float(np.linalg.norm(smooth - fd))
    shrink = bias[1e-1] / max(bias[1e-2], 1e-300)

    state = replace(init_marigold_state(3, beta=beta, r=r), u=u, v=v)
    rng = make_rng(seed + 100)
    samples = np.empty((n_samples, 3))
    with problem.counter.paused():
        for k in range(n_samples):
            samples[k] = hypergrad(state, theta, problem, FULL, opt, rng).g_u
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n_samples)
    err = np.abs(mean - fd)
    tol = 3 * se + bias[r] if r in bias else 3 * se
    ok = bool(np.all(err <= tol) and shrink >= 5.0)
    return OracleResult("hypergrad_fidelity", ok,
                        f"max |mean - fd| / (3 SE + bias) = {float(np.max(err / tol)):.3f}; "
                        f"bias shrink r 1e-1 -> 1e-2: {shrink:.1f}x (need >= 5)",
                        {"fd": fd, "mean": mean, "se": se, "bias": bias, "shrink": shrink})


# ---------------------------------------------------------------------------
# 4. min-max identity

@_timed
def surrogate_identity(n_states: int = 20, seed: int = 3, res: int = 100) -> OracleResult:
    """Max over a rho grid of the surrogate equals the worst-case decrement."""
    rng = make_rng(seed)
    grid = _simplex_grid(3, res)
    worst = 0.0
    for _ in range(n_states):
        problem = QuadraticProblem(*random_quadratic_spec(rng, 3, 5).validate())
        theta = rng.standard_normal(5)
        lam = rng.dirichlet(np.ones(3))
        opt = SGD(float(rng.uniform(0.01, 0.3)))
        best = max(surrogate_value(lam, rho, theta, problem, FULL, opt) for rho in grid)
        wcd = worst_case_decrement(lam, theta, problem, FULL, opt)
        worst = max(worst, abs(best - wcd))
    return OracleResult("surrogate_identity", worst <= 1e-12,
                        f"max |grid max - worst-case decrement| {worst:.2e} (tol 1e-12)",
                        {"max_abs_diff": worst})


# ---------------------------------------------------------------------------
# 5. Pareto convergence

PARETO_CONFIG = """
[problem]
kind = quadratic
m = 2
d = 2
init_scale = 3.0

[run]
balancer = marigold, ls
seeds = 0, 1, 2
iterations = 5000
log_every = 1

[optimizer]
kind = sgd
lr = 0.1
"""


def _min_gap(path) -> float:
    data = np.genfromtxt(path, delimiter=",", names=True, comments="#")
    return float(np.nanmin(data["stat_gap"]))


@_timed
def pareto_convergence(out_dir=None) -> OracleResult:
    """MARIGOLD (and uniform weights for comparison) on two conflicting identity quadratics."""
    cfg = parse_config_text(PARETO_CONFIG, "<pareto>")
    with tempfile.TemporaryDirectory() as tmp:
        table = run_experiment(cfg, out_dir or tmp)
        gaps = {(r.method, r.seed): _min_gap(r.path) for r in table.records}
    mg = [gaps["marigold", s] for s in cfg.run.seeds]
    ls = [gaps["ls", s] for s in cfg.run.seeds]
    ok = table.exit_code == 0 and max(mg) < 1e-3
    return OracleResult("pareto_convergence", bool(ok),
                        f"MARIGOLD best gap per seed {', '.join(f'{g:.1e}' for g in mg)} (need < 1e-3); "
                        f"LS {', '.join(f'{g:.1e}' for g in ls)}",
                        {"marigold": mg, "ls": ls})


# ---------------------------------------------------------------------------
# 6. evaluation counters

@_timed
def eval_counters(iterations: int = 5) -> OracleResult:
    """Per-iteration evaluation charges for MARIGOLD and the gradient balancers."""
    rows, ok = {}, True
    for m in (2, 8, 64):
        text = (f"[problem]\nkind = quadratic\nm = {m}\nd = {m}\n"
                f"[run]\nbalancer = marigold, mgda, pcgrad, linearized\nseeds = 0\n"
                f"iterations = {iterations}\n")
        cfg = parse_config_text(text, "<counters>")
        with tempfile.TemporaryDirectory() as tmp:
            table = run_experiment(cfg, tmp)
        rows[m] = table.per_iter
        mg = table.per_iter["marigold"]
        ok &= mg == {"weighted_gevals": 2, "pertask_gevals": 0, "loss_evals": 3}
        for b in ("mgda", "pcgrad", "linearized"):
            ok &= table.per_iter[b]["pertask_gevals"] == m and table.per_iter[b]["weighted_gevals"] == 0
    return OracleResult("eval_counters", bool(ok),
                        "MARIGOLD 2 weighted + 3 loss evals per step; balancers m per-task evals "
                        "per step, for m in (2, 8, 64)" if ok else f"unexpected counts {rows}",
                        {"per_iter": rows})


# ---------------------------------------------------------------------------
# 7. relative degradation table

CITYSCAPES_SPECS = [higher("mIoU"), higher("pix_acc"), lower("abs_err"), lower("rel_err")]
CITYSCAPES_STL = [74.01, 93.16, 0.0125, 27.77]
CITYSCAPES_ROWS = {
    "MGDA": ([68.84, 91.54, 0.0309, 33.50], 44.14),
    "PCGrad": ([75.13, 93.48, 0.0154, 42.07], 18.29),
    "CAGrad": ([75.16, 93.48, 0.0141, 37.60], 11.64),
}


@_timed
def delta_k_table() -> OracleResult:
    """Recompute the published relative-degradation column from its own metric rows."""
    got = {k: delta_k(row, CITYSCAPES_STL, CITYSCAPES_SPECS) for k, (row, _) in CITYSCAPES_ROWS.items()}
    diffs = {k: abs(got[k] - CITYSCAPES_ROWS[k][1]) for k in got}
    ok = all(d <= 0.2 for d in diffs.values())
    return OracleResult("delta_k_table", ok,
                        ", ".join(f"{k} {got[k]:.2f} vs {CITYSCAPES_ROWS[k][1]:.2f}" for k in got)
                        + " (tol 0.2)", {"computed": got, "abs_diff": diffs})


# ---------------------------------------------------------------------------
# 8. generalized framework recovers MARIGOLD

@_timed
def generalized_recovery(iterations: int = 1000, seed: int = 4) -> OracleResult:
    """``generalized_step`` with the worst-case decrement objective retraces ``marigold_step``."""
    problem = make_mlp_problem(MlpSpec(n_tasks=3, pool_size=128, correlation=-0.3))
    theta0 = problem.init_params(make_rng(seed))
    opts = MarigoldOptions(batch_size=16)
    runs = []
    for use_general in (False, True):
        rng = make_rng(seed + 1)
        state = init_marigold_state(3, r=1e-2, upper_lr_u=1e-2, upper_lr_v=1e-2)
        theta, opt = theta0.copy(), SGD(0.05)
        trace = []
        for _ in range(iterations):
            if use_general:
                res = generalized_step(state, theta, WorstCaseDecrement(), problem, opt, rng, opts)
            else:
                res = marigold_step(state, theta, problem, opt, rng, opts)
            state, theta, opt = res.state, res.theta, res.optimizer
            trace.append(np.concatenate([theta, state.u, state.v, res.lam, res.rho, res.post_losses]))
        runs.append(np.array(trace))
    same = runs[0].tobytes() == runs[1].tobytes()
    moved = float(np.max(np.abs(runs[0][-1] - runs[0][0])))
    return OracleResult("generalized_recovery", bool(same and moved > 0),
                        f"{iterations} iterations bit-identical: {same}", {"identical": same})


# ---------------------------------------------------------------------------
# 9. auxiliary learning

AUX_CONFIG = """
[problem]
kind = aux
base = quadratic
m = 3
d = 3
target = 0
init_scale = 2.0

[run]
balancer = marigold, ls
seeds = 0, 1, 2
iterations = 2000

[optimizer]
kind = sgd
lr = 0.05

[aux]
omega = 0.0
r = 1.0
lr = 0.01
upper_optimizer = sgd
"""


def _final_target_loss(path, target: int) -> float:
    data = np.genfromtxt(path, delimiter=",", names=True, comments="#")
    return float(data[f"loss_{target + 1}"][-1])


@_timed
def auxiliary_benefit(seeds=(0, 1, 2)) -> OracleResult:
    """Learned auxiliary weight against the fixed ``omega = 0`` baseline (target-task loss)."""
    text = AUX_CONFIG.replace("seeds = 0, 1, 2", "seeds = " + ", ".join(map(str, seeds)))
    cfg = parse_config_text(text, "<aux>")
    with tempfile.TemporaryDirectory() as tmp:
        table = run_experiment(cfg, tmp)
        final = {(r.method, r.seed): _final_target_loss(r.path, cfg.problem.target)
                 for r in table.records}
        omegas = {r.seed: r.extra.get("omega") for r in table.records if r.method == "marigold"}
    learned = [final["marigold", s] for s in seeds]
    fixed = [final["ls", s] for s in seeds]
    ok = table.exit_code == 0 and all(a <= b for a, b in zip(learned, fixed))
    return OracleResult("auxiliary_benefit", bool(ok),
                        "target loss learned vs fixed: "
                        + "; ".join(f"{a:.4f} vs {b:.4f}" for a, b in zip(learned, fixed))
                        + "; final omega " + ", ".join(f"{omegas[s]:.3f}" for s in seeds),
                        {"learned": learned, "fixed": fixed, "omega": omegas})


# ---------------------------------------------------------------------------
# 10. determinism

DETERMINISM_CONFIG = """
[problem]
kind = mlp
m = 3
pool_size = 128
correlation = -0.5

[run]
balancer = marigold, mgda, pcgrad, rlw, si
seeds = 3, 1, 2
iterations = 40
batch_size = 16

[optimizer]
kind = adam
lr = 0.01

[marigold]
r = 0.01
upper_lr_u = 0.01
upper_lr_v = 0.01
"""


def _same_files(a: Path, b: Path, names) -> list[str]:
    return [n for n in names if not filecmp.cmp(a / n, b / n, shallow=False)]


@_timed
def determinism(jobs: int = 2) -> OracleResult:
    """Repeated runs give byte-identical CSVs; seed order and process layout do not matter."""
    cfg = parse_config_text(DETERMINISM_CONFIG, "<determinism>")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        run_experiment(cfg, tmp / "a")
        run_experiment(cfg, tmp / "b")
        names = sorted(p.name for p in (tmp / "a").glob("*.csv"))
        diff_repeat = _same_files(tmp / "a", tmp / "b", names)
        shuffled = [2, 3, 1]
        run_experiment(cfg, tmp / "c", seeds=shuffled, jobs=jobs)
        per_seed = [n for n in names if n != "summary.csv"]
        diff_shuffle = _same_files(tmp / "a", tmp / "c", per_seed)
    ok = not diff_repeat and not diff_shuffle and len(names) == 16
    return OracleResult("determinism", ok,
                        f"{len(names)} files; differing on repeat: {diff_repeat or 'none'}; "
                        f"per-seed files differing after seed shuffle: {diff_shuffle or 'none'}",
                        {"repeat": diff_repeat, "shuffle": diff_shuffle})


ORACLES = {
    "smoothing_bias": smoothing_bias,
    "min_norm_grid": min_norm_grid,
    "hypergrad_fidelity": hypergrad_fidelity,
    "surrogate_identity": surrogate_identity,
    "pareto_convergence": pareto_convergence,
    "eval_counters": eval_counters,
    "delta_k_table": delta_k_table,
    "generalized_recovery": generalized_recovery,
    "auxiliary_benefit": auxiliary_benefit,
    "determinism": determinism,
}


def run_oracle(name: str) -> OracleResult:
    try:
        fn = ORACLES[name]
    except KeyError:
        raise KeyError(f"unknown oracle {name!r}; available: {', '.join(ORACLES)}") from None
    return fn()
