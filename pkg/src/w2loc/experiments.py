"""Configuration-driven experiments: landscapes, location runs, noise tables
and method comparisons.

Every experiment is deterministic given (config, seed).  Independent units
(scan nodes, trials, ensemble members) may run on a thread pool; results
are always aggregated in unit order and floats are written with repr, so
re-running produces byte-identical CSV files.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .adjoint import LocationProblem, TimeWindow, misfit, write_kernels_csv
from .altmetrics import NonPositiveShiftError, default_shift, krn, qwn_c, rld
from .config import ExperimentConfig
from .locate import (
    CORRECT,
    DIVERGENCE,
    ERROR_CONVERGENCE,
    LocateRun,
    bfgs_locate,
    classify,
    gn_locate,
    lmf_locate,
    lmf_locate_noise,
)
from .signal import NoiseSpec, RickerParams, inject_noise, integrate, make_ricker_trace
from .w2core import misfit_distance_reg
from .wavesim import (
    AcousticSolver,
    NumericalBlowup,
    SolverConfig,
    SourceParams,
    TraceSet,
    VelocityModel,
)

log = logging.getLogger(__name__)

#: Noise-theorem examples: (kind, params, lambda*).
NOISE_EXAMPLES = {
    "uniform": ("uniform", (-0.1, 0.1), 1.0 / 300.0),
    "normal": ("normal", (0.0, 0.1), 1.0 / 100.0),
}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path, header: Sequence[str], rows, metadata: Optional[dict] = None) -> None:
    """CSV with a leading '# key: value' metadata block."""
    with open(path, "w", newline="") as fh:
        for k, v in (metadata or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _pool_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


@dataclass
class Setup:
    vm: VelocityModel
    scfg: SolverConfig
    solver: AcousticSolver


def build_setup(cfg: ExperimentConfig) -> Setup:
    vm = cfg.medium.build(cfg.build_grid())
    scfg = cfg.solver.build(vm)
    return Setup(vm, scfg, AcousticSolver(vm, scfg))


def record(setup: Setup, src: SourceParams, receivers) -> TraceSet:
    sources, _ = setup.solver.source_terms(src)
    ridx = receivers.node_indices(setup.vm.grid)
    tr, _ = setup.solver.run(1, sources, [(0, int(i), 0) for i in ridx], [])
    return TraceSet(setup.scfg.dt, tr)


def add_noise(clean: TraceSet, ratio: float, rng: np.random.Generator):
    """d_r = u_r + N_r with N_r ~ N(0, sigma_r^2) i.i.d. per sample,
    sigma_r = ratio * max_t |u_r|.  Returns (noisy TraceSet, sigma array)."""
    sig = ratio * np.max(np.abs(clean.data), axis=1)
    out = np.empty_like(clean.data)
    for r in range(len(clean)):
        spec = NoiseSpec.normal(0.0, float(sig[r]), clean.n - 1)
        out[r] = inject_noise(clean[r], spec, rng).samples
    return TraceSet(clean.dt, out), sig


def make_problem(cfg: ExperimentConfig, setup: Setup, observed: TraceSet, lam=None,
                 receivers=None) -> LocationProblem:
    win = None if cfg.noise.window is None else TimeWindow(*cfg.noise.window)
    wl = cfg.truth.wavelet if cfg.truth is not None else RickerParams()
    P = LocationProblem(setup.vm, setup.scfg, receivers or cfg.receivers, observed,
                        wavelet=wl, lam=lam, window=win, gradient=cfg.gradient,
                        jacobian=cfg.jacobian)
    P.solver = setup.solver
    return P


# ----------------------------------------------------------------- landscape

def landscape_metric(name: str, observed: TraceSet, c: Optional[float] = None):
    """Per-scan-node misfit sum over receivers for the chosen metric."""
    if name == "qwn2":
        return lambda syn: sum(misfit(syn[r], observed[r]) for r in range(len(observed)))
    if name == "rld":
        return lambda syn: sum(rld(observed[r], syn[r]) for r in range(len(observed)))
    if name == "krn":
        return lambda syn: sum(krn(observed[r], syn[r])[0] for r in range(len(observed)))
    if name == "qwnc":
        shift = default_shift([observed[r] for r in range(len(observed))]) if c is None else c
        return lambda syn: sum(qwn_c(observed[r], syn[r], shift) for r in range(len(observed)))
    raise ValueError(f"unknown metric {name!r}")


@dataclass
class LandscapeResult:
    xs: np.ndarray
    zs: np.ndarray
    psi: np.ndarray  # (len(zs), len(xs))
    failures: int

    def argmin(self):
        j, i = np.unravel_index(np.nanargmin(self.psi), self.psi.shape)
        return float(self.xs[i]), float(self.zs[j])


def local_minima(psi: np.ndarray) -> List[tuple]:
    """Interior-or-edge nodes strictly below all existing 8-neighbours."""
    nz, nx = psi.shape
    out = []
    for j in range(nz):
        for i in range(nx):
            v = psi[j, i]
            if not np.isfinite(v):
                continue
            nb = psi[max(j - 1, 0) : j + 2, max(i - 1, 0) : i + 2]
            others = np.delete(nb.ravel(), (j - max(j - 1, 0)) * nb.shape[1] + (i - max(i - 1, 0)))
            others = others[np.isfinite(others)]
            if others.size and np.all(v < others):
                out.append((j, i))
    return out


def run_landscape(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> LandscapeResult:
    setup = build_setup(cfg)
    observed = record(setup, cfg.truth, cfg.receivers)
    metric = landscape_metric(cfg.scan.metric, observed, cfg.scan.c)
    xs, zs = cfg.scan.axes()
    nodes = [(x, z) for z in zs for x in xs]
    tau, wl = cfg.truth.tau, cfg.truth.wavelet

    def unit(xz):
        try:
            syn = record(setup, SourceParams(xz, tau, wl), cfg.receivers)
            return float(metric(syn))
        except (NumericalBlowup, NonPositiveShiftError, ValueError) as exc:
            log.warning("scan node %s failed: %s", xz, exc)
            return float("nan")

    vals = _pool_map(unit, nodes, threads)
    psi = np.array(vals).reshape(len(zs), len(xs))
    fails = int(np.sum(~np.isfinite(psi)))
    res = LandscapeResult(xs, zs, psi, fails)
    if out_dir is not None:
        md = cfg.metadata()
        md["failed_nodes"] = fails
        if cfg.scan.metric == "qwnc" and cfg.scan.c is None:
            md["qwnc_shift_value"] = repr(default_shift([observed[r] for r in range(len(observed))]))
        rows = [(x, z, v) for (x, z), v in zip(nodes, vals)]
        write_table(Path(out_dir) / f"landscape_{cfg.scan.metric}.csv", ["x", "z", "psi"], rows, md)
    return res


# ------------------------------------------------------------------- locate

@dataclass
class LocateOutcome:
    run: LocateRun
    truth: np.ndarray
    sigma: Optional[np.ndarray]
    problem: LocationProblem

    @property
    def error_star(self) -> float:
        return float(np.hypot(*(self.run.x_star[:2] - self.truth[:2])))

    @property
    def error_final(self) -> float:
        return float(np.hypot(*(self.run.x_final[:2] - self.truth[:2])))


def locate_once(cfg: ExperimentConfig, setup: Setup, truth: SourceParams, x0,
                rng: np.random.Generator, method: str = "lmf",
                receivers=None) -> LocateOutcome:
    receivers = receivers or cfg.receivers
    clean = record(setup, truth, receivers)
    sigma = None
    lam = None
    observed = clean
    if cfg.noise.ratio > 0:
        observed, sigma = add_noise(clean, cfg.noise.ratio, rng)
        lam = cfg.noise.lam if cfg.noise.lam is not None else cfg.noise.lam_factor * sigma**2
    P = make_problem(cfg, setup, observed, lam, receivers)
    tv = truth.vector
    if method == "lmf":
        run = lmf_locate_noise(P, x0, cfg.lmf, tv) if sigma is not None else lmf_locate(P, x0, cfg.lmf, tv)
    elif method == "gn":
        run = gn_locate(P, x0, cfg.lmf, tv)
    elif method == "bfgs":
        run = bfgs_locate(P, x0, cfg.lmf, tv)
    else:
        raise ValueError(f"unknown method {method!r}")
    return LocateOutcome(run, tv, sigma, P)


def run_locate(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> LocateOutcome:
    setup = build_setup(cfg)
    rng = np.random.default_rng(cfg.seed)
    res = locate_once(cfg, setup, cfg.truth, cfg.init, rng)
    if out_dir is not None:
        out = Path(out_dir)
        md = cfg.metadata()
        md["status"] = res.run.status
        if res.run.message:
            md["message"] = res.run.message
        traj = out / "trajectory.csv"
        res.run.write_csv(traj)
        body = traj.read_text()
        traj.write_text("".join(f"# {k}: {v}\n" for k, v in md.items()) + body)
        run = res.run
        rows = [("status", run.status), ("message", run.message),
                ("iterations", run.iterations), ("trials", run.n_trials),
                ("k_star", run.k_star), ("objective_star", float(run.objective_values[run.k_star])),
                ("x_star", float(run.x_star[0])), ("z_star", float(run.x_star[1])),
                ("tau_star", float(run.x_star[2])), ("error_star_km", res.error_star),
                ("x_final", float(run.x_final[0])), ("z_final", float(run.x_final[1])),
                ("tau_final", float(run.x_final[2])), ("error_final_km", res.error_final),
                ("tau_error_final_s", float(abs(run.x_final[2] - res.truth[2])))]
        write_table(out / "summary.csv", ["key", "value"], rows, md)
        kdir = out / "kernels"
        kdir.mkdir(exist_ok=True)
        for k, (_, ks) in enumerate(res.problem.kernel_log):
            write_kernels_csv(ks, kdir / f"kernels_{k:03d}.csv")
    return res


# -------------------------------------------------------------- noise table

@dataclass
class NoiseTable:
    multipliers: tuple
    N: tuple
    means: np.ndarray  # (len(multipliers), len(N))
    l2: np.ndarray  # (len(N),) mean squared L2 distance
    lam_star: float

    def slope(self, row: int) -> float:
        """Least-squares log-log slope of a row against N."""
        return float(np.polyfit(np.log(self.N), np.log(self.means[row]), 1)[0])


def run_noise_table(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> NoiseTable:
    kind, params, lam_star = NOISE_EXAMPLES[cfg.table.example]
    n = cfg.table.nodes
    dt = 5.0 / (n - 1)
    g = make_ricker_trace(RickerParams(1.0, 2.0), 2.5, dt, n)
    mult = cfg.table.multipliers
    Ns = cfg.table.N
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(Ns))

    def unit(k):
        rng = np.random.default_rng(seeds[k])
        spec = NoiseSpec(kind, params, Ns[k])
        acc = np.zeros(len(mult))
        l2 = 0.0
        # the same draws serve every lambda row (common random numbers)
        for _ in range(cfg.table.trials):
            fN = inject_noise(g, spec, rng)
            for a, m in enumerate(mult):
                acc[a] += misfit_distance_reg(fN, g, m * lam_star)
            l2 += integrate((fN.samples - g.samples) ** 2, dt)
        return acc / cfg.table.trials, l2 / cfg.table.trials

    cols = _pool_map(unit, list(range(len(Ns))), threads)
    means = np.column_stack([c[0] for c in cols])
    l2 = np.array([c[1] for c in cols])
    tab = NoiseTable(tuple(mult), tuple(Ns), means, l2, lam_star)
    if out_dir is not None:
        md = cfg.metadata()
        md.update(example=cfg.table.example, trials=cfg.table.trials, nodes=n,
                  lambda_star=repr(lam_star), l2_row="mean of int |f_N - g|^2 dt")
        rows = [(f"{m}*lambda*",) + tuple(means[a]) for a, m in enumerate(mult)]
        rows.append(("L2",) + tuple(l2))
        write_table(Path(out_dir) / f"noise_table_{cfg.table.example}.csv",
                    ["lambda"] + [str(N) for N in Ns], rows, md)
    return tab


# ----------------------------------------------------------- method compare

@dataclass
class EnsembleMember:
    index: int
    truth: np.ndarray
    init: np.ndarray
    method: str
    status: str
    verdict: str
    iterations: int
    error_km: float


def draw_ensemble(cfg: ExperimentConfig):
    """Seeded truths and initial guesses, both uniform over the sampling box."""
    e = cfg.ensemble
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([e.x_range[0], e.z_range[0], e.tau_range[0]])
    hi = np.array([e.x_range[1], e.z_range[1], e.tau_range[1]])
    truths = lo + (hi - lo) * rng.random((e.size, 3))
    inits = lo + (hi - lo) * rng.random((e.size, 3))
    return truths, inits


def run_method_compare(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                       methods: Optional[Sequence[str]] = None) -> List[EnsembleMember]:
    setup = build_setup(cfg)
    truths, inits = draw_ensemble(cfg)
    methods = tuple(methods or cfg.ensemble.methods)
    wl = cfg.truth.wavelet if cfg.truth is not None else RickerParams()
    units = [(i, m) for i in range(len(truths)) for m in methods]

    def unit(u):
        i, m = u
        truth = SourceParams(tuple(truths[i, :2]), float(truths[i, 2]), wl)
        rng = np.random.default_rng([cfg.seed, i])
        try:
            res = locate_once(cfg, setup, truth, inits[i], rng, method=m)
            verdict = classify(res.run, truths[i], cfg.ensemble.tol_km)
            return EnsembleMember(i, truths[i], inits[i], m, res.run.status, verdict,
                                  res.run.iterations, res.error_final)
        except (NumericalBlowup, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("ensemble member %d (%s) failed: %s", i, m, exc)
            return EnsembleMember(i, truths[i], inits[i], m, "failed", DIVERGENCE, -1, float("nan"))

    members = _pool_map(unit, units, threads)
    if out_dir is not None:
        out = Path(out_dir)
        md = cfg.metadata()
        md.update(ensemble_size=cfg.ensemble.size, methods=",".join(methods),
                  tol_km=cfg.ensemble.tol_km)
        rows = [(m.index, m.method, m.truth[0], m.truth[1], m.truth[2], m.init[0], m.init[1],
                 m.init[2], m.status, m.verdict, m.iterations, m.error_km) for m in members]
        write_table(out / "runs.csv", ["i", "method", "xi_x", "xi_z", "tau", "x0", "z0", "tau0",
                                       "status", "verdict", "iterations", "error_km"], rows, md)
        write_table(out / "summary.csv", ["method", "correct", "divergence", "error_convergence",
                                          "total", "iter_mean", "iter_std"],
                    [summary_row(members, m) for m in methods], md)
    return members


def summary_row(members: Sequence[EnsembleMember], method: str):
    ms = [m for m in members if m.method == method]
    counts = [sum(m.verdict == v for m in ms) for v in (CORRECT, DIVERGENCE, ERROR_CONVERGENCE)]
    its = np.array([m.iterations for m in ms if m.verdict == CORRECT], dtype=float)
    mean = float(its.mean()) if its.size else float("nan")
    std = float(its.std()) if its.size else float("nan")
    return (method, *counts, len(ms), mean, std)


def run_locate_ensemble(cfg: ExperimentConfig, out_dir=None, threads: int = 1):
    return run_method_compare(cfg, out_dir, threads, methods=("lmf",))


RUNNERS = {
    "landscape": run_landscape,
    "locate": run_locate,
    "locate-ensemble": run_locate_ensemble,
    "noise-table": run_noise_table,
    "method-compare": run_method_compare,
}
