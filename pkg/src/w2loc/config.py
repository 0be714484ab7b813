"""INI experiment configuration.

Sections: experiment, seed, grid, medium, source, init, receivers, solver,
lmf, noise, scan, table, ensemble.  Lists are comma separated; receiver
positions may instead be given as ``start``, ``step``, ``count``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .locate import LmfConfig
from .signal import RickerParams
from .wavesim import Grid2D, ReceiverArray, SolverConfig, SourceParams, VelocityModel

EXPERIMENTS = ("landscape", "locate", "locate-ensemble", "noise-table", "method-compare")
METRICS = ("qwn2", "rld", "qwnc", "krn")
MODELS = ("homogeneous", "two_layer", "subduction")


class ConfigError(ValueError):
    """Missing or malformed configuration entry."""


@dataclass(frozen=True)
class MediumSpec:
    model: str = "two_layer"
    c0: float = 5.0

    def build(self, grid: Grid2D) -> VelocityModel:
        if self.model == "homogeneous":
            return VelocityModel.homogeneous(grid, self.c0)
        if self.model == "two_layer":
            return VelocityModel.two_layer(grid)
        return VelocityModel.subduction(grid)


@dataclass(frozen=True)
class SolverSpec:
    t_final: float = 35.0
    cfl: float = 0.9
    pml_width: int = 20
    pml_strength: Optional[float] = None
    stencil_order: int = 4
    nt: Optional[int] = None

    def build(self, vm: VelocityModel) -> SolverConfig:
        kw = dict(pml_width=self.pml_width, pml_strength=self.pml_strength,
                  stencil_order=self.stencil_order)
        if self.nt is not None:
            return SolverConfig(self.t_final / self.nt, self.nt, cfl=self.cfl, **kw)
        return SolverConfig.for_model(vm, self.t_final, cfl=self.cfl, **kw)


@dataclass(frozen=True)
class NoiseConfig:
    ratio: float = 0.0
    lam: Optional[float] = None  # override of sigma^2 (absolute)
    lam_factor: float = 1.0  # multiplier on the injected sigma^2
    window: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class ScanSpec:
    metric: str = "qwn2"
    x_range: Tuple[float, float] = (20.0, 80.0)
    z_range: Tuple[float, float] = (4.0, 46.0)
    step: float = 2.0
    c: Optional[float] = None

    def axes(self):
        xs = np.arange(self.x_range[0], self.x_range[1] + 1e-9, self.step)
        zs = np.arange(self.z_range[0], self.z_range[1] + 1e-9, self.step)
        return xs, zs


@dataclass(frozen=True)
class TableSpec:
    example: str = "uniform"
    trials: int = 100
    N: Tuple[int, ...] = (50, 100, 200, 400, 800)
    multipliers: Tuple[float, ...] = (0.8, 0.9, 1.0, 1.1, 1.2)
    nodes: int = 1601


@dataclass(frozen=True)
class EnsembleSpec:
    size: int = 20
    x_range: Tuple[float, float] = (20.0, 80.0)
    z_range: Tuple[float, float] = (3.0, 40.0)
    tau_range: Tuple[float, float] = (7.5, 12.5)
    methods: Tuple[str, ...] = ("lmf", "gn", "bfgs")
    tol_km: float = 1.0


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    grid: Tuple[float, float, float] = (100.0, 50.0, 0.5)  # width, depth, h
    medium: MediumSpec = field(default_factory=MediumSpec)
    truth: Optional[SourceParams] = None
    init: Optional[np.ndarray] = None
    receivers: Optional[ReceiverArray] = None
    solver: SolverSpec = field(default_factory=SolverSpec)
    lmf: LmfConfig = field(default_factory=LmfConfig)
    jacobian: str = "adjoint"
    gradient: str = "delta"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    scan: ScanSpec = field(default_factory=ScanSpec)
    table: TableSpec = field(default_factory=TableSpec)
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    source_path: Optional[str] = None

    def build_grid(self) -> Grid2D:
        w, d, h = self.grid
        return Grid2D.covering(w, d, h)

    def metadata(self) -> dict:
        """Design defaults in effect, written at the head of every CSV."""
        md = {
            "experiment": self.experiment,
            "seed": self.seed,
            "grid_width_km": self.grid[0],
            "grid_depth_km": self.grid[1],
            "h_km": self.grid[2],
            "model": self.medium.model,
            "stencil_order": self.solver.stencil_order,
            "pml_width_nodes": self.solver.pml_width,
            "pml_strength": "default" if self.solver.pml_strength is None else self.solver.pml_strength,
            "t_final_s": self.solver.t_final,
            "cfl": self.solver.cfl,
            "quadrature": "trapezoid",
            "w2": "exact piecewise-quadratic quantile integral",
            "residual": "r = sqrt(chi), J = K / (2 sqrt(chi)), floor chi < 1e-14",
            "objective": "1/2 sum chi",
            "jacobian": self.jacobian,
            "kernel_gradient": self.gradient,
            "eps": self.lmf.eps,
            "K_max": self.lmf.K_max,
            "eta": self.lmf.eta,
        }
        if self.experiment == "landscape":
            md["metric"] = self.scan.metric
            md["qwnc_shift"] = "2 max_r max_t |d_r|" if self.scan.c is None else self.scan.c
        if self.noise.ratio > 0:
            md["noise_ratio"] = self.noise.ratio
            md["noise"] = "normal, zero mean, sigma = R max_t |u|, i.i.d. per sample"
            md["lambda"] = "sigma^2" if self.noise.lam is None else self.noise.lam
            md["window"] = "none" if self.noise.window is None else "%g..%g" % self.noise.window
        return md


def _floats(s: str) -> List[float]:
    return [float(v) for v in s.replace(";", ",").split(",") if v.strip()]


def _pair(sec, key, default):
    if key not in sec:
        return default
    v = _floats(sec[key])
    if len(v) != 2 or not v[0] <= v[1]:
        raise ConfigError(f"[{sec.name}] {key} needs 'lo, hi' with lo <= hi")
    return (v[0], v[1])


def _get(sec, key, conv, default):
    if sec is None or key not in sec:
        return default
    try:
        return conv(sec[key])
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key}: {exc}") from None


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _receivers(sec) -> ReceiverArray:
    if "x" in sec:
        xs = _floats(sec["x"])
    elif "count" in sec:
        start = float(sec.get("start", "0"))
        step = float(sec.get("step", "1"))
        xs = [start + step * k for k in range(int(sec["count"]))]
    else:
        raise ConfigError("[receivers] needs 'x' or 'start/step/count'")
    arr = ReceiverArray.at_x(xs)
    if "subset" in sec:
        idx = [int(v) - 1 for v in _floats(sec["subset"])]
        if min(idx) < 0 or max(idx) >= len(arr):
            raise ConfigError("[receivers] subset indices are 1-based and must exist")
        arr = arr.subset(idx)
    return arr


def _source(sec) -> SourceParams:
    try:
        wl = RickerParams(float(sec.get("amp", "1.0")), float(sec.get("f0", "2.0")))
        return SourceParams((float(sec["x"]), float(sec["z"])), float(sec["tau"]), wl)
    except KeyError as exc:
        raise ConfigError(f"[{sec.name}] missing {exc.args[0]}") from None
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {exc}") from None


def parse_config(text: str, source_path: Optional[str] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    sec = lambda name: cp[name] if cp.has_section(name) else None  # noqa: E731
    ex = sec("experiment")
    if ex is None or "kind" not in ex:
        raise ConfigError("[experiment] kind is required")
    kind = ex["kind"].strip()
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {kind!r}; expected one of {EXPERIMENTS}")
    cfg = ExperimentConfig(kind, source_path=source_path)
    cfg.seed = _get(sec("seed"), "value", int, 0)
    g = sec("grid")
    cfg.grid = (_get(g, "width", float, 100.0), _get(g, "depth", float, 50.0),
                _get(g, "h", float, 0.5))
    if min(cfg.grid) <= 0:
        raise ConfigError("[grid] width, depth and h must be positive")
    m = sec("medium")
    model = _get(m, "model", str.strip, "two_layer")
    if model not in MODELS:
        raise ConfigError(f"[medium] unknown model {model!r}")
    cfg.medium = MediumSpec(model, _get(m, "c0", float, 5.0))
    if sec("source") is not None:
        cfg.truth = _source(sec("source"))
    if sec("init") is not None:
        i = sec("init")
        try:
            cfg.init = np.array([float(i["x"]), float(i["z"]), float(i["tau"])])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[init] needs numeric x, z, tau ({exc})") from None
    if sec("receivers") is not None:
        cfg.receivers = _receivers(sec("receivers"))
    s = sec("solver")
    pml_strength = _get(s, "pml_strength", float, None)
    cfg.solver = SolverSpec(
        _get(s, "t_final", float, 35.0), _get(s, "cfl", float, 0.9),
        _get(s, "pml_width", int, 20), pml_strength,
        _get(s, "stencil_order", int, 4), _get(s, "nt", int, None))
    if cfg.solver.stencil_order not in (2, 4):
        raise ConfigError("[solver] stencil_order must be 2 or 4")
    L = sec("lmf")
    try:
        cfg.lmf = LmfConfig(
            eps=_get(L, "eps", float, 0.01), K_max=_get(L, "K_max", int, 20),
            mu0=_get(L, "mu0", float, 2.0), noise_mode=False,
            nu0_noise=_get(L, "nu0_noise", float, 1e-3), eta=_get(L, "eta", float, 1e-3),
            nu0_scale=_get(L, "nu0_scale", float, 1e-6),
            max_trials=_get(L, "max_trials", int, 200))
    except ValueError as exc:
        raise ConfigError(f"[lmf] {exc}") from None
    cfg.jacobian = _get(L, "jacobian", str.strip, "adjoint")
    cfg.gradient = _get(L, "gradient", str.strip, "delta")
    if cfg.jacobian not in ("adjoint", "tangent") or cfg.gradient not in ("delta", "central"):
        raise ConfigError("[lmf] jacobian is adjoint|tangent, gradient is delta|central")
    n = sec("noise")
    if n is not None:
        win = _pair(n, "window", None)
        cfg.noise = NoiseConfig(_get(n, "ratio", float, 0.0), _get(n, "lambda", float, None),
                                _get(n, "lambda_factor", float, 1.0), win)
        if cfg.noise.ratio < 0:
            raise ConfigError("[noise] ratio must be >= 0")
    sc = sec("scan")
    if sc is not None:
        metric = _get(sc, "metric", str.strip, "qwn2")
        if metric not in METRICS:
            raise ConfigError(f"[scan] unknown metric {metric!r}")
        cfg.scan = ScanSpec(metric, _pair(sc, "x_range", (20.0, 80.0)),
                            _pair(sc, "z_range", (4.0, 46.0)), _get(sc, "step", float, 2.0),
                            _get(sc, "c", float, None))
        if cfg.scan.step <= 0:
            raise ConfigError("[scan] step must be positive")
    t = sec("table")
    if t is not None:
        ex_kind = _get(t, "example", str.strip, "uniform")
        if ex_kind not in ("uniform", "normal"):
            raise ConfigError("[table] example is uniform|normal")
        cfg.table = TableSpec(
            ex_kind, _get(t, "trials", int, 100),
            tuple(int(v) for v in _get(t, "N", _floats, [50, 100, 200, 400, 800])),
            tuple(_get(t, "multipliers", _floats, [0.8, 0.9, 1.0, 1.1, 1.2])),
            _get(t, "nodes", int, 1601))
    e = sec("ensemble")
    if e is not None:
        methods = tuple(v.strip() for v in e.get("methods", "lmf, gn, bfgs").split(",") if v.strip())
        if not set(methods) <= {"lmf", "gn", "bfgs"}:
            raise ConfigError("[ensemble] methods are drawn from lmf, gn, bfgs")
        cfg.ensemble = EnsembleSpec(
            _get(e, "size", int, 20), _pair(e, "x_range", (20.0, 80.0)),
            _pair(e, "z_range", (3.0, 40.0)), _pair(e, "tau_range", (7.5, 12.5)),
            methods, _get(e, "tol_km", float, 1.0))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    needs_model = cfg.experiment != "noise-table"
    if needs_model and cfg.receivers is None:
        raise ConfigError("[receivers] section is required")
    if cfg.experiment in ("landscape", "locate") and cfg.truth is None:
        raise ConfigError("[source] (true source) is required")
    if cfg.experiment == "locate" and cfg.init is None:
        raise ConfigError("[init] is required for locate")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text(), str(p))
