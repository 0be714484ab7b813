"""Adjoint-state sensitivity kernels of the per-receiver W2 misfit.

For chi_r = W2^2(S(d_r), S(s_r)) the first variation is
<4 (A - B) s_r, delta s_r>.  Driving the time-reversed wave equation with
that function at the receiver gives the adjoint field w_r, and

    K_r^xi  =  int R(t - tau) grad w_r(xi, t) dt
    K_r^tau = -int R'(t - tau) w_r(xi, t) dt.

The adjoint run reuses the forward stepper in reversed time.  Because the
mass-weighted spatial operator is symmetric, injecting the trapezoid-weighted
gradient at the receiver with weight 1/(m_r h^2) makes the kernels the
derivatives of the discrete misfit (up to the absorbing layers, which are
not exactly self-adjoint).

The same derivatives are also available from the tangent-linear route:
three extra forward fields driven by the source derivatives with respect to
(xi_x, xi_z, tau), paired with the gradient at each receiver.  It costs
three fields instead of one per receiver and serves as an independent
check of the adjoint kernels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .signal import (
    RickerParams,
    Trace,
    normalize_square,
    normalize_square_reg,
    ricker_derivative,
    ricker_eval,
    trapezoid_weights,
)
from .w2core import frechet_gradient, w2_squared
from .wavesim import (
    AcousticSolver,
    ReceiverArray,
    SolverConfig,
    SourceParams,
    TraceSet,
    VelocityModel,
)

#: Misfits below this are treated as zero when forming residuals.
CHI_FLOOR = 1e-14

PROBE_RADIUS = 4  # 9 x 9 patch: the 7 x 7 delta support plus one ring


@dataclass(frozen=True)
class AdjointSource:
    r: int
    trace: Trace
    chi: float


@dataclass(frozen=True)
class KernelResult:
    r: int
    k_xi: np.ndarray
    k_tau: float
    chi: float

    def __post_init__(self):
        k = np.asarray(self.k_xi, dtype=float)
        if k.shape != (2,) or not np.all(np.isfinite(k)) or not np.isfinite(self.k_tau):
            raise FloatingPointError(f"non-finite kernel for receiver {self.r}")
        object.__setattr__(self, "k_xi", k)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.k_xi[0], self.k_xi[1], self.k_tau])


@dataclass(frozen=True)
class TimeWindow:
    """Closed window [t_start, t_end] in seconds applied to both traces."""

    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("time window must have t_end > t_start")

    def indices(self, dt: float, n: int) -> Tuple[int, int]:
        i0 = max(0, int(np.ceil(self.t_start / dt - 1e-9)))
        i1 = min(n - 1, int(np.floor(self.t_end / dt + 1e-9)))
        if i1 - i0 < 1:
            raise ValueError("time window holds fewer than 2 samples")
        return i0, i1


def _crop(tr: Trace, window: Optional[TimeWindow]):
    if window is None:
        return tr, 0
    i0, i1 = window.indices(tr.dt, tr.n)
    return Trace(tr.dt, tr.samples[i0 : i1 + 1]), i0


def misfit(s_trace: Trace, d_trace: Trace, lam=0.0, window: Optional[TimeWindow] = None) -> float:
    """chi = W2^2(S(d), (s^2 + lam)/<s^2 + lam>); lam = 0 is the plain misfit."""
    s_trace.check_compatible(d_trace)
    s, _ = _crop(s_trace, window)
    d, _ = _crop(d_trace, window)
    lam_arr = _window_lam(lam, window, s_trace.dt, s_trace.n)
    return w2_squared(normalize_square(d), normalize_square_reg(s, lam_arr))


def _window_lam(lam, window: Optional[TimeWindow], dt: float, n_full: int):
    lam = np.asarray(lam.samples if isinstance(lam, Trace) else lam, dtype=float)
    if lam.ndim == 0:
        return float(lam)
    if window is None:
        return lam
    i0, i1 = window.indices(dt, n_full)
    return lam[i0 : i1 + 1]


def build_adjoint_source(s_trace: Trace, d_trace: Trace, lam=0.0, r: int = 0,
                         window: Optional[TimeWindow] = None) -> AdjointSource:
    """Frechet gradient of chi_r with respect to the synthetic samples.

    ``lam`` regularizes the synthetic side, (s^2 + lam)/<s^2 + lam>, while
    the observed trace is used as is.  With a window the gradient is zero
    outside it.
    """
    s_trace.check_compatible(d_trace)
    s, i0 = _crop(s_trace, window)
    d, _ = _crop(d_trace, window)
    lam_arr = _window_lam(lam, window, s_trace.dt, s_trace.n)
    gr = frechet_gradient(s, d, lam=0.0, f_lam=lam_arr)
    full = np.zeros(s_trace.n)
    full[i0 : i0 + s.n] = gr.grad
    return AdjointSource(r, Trace(s_trace.dt, full), gr.value)


def _quadrature_weights(src: AdjointSource, window: Optional[TimeWindow]) -> np.ndarray:
    # weights that turn <grad, ds> into a plain sum over samples
    n = src.trace.n
    w = np.zeros(n)
    if window is None:
        w[:] = trapezoid_weights(n)
    else:
        i0, i1 = window.indices(src.trace.dt, n)
        w[i0 : i1 + 1] = trapezoid_weights(i1 - i0 + 1)
    return w * src.trace.dt


@dataclass
class ProbeSeries:
    """Adjoint field at a probe point, forward time order, shape (R, nt+1)."""

    w: np.ndarray
    grad: np.ndarray  # (R, nt+1, 2): (dw/dx, dw/dz)
    patches: np.ndarray  # (R, nt+1, 9, 9) raw node values around the probe


def adjoint_solve(vm: VelocityModel, cfg: SolverConfig, adj_sources: Sequence[AdjointSource],
                  receivers: ReceiverArray, xi_probe, window: Optional[TimeWindow] = None,
                  superpose: bool = False, gradient: str = "delta",
                  solver: Optional[AcousticSolver] = None) -> ProbeSeries:
    """Backward adjoint solves, one field per source (or one combined field).

    ``gradient="delta"`` differentiates the quintic interpolation weights,
    which is the exact adjoint of the source injection; ``"central"``
    interpolates node-wise central differences with the same weights.
    """
    solver = solver or AcousticSolver(vm, cfg)
    grid = vm.grid
    nt = cfg.nt
    ridx = receivers.node_indices(grid)
    st = solver.stencil(xi_probe)
    sources = []
    for k, a in enumerate(adj_sources):
        if a.trace.n != nt + 1 or a.trace.dt != cfg.dt:
            raise ValueError("adjoint source is not on the solver time grid")
        q = a.trace.samples * _quadrature_weights(a, window) / cfg.dt
        series = q[::-1][:nt]  # series[j] = q(t_{nt-j})
        i = int(ridx[a.r])
        wgt = solver.point_source_weight(i, 0)
        sources.append((0 if superpose else k, i, 0, wgt, series))
    nb = 1 if superpose else max(len(adj_sources), 1)
    pi0 = st.i0 + 3 - PROBE_RADIUS
    pj0 = st.j0 + 3 - PROBE_RADIUS
    size = 2 * PROBE_RADIUS + 1
    if pj0 < 0 or pi0 < 0 or pi0 + size > grid.nx or pj0 + size > grid.nz:
        raise ValueError("probe point too close to the edge of the physical grid")
    patches = [(b, pi0, pj0, size) for b in range(nb)]
    _, pv = solver.run(nb, sources, [], patches)
    pv = pv[:, ::-1]  # back to forward time: w^n = v^{nt-n}
    W = st.weights
    dW = st.weight_gradient()
    inner = pv[:, :, 1:-1, 1:-1]
    w = np.einsum("rnab,ab->rn", inner, W)
    if gradient == "delta":
        gx = np.einsum("rnab,ab->rn", inner, dW[0])
        gz = np.einsum("rnab,ab->rn", inner, dW[1])
        grad = np.stack([gx, gz], axis=-1)
    elif gradient == "central":
        h = grid.h
        cx = (pv[:, :, 1:-1, 2:] - pv[:, :, 1:-1, :-2]) / (2 * h)
        cz = (pv[:, :, 2:, 1:-1] - pv[:, :, :-2, 1:-1]) / (2 * h)
        grad = np.stack([np.einsum("rnab,ab->rn", cx, W),
                         np.einsum("rnab,ab->rn", cz, W)], axis=-1)
    else:
        raise ValueError(f"unknown gradient mode {gradient!r}")
    return ProbeSeries(w, grad, pv)


def kernels(src: SourceParams, probe: ProbeSeries, cfg: SolverConfig,
            adj_sources: Sequence[AdjointSource]) -> List[KernelResult]:
    """Time sums of R(t - tau) grad w and -R'(t - tau) w.

    The weights are those of the source injection (dt on steps 0..nt-1),
    so the kernels are the exact derivatives of the discrete misfit.
    """
    t = np.arange(cfg.nt + 1) * cfg.dt
    R = ricker_eval(src.wavelet, t - src.tau)
    dR = ricker_derivative(src.wavelet, t - src.tau)
    om = np.full(t.size, cfg.dt)
    om[-1] = 0.0
    out = []
    for k, a in enumerate(adj_sources):
        kx = float(np.sum(om * R * probe.grad[k, :, 0]))
        kz = float(np.sum(om * R * probe.grad[k, :, 1]))
        kt = float(-np.sum(om * dR * probe.w[k]))
        out.append(KernelResult(a.r, np.array([kx, kz]), kt, a.chi))
    return out


def tangent_kernels(solver: AcousticSolver, src: SourceParams, receivers: ReceiverArray,
                    adj_sources: Sequence[AdjointSource],
                    window: Optional[TimeWindow] = None) -> List[KernelResult]:
    """Kernels from the forward sensitivities ds_r/d(xi_x, xi_z, tau)."""
    cfg = solver.cfg
    h = solver.vm.grid.h
    st = solver.stencil(src.xi)
    t = np.arange(cfg.nt) * cfg.dt
    R = ricker_eval(src.wavelet, t - src.tau)
    dR = ricker_derivative(src.wavelet, t - src.tau)
    dW = st.weight_gradient()
    sources = [
        (0, st.i0, st.j0, dW[0] / h**2, R),
        (1, st.i0, st.j0, dW[1] / h**2, R),
        (2, st.i0, st.j0, st.weights / h**2, -dR),
    ]
    ridx = receivers.node_indices(solver.vm.grid)
    rec = [(b, int(ridx[a.r]), 0) for a in adj_sources for b in range(3)]
    tr, _ = solver.run(3, sources, rec, [])
    out = []
    for k, a in enumerate(adj_sources):
        q = a.trace.samples * _quadrature_weights(a, window)
        ds = tr[3 * k : 3 * k + 3]
        kv = ds @ q
        out.append(KernelResult(a.r, np.array([kv[0], kv[1]]), float(kv[2]), a.chi))
    return out


@dataclass
class Evaluation:
    x: np.ndarray
    chi: np.ndarray
    kernels: Optional[List[KernelResult]] = None

    @property
    def objective(self) -> float:
        return 0.5 * float(np.sum(self.chi))

    @property
    def chi_total(self) -> float:
        return float(np.sum(self.chi))

    @property
    def residual(self) -> np.ndarray:
        r = np.sqrt(np.maximum(self.chi, 0.0))
        r[self.chi < CHI_FLOOR] = 0.0
        return r

    @property
    def jacobian(self) -> np.ndarray:
        J = np.zeros((self.chi.size, 3))
        for k, kr in enumerate(self.kernels):
            if self.chi[k] >= CHI_FLOOR:
                J[k] = kr.vector / (2.0 * np.sqrt(self.chi[k]))
        return J

    @property
    def gradient(self) -> np.ndarray:
        """Gradient of the objective 1/2 sum chi_r."""
        return 0.5 * np.sum([k.vector for k in self.kernels], axis=0)


class LocationProblem:
    """Misfit of a trial source (xi_x, xi_z, tau) against observed traces."""

    def __init__(self, vm: VelocityModel, cfg: SolverConfig, receivers: ReceiverArray,
                 observed: TraceSet, wavelet=None, lam=None,
                 window: Optional[TimeWindow] = None, margin: Optional[float] = None,
                 gradient: str = "delta", jacobian: str = "adjoint"):
        if jacobian not in ("adjoint", "tangent"):
            raise ValueError(f"unknown jacobian mode {jacobian!r}")
        if len(observed) != len(receivers):
            raise ValueError("observed traces do not match the receiver array")
        if observed.n != cfg.nt + 1 or abs(observed.dt - cfg.dt) > 1e-12 * cfg.dt:
            raise ValueError("observed traces are not on the solver time grid")
        self.vm, self.cfg, self.receivers = vm, cfg, receivers
        self.observed = observed
        self.wavelet = wavelet or RickerParams()
        self.lam = self._per_receiver(lam)
        self.window = window
        self.gradient = gradient
        self.jacobian = jacobian
        self.solver = AcousticSolver(vm, cfg)
        h = vm.grid.h
        self.margin = 4 * h if margin is None else float(margin)
        self._cache: Dict[tuple, TraceSet] = {}
        self.n_forward = 0
        self.n_adjoint = 0
        self.kernel_log: List[Tuple[np.ndarray, List[KernelResult]]] = []

    def _per_receiver(self, lam):
        R = len(self.receivers)
        if lam is None:
            return [0.0] * R
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if lam.size == 1:
            return [float(lam[0])] * R
        if lam.size != R:
            raise ValueError("need one regularizer per receiver")
        return [float(v) for v in lam]

    def source(self, x) -> SourceParams:
        return SourceParams((x[0], x[1]), max(float(x[2]), 0.0), self.wavelet)

    def in_domain(self, x) -> bool:
        g = self.vm.grid
        m = max(self.margin, 4 * g.h)
        return bool(m <= x[0] <= g.width - m and m <= x[1] <= g.depth - m and x[2] >= 0.0
                    and np.all(np.isfinite(x)))

    def synthetic(self, x) -> TraceSet:
        key = tuple(float(v) for v in x)
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            sources, _ = self.solver.source_terms(self.source(x))
            ridx = self.receivers.node_indices(self.vm.grid)
            tr, _ = self.solver.run(1, sources, [(0, int(i), 0) for i in ridx], [])
            self._cache[key] = TraceSet(self.cfg.dt, tr)
            self.n_forward += 1
        return self._cache[key]

    def misfits(self, x) -> np.ndarray:
        syn = self.synthetic(x)
        return np.array([
            misfit(syn[r], self.observed[r], self.lam[r], self.window)
            for r in range(len(self.receivers))
        ])

    def objective(self, x) -> float:
        return 0.5 * float(np.sum(self.misfits(x)))

    def evaluate(self, x, with_gradient: bool = True) -> Evaluation:
        x = np.asarray(x, dtype=float)
        syn = self.synthetic(x)
        adj = [build_adjoint_source(syn[r], self.observed[r], self.lam[r], r, self.window)
               for r in range(len(self.receivers))]
        chi = np.array([a.chi for a in adj])
        if not with_gradient:
            return Evaluation(x, chi)
        src = self.source(x)
        if self.jacobian == "tangent":
            ks = tangent_kernels(self.solver, src, self.receivers, adj, self.window)
        else:
            probe = adjoint_solve(self.vm, self.cfg, adj, self.receivers, src.xi, self.window,
                                  gradient=self.gradient, solver=self.solver)
            ks = kernels(src, probe, self.cfg, adj)
        self.n_adjoint += 1
        self.kernel_log.append((x.copy(), ks))
        return Evaluation(x, chi, ks)

    def misfit_and_gradient(self, x):
        """(chi_total, kernels, residual vector, Jacobian rows)."""
        ev = self.evaluate(x)
        return ev.chi_total, ev.kernels, ev.residual, ev.jacobian


def write_kernels_csv(results: Sequence[KernelResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "chi", "Kx", "Kz", "Ktau"])
        for k in results:
            w.writerow([k.r + 1, repr(k.chi), repr(float(k.k_xi[0])),
                        repr(float(k.k_xi[1])), repr(float(k.k_tau))])
