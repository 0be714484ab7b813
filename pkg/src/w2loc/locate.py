"""Levenberg-Marquardt-Fletcher location and the GN / BFGS baselines.

Unknowns are x = (xi_x [km], xi_z [km], tau [s]) used unscaled.  The
objective is f(x) = 1/2 sum_r chi_r with residuals r_r = sqrt(chi_r).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

log = logging.getLogger(__name__)

NOT_CONVERGED_MESSAGE = "The iteration doesn't converges."

CONVERGED = "converged"
MAX_ITER = "max_iter"
DIVERGED = "diverged"


class SingularNormalEquations(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LmfConfig:
    eps: float = 0.01
    K_max: int = 20
    mu0: float = 2.0
    noise_mode: bool = False
    nu0_noise: float = 1e-3
    eta: float = 1e-3
    nu0_scale: float = 1e-6
    max_trials: int = 200  # safety cap on objective evaluations per run

    def __post_init__(self):
        if not (self.eps > 0 and self.K_max >= 1 and self.eta > 0 and self.mu0 > 0):
            raise ValueError("need eps > 0, K_max >= 1, eta > 0, mu0 > 0")


@dataclass
class LmfState:
    k: int
    x: np.ndarray
    nu: float
    mu: float
    f_val: float
    gamma: float = float("nan")
    accepted: bool = True
    J: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None


@dataclass
class LocateRun:
    trajectory: List[LmfState]
    status: str
    message: str = ""
    truth: Optional[np.ndarray] = None
    n_trials: int = 0

    @property
    def accepted(self) -> List[LmfState]:
        return [s for s in self.trajectory if s.accepted]

    @property
    def objective_values(self) -> np.ndarray:
        return np.array([s.f_val for s in self.accepted])

    @property
    def k_star(self) -> int:
        """Index (into the accepted iterates) of the smallest objective; first on ties."""
        return int(np.argmin(self.objective_values))

    @property
    def x_star(self) -> np.ndarray:
        return self.accepted[self.k_star].x

    @property
    def x_final(self) -> np.ndarray:
        return self.accepted[-1].x

    @property
    def iterations(self) -> int:
        return self.accepted[-1].k

    def hypocenter_errors(self) -> Optional[np.ndarray]:
        if self.truth is None:
            return None
        return np.array([np.hypot(*(s.x[:2] - self.truth[:2])) for s in self.accepted])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "xi_x", "xi_z", "tau", "nu", "gamma", "objective", "accepted",
                        "hypocenter_error_km"])
            for s in self.trajectory:
                err = "" if self.truth is None else repr(float(np.hypot(*(s.x[:2] - self.truth[:2]))))
                w.writerow([s.k, repr(float(s.x[0])), repr(float(s.x[1])), repr(float(s.x[2])),
                            repr(float(s.nu)), repr(float(s.gamma)), repr(float(s.f_val)),
                            int(s.accepted), err])


def lmf_step(J, r, nu: float) -> np.ndarray:
    """Solve (J^T J + nu I) d = -J^T r by Cholesky (LU fallback at nu = 0)."""
    J = np.asarray(J, dtype=float)
    r = np.asarray(r, dtype=float)
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    A = J.T @ J + nu * np.eye(J.shape[1])
    b = -J.T @ r
    try:
        L = np.linalg.cholesky(A)
        y = np.linalg.solve(L, b)
        return np.linalg.solve(L.T, y)
    except np.linalg.LinAlgError:
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise SingularNormalEquations("singular normal equations") from None
        return np.linalg.solve(A, b)


def gamma_ratio(f_old: float, f_new: float, J, r, d) -> float:
    """(f(x) - f(x + d)) / (q(0) - q(d)) with q(d) = 1/2 |J d + r|^2."""
    J, r, d = (np.asarray(a, dtype=float) for a in (J, r, d))
    m = J @ d + r
    pred = 0.5 * float(r @ r) - 0.5 * float(m @ m)
    if pred == 0.0:
        log.warning("zero predicted reduction; treating gamma as -1")
        return -1.0
    return (f_old - f_new) / pred


def nu_update(gamma: float, nu: float, mu: float, noise_mode: bool = False,
              eta: float = 1e-3):
    """Damping update; returns (nu', mu', accept).

    Accepted steps scale nu by max(1/3, 1 - (2 gamma - 1)^3) and reset mu to
    2; rejected steps set nu = mu nu and mu = 2 mu.  Without noise a step is
    accepted iff gamma > 0.  In noise mode it is also accepted when
    nu >= eta, and nu is capped at eta after either branch.
    """
    accept = gamma > 0 or (noise_mode and nu >= eta)
    if accept:
        nu_new = nu * max(1.0 / 3.0, 1.0 - (2.0 * gamma - 1.0) ** 3)
        mu_new = 2.0
    else:
        nu_new = mu * nu
        mu_new = 2.0 * mu
    if noise_mode:
        nu_new = min(eta, nu_new)
    return nu_new, mu_new, accept


def initial_nu(J, cfg: LmfConfig) -> float:
    if cfg.noise_mode:
        return cfg.nu0_noise
    return cfg.nu0_scale * float(np.max(np.abs(np.diag(J.T @ J))))


def _lmf(problem, x0, cfg: LmfConfig, truth=None) -> LocateRun:
    x = np.asarray(x0, dtype=float)
    if not problem.in_domain(x):
        raise ValueError(f"initial point {x.tolist()} lies outside the admissible domain")
    ev = problem.evaluate(x)
    f, J, r = ev.objective, ev.jacobian, ev.residual
    nu = initial_nu(J, cfg)
    mu = cfg.mu0
    traj = [LmfState(0, x, nu, mu, f, J=J, r=r)]
    k = 0
    trials = 1
    while True:
        if f < cfg.eps:
            return LocateRun(traj, CONVERGED, "", truth, trials)
        if k > cfg.K_max or trials >= cfg.max_trials:
            return LocateRun(traj, MAX_ITER, NOT_CONVERGED_MESSAGE, truth, trials)
        try:
            d = lmf_step(J, r, nu)
        except SingularNormalEquations as exc:
            return LocateRun(traj, DIVERGED, str(exc), truth, trials)
        xn = x + d
        trials += 1
        nu_prev = nu
        if problem.in_domain(xn):
            f_new = problem.objective(xn)
            gamma = gamma_ratio(f, f_new, J, r, d)
            nu, mu, accept = nu_update(gamma, nu, mu, cfg.noise_mode, cfg.eta)
        else:
            # outside the admissible box: reject and damp, bypassing the cap
            f_new, gamma, accept = float("nan"), -1.0, False
            nu, mu = mu * nu, 2.0 * mu
        if accept:
            k += 1
            ev = problem.evaluate(xn)
            x, f, J, r = xn, ev.objective, ev.jacobian, ev.residual
            traj.append(LmfState(k, x, nu, mu, f, gamma, True, J, r))
        else:
            traj.append(LmfState(k, xn, nu_prev, mu, f_new, gamma, False))
        if not np.isfinite(nu) or nu > 1e30:
            return LocateRun(traj, DIVERGED, "damping parameter overflow", truth, trials)


def lmf_locate(problem, x0, cfg: Optional[LmfConfig] = None, truth=None) -> LocateRun:
    """Noise-free LMF iteration."""
    cfg = cfg or LmfConfig()
    if cfg.noise_mode:
        cfg = LmfConfig(**{**cfg.__dict__, "noise_mode": False})
    return _lmf(problem, x0, cfg, truth)


def lmf_locate_noise(problem, x0, cfg: Optional[LmfConfig] = None, truth=None) -> LocateRun:
    """Modified LMF for noisy data (capped damping, accept at the cap)."""
    cfg = cfg or LmfConfig(noise_mode=True)
    if not cfg.noise_mode:
        cfg = LmfConfig(**{**cfg.__dict__, "noise_mode": True})
    return _lmf(problem, x0, cfg, truth)


def gn_locate(problem, x0, cfg: Optional[LmfConfig] = None, truth=None) -> LocateRun:
    """Gauss-Newton: full steps, no damping, no acceptance test."""
    cfg = cfg or LmfConfig()
    x = np.asarray(x0, dtype=float)
    ev = problem.evaluate(x)
    traj = [LmfState(0, x, 0.0, 0.0, ev.objective)]
    for k in range(1, cfg.K_max + 1):
        if ev.objective < cfg.eps:
            return LocateRun(traj, CONVERGED, "", truth, k)
        try:
            d = lmf_step(ev.jacobian, ev.residual, 0.0)
        except SingularNormalEquations as exc:
            return LocateRun(traj, DIVERGED, str(exc), truth, k)
        x = x + d
        if not problem.in_domain(x):
            traj.append(LmfState(k, x, 0.0, 0.0, float("nan"), accepted=False))
            return LocateRun(traj, DIVERGED, "iterate left the domain", truth, k)
        ev = problem.evaluate(x)
        traj.append(LmfState(k, x, 0.0, 0.0, ev.objective))
    if ev.objective < cfg.eps:
        return LocateRun(traj, CONVERGED, "", truth, cfg.K_max)
    return LocateRun(traj, MAX_ITER, NOT_CONVERGED_MESSAGE, truth, cfg.K_max)


def bfgs_locate(problem, x0, cfg: Optional[LmfConfig] = None, truth=None,
                c1: float = 1e-4, max_backtrack: int = 12) -> LocateRun:
    """BFGS with an inverse-Hessian update and Armijo backtracking."""
    cfg = cfg or LmfConfig()
    x = np.asarray(x0, dtype=float)
    ev = problem.evaluate(x)
    f, g = ev.objective, ev.gradient
    H = None
    traj = [LmfState(0, x, 0.0, 0.0, f)]
    trials = 1
    for k in range(1, cfg.K_max + 1):
        if f < cfg.eps:
            return LocateRun(traj, CONVERGED, "", truth, trials)
        if H is None:
            # first step: steepest descent scaled to a 1 km / 1 s move
            H = np.eye(3) / max(np.linalg.norm(g), 1e-30)
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            H = np.eye(3) / max(np.linalg.norm(g), 1e-30)
            p = -H @ g
            slope = float(g @ p)
        a = 1.0
        ok = False
        for _ in range(max_backtrack):
            xn = x + a * p
            trials += 1
            if problem.in_domain(xn):
                f_new = problem.objective(xn)
                if f_new <= f + c1 * a * slope:
                    ok = True
                    break
            a *= 0.5
        if not ok:
            return LocateRun(traj, DIVERGED, "line search failed", truth, trials)
        ev_n = problem.evaluate(xn)
        s = xn - x
        y = ev_n.gradient - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            if k == 1:
                H = np.eye(3) * sy / float(y @ y)
            I = np.eye(3)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        x, f, g = xn, ev_n.objective, ev_n.gradient
        traj.append(LmfState(k, x, 0.0, 0.0, f))
    if f < cfg.eps:
        return LocateRun(traj, CONVERGED, "", truth, trials)
    return LocateRun(traj, MAX_ITER, NOT_CONVERGED_MESSAGE, truth, trials)


CORRECT = "correct"
DIVERGENCE = "divergence"
ERROR_CONVERGENCE = "error_convergence"


def classify(run: LocateRun, truth, tol_km: float = 1.0) -> str:
    """Correct convergence, divergence, or convergence to a wrong point."""
    x = run.x_final
    err = float(np.hypot(*(x[:2] - np.asarray(truth)[:2])))
    if run.status == DIVERGED or not np.all(np.isfinite(x)):
        return DIVERGENCE
    if err < tol_km:
        return CORRECT
    if run.status == CONVERGED:
        return ERROR_CONVERGENCE
    return DIVERGENCE
