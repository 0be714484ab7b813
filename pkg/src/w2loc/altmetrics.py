"""Comparison misfits for landscape studies.

rld     relative L2 distance  int |d - s|^2 / int |d|^2
qwn_c   W2^2 of the shift-normalized signals (d + c)/<d + c>
krn     Kantorovich-Rubinstein norm, max over bounded 1-Lipschitz phi of
        int phi (d - s)

All integrals use the trapezoid rule.  The KRN dual is a linear program on
a chain of difference constraints; it is solved exactly by dynamic
programming over concave piecewise-linear value functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .signal import DegenerateSignalError, Trace, integrate, trapezoid_weights
from .w2core import Density, w2_squared

#: Slack allowed on the dual constraints of a KRN certificate.
DUAL_TOL = 1e-9


class NonPositiveShiftError(ValueError):
    """Raised when a shifted signal is not strictly positive."""

    def __init__(self, which: str, index: int, value: float):
        super().__init__(f"{which} + c is not positive at node {index} (value {value:.6g})")
        self.which = which
        self.index = index
        self.value = value


@dataclass(frozen=True)
class KrnDualSolution:
    phi_values: np.ndarray
    objective: float

    def check(self, dt: float, tol: float = DUAL_TOL) -> bool:
        phi = self.phi_values
        return bool(np.all(np.abs(phi) <= 1.0 + tol)
                    and np.all(np.abs(np.diff(phi)) <= dt + tol))


def rld(d: Trace, s: Trace) -> float:
    d.check_compatible(s)
    den = integrate(d.samples**2, d.dt)
    if not den > 0:
        raise DegenerateSignalError("relative L2 distance: reference trace has zero energy")
    return integrate((d.samples - s.samples) ** 2, d.dt) / den


def _shift_density(tr: Trace, c: float, which: str) -> Density:
    v = tr.samples + c
    bad = np.flatnonzero(~(v > 0))
    if bad.size:
        i = int(bad[0])
        raise NonPositiveShiftError(which, i, float(v[i]))
    return Density.from_values(tr.dt, v)


def qwn_c(d: Trace, s: Trace, c: float) -> float:
    d.check_compatible(s)
    return w2_squared(_shift_density(d, c, "d"), _shift_density(s, c, "s"))


def default_shift(traces: Sequence[Trace]) -> float:
    """Global shift 2 max_r max_t |d_r|, identical for every receiver."""
    m = max(float(np.max(np.abs(t.samples))) for t in traces)
    return 2.0 * m


def _krn_dual(a: np.ndarray, L: float):
    """Maximize sum a_i phi_i with |phi_i| <= 1 and |phi_i+1 - phi_i| <= L.

    V_i(phi) = a_i phi + max_{|psi - phi| <= L} V_i-1(psi) stays concave and
    piecewise linear.  The windowed max splits V at its peak, shifting the
    rising part left and the falling part right by L.  Only the peak of
    each stage is kept for the backward pass.
    """
    n = a.size
    xs = np.array([-1.0, 1.0])
    ys = np.array([-a[0], a[0]])
    peaks = np.empty(n)
    for i in range(n):
        if i > 0:
            k = int(np.argmax(ys))
            left_x = xs[: k + 1] - L
            right_x = xs[k:] + L
            nx = np.concatenate([left_x, right_x])
            ny = np.concatenate([ys[: k + 1], ys[k:]])
            lo = np.interp(-1.0, nx, ny)
            hi = np.interp(1.0, nx, ny)
            keep = (nx > -1.0) & (nx < 1.0)
            xs = np.concatenate([[-1.0], nx[keep], [1.0]])
            ys = np.concatenate([[lo], ny[keep], [hi]])
            # drop collinear or repeated nodes to keep the representation small
            if xs.size > 2:
                dx = np.diff(xs)
                ok = np.concatenate([[True], dx > 1e-15])
                xs, ys = xs[ok], ys[ok]
            ys = ys + a[i] * xs
        peaks[i] = xs[int(np.argmax(ys))]
    phi = np.empty(n)
    phi[-1] = peaks[-1]
    for i in range(n - 2, -1, -1):
        phi[i] = min(max(peaks[i], phi[i + 1] - L), phi[i + 1] + L)
    return phi


def krn(d: Trace, s: Trace):
    """KR norm of d - s and the dual function certifying it.

    Returns ``(value, KrnDualSolution)`` with value = sum_i w_i phi_i (d_i - s_i)
    for trapezoid weights w_i.
    """
    d.check_compatible(s)
    a = (d.samples - s.samples) * trapezoid_weights(d.n) * d.dt
    if not np.any(a):
        return 0.0, KrnDualSolution(np.zeros(d.n), 0.0)
    phi = _krn_dual(a, d.dt)
    val = float(np.dot(a, phi))
    return val, KrnDualSolution(phi, val)
