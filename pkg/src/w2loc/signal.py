"""Time series containers, Ricker wavelets, square normalization and noise.

All integrals over a trace use the trapezoid rule on its uniform grid, so
that normalized densities integrate to one under the same quadrature that
the transport code uses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

#: Squared-mass floor below which a signal is treated as identically zero.
MASS_FLOOR = 1e-300


class DegenerateSignalError(ValueError):
    """Raised when a signal has (numerically) zero mass."""


class InvalidRegularizerError(ValueError):
    """Raised when g**2 + lambda is not strictly positive."""


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def integrate(values: np.ndarray, dt: float) -> float:
    """Trapezoid integral of uniformly sampled values."""
    v = np.asarray(values, dtype=float)
    return float(dt * (v.sum() - 0.5 * (v[0] + v[-1])))


def cumulative_integral(values: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral, starting at 0 at the first node."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[0] = 0.0
    np.cumsum(0.5 * dt * (v[1:] + v[:-1]), out=out[1:])
    return out


@dataclass(frozen=True)
class Trace:
    """Uniformly sampled signal on [0, t_f], sample i at time i*dt."""

    dt: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("a trace needs at least two samples")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(s)):
            raise ValueError("trace samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def t_final(self) -> float:
        return (self.n - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    def check_compatible(self, other: "Trace") -> None:
        if self.n != other.n or self.dt != other.dt:
            raise ValueError(
                f"incompatible traces: (n={self.n}, dt={self.dt}) vs "
                f"(n={other.n}, dt={other.dt})"
            )

    def integral(self) -> float:
        return integrate(self.samples, self.dt)

    def with_samples(self, samples: np.ndarray) -> "Trace":
        return Trace(self.dt, samples)

    def window(self, t_start: float, t_end: float) -> "Trace":
        """Crop to the nodes inside [t_start, t_end]; time restarts at 0."""
        i0 = max(0, int(np.ceil(t_start / self.dt - 1e-9)))
        i1 = min(self.n - 1, int(np.floor(t_end / self.dt + 1e-9)))
        if i1 - i0 < 1:
            raise ValueError(f"window [{t_start}, {t_end}] holds fewer than 2 samples")
        return Trace(self.dt, self.samples[i0 : i1 + 1])

    def __add__(self, other: "Trace") -> "Trace":
        self.check_compatible(other)
        return Trace(self.dt, self.samples + other.samples)

    def __sub__(self, other: "Trace") -> "Trace":
        self.check_compatible(other)
        return Trace(self.dt, self.samples - other.samples)

    def __mul__(self, alpha: float) -> "Trace":
        return Trace(self.dt, alpha * self.samples)

    __rmul__ = __mul__


@dataclass(frozen=True)
class RickerParams:
    amp: float = 1.0
    f0: float = 2.0

    def __post_init__(self):
        if not (self.amp > 0 and self.f0 > 0):
            raise ValueError("Ricker amplitude and frequency must be positive")


def ricker_eval(p: RickerParams, t):
    """R(t) = A (1 - 2 pi^2 f0^2 t^2) exp(-pi^2 f0^2 t^2)."""
    a = (np.pi * p.f0 * np.asarray(t, dtype=float)) ** 2
    return p.amp * (1.0 - 2.0 * a) * np.exp(-a)


def ricker_derivative(p: RickerParams, t):
    """Analytic dR/dt."""
    t = np.asarray(t, dtype=float)
    k = (np.pi * p.f0) ** 2
    a = k * t**2
    return p.amp * 2.0 * k * t * (2.0 * a - 3.0) * np.exp(-a)


def make_ricker_trace(p: RickerParams, delay: float, dt: float, n: int) -> Trace:
    if n < 2 or dt <= 0:
        raise ValueError("need dt > 0 and n >= 2")
    return Trace(dt, ricker_eval(p, np.arange(n) * dt - delay))


def _as_lambda_array(lam, n: int) -> np.ndarray:
    if isinstance(lam, Trace):
        lam = lam.samples
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0:
        return np.full(n, float(lam))
    if lam.shape != (n,):
        raise ValueError(f"regularizer has shape {lam.shape}, expected ({n},)")
    return lam


def normalize_square(f: Trace):
    """S(f) = f^2 / <f^2>."""
    from .w2core import Density

    sq = f.samples**2
    mass = integrate(sq, f.dt)
    if not mass >= MASS_FLOOR:
        raise DegenerateSignalError("degenerate signal: zero mass after squaring")
    return Density(f.dt, sq / mass)


def normalize_square_reg(g: Trace, lam):
    """(g^2 + lambda) / <g^2 + lambda>; lambda may be a constant or a trace."""
    from .w2core import Density

    lam_arr = _as_lambda_array(lam, g.n)
    sq = g.samples**2 + lam_arr
    bad = np.flatnonzero(~(sq > 0))
    if bad.size and np.any(lam_arr != 0):
        raise InvalidRegularizerError(
            f"invalid regularizer: g^2 + lambda <= 0 at node {int(bad[0])}"
        )
    mass = integrate(sq, g.dt)
    if not mass >= MASS_FLOOR:
        raise DegenerateSignalError("degenerate signal: zero mass after squaring")
    return Density(g.dt, sq / mass)


@dataclass(frozen=True)
class NoiseSpec:
    """Piecewise-constant i.i.d. noise: one draw per time segment.

    ``params`` is ``(a, b)`` for ``kind="uniform"`` and ``(mean, std)`` for
    ``kind="normal"``.
    """

    kind: str
    params: tuple
    segments: int
    seed: int = 0

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if self.kind == "uniform":
            a, b = self.params
            if not a < b:
                raise ValueError("uniform noise requires a < b")
        elif self.kind == "normal":
            if self.params[1] < 0:
                raise ValueError("normal noise requires std >= 0")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @classmethod
    def uniform(cls, a: float, b: float, segments: int, seed: int = 0) -> "NoiseSpec":
        return cls("uniform", (float(a), float(b)), int(segments), int(seed))

    @classmethod
    def normal(cls, mean: float, std: float, segments: int, seed: int = 0) -> "NoiseSpec":
        return cls("normal", (float(mean), float(std)), int(segments), int(seed))

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        return self.params[0]

    @property
    def variance(self) -> float:
        if self.kind == "uniform":
            return (self.params[1] - self.params[0]) ** 2 / 12.0
        return self.params[1] ** 2

    def draw(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = np.random.default_rng(self.seed) if rng is None else rng
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1], size=self.segments)
        return rng.normal(self.params[0], self.params[1], size=self.segments)


def segment_index(n: int, segments: int) -> np.ndarray:
    """0-based segment of each sample; segment j covers ((j-1) t_f/N, j t_f/N].

    The first segment is closed on the left so t=0 belongs to it.  Exact
    integer arithmetic keeps boundary samples on the left segment.
    """
    i = np.arange(n, dtype=np.int64)
    j = -((-segments * i) // (n - 1))  # ceil(N i / (n-1))
    return np.maximum(j, 1) - 1


def inject_noise(
    g: Trace, spec: NoiseSpec, rng: np.random.Generator | None = None
) -> Trace:
    if spec.segments > g.n:
        raise ValueError("more noise segments than samples")
    r = spec.draw(rng)
    return Trace(g.dt, g.samples + r[segment_index(g.n, spec.segments)])


def lambda_star(spec: NoiseSpec, g: Trace) -> Union[float, np.ndarray]:
    """2 mu g + mu^2 + sigma^2; a plain float when the noise has zero mean."""
    mu, var = spec.mean, spec.variance
    if mu == 0:
        return float(var)
    return 2.0 * mu * g.samples + mu**2 + var


def write_trace_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value"])
        for t, v in zip(trace.times, trace.samples):
            w.writerow([repr(float(t)), repr(float(v))])


def read_trace_csv(path) -> Trace:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    t, v = data[:, 0], data[:, 1]
    if t.size < 2:
        raise ValueError("trace file needs at least two rows")
    steps = np.diff(t)
    dt = steps.mean()
    if abs(t[0]) > 1e-9 * max(dt, 1.0) or np.any(np.abs(steps - dt) > 1e-9 * dt):
        raise ValueError(f"{path}: time column is not uniform from t=0")
    return Trace(float(dt), v)
