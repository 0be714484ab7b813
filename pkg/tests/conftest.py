import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from w2loc.signal import RickerParams, Trace, make_ricker_trace
from w2loc.wavesim import (
    Grid2D,
    ReceiverArray,
    SolverConfig,
    SourceParams,
    VelocityModel,
)

settings.register_profile(
    "w2loc", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("w2loc")

# sampling used by the noise examples: [0, 5] s with 801 nodes
EX_DT = 5.0 / 800
EX_N = 801


def ricker_example(delay=2.5, f0=2.0, amp=1.0, dt=EX_DT, n=EX_N) -> Trace:
    return make_ricker_trace(RickerParams(amp, f0), delay, dt, n)


def random_smooth_trace(rng, dt=EX_DT, n=EX_N, bumps=3) -> Trace:
    """Sum of a few Gaussian-modulated cosines supported well inside [0, t_f]."""
    t = np.arange(n) * dt
    tf = t[-1]
    s = np.zeros(n)
    for _ in range(bumps):
        c = rng.uniform(0.3, 0.7) * tf
        w = rng.uniform(0.03, 0.08) * tf
        f = rng.uniform(0.5, 3.0)
        s += rng.uniform(0.5, 1.5) * np.exp(-((t - c) / w) ** 2) * np.cos(2 * np.pi * f * (t - c))
    return Trace(dt, s)


class Desk:
    """Small homogeneous solver setup shared by the fast wave tests."""

    def __init__(self, width=50.0, depth=25.0, h=1.0, c0=5.0, t_final=12.0, order=2,
                 pml=10, f0=0.5):
        self.grid = Grid2D.covering(width, depth, h)
        self.vm = VelocityModel.homogeneous(self.grid, c0)
        self.cfg = SolverConfig.for_model(self.vm, t_final, stencil_order=order, pml_width=pml)
        self.wavelet = RickerParams(1.0, f0)

    def source(self, x, z, tau):
        return SourceParams((x, z), tau, self.wavelet)


@pytest.fixture(scope="session")
def desk():
    return Desk()


@pytest.fixture(scope="session")
def desk_receivers():
    return ReceiverArray.at_x([5.0, 15.0, 25.0, 35.0, 45.0])


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE = {}


class Criterion:
    """Records a PASS/FAIL line for one acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        status = "PASS" if kind is None else "FAIL"
        detail = self.detail or ("" if exc is None else f"{kind.__name__}: {exc}")
        ACCEPTANCE[self.number] = (status, self.title, detail.splitlines()[0] if detail else "")
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {status}: {title}. {detail}")
