"""2D acoustic forward modelling on a uniform square grid.

Solves u_tt = div(c^2 grad u) + R(t - tau) delta(x - xi) from rest with a
free (Neumann) surface at z = 0 and split-field PML layers padded outside
the physical domain on the left, right and bottom sides.  Coordinates are
in km, times in s, velocities in km/s; z increases downward.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _fdkernel
from .signal import RickerParams, Trace, ricker_eval

# ---------------------------------------------------------------------------
# discrete delta


def _quintic_profile(r):
    """Dimensionless kernel phi(r), r = |x|/h, with delta_h(x) = phi(|x|/h)/h."""
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    m1 = r <= 1
    m2 = (r > 1) & (r <= 2)
    m3 = (r > 2) & (r <= 3)
    a = r[m1]
    out[m1] = 1 - 5 / 4 * a**2 - 35 / 12 * a**3 + 21 / 4 * a**4 - 25 / 12 * a**5
    a = r[m2]
    out[m2] = (-4 + 75 / 4 * a - 245 / 8 * a**2 + 545 / 24 * a**3
               - 63 / 8 * a**4 + 25 / 24 * a**5)
    a = r[m3]
    out[m3] = (18 - 153 / 4 * a + 255 / 8 * a**2 - 313 / 24 * a**3
               + 21 / 8 * a**4 - 5 / 24 * a**5)
    return out


def _quintic_profile_slope(r):
    """d phi / d r for r >= 0."""
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    m1 = r <= 1
    m2 = (r > 1) & (r <= 2)
    m3 = (r > 2) & (r <= 3)
    a = r[m1]
    out[m1] = -5 / 2 * a - 35 / 4 * a**2 + 21 * a**3 - 125 / 12 * a**4
    a = r[m2]
    out[m2] = 75 / 4 - 245 / 4 * a + 545 / 8 * a**2 - 63 / 2 * a**3 + 125 / 24 * a**4
    a = r[m3]
    out[m3] = -153 / 4 + 255 / 4 * a - 313 / 8 * a**2 + 21 / 2 * a**3 - 25 / 24 * a**4
    return out


STENCIL = np.arange(-3, 4)


def discretize_delta(offset: float) -> np.ndarray:
    """Weights w_k = delta_h((k - offset) h) h for k = -3..3."""
    return _quintic_profile(STENCIL - offset)


def discretize_delta_slope(offset: float) -> np.ndarray:
    """d w_k / d offset for k = -3..3."""
    d = STENCIL - offset
    return -np.sign(d) * _quintic_profile_slope(d)


# ---------------------------------------------------------------------------
# media and geometry


@dataclass(frozen=True)
class Grid2D:
    nx: int
    nz: int
    h: float

    def __post_init__(self):
        if self.nx < 16 or self.nz < 16:
            raise ValueError("grid needs at least 16 nodes per direction")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def covering(cls, width: float, depth: float, h: float) -> "Grid2D":
        """Grid with nodes on [0, width] x [0, depth] (sizes multiple of h)."""
        nx = int(round(width / h)) + 1
        nz = int(round(depth / h)) + 1
        return cls(nx, nz, h)

    @property
    def width(self) -> float:
        return (self.nx - 1) * self.h

    @property
    def depth(self) -> float:
        return (self.nz - 1) * self.h

    def coords(self):
        """(X, Z) node coordinates, arrays of shape (nz, nx)."""
        x = np.arange(self.nx) * self.h
        z = np.arange(self.nz) * self.h
        return np.meshgrid(x, z)


@dataclass(frozen=True)
class VelocityModel:
    grid: Grid2D
    c: np.ndarray
    name: str = "explicit"

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.shape != (self.grid.nz, self.grid.nx):
            raise ValueError(f"velocity field shape {c.shape} does not match grid")
        if not np.all(c > 0):
            raise ValueError("velocity must be positive everywhere")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def c_max(self) -> float:
        return float(self.c.max())

    @classmethod
    def homogeneous(cls, grid: Grid2D, c0: float) -> "VelocityModel":
        return cls(grid, np.full((grid.nz, grid.nx), float(c0)), "homogeneous")

    @classmethod
    def two_layer(cls, grid: Grid2D) -> "VelocityModel":
        """Crust with a vertical gradient over a faster mantle below 20 km."""
        X, Z = grid.coords()
        lateral = 0.2 * np.sin(np.pi * X / 25.0)
        c = np.where(Z <= 20.0, 5.2 + 0.05 * Z + lateral, 6.8 + lateral)
        return cls(grid, c, "two_layer")

    @classmethod
    def subduction(cls, grid: Grid2D) -> "VelocityModel":
        """Undulating Moho with a dipping slow-over-fast slab in the mantle."""
        X, Z = grid.coords()
        moho = 33.0 + 5.0 * np.sin(np.pi * X / 40.0)
        slab = 0.4 * X
        c = np.full(X.shape, 7.8)
        c = np.where((Z > 60.0 + slab) & (Z <= 85.0 + slab), 8.268, c)
        c = np.where((Z > 45.0 + slab) & (Z <= 60.0 + slab), 7.488, c)
        c = np.where((Z > moho) & (Z <= 45.0 + slab), 7.8, c)
        c = np.where(Z <= moho, 5.5, c)
        return cls(grid, c, "subduction")


@dataclass(frozen=True)
class SourceParams:
    xi: tuple
    tau: float
    wavelet: RickerParams = field(default_factory=RickerParams)

    def __post_init__(self):
        object.__setattr__(self, "xi", (float(self.xi[0]), float(self.xi[1])))
        if self.tau < 0:
            raise ValueError("origin time must be nonnegative")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.xi[0], self.xi[1], self.tau])


def default_pml_strength(c_max: float, width_km: float, reflection: float = 1e-4) -> float:
    """d0 of the quadratic profile d(s) = d0 (s/L)^2 for a target reflection."""
    return 3.0 * c_max * math.log(1.0 / reflection) / (2.0 * width_km)


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    nt: int
    cfl: float = 0.9
    pml_width: int = 20
    pml_strength: Optional[float] = None
    stencil_order: int = 2

    def __post_init__(self):
        if not (self.dt > 0 and self.nt >= 1):
            raise ValueError("need dt > 0 and nt >= 1")
        if not 0 < self.cfl <= 0.9:
            raise ValueError("cfl safety factor must lie in (0, 0.9]")
        if self.stencil_order not in (2, 4):
            raise ValueError("stencil_order must be 2 or 4")
        if self.pml_width < 0:
            raise ValueError("pml_width must be >= 0")

    @property
    def t_final(self) -> float:
        return self.nt * self.dt

    def max_dt(self, h: float, c_max: float) -> float:
        factor = 1.0 if self.stencil_order == 2 else 6.0 / 7.0
        return self.cfl * factor * h / (math.sqrt(2.0) * c_max)

    @classmethod
    def for_model(cls, vm: VelocityModel, t_final: float, cfl: float = 0.9,
                  safety: float = 0.95, **kw) -> "SolverConfig":
        """Largest stable dt (times ``safety``) that divides t_final evenly."""
        probe = cls(1.0, 1, cfl=cfl, **kw)
        dt_max = safety * probe.max_dt(vm.grid.h, vm.c_max)
        nt = int(math.ceil(t_final / dt_max))
        return cls(t_final / nt, nt, cfl=cfl, **kw)


@dataclass(frozen=True)
class ReceiverArray:
    positions: tuple

    def __post_init__(self):
        pos = tuple((float(x), float(z)) for x, z in self.positions)
        if any(z != 0.0 for _, z in pos):
            raise ValueError("receivers must sit on the free surface z = 0")
        if len(set(pos)) != len(pos):
            raise ValueError("receiver positions must be distinct")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def at_x(cls, xs: Sequence[float]) -> "ReceiverArray":
        return cls(tuple((x, 0.0) for x in xs))

    def __len__(self):
        return len(self.positions)

    def subset(self, indices: Sequence[int]) -> "ReceiverArray":
        return ReceiverArray(tuple(self.positions[i] for i in indices))

    def node_indices(self, grid: Grid2D) -> np.ndarray:
        idx = []
        for x, z in self.positions:
            i = x / grid.h
            if abs(i - round(i)) > 1e-6 or not 0 <= round(i) < grid.nx:
                raise ValueError(f"receiver at x={x} km is not on a grid node")
            idx.append(int(round(i)))
        return np.array(idx, dtype=np.int64)


@dataclass(frozen=True)
class TraceSet:
    dt: float
    data: np.ndarray
    decimation: int = 1

    def __post_init__(self):
        d = np.array(self.data, dtype=float)
        if d.ndim != 2 or d.shape[1] < 2:
            raise ValueError("trace data must be (receivers, samples)")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, r: int) -> Trace:
        return Trace(self.dt, self.data[r])

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    def decimate(self, k: int) -> "TraceSet":
        return TraceSet(self.dt * k, self.data[:, ::k], self.decimation * k)

    def subset(self, indices: Sequence[int]) -> "TraceSet":
        return TraceSet(self.dt, self.data[list(indices)], self.decimation)

    def to_csv(self, path, metadata: Optional[dict] = None) -> None:
        with open(path, "w", newline="") as fh:
            if metadata:
                for k, v in metadata.items():
                    fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(["t"] + [f"r{r + 1}" for r in range(len(self))])
            for i, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.data[:, i]])

    @classmethod
    def from_csv(cls, path) -> "TraceSet":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        body = np.array(rows[1:], dtype=float).reshape(len(rows) - 1, -1)
        t = body[:, 0]
        steps = np.diff(t)
        dt = steps.mean()
        if np.any(np.abs(steps - dt) > 1e-9 * dt):
            raise ValueError(f"{path}: non-uniform time column")
        return cls(float(dt), body[:, 1:].T)


# ---------------------------------------------------------------------------
# solver


class StabilityError(ValueError):
    pass


class NumericalBlowup(FloatingPointError):
    pass


@dataclass
class WavefieldRecord:
    """Field values on a square node patch at every time step.

    ``values[n, a, b]`` is u at physical node (i0 + b, j0 + a) at time n*dt.
    """

    i0: int
    j0: int
    h: float
    dt: float
    values: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[1]

    def central_gradient(self, a: int, b: int) -> np.ndarray:
        """(du/dx, du/dz) time series at patch node (a, b) by central differences."""
        v = self.values
        gx = (v[:, a, b + 1] - v[:, a, b - 1]) / (2 * self.h)
        gz = (v[:, a + 1, b] - v[:, a - 1, b]) / (2 * self.h)
        return np.stack([gx, gz], axis=1)


class _SourceStencil:
    """Quintic-delta weights of a point on the physical grid."""

    def __init__(self, grid: Grid2D, point):
        x, z = point
        sx, sz = x / grid.h, z / grid.h
        self.i0 = int(round(sx)) - 3
        self.j0 = int(round(sz)) - 3
        ox, oz = sx - round(sx), sz - round(sz)
        self.wx, self.wz = discretize_delta(ox), discretize_delta(oz)
        # derivative with respect to the point coordinate in km
        self.dwx = discretize_delta_slope(ox) / grid.h
        self.dwz = discretize_delta_slope(oz) / grid.h

    @property
    def weights(self) -> np.ndarray:
        """Dimensionless tensor weights, shape (7, 7) indexed [z, x]; sum to 1."""
        return np.outer(self.wz, self.wx)

    def weight_gradient(self) -> np.ndarray:
        """d weights / d(xi_x, xi_z), shape (2, 7, 7)."""
        return np.stack([np.outer(self.wz, self.dwx), np.outer(self.dwz, self.wx)])

    def inside(self, grid: Grid2D) -> bool:
        return (self.i0 >= 0 and self.j0 >= 0 and self.i0 + 6 < grid.nx
                and self.j0 + 6 < grid.nz)


class AcousticSolver:
    """Leapfrog solver for one medium and configuration.

    The physical grid is padded with ``pml_width`` nodes on the left, right
    and bottom.  With ``pml_width == 0`` every side is a mirrored (Neumann)
    boundary.
    """

    def __init__(self, vm: VelocityModel, cfg: SolverConfig):
        self.vm, self.cfg = vm, cfg
        g = vm.grid
        dt_max = cfg.max_dt(g.h, vm.c_max)
        if cfg.dt > dt_max * (1 + 1e-12):
            raise StabilityError(
                f"dt={cfg.dt:.6g} s violates the stability limit; max allowed dt = {dt_max:.6g} s"
            )
        p = cfg.pml_width
        self.pad = p
        self.mirror_all = p == 0
        c = np.pad(vm.c, ((0, p), (p, p)), mode="edge")
        self.nz, self.nx = c.shape
        c2 = c**2
        cx2 = np.empty((self.nz, self.nx + 1))
        cx2[:, 1:-1] = 2 * c2[:, 1:] * c2[:, :-1] / (c2[:, 1:] + c2[:, :-1])
        cz2 = np.empty((self.nz + 1, self.nx))
        cz2[1:-1] = 2 * c2[1:] * c2[:-1] / (c2[1:] + c2[:-1])
        if self.mirror_all:
            cx2[:, 0], cx2[:, -1] = cx2[:, 1], cx2[:, -2]
            cz2[-1] = cz2[-2]
        else:
            cx2[:, 0], cx2[:, -1] = c2[:, 0], c2[:, -1]
            cz2[-1] = c2[-1]
        cz2[0] = cz2[1]
        self.cx2, self.cz2 = cx2, cz2
        if cfg.stencil_order == 2:
            self.c1, self.c2 = 1.0, 0.0
        else:
            self.c1, self.c2 = 9.0 / 8.0, -1.0 / 24.0
        dt = cfg.dt
        if p > 0:
            d0 = cfg.pml_strength
            if d0 is None:
                d0 = default_pml_strength(vm.c_max, p * g.h)
            self.pml_strength = d0
            s = np.arange(p, 0, -1) / p
            dx = np.zeros(self.nx)
            dx[:p] = d0 * s**2
            dx[-p:] = d0 * s[::-1] ** 2
            dz = np.zeros(self.nz)
            dz[-p:] = d0 * s[::-1] ** 2
        else:
            self.pml_strength = 0.0
            dx, dz = np.zeros(self.nx), np.zeros(self.nz)
        self.dx_coef = self._coef(dx, dt)
        self.dz_coef = self._coef(dz, dt)
        # nodal mass weights of the trapezoid inner product (mirrored rows/cols)
        m = np.ones((self.nz, self.nx))
        m[0] *= 0.5
        if self.mirror_all:
            m[-1] *= 0.5
            m[:, 0] *= 0.5
            m[:, -1] *= 0.5
        self.mass = m

    @staticmethod
    def _coef(d, dt):
        return np.ascontiguousarray(
            np.stack([2.0 - (d * dt) ** 2, 1.0 - d * dt, 1.0 / (1.0 + d * dt)], axis=1)
        )

    # -- index helpers (physical -> padded) --
    def padded(self, i: int, j: int):
        return i + self.pad, j

    def stencil(self, point) -> _SourceStencil:
        st = _SourceStencil(self.vm.grid, point)
        if not st.inside(self.vm.grid):
            raise ValueError(
                f"point {point} is closer than 3h to the edge of the physical domain"
            )
        return st

    def run(self, nbatch, sources, receivers, patches):
        """Generic driver.

        sources:   list of (field, i0, j0, weights[k, k] (physical density
                   weights, already divided by h^2 and the nodal mass), series[nt])
        receivers: list of (field, i, j) physical node indices
        patches:   list of (field, i0, j0, size)
        """
        cfg = self.cfg
        nt = cfg.nt
        ssz = max([w.shape[0] for _, _, _, w, _ in sources], default=1)
        ns = len(sources)
        src_field = np.zeros(ns, np.int64)
        src_j0 = np.zeros(ns, np.int64)
        src_i0 = np.zeros(ns, np.int64)
        src_w = np.zeros((ns, ssz, ssz))
        series = np.zeros((ns, nt))
        for k, (f, i0, j0, w, s) in enumerate(sources):
            src_field[k] = f
            src_i0[k], src_j0[k] = self.padded(i0, j0)
            src_w[k, : w.shape[0], : w.shape[1]] = w
            series[k] = s[:nt]
        nr = len(receivers)
        rec_field = np.array([r[0] for r in receivers], np.int64).reshape(nr)
        rec_i = np.array([self.padded(r[1], r[2])[0] for r in receivers], np.int64).reshape(nr)
        rec_j = np.array([r[2] for r in receivers], np.int64).reshape(nr)
        npch = len(patches)
        psz = patches[0][3] if patches else 1
        p_field = np.array([p[0] for p in patches], np.int64).reshape(npch)
        p_i0 = np.array([self.padded(p[1], p[2])[0] for p in patches], np.int64).reshape(npch)
        p_j0 = np.array([p[2] for p in patches], np.int64).reshape(npch)
        traces, pvals, failed = _fdkernel.run_leapfrog(
            self.cx2, self.cz2, self.dx_coef, self.dz_coef, cfg.dt, self.vm.grid.h,
            self.c1, self.c2, self.mirror_all, self.mirror_all,
            int(nbatch), int(nt),
            src_field, src_j0, src_i0, src_w, series,
            rec_field, rec_j, rec_i,
            p_field, p_j0, p_i0, int(psz),
        )
        if failed >= 0:
            raise NumericalBlowup(f"non-finite wavefield detected at step {failed}")
        return traces, pvals

    def source_terms(self, src: SourceParams, field: int = 0):
        st = self.stencil(src.xi)
        h = self.vm.grid.h
        t = np.arange(self.cfg.nt) * self.cfg.dt
        series = ricker_eval(src.wavelet, t - src.tau)
        return [(field, st.i0, st.j0, st.weights / h**2, series)], st

    def point_source_weight(self, i: int, j: int) -> np.ndarray:
        """Single-node delta at physical node (i, j), mass-corrected."""
        h = self.vm.grid.h
        pi, pj = self.padded(i, j)
        return np.array([[1.0 / (h**2 * self.mass[pj, pi])]])


def forward_solve(vm: VelocityModel, src: SourceParams, cfg: SolverConfig,
                  rec: ReceiverArray) -> TraceSet:
    traces, _ = forward_solve_with_storage(vm, src, cfg, rec, point=None)
    return traces


def forward_solve_with_storage(vm, src, cfg, rec, point=None, radius: int = 3,
                               solver: Optional[AcousticSolver] = None):
    """Forward solve that also stores u on a (2 radius + 1)^2 patch.

    The patch is centred on the grid node nearest ``point`` (default: the
    source position).  Returns ``(TraceSet, WavefieldRecord or None)``.
    """
    solver = solver or AcousticSolver(vm, cfg)
    sources, _ = solver.source_terms(src)
    ridx = rec.node_indices(vm.grid)
    receivers = [(0, int(i), 0) for i in ridx]
    patches = []
    if point is not None:
        ci = int(round(point[0] / vm.grid.h))
        cj = int(round(point[1] / vm.grid.h))
        i0, j0 = ci - radius, cj - radius
        size = 2 * radius + 1
        if i0 < 0 or j0 < 0 or i0 + size > vm.grid.nx or j0 + size > vm.grid.nz:
            raise ValueError("storage patch leaves the physical grid")
        patches = [(0, i0, j0, size)]
    traces, pvals = solver.run(1, sources, receivers, patches)
    ts = TraceSet(cfg.dt, traces)
    record = None
    if patches:
        record = WavefieldRecord(patches[0][1], patches[0][2], vm.grid.h, cfg.dt, pvals[0])
    return ts, record
