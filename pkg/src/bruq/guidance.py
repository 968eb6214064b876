"""One-dimensional Bohmian trajectories for a particle in two boxes.

Units hbar = m = 1.  The grid is periodic for the spectral (FFT) parts; the
packets are kept far from the edges so the periodic images never matter.
Each packet is evolved on its own (the dynamics is linear) so their spatial
overlap can be monitored; the full wavefunction is the weighted sum.

Trajectories follow v(x, t) = Im(psi'(x)/psi(x)), integrated with classic
RK4 on stored frames, linear interpolation in x and in t.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import rng
from .trajectories import thread_count

NODE_THRESHOLD = 1e-24
SUPPORT_SIGMAS = 8.0
MAX_OVERLAP = 1e-10


class SeparationError(ValueError):
    """The packets overlap too much for box membership to be meaningful."""


@dataclass(frozen=True)
class Grid1D:
    x_min: float = -40.0
    x_max: float = 40.0
    n: int = 2048

    def __post_init__(self):
        if self.n < 256 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 256, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)


@dataclass(frozen=True)
class PacketSpec:
    center: float
    sigma: float = 1.0
    momentum: float = 0.0
    weight: complex = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True, eq=False)
class WaveFunction1D:
    grid: Grid1D
    samples: np.ndarray

    def norm(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) * self.grid.dx)

    def density(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    def width(self) -> float:
        """Standard deviation of position under |psi|^2."""
        rho = self.density() * self.grid.dx
        rho = rho / rho.sum()
        x = self.grid.x
        mean = np.sum(rho * x)
        return float(np.sqrt(np.sum(rho * (x - mean) ** 2)))


def gaussian(grid: Grid1D, p: PacketSpec) -> np.ndarray:
    """Unit-norm Gaussian with position spread ``sigma`` (|psi|^2 has std ``sigma``)."""
    x = grid.x
    g = np.exp(-((x - p.center) ** 2) / (4 * p.sigma**2) + 1j * p.momentum * x)
    return g / np.sqrt(np.sum(np.abs(g) ** 2) * grid.dx)


def _check_support(grid: Grid1D, p: PacketSpec) -> None:
    lo, hi = p.center - SUPPORT_SIGMAS * p.sigma, p.center + SUPPORT_SIGMAS * p.sigma
    if lo < grid.x_min or hi > grid.x_max:
        raise ValueError(
            f"packet at {p.center} with sigma {p.sigma} extends to [{lo}, {hi}], outside grid "
            f"[{grid.x_min}, {grid.x_max}]"
        )


def _combine(grid: Grid1D, parts: Sequence[np.ndarray], weights: Sequence[complex]) -> np.ndarray:
    total = sum(complex(w) * g for w, g in zip(weights, parts))
    norm = np.sqrt(np.sum(np.abs(total) ** 2) * grid.dx)
    if not np.isfinite(norm) or norm == 0:
        raise ValueError("packets sum to a zero wavefunction")
    return total / norm


def init_packets(grid: Grid1D, packets: Sequence[PacketSpec]) -> WaveFunction1D:
    """Weighted sum of Gaussian packets, normalised once on the grid."""
    if not packets:
        raise ValueError("need at least one packet")
    for p in packets:
        _check_support(grid, p)
    parts = [gaussian(grid, p) for p in packets]
    return WaveFunction1D(grid, _combine(grid, parts, [p.weight for p in packets]))


def _kinetic_phase(grid: Grid1D, dt: float) -> np.ndarray:
    return np.exp(-0.5j * grid.k**2 * dt)


def split_step_evolve(
    psi: WaveFunction1D, dt: float, steps: int, potential: np.ndarray | None = None
) -> WaveFunction1D:
    """Strang splitting: half kinetic, full potential, half kinetic per step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    f = psi.samples.astype(complex)
    if steps == 0:
        return WaveFunction1D(psi.grid, f.copy())
    grid = psi.grid
    if potential is None:
        # free evolution: the kinetic propagator composes exactly
        f = np.fft.ifft(_kinetic_phase(grid, dt * steps) * np.fft.fft(f))
        return WaveFunction1D(grid, f)
    vphase = np.exp(-1j * np.asarray(potential, dtype=float) * dt)
    half = _kinetic_phase(grid, dt / 2)
    full = half * half
    f = np.fft.ifft(half * np.fft.fft(f))
    for s in range(steps):
        f = f * vphase
        f = np.fft.ifft((full if s < steps - 1 else half) * np.fft.fft(f))
    return WaveFunction1D(grid, f)


@dataclass(frozen=True, eq=False)
class PsiTimeline:
    """Stored wavefunction frames; ``packet_frames[i]`` tracks packet ``i`` alone."""

    grid: Grid1D
    times: np.ndarray
    frames: np.ndarray
    packet_frames: tuple[np.ndarray, ...] = ()
    packets: tuple[PacketSpec, ...] = ()

    def at(self, i: int) -> WaveFunction1D:
        return WaveFunction1D(self.grid, self.frames[i])


def evolve_frames(
    grid: Grid1D,
    packets: Sequence[PacketSpec],
    total_time: float,
    steps: int,
    store_every: int,
    potential: np.ndarray | None = None,
) -> PsiTimeline:
    """Evolve each packet separately and store every ``store_every`` steps."""
    if steps % store_every:
        raise ValueError("steps must be a multiple of store_every")
    for p in packets:
        _check_support(grid, p)
    dt = total_time / steps
    n_frames = steps // store_every + 1
    per_packet = []
    for p in packets:
        g = WaveFunction1D(grid, gaussian(grid, p))
        out = np.empty((n_frames, grid.n), dtype=complex)
        out[0] = g.samples
        for i in range(1, n_frames):
            g = split_step_evolve(g, dt, store_every, potential)
            out[i] = g.samples
        per_packet.append(out)
    weights = [complex(p.weight) for p in packets]
    frames = sum(w * f for w, f in zip(weights, per_packet))
    norm0 = np.sqrt(np.sum(np.abs(frames[0]) ** 2) * grid.dx)
    frames = frames / norm0
    times = np.arange(n_frames) * dt * store_every
    return PsiTimeline(grid, times, frames, tuple(per_packet), tuple(packets))


def spatial_overlap(grid: Grid1D, a: np.ndarray, b: np.ndarray) -> float:
    """Integral of |a||b| over the grid (a and b unit-normalised)."""
    return float(np.sum(np.abs(a) * np.abs(b)) * grid.dx)


def max_packet_overlap(timeline: PsiTimeline) -> float:
    worst = 0.0
    pf = timeline.packet_frames
    for i in range(len(pf)):
        for j in range(i + 1, len(pf)):
            for fa, fb in zip(pf[i], pf[j]):
                worst = max(worst, spatial_overlap(timeline.grid, fa, fb))
    return worst


def _velocity_rows(grid: Grid1D, frames: np.ndarray) -> np.ndarray:
    frames = np.atleast_2d(frames)
    dpsi = np.fft.ifft(1j * grid.k * np.fft.fft(frames, axis=-1), axis=-1)
    rho = np.abs(frames) ** 2
    out = np.empty(frames.shape, dtype=float)
    for r in range(frames.shape[0]):
        f, d, p = frames[r], dpsi[r], rho[r]
        ok = p >= NODE_THRESHOLD * p.max()
        v = np.zeros(grid.n)
        v[ok] = np.imag(np.conj(f[ok]) * d[ok]) / p[ok]
        if not ok.all():
            good, bad = np.flatnonzero(ok), np.flatnonzero(~ok)
            pos = np.searchsorted(good, bad)
            left = good[np.clip(pos - 1, 0, len(good) - 1)]
            right = good[np.clip(pos, 0, len(good) - 1)]
            v[bad] = v[np.where(np.abs(bad - left) <= np.abs(right - bad), left, right)]
        out[r] = v
    return out


def velocity_field(psi: WaveFunction1D) -> np.ndarray:
    """Guidance velocity Im(psi'/psi) with a spectral derivative.

    Where |psi|^2 falls below ``NODE_THRESHOLD`` times its maximum, the
    velocity is copied from the nearest grid point above threshold.
    """
    return _velocity_rows(psi.grid, psi.samples)[0]


@dataclass(frozen=True, eq=False)
class BohmTrajectories:
    """Positions ``x[i, k]`` of trajectory ``k`` at stored time ``times[i]``."""

    times: np.ndarray
    x: np.ndarray
    boundary: float
    escaped: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def box(self) -> np.ndarray:
        """1 left of the boundary, 2 right of it."""
        return np.where(self.x < self.boundary, 1, 2)

    def trajectory(self, k: int) -> BohmTrajectory1D:
        return BohmTrajectory1D(float(self.x[0, k]), self.x[:, k].copy(), self.box[:, k].copy())


@dataclass(frozen=True, eq=False)
class BohmTrajectory1D:
    initial: float
    positions: np.ndarray
    boxes: np.ndarray


def _interp_rows(grid: Grid1D, v: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.interp(x, grid.x, v)


def _integrate_chunk(grid: Grid1D, times: np.ndarray, vel: np.ndarray, x0: np.ndarray):
    n_frames = len(times)
    xs = np.empty((n_frames, x0.size))
    xs[0] = x0
    escaped = np.zeros(x0.size, dtype=bool)
    x = x0.copy()
    for i in range(n_frames - 1):
        h = times[i + 1] - times[i]
        v0, v1 = vel[i], vel[i + 1]
        vm = 0.5 * (v0 + v1)
        k1 = _interp_rows(grid, v0, x)
        k2 = _interp_rows(grid, vm, x + 0.5 * h * k1)
        k3 = _interp_rows(grid, vm, x + 0.5 * h * k2)
        k4 = _interp_rows(grid, v1, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        escaped |= (x < grid.x_min) | (x > grid.x[-1])
        xs[i + 1] = x
    return xs, escaped


def integrate_trajectories(
    timeline: PsiTimeline, initial: Sequence[float], boundary: float | None = None, workers: int | None = None
) -> BohmTrajectories:
    """RK4 integration of the guidance equation from each initial position.

    Trajectories that leave the grid are flagged in ``escaped``.
    """
    grid = timeline.grid
    x0 = np.asarray(initial, dtype=float)
    if np.any((x0 < grid.x_min) | (x0 > grid.x[-1])):
        raise ValueError("initial positions must lie within the grid")
    if boundary is None:
        boundary = _default_boundary(timeline)
    vel = _velocity_rows(grid, timeline.frames)
    workers = thread_count() if workers is None else workers
    parts = np.array_split(np.arange(x0.size), max(1, min(workers, x0.size)))
    if len(parts) == 1:
        results = [_integrate_chunk(grid, timeline.times, vel, x0)]
    else:
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            results = list(pool.map(lambda p: _integrate_chunk(grid, timeline.times, vel, x0[p]), parts))
    xs = np.concatenate([r[0] for r in results], axis=1)
    escaped = np.concatenate([r[1] for r in results])
    return BohmTrajectories(timeline.times.copy(), xs, float(boundary), escaped)


def _default_boundary(timeline: PsiTimeline) -> float:
    if len(timeline.packets) >= 2:
        return 0.5 * (timeline.packets[0].center + timeline.packets[1].center)
    g = timeline.grid
    return 0.5 * (g.x_min + g.x_max)


@dataclass(frozen=True)
class BoxStatistics:
    n: int
    excluded: int
    p_box1_start: float
    p_box1_end: float
    p_box1_throughout: float
    crossing_fraction: float
    stderr_start: float


def box_statistics(traj: BohmTrajectories) -> BoxStatistics:
    keep = ~traj.escaped if traj.escaped is not None else np.ones(traj.n, dtype=bool)
    box = traj.box[:, keep]
    n = box.shape[1]
    if n == 0:
        raise ValueError("no trajectories left after excluding escapes")
    start = float(np.mean(box[0] == 1))
    end = float(np.mean(box[-1] == 1))
    throughout = float(np.mean(np.all(box == 1, axis=0)))
    crossing = float(np.mean(np.any(box != box[0], axis=0)))
    return BoxStatistics(n, int((~keep).sum()), start, end, throughout, crossing, math.sqrt(start * (1 - start) / n))


# cell-centred piecewise-constant density: cell i covers [x_i - dx/2, x_i + dx/2)
def _cdf_nodes(grid: Grid1D, density: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = grid.x_min - grid.dx / 2 + grid.dx * np.arange(grid.n + 1)
    mass = density * grid.dx
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    return edges, cdf / cdf[-1]


def density_cdf(psi: WaveFunction1D):
    edges, cdf = _cdf_nodes(psi.grid, psi.density())
    return lambda x: np.interp(x, edges, cdf)


def sample_positions(psi: WaveFunction1D, n: int, seed: int, stream: int = rng.STREAM_GUIDANCE) -> np.ndarray:
    """Inverse-CDF draws from |psi|^2, reproducible per (seed, index)."""
    edges, cdf = _cdf_nodes(psi.grid, psi.density())
    u = rng.uniforms(seed, np.arange(n, dtype=np.uint64), step=0, stream=stream)
    x = np.interp(u, cdf, edges)
    return np.clip(x, psi.grid.x_min, psi.grid.x[-1])


def free_gaussian_width(sigma0: float, t: float) -> float:
    return sigma0 * math.sqrt(1 + t**2 / (4 * sigma0**4))


@dataclass(frozen=True)
class GuidanceConfig:
    grid: Grid1D = Grid1D()
    centers: tuple[float, ...] = (-8.0, 8.0)
    sigma: float = 1.0
    weights: tuple[float, ...] = (0.5, 0.5)  # Born weights, not amplitudes
    total_time: float = 1.0
    steps: int = 1000
    store_every: int = 5

    def packets(self) -> tuple[PacketSpec, ...]:
        if len(self.weights) != len(self.centers):
            raise ValueError("need one weight per packet")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        return tuple(PacketSpec(c, self.sigma, 0.0, math.sqrt(w)) for c, w in zip(self.centers, self.weights))


@dataclass(frozen=True, eq=False)
class GuidanceRun:
    config: GuidanceConfig
    timeline: PsiTimeline
    trajectories: BohmTrajectories
    summary: dict


def run_guidance(config: GuidanceConfig, n: int, seed: int, workers: int | None = None) -> GuidanceRun:
    """Full demonstrator: evolve, check separation, sample, integrate, test."""
    packets = config.packets()
    tl = evolve_frames(config.grid, packets, config.total_time, config.steps, config.store_every)
    overlap = max_packet_overlap(tl)
    if overlap >= MAX_OVERLAP:
        raise SeparationError(
            f"packets not separated enough: spatial overlap reaches {overlap:.3g} (limit {MAX_OVERLAP:g})"
        )
    psi0, psi_t = tl.at(0), tl.at(len(tl.times) - 1)
    x0 = sample_positions(psi0, n, seed)
    traj = integrate_trajectories(tl, x0, workers=workers)
    stats_box = box_statistics(traj)
    keep = ~traj.escaped
    final = traj.x[-1, keep]
    ks = stats.kstest(final, density_cdf(psi_t))
    reference = sample_positions(psi_t, n, seed, stream=rng.STREAM_GUIDANCE_REFERENCE)
    ks2 = stats.ks_2samp(final, reference)
    order0 = np.argsort(traj.x[0], kind="stable")
    order_t = np.argsort(traj.x[-1], kind="stable")
    widths = []
    for p, frames in zip(packets, tl.packet_frames):
        w = WaveFunction1D(config.grid, frames[-1]).width()
        exact = free_gaussian_width(p.sigma, float(tl.times[-1]))
        widths.append(abs(w - exact) / exact)
    drift = max(abs(tl.at(i).norm() - 1.0) for i in range(len(tl.times)))
    summary = {
        "n": n,
        "seed": seed,
        "excluded": stats_box.excluded,
        "frames": len(tl.times),
        "total_time": float(tl.times[-1]),
        "boundary": traj.boundary,
        "crossing_fraction": stats_box.crossing_fraction,
        "p_box1_start": stats_box.p_box1_start,
        "p_box1_end": stats_box.p_box1_end,
        "p_box1_throughout": stats_box.p_box1_throughout,
        "p_box1_stderr": stats_box.stderr_start,
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "ks2_statistic": float(ks2.statistic),
        "ks2_pvalue": float(ks2.pvalue),
        "order_preserved": bool(np.array_equal(order0, order_t)),
        "norm_drift": float(drift),
        "max_packet_overlap": float(overlap),
        "width_relative_error": float(max(widths)),
    }
    return GuidanceRun(config, tl, traj, summary)
