"""Atomic motion in the dispersive limit: optical potential plus scattering heating.

Units: hbar = 1 and the standing-wave number k_L = 1, so the recoil frequency
``omega_r`` fixes the mass through ``p^2/2m = omega_r p^2``. The motion lives
on a periodic grid over one period of ``cos^2 x``,
``x_j = -pi/2 + j pi/N`` (j = 0..N-1), with the antinode at ``x = 0``.
Momenta are the even integers ``p_m = 2 * m`` in numpy FFT order
(``m = fftfreq(N, 1/N)``); the momentum eigenvector ``m`` has position
amplitudes ``exp(i p_m x_j)/sqrt(N)``. The master equation is

``drho/dt = -i[H', rho] + Gamma D[cos^2 x] rho``,
``H' = omega_r p^2 - U0 cos^2 x``, ``D[c] rho = c rho c - {c^2, rho}/2``,

with ``U0 = g0^2 E^2/(kappa^2 Delta)`` and ``Gamma = 2 g0^4 E^2/(kappa^3 Delta^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .dynamics import LindbladModel, evolve_lindblad, lindblad_generator
from .errors import TruncationError
from .hilbert import DensityMatrix, Operator, StateVector, TensorSpace

ALIAS_LIMIT = 1e-8


@dataclass(frozen=True)
class DispersiveConfig:
    """Model rates of the far-detuned cavity; ``omega_r`` sets the energy unit in practice.

    ``scattering=False`` keeps the potential and drops the heating term.
    """

    g0: float = 1.0
    pump: float = 40.0
    kappa: float = 1.0
    delta: float = 20.0
    omega_r: float = 1.0
    n_x: int = 64
    scattering: bool = True

    def __post_init__(self):
        if self.delta == 0:
            raise ValueError("detuning Delta must be nonzero")
        if self.kappa <= 0 or self.omega_r <= 0:
            raise ValueError("kappa and omega_r must be positive")
        if self.n_x < 32 or self.n_x & (self.n_x - 1):
            raise ValueError("n_x must be a power of two and at least 32")

    @property
    def well_depth(self) -> float:
        """U0; positive (attractive at antinodes) for Delta > 0."""
        return self.g0**2 * self.pump**2 / (self.kappa**2 * self.delta)

    @property
    def scattering_rate(self) -> float:
        """Gamma (zero when scattering is switched off)."""
        if not self.scattering:
            return 0.0
        return 2 * self.g0**4 * self.pump**2 / (self.kappa**3 * self.delta**2)

    @property
    def trap_frequency(self) -> float:
        """Harmonic frequency at the bottom of the well, 2 sqrt(U0 omega_r)."""
        return 2 * np.sqrt(abs(self.well_depth) * self.omega_r)


@dataclass(frozen=True)
class Grid:
    x: np.ndarray
    p: np.ndarray
    fourier: np.ndarray  # unitary; columns are momentum eigenvectors in position space

    @property
    def space(self) -> TensorSpace:
        return TensorSpace((len(self.x),))

    def momentum_operator(self, f) -> np.ndarray:
        """f(p) as a position-space matrix."""
        return (self.fourier * f(self.p)) @ self.fourier.conj().T

    def to_momentum(self, psi: np.ndarray) -> np.ndarray:
        return self.fourier.conj().T @ psi


def make_grid(n: int) -> Grid:
    x = -np.pi / 2 + np.pi * np.arange(n) / n
    p = 2.0 * np.fft.fftfreq(n, 1.0 / n)
    fourier = np.exp(1j * np.outer(x, p)) / np.sqrt(n)
    return Grid(x, p, fourier)


@dataclass(frozen=True)
class DispersiveSystem:
    """Grid, operators and Lindblad model for one configuration."""

    cfg: DispersiveConfig
    grid: Grid
    model: LindbladModel
    p: Operator
    p2: Operator
    x: Operator

    @property
    def hamiltonian(self) -> Operator:
        return self.model.hamiltonian

    @cached_property
    def generator(self) -> sp.csr_matrix:
        return lindblad_generator(self.model)

    @cached_property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.hamiltonian.dense())

    def ground_state(self) -> StateVector:
        return StateVector(self.grid.space, self.spectrum[1][:, 0])

    def plane_wave(self, m: int = 0) -> StateVector:
        """Momentum eigenstate with p = 2 m; uniform position density."""
        k = int(np.flatnonzero(self.grid.p == 2 * m)[0])
        return StateVector(self.grid.space, self.grid.fourier[:, k])

    def wavepacket(self, x0: float, width: float, p0: float = 0.0) -> StateVector:
        """Gaussian of position spread ``width`` centred at ``x0`` (no wrapping)."""
        psi = np.exp(-((self.grid.x - x0) ** 2) / (4 * width**2) + 1j * p0 * self.grid.x)
        return StateVector(self.grid.space, psi).normalized()


def dispersive_generator(cfg: DispersiveConfig) -> DispersiveSystem:
    """Build ``H'`` and the scattering jump on the grid.

    Raises :class:`TruncationError` when the ground state of ``H'`` puts more
    than 1e-8 of its weight in the outer quarter of the momentum grid.
    """
    grid = make_grid(cfg.n_x)
    space = grid.space
    cos2 = np.cos(grid.x) ** 2
    h = grid.momentum_operator(lambda p: cfg.omega_r * p**2) - cfg.well_depth * np.diag(cos2)
    h = 0.5 * (h + h.conj().T)
    jump = Operator(space, np.diag(cos2).astype(complex))
    model = LindbladModel(Operator(space, h), ((jump, 0.5 * cfg.scattering_rate),))
    system = DispersiveSystem(
        cfg=cfg,
        grid=grid,
        model=model,
        p=Operator(space, grid.momentum_operator(lambda p: p)),
        p2=Operator(space, grid.momentum_operator(lambda p: p**2)),
        x=Operator(space, np.diag(grid.x).astype(complex)),
    )
    weights = np.abs(grid.to_momentum(system.ground_state().amplitudes)) ** 2
    outer = np.sum(weights[np.abs(grid.p) >= cfg.n_x / 2])
    if outer > ALIAS_LIMIT:
        raise TruncationError(f"grid of {cfg.n_x} points too coarse: ground state has {outer:.1e} at high momenta")
    return system


@dataclass(frozen=True)
class MomentTrajectory:
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    p2: np.ndarray
    energy: np.ndarray
    trace_drift: float


def _as_density(system: DispersiveSystem, rho0) -> DensityMatrix:
    if isinstance(rho0, StateVector):
        rho0 = rho0.to_density()
    if rho0.space != system.grid.space:
        raise ValueError("initial state does not live on the position grid")
    return rho0


def simulate_dispersive(
    system: DispersiveSystem | DispersiveConfig,
    rho0,
    duration: float,
    samples: int = 51,
    tol: float = 1e-10,
) -> MomentTrajectory:
    """<x>, <p>, <p^2> and <H'> at ``samples`` evenly spaced times in [0, duration]."""
    if isinstance(system, DispersiveConfig):
        system = dispersive_generator(system)
    rho = _as_density(system, rho0)
    times = np.linspace(0.0, duration, samples)
    rows = []
    drift = 0.0
    tr0 = rho.trace().real
    for k, t in enumerate(times):
        if k:
            rho = evolve_lindblad(system.model, rho, times[k - 1], t, tol=tol, generator=system.generator)
            drift = max(drift, abs(rho.trace().real - tr0))
        rows.append([rho.expect(op).real for op in (system.x, system.p, system.p2, system.hamiltonian)])
    x, p, p2, e = np.array(rows).T
    return MomentTrajectory(times, x, p, p2, e, drift)


def ehrenfest_rate(system: DispersiveSystem, rho) -> float:
    """Gamma <sin^2(2x)>: the scattering contribution to d<p^2>/dt."""
    rho = _as_density(system, rho)
    density = np.real(np.diag(rho.matrix))
    return float(system.cfg.scattering_rate * density @ np.sin(2 * system.grid.x) ** 2)


def heating_rate_check(system: DispersiveSystem | DispersiveConfig, rho, dt: float | None = None) -> dict:
    """Finite-difference d<p^2>/dt from a short evolution against the Ehrenfest rate.

    The numeric rate uses Richardson extrapolation of forward differences at
    ``dt`` and ``dt/2``. It includes the coherent part ``i<[H', p^2]>``, which
    vanishes for eigenstates of ``H'`` and for uniform-density plane waves; that
    part is reported separately as ``coherent_rate``.
    """
    if isinstance(system, DispersiveConfig):
        system = dispersive_generator(system)
    rho = _as_density(system, rho)
    cfg = system.cfg
    if dt is None:
        scale = max(cfg.scattering_rate, cfg.trap_frequency, cfg.omega_r)
        dt = 1e-3 / scale
    p2 = system.p2
    start = rho.expect(p2).real

    def forward(h):
        later = evolve_lindblad(system.model, rho, 0.0, h, tol=1e-13, generator=system.generator)
        return (later.expect(p2).real - start) / h

    numeric = 2 * forward(dt / 2) - forward(dt)
    h, m = system.hamiltonian.dense(), p2.dense()
    coherent = float(np.real(1j * np.trace(rho.matrix @ (h @ m - m @ h))))
    return {"numeric_rate": float(numeric), "ehrenfest_rate": ehrenfest_rate(system, rho), "coherent_rate": coherent}
