"""Raman-scheme phase gate with quantized atomic motion.

Each atom has internal levels ``|0>, |1>, |r>`` (indices 0, 1, 2). Atom 1
couples through ``|1><r| a`` (emits a photon on ``|1> -> |r>``) and atom 2
through ``|r><1| a`` (absorbs on ``|1> -> |r>``). The pulse sequence
``pi`` (atom 1), ``2 pi`` (atom 2), ``pi`` (atom 1) then maps
``|10> -> -|10>`` and leaves the other computational states unchanged.

The coupling carries ``cos(eta (A + A^dag))`` and each motional mode has
trap energy ``omega A^dag A``. Square pulses make the Hamiltonian piecewise
constant, so each segment is propagated with its exact exponential; only the
driven atom's (internal, cavity, motion) factor needs diagonalising.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .dynamics import TimeDependentHamiltonian
from .errors import ConvergenceError, CutoffError
from .hilbert import (
    StateVector,
    TensorSpace,
    ThermalSpec,
    cosine_displacement,
    embed_sparse,
    fock_lowering,
    gate_entanglement_fidelity,
    purification,
    thermal_weights,
)
from .perturbation import ExchangeParams, gate_fidelity_analytic, gate_heating_analytic

log = logging.getLogger(__name__)

ZERO, ONE, R = 0, 1, 2
IDEAL_GATE = np.diag([1.0, 1.0, -1.0, 1.0]).astype(complex)
CUTOFF_STEP = 4
CUTOFF_TOL = 1e-4


@dataclass(frozen=True)
class RamanConfig:
    """Parameters of the Raman gate in units of the Raman coupling ``g``.

    Any two of ``eta``, ``omega_r``, ``omega`` fix the third through
    ``eta**2 * omega == omega_r``. At ``eta == 0`` the trap frequency
    ``omega`` must be given.
    """

    eta: float
    omega_r: float | None = 5e-4
    omega: float | None = None
    g: float = 1.0
    nbar: float = 0.0
    delta: float = 0.0
    n_cavity: int = 3
    n_motion: int | None = None
    guard: int = 16
    thermal_cutoff: int | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.g != 1.0:
            raise ValueError("rates are measured in units of g; g must be 1")
        omega, omega_r = self.omega, self.omega_r
        if omega is None:
            if self.eta == 0:
                raise ValueError("omega is required when eta == 0")
            omega = omega_r / self.eta**2
        elif omega_r is None or self.eta == 0:
            omega_r = self.eta**2 * omega
        elif abs(self.eta**2 * omega - omega_r) > 1e-12 * max(1.0, omega_r):
            raise ValueError(f"eta^2 * omega = {self.eta**2 * omega} does not match omega_r = {omega_r}")
        if omega <= 0:
            raise ValueError("trap frequency must be positive")
        if not -0.5 < self.delta < 0.5:
            raise ValueError("pulse trim delta must lie in (-0.5, 0.5)")
        if self.n_cavity < 2:
            raise ValueError("cavity needs at least two Fock levels")
        thermal = ThermalSpec(self.nbar, self.thermal_cutoff)
        n_motion = self.n_motion if self.n_motion is not None else max(10, thermal.cutoff + 8)
        if n_motion <= thermal.cutoff:
            raise CutoffError(f"n_motion={n_motion} cannot hold thermal states up to n={thermal.cutoff}")
        object.__setattr__(self, "omega", float(omega))
        object.__setattr__(self, "omega_r", float(omega_r))
        object.__setattr__(self, "thermal_cutoff", thermal.cutoff)
        object.__setattr__(self, "n_motion", int(n_motion))

    @property
    def thermal(self) -> ThermalSpec:
        return ThermalSpec(self.nbar, self.thermal_cutoff)

    def exchange_params(self) -> ExchangeParams:
        return ExchangeParams(self.eta, self.omega, self.g, self.nbar, self.delta)

    def enlarged(self, step: int = CUTOFF_STEP) -> "RamanConfig":
        return replace(self, n_cavity=self.n_cavity + step, n_motion=self.n_motion + step)


@dataclass(frozen=True)
class PulseSchedule:
    """Square pulses ``(atom, duration, amplitude)`` applied back to back."""

    segments: tuple[tuple[int, float, float], ...]

    def __post_init__(self):
        segs = tuple((int(a), float(d), float(amp)) for a, d, amp in self.segments)
        for atom, duration, amp in segs:
            if atom not in (1, 2):
                raise ValueError(f"atom index must be 1 or 2, got {atom}")
            if duration <= 0:
                raise ValueError("pulse durations must be positive")
            if not 0 <= amp <= 1:
                raise ValueError("pulse amplitudes must lie in [0, 1]")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def phase_gate(cls, g: float = 1.0, delta: float = 0.0) -> "PulseSchedule":
        t = np.pi * (1 + delta) / g
        return cls(((1, t, 1.0), (2, 2 * t, 1.0), (1, t, 1.0)))

    @property
    def duration(self) -> float:
        return sum(d for _, d, _ in self.segments)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(np.cumsum([d for _, d, _ in self.segments])[:-1])

    def envelope(self, atom: int) -> Callable[[float], float]:
        """f_atom(t), taking the left-continuous value at segment boundaries."""
        ends = np.cumsum([d for _, d, _ in self.segments])

        def f(t: float) -> float:
            k = int(np.searchsorted(ends, t, side="left"))
            if k >= len(self.segments) or t < 0:
                return 0.0
            a, _, amp = self.segments[k]
            return amp if a == atom else 0.0

        return f


# --- operators ----------------------------------------------------------------


def _transition(atom: int) -> np.ndarray:
    """Internal part of the cavity coupling for ``atom`` (|1><r| or |r><1|)."""
    m = np.zeros((3, 3), dtype=complex)
    if atom == 1:
        m[ONE, R] = 1
    else:
        m[R, ONE] = 1
    return m


def gate_space(cfg: RamanConfig) -> TensorSpace:
    return TensorSpace((3, 3, cfg.n_cavity, cfg.n_motion, cfg.n_motion))


def raman_hamiltonian(
    cfg: RamanConfig,
    f1: Callable[[float], float] | float,
    f2: Callable[[float], float] | float,
    breakpoints: Sequence[float] = (),
) -> TimeDependentHamiltonian:
    """Two-atom Hamiltonian on ``(3, 3, n_cavity, n_motion, n_motion)``.

    ``H(t) = sum_i g f_i(t)/2 cos(eta(A_i + A_i^dag)) (s_i + s_i^dag) + omega sum_i A_i^dag A_i``
    with envelopes ``f_i`` taking values in [0, 1].
    """
    space = gate_space(cfg)
    a = fock_lowering(cfg.n_cavity).dense()
    cosine = cosine_displacement(cfg.eta, cfg.n_motion, cfg.guard).dense()
    num = np.diag(np.arange(cfg.n_motion)).astype(complex)
    couplings = []
    for atom, m_index in ((1, 3), (2, 4)):
        s = embed_sparse({atom - 1: _transition(atom), 2: a, m_index: cosine}, space)
        couplings.append(s + s.conj().T)
    trap = cfg.omega * (embed_sparse({3: num}, space) + embed_sparse({4: num}, space))
    env = [f if callable(f) else (lambda t, c=float(f): c) for f in (f1, f2)]

    def builder(t: float):
        amps = [e(t) for e in env]
        for x in amps:
            if not 0 <= x <= 1:
                raise ValueError(f"pulse envelope {x} outside [0, 1] at t={t}")
        return 0.5 * cfg.g * (amps[0] * couplings[0] + amps[1] * couplings[1]) + trap

    return TimeDependentHamiltonian(space, builder, tuple(breakpoints))


def schedule_hamiltonian(cfg: RamanConfig, schedule: PulseSchedule | None = None) -> TimeDependentHamiltonian:
    schedule = schedule or PulseSchedule.phase_gate(cfg.g, cfg.delta)
    return raman_hamiltonian(cfg, schedule.envelope(1), schedule.envelope(2), schedule.breakpoints)


def _segment_propagator(cfg: RamanConfig, atom: int, n_cavity: int, amplitude: float, duration: float) -> np.ndarray:
    """exp(-i H T) on (internal, cavity, motion) of the driven atom."""
    nm = cfg.n_motion
    s = np.kron(np.kron(_transition(atom), fock_lowering(n_cavity).dense()),
                cosine_displacement(cfg.eta, nm, cfg.guard).dense())
    h = 0.5 * cfg.g * amplitude * (s + s.conj().T)
    h += cfg.omega * np.kron(np.eye(3 * n_cavity), np.diag(np.arange(nm)))
    # the whole matrix is needed, so diagonalise densely at any size
    evals, evecs = np.linalg.eigh(h)
    return (evecs * np.exp(-1j * duration * evals)) @ evecs.conj().T


def _schedule_propagators(cfg: RamanConfig, schedule: PulseSchedule) -> list:
    nc, nm = cfg.n_cavity, cfg.n_motion
    return [
        (atom, _segment_propagator(cfg, atom, nc, amp, duration).reshape(3, nc, nm, 3, nc, nm),
         np.exp(-1j * cfg.omega * np.arange(nm) * duration))
        for atom, duration, amp in schedule.segments
    ]


def _apply_schedule(cfg: RamanConfig, schedule: PulseSchedule, psi: np.ndarray, propagators=None) -> np.ndarray:
    """Propagate a batch ``psi[b, a1, a2, c, m1, m2]`` through the schedule."""
    for atom, u, free in propagators or _schedule_propagators(cfg, schedule):
        if atom == 1:
            psi = np.einsum("xcmyde,byzdew->bxzcmw", u, psi, optimize=True)
            psi = psi * free[None, None, None, None, None, :]
        else:
            psi = np.einsum("xcmyde,bzydwe->bzxcwm", u, psi, optimize=True)
            psi = psi * free[None, None, None, None, :, None]
    return psi


# --- results ------------------------------------------------------------------


@dataclass(frozen=True)
class ExchangeResult:
    fidelity: float
    delta_n: float
    cutoff_shift: float = 0.0
    converged: bool = True


@dataclass(frozen=True)
class GateResult:
    """Outcome of one gate simulation.

    ``truth_table`` holds ``<i|V|i>`` for the four computational inputs with
    both motional modes starting in the ground state (cavity vacuum in and
    out). ``leakage`` is the population left outside the computational
    subspace, averaged over the four inputs.
    """

    fidelity: float
    n1: float
    n2: float
    truth_table: tuple[complex, ...]
    leakage: float
    norm_drift: float
    cutoff_shift: float = 0.0
    converged: bool = True
    dims: tuple[int, ...] = field(default=())

    def as_dict(self) -> dict:
        d = asdict(self)
        d["truth_table"] = [[z.real, z.imag] for z in self.truth_table]
        return d


def _thermal_pairs(cfg: RamanConfig):
    w = thermal_weights(cfg.thermal).weights
    return [((n1, n2), w[n1] * w[n2]) for n1, n2 in product(range(len(w)), repeat=2) if w[n1] * w[n2] > 0]


PAIR_BATCH = 8  # thermal pairs propagated together; bounds memory at large nbar


def _gate_batch(cfg: RamanConfig, propagators, pairs) -> dict:
    """Propagate the four computational inputs for each motional pair in ``pairs``."""
    nc, nm = cfg.n_cavity, cfg.n_motion
    inputs = [(i, j) for i in (ZERO, ONE) for j in (ZERO, ONE)]
    psi = np.zeros((4 * len(pairs), 3, 3, nc, nm, nm), dtype=complex)
    for p, ((n1, n2), _) in enumerate(pairs):
        for k, (i, j) in enumerate(inputs):
            psi[4 * p + k, i, j, 0, n1, n2] = 1.0
    out = _apply_schedule(cfg, None, psi, propagators)
    weights = np.array([w for _, w in pairs])
    probs = np.abs(out) ** 2
    levels = np.arange(nm)
    per_input_w = np.repeat(weights, 4) / 4
    comp = out[:, :2, :2].reshape(len(pairs), 4, 4, nc * nm * nm)
    states = [purification(comp[p], (nc, nm, nm)) for p in range(len(pairs))]
    norms = np.sqrt(np.sum(probs.reshape(len(out), -1), axis=1))
    leak = 1 - np.sum(np.abs(comp) ** 2, axis=(2, 3))
    ground = [p for p, ((n1, n2), _) in enumerate(pairs) if n1 == 0 and n2 == 0]
    return {
        "weight": weights.sum(),
        "fidelity": weights.sum() * gate_entanglement_fidelity(states, IDEAL_GATE, weights / weights.sum()),
        "n1": float(per_input_w @ (np.sum(probs, axis=(1, 2, 3, 5)) @ levels)),
        "n2": float(per_input_w @ (np.sum(probs, axis=(1, 2, 3, 4)) @ levels)),
        "leakage": float(np.sum(leak * weights[:, None]) / 4),
        "norm_drift": float(np.max(np.abs(norms - 1))),
        "table": tuple(complex(comp[ground[0], k, k, 0]) for k in range(4)) if ground else None,
    }


def _gate_once(cfg: RamanConfig, schedule: PulseSchedule) -> GateResult:
    pairs = _thermal_pairs(cfg)
    total = sum(w for _, w in pairs)
    pairs = [(nn, w / total) for nn, w in pairs]
    props = _schedule_propagators(cfg, schedule)
    parts = [_gate_batch(cfg, props, pairs[k : k + PAIR_BATCH]) for k in range(0, len(pairs), PAIR_BATCH)]
    return GateResult(
        fidelity=sum(b["fidelity"] for b in parts),
        n1=sum(b["n1"] for b in parts),
        n2=sum(b["n2"] for b in parts),
        truth_table=next(b["table"] for b in parts if b["table"] is not None),
        leakage=sum(b["leakage"] for b in parts),
        norm_drift=max(b["norm_drift"] for b in parts),
        dims=(3, 3, cfg.n_cavity, cfg.n_motion, cfg.n_motion),
    )


def simulate_gate(
    cfg: RamanConfig,
    schedule: PulseSchedule | None = None,
    check_cutoffs: bool = True,
    strict: bool = True,
) -> GateResult:
    """Run the three-pulse phase gate and score it against diag(1, 1, -1, 1).

    With ``check_cutoffs`` the run is repeated with cavity and motional
    cutoffs raised by four; a shift above 1e-4 in the fidelity or in either
    motional excitation raises :class:`ConvergenceError` when ``strict``.
    """
    schedule = schedule or PulseSchedule.phase_gate(cfg.g, cfg.delta)
    res = _gate_once(cfg, schedule)
    if not check_cutoffs:
        return res
    big = _gate_once(cfg.enlarged(), schedule)
    shift = max(abs(res.fidelity - big.fidelity), abs(res.n1 - big.n1), abs(res.n2 - big.n2))
    res = replace(res, cutoff_shift=shift, converged=shift <= CUTOFF_TOL)
    if not res.converged:
        msg = f"gate result moved by {shift:.2e} when cutoffs were raised (eta={cfg.eta})"
        if strict:
            raise ConvergenceError(msg)
        log.warning(msg)
    return res


def exchange_space(cfg: RamanConfig) -> TensorSpace:
    return TensorSpace((3, cfg.n_cavity, cfg.n_motion))


def _exchange_once(cfg: RamanConfig, fock: Sequence[int], weights: np.ndarray) -> ExchangeResult:
    nc, nm = cfg.n_cavity, cfg.n_motion
    t = np.pi * (1 + cfg.delta) / cfg.g
    u = _segment_propagator(cfg, 1, nc, 1.0, t)
    space = exchange_space(cfg)
    cols = np.zeros((space.dim, len(fock)), dtype=complex)
    for k, n in enumerate(fock):
        cols[space.index_of((ONE, 0, n)), k] = 1.0
    out = (u @ cols).T.reshape(len(fock), 3, nc, nm)
    pops = np.sum(np.abs(out[:, R, 1, :]) ** 2, axis=1)
    nfinal = np.sum(np.abs(out) ** 2, axis=(1, 2)) @ np.arange(nm)
    return ExchangeResult(
        fidelity=float(weights @ pops),
        delta_n=float(weights @ (nfinal - np.asarray(fock))),
    )


def simulate_exchange(cfg: RamanConfig, n_init: int | ThermalSpec | None = None, check_cutoffs: bool = True) -> ExchangeResult:
    """Single-atom exchange ``|1>|0_c> -> |r>|1_c>`` with a pulse of length ``pi(1 + delta)/g``.

    ``fidelity`` is the population of ``|r>|1_c>`` with the motion traced
    out; ``delta_n`` the gain in motional excitation. ``n_init`` selects a
    Fock state or thermal ensemble (default: the configured ``nbar``).
    """
    if isinstance(n_init, (int, np.integer)):
        if not 0 <= n_init < cfg.n_motion:
            raise CutoffError(f"initial Fock state {n_init} outside the motional cutoff {cfg.n_motion}")
        fock, weights = [int(n_init)], np.array([1.0])
    else:
        spec = n_init if isinstance(n_init, ThermalSpec) else cfg.thermal
        if spec.cutoff >= cfg.n_motion:
            raise CutoffError(f"n_motion={cfg.n_motion} cannot hold thermal states up to n={spec.cutoff}")
        weights = thermal_weights(spec).weights
        fock = list(range(len(weights)))
    res = _exchange_once(cfg, fock, weights)
    if not check_cutoffs:
        return res
    big = _exchange_once(cfg.enlarged(), fock, weights)
    shift = max(abs(res.fidelity - big.fidelity), abs(res.delta_n - big.delta_n))
    return replace(res, cutoff_shift=shift, converged=shift <= CUTOFF_TOL)


SWEEP_COLUMNS = (
    "eta", "omega", "nbar", "F_eg_num", "F_eg_ana", "n1_num", "n1_ana", "n2_num", "n2_ana",
    "cutoff_shift", "converged",
)


def sweep_point(template: RamanConfig, eta: float) -> dict:
    """One row of an eta sweep at fixed recoil frequency."""
    if not 0 < eta <= 0.6:
        raise ValueError(f"eta={eta} outside (0, 0.6]")
    cfg = replace(template, eta=float(eta), omega=None)
    res = simulate_gate(cfg, strict=False)
    p = cfg.exchange_params()
    dn1, dn2 = gate_heating_analytic(p)
    return {
        "eta": cfg.eta,
        "omega": cfg.omega,
        "nbar": cfg.nbar,
        "F_eg_num": res.fidelity,
        "F_eg_ana": gate_fidelity_analytic(p),
        "n1_num": res.n1,
        "n1_ana": cfg.nbar + dn1,
        "n2_num": res.n2,
        "n2_ana": cfg.nbar + dn2,
        "cutoff_shift": res.cutoff_shift,
        "converged": res.converged,
    }


def safe_sweep_point(template: RamanConfig, eta: float) -> dict:
    """:func:`sweep_point`, with a failure recorded in the row instead of raised."""
    try:
        return sweep_point(template, eta)
    except Exception as exc:  # recorded, sweep continues
        log.error("raman sweep point eta=%s failed: %s", eta, exc)
        return {"eta": float(eta), "error": f"{type(exc).__name__}: {exc}", "converged": False}


def sweep_eta(template: RamanConfig, etas: Sequence[float], map_fn=map) -> list[dict]:
    """Gate fidelity and heating against eta; rows follow the input order."""
    return list(map_fn(partial(safe_sweep_point, template), etas))
