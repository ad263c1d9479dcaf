"""Dark-state adiabatic transfer between two atoms through a shared cavity mode.

Each atom has levels ``|1>, |r>, |e>`` (indices 0, 1, 2). The cavity drives
``|r> <-> |e>`` with coupling ``g cos(eta (A + A^dag))`` and a laser drives
``|1> <-> |e>`` with envelope ``omega_max f_j(t)``; the laser coupling carries
no position dependence. Atom 2's pulse comes first, so the dark state starts
on ``|1, r, 0>`` and ends on ``|r, 1, 0>``.

The state ``|r, r, 0>`` is annihilated by every coupling and only picks up
trap phases. The remaining single-excitation manifold is five internal
states times the motion, and the simulation is restricted to the part of the
Hilbert space reachable from the initial states.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import partial
from itertools import product
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order
from scipy.special import erfc

from .dynamics import TimeDependentHamiltonian, evolve_tdse
from .errors import ConvergenceError, NonadiabaticError
from .hilbert import (
    StateVector,
    TensorSpace,
    ThermalSpec,
    cosine_displacement,
    embed_sparse,
    fock_lowering,
    thermal_weights,
)

log = logging.getLogger(__name__)

ONE, R, E = 0, 1, 2
TRANSFER_SIGN = 1.0  # |1,r,0> -> +|r,1,0>: both ends of the dark state carry positive weight
EDGE_LIMIT = 1e-3
CUTOFF_STEP = 4
CUTOFF_TOL = 1e-4
NODE_WEIGHT = 5e-5  # ground-state weight beyond the first field node that calls for a larger cutoff


def default_motion_cutoff(eta: float, thermal_cutoff: int) -> int:
    """Motional cutoff resolving the first node of cos(eta X) when the ground state reaches it.

    Near the node the cavity coupling vanishes and the dark-state gap closes,
    so the motion acquires fine structure in X there.
    """
    n = max(8, thermal_cutoff + 6)
    if eta > 0 and erfc(np.pi / (2 * eta) / np.sqrt(2)) > NODE_WEIGHT:
        n = max(n, int(np.ceil(6 / eta**2)))
    return n


@dataclass(frozen=True)
class AdiabaticConfig:
    """Pulse and trap parameters in units of ``g``.

    Atom 2's pulse peaks at ``t1 = 0`` and atom 1's at ``t1 + separation``.
    ``window`` defaults to 150/g beyond each peak, where the Gaussian has
    fallen below 1e-3.
    """

    eta: float
    omega_r: float = 1e-4
    omega: float | None = None
    g: float = 1.0
    omega_max: float = 2.0
    pulse_width: float = 40.0
    separation: float = 80.0
    window: tuple[float, float] | None = None
    nbar: float = 0.0
    n_cavity: int = 2
    n_motion: int | None = None
    guard: int = 16
    thermal_cutoff: int | None = None
    tol: float = 1e-9
    sample_step: float | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.g != 1.0:
            raise ValueError("rates are measured in units of g; g must be 1")
        omega = self.omega
        if omega is None:
            if self.eta == 0:
                raise ValueError("omega is required when eta == 0")
            omega = self.omega_r / self.eta**2
        elif self.eta > 0 and abs(self.eta**2 * omega - self.omega_r) > 1e-12 * max(1.0, self.omega_r):
            raise ValueError("eta^2 * omega does not match omega_r")
        if omega <= 0 or self.omega_max <= 0 or self.pulse_width <= 0 or self.separation < 0:
            raise ValueError("frequencies, pulse width and separation must be positive")
        if self.n_cavity < 2:
            raise ValueError("cavity needs at least two Fock levels")
        thermal = ThermalSpec(self.nbar, self.thermal_cutoff)
        n_motion = self.n_motion if self.n_motion is not None else default_motion_cutoff(self.eta, thermal.cutoff)
        if n_motion <= thermal.cutoff:
            raise ValueError(f"n_motion={n_motion} cannot hold thermal states up to n={thermal.cutoff}")
        window = self.window
        if window is None:
            window = (-150.0 * self.pulse_width / 40, self.separation + 150.0 * self.pulse_width / 40)
        window = (float(window[0]), float(window[1]))
        if not window[1] > window[0]:
            raise ValueError("window end must follow its start")
        object.__setattr__(self, "omega", float(omega))
        object.__setattr__(self, "thermal_cutoff", thermal.cutoff)
        object.__setattr__(self, "n_motion", int(n_motion))
        object.__setattr__(self, "window", window)
        edge = max(self.envelope(j, t) for j in (1, 2) for t in window)
        if edge >= EDGE_LIMIT:
            raise ValueError(f"pulses clipped by the window: envelope {edge:.2e} at an edge (limit {EDGE_LIMIT})")

    @property
    def centers(self) -> tuple[float, float]:
        """Peak times of atom 1's and atom 2's pulses."""
        return self.separation, 0.0

    def envelope(self, atom: int, t: float) -> float:
        c = self.centers[atom - 1]
        return float(np.exp(-0.5 * (self.g * (t - c) / self.pulse_width) ** 2))

    def rabi(self, t: float) -> tuple[float, float]:
        return self.omega_max * self.envelope(1, t), self.omega_max * self.envelope(2, t)

    @property
    def thermal(self) -> ThermalSpec:
        return ThermalSpec(self.nbar, self.thermal_cutoff)

    def enlarged(self, step: int = CUTOFF_STEP) -> "AdiabaticConfig":
        return replace(self, n_cavity=self.n_cavity + step, n_motion=self.n_motion + step)


def transfer_space(cfg: AdiabaticConfig) -> TensorSpace:
    return TensorSpace((3, 3, cfg.n_cavity, cfg.n_motion, cfg.n_motion))


def _pieces(cfg: AdiabaticConfig, eta: float | None = None):
    """Static parts of H: cavity coupling, the two laser couplings and the trap."""
    eta = cfg.eta if eta is None else eta
    space = transfer_space(cfg)
    a = fock_lowering(cfg.n_cavity).dense()
    cosine = cosine_displacement(eta, cfg.n_motion, cfg.guard).dense()
    num = np.diag(np.arange(cfg.n_motion)).astype(complex)
    er = np.zeros((3, 3), dtype=complex)
    er[E, R] = 1
    e1 = np.zeros((3, 3), dtype=complex)
    e1[E, ONE] = 1
    cavity = sum(
        (embed_sparse({j: er, 2: a, 3 + j: cosine}, space) for j in (0, 1)),
        start=sp.csr_matrix((space.dim, space.dim), dtype=complex),
    )
    cavity = 0.5 * cfg.g * (cavity + cavity.conj().T)
    lasers = []
    for j in (0, 1):
        x = embed_sparse({j: e1}, space)
        lasers.append(0.5 * (x + x.conj().T))
    trap = embed_sparse({3: num}, space) + embed_sparse({4: num}, space)
    return space, cavity.tocsr(), lasers, trap.tocsr()


def adiabatic_hamiltonian(cfg: AdiabaticConfig) -> TimeDependentHamiltonian:
    """``H(t) = sum_j g/2 C_j (|e><r|_j a + h.c.) + Omega_j(t)/2 (|e><1|_j + h.c.) + omega sum_j A_j^dag A_j``."""
    space, cavity, lasers, trap = _pieces(cfg)
    static = cavity + cfg.omega * trap

    def builder(t: float):
        o1, o2 = cfg.rabi(t)
        return static + o1 * lasers[0] + o2 * lasers[1]

    return TimeDependentHamiltonian(space, builder)


def reachable_indices(h: sp.spmatrix, starts: Sequence[int]) -> np.ndarray:
    """Basis indices connected to ``starts`` through nonzero couplings of ``h``."""
    graph = sp.csr_matrix(abs(h) > 0)
    seen: set[int] = set()
    for s in starts:
        if s not in seen:
            seen.update(breadth_first_order(graph, s, directed=False, return_predecessors=False).tolist())
    return np.array(sorted(seen))


# --- dark states --------------------------------------------------------------


def dark_state_analytic(
    omega1: float,
    omega2: float,
    g: float = 1.0,
    eta: float = 0.0,
    n1: int = 0,
    n2: int = 0,
    n_cavity: int = 2,
    n_motion: int | None = None,
    printed: bool = False,
) -> StateVector:
    """Dark state with motional corrections through ``eta^2``.

    ``Omega1 g (1 - eta^2 X2^2/2)|r,1,0> + Omega2 g (1 - eta^2 X1^2/2)|1,r,0> - Omega1 Omega2 |r,r,1>``
    applied to ``|n1, n2>``, with ``X = A + A^dag``. The cavity coupling of
    atom j enters the amplitude of the state where atom j is not excited, so
    this is the expansion of the exact (trap-free) dark state
    ``Omega1 g C2 |r,1,0> + Omega2 g C1 |1,r,0> - Omega1 Omega2 |r,r,1>``.

    ``printed=True`` instead puts ``1 + eta^2 X1^2 + eta^2 X2^2`` on the
    ``|r,r,1>`` term, which leaves a residual of order ``eta^2``.
    """
    if omega1 == 0 and omega2 == 0:
        raise ValueError("at least one Rabi frequency must be nonzero")
    nm = n_motion if n_motion is not None else max(n1, n2) + 8
    if max(n1, n2) + 2 >= nm:
        raise ValueError("motional cutoff too small for the eta^2 correction")
    space = TensorSpace((3, 3, n_cavity, nm, nm))
    a = fock_lowering(nm).dense()
    x2 = (a + a.conj().T) @ (a + a.conj().T)
    m1 = np.eye(nm)[n1]
    m2 = np.eye(nm)[n2]
    ident = np.eye(nm)
    e2 = eta**2
    if printed:
        c1 = c2 = ident
        corr = (np.kron(ident + e2 * x2, ident) + np.kron(ident, e2 * x2)) @ np.kron(m1, m2)
    else:
        c1 = ident - 0.5 * e2 * x2
        c2 = ident - 0.5 * e2 * x2
        corr = np.kron(m1, m2)
    psi = np.zeros(space.dims, dtype=complex)
    psi[R, ONE, 0] = omega1 * g * np.kron(m1, c2 @ m2).reshape(nm, nm)
    psi[ONE, R, 0] = omega2 * g * np.kron(c1 @ m1, m2).reshape(nm, nm)
    psi[R, R, 1] = -omega1 * omega2 * corr.reshape(nm, nm)
    state = StateVector(space, psi.ravel())
    if state.norm == 0:
        raise ValueError("dark state has zero norm")
    return state.normalized()


def dark_state_residual(
    cfg: AdiabaticConfig,
    t: float,
    eta: float | None = None,
    n1: int = 0,
    n2: int = 0,
    include_trap: bool = False,
    printed: bool = False,
    rabi: tuple[float, float] | None = None,
) -> float:
    """``||H(t)|D> - <D|H(t)|D>|D>||`` for the analytic dark state at the instantaneous Rabi frequencies.

    The trap term is left out by default: since ``omega eta^2 = omega_r`` it
    adds a floor that does not vanish with ``eta``. ``rabi`` overrides the
    pulse values at ``t``.
    """
    eta = cfg.eta if eta is None else eta
    o1, o2 = cfg.rabi(t) if rabi is None else rabi
    d = dark_state_analytic(o1, o2, cfg.g, eta, n1, n2, cfg.n_cavity, cfg.n_motion, printed).amplitudes
    _, cavity, lasers, trap = _pieces(cfg, eta)
    h = cavity + o1 * lasers[0] + o2 * lasers[1]
    if include_trap:
        h = h + cfg.omega * trap
    hd = h @ d
    return float(np.linalg.norm(hd - np.vdot(d, hd) * d))


# --- transfer -----------------------------------------------------------------


@dataclass(frozen=True)
class TransferResult:
    """Outcome of a transfer for the input ``(alpha|r> + beta|1>)_1 |r>_2 |0_c>``.

    Excited-state and cavity populations are maxima over the accepted time
    steps. ``components`` keeps the final motional amplitudes of the two
    basis inputs so that fidelities for other inputs can be evaluated
    with :func:`fidelity_for`.
    """

    fidelity: float
    max_excited_pop: float
    max_cavity_pop: float
    delta_n1: float
    delta_n2: float
    alpha: complex
    beta: complex
    transfer_sign: float
    norm_drift: float
    steps: int
    cutoff_shift: float = 0.0
    heating_shift: float = 0.0
    converged: bool = True
    components: tuple = ()

    def summary(self) -> dict:
        return {
            k: getattr(self, k)
            for k in ("fidelity", "max_excited_pop", "max_cavity_pop", "delta_n1", "delta_n2",
                      "transfer_sign", "norm_drift", "steps", "cutoff_shift", "heating_shift", "converged")
        }


def fidelity_for(result: TransferResult, alpha: complex, beta: complex) -> float:
    """Transfer fidelity for another input, reusing the evolved basis inputs."""
    total = 0.0
    for w, stay, moved in result.components:
        amp = abs(alpha) ** 2 * stay + abs(beta) ** 2 * result.transfer_sign * moved
        total += w * float(np.sum(np.abs(amp) ** 2))
    return total


def cardinal_states() -> list[tuple[complex, complex]]:
    s = 1 / np.sqrt(2)
    return [(1, 0), (0, 1), (s, s), (s, -s), (s, 1j * s), (s, -1j * s)]


def _transfer_once(cfg: AdiabaticConfig, alpha: complex, beta: complex, method: str) -> TransferResult:
    space, cavity, lasers, trap = _pieces(cfg)
    static = cavity + cfg.omega * trap
    w = thermal_weights(cfg.thermal).weights
    pairs = [((n1, n2), w[n1] * w[n2]) for n1, n2 in product(range(len(w)), repeat=2) if w[n1] * w[n2] > 0]
    moved_starts = [space.index_of((ONE, R, 0, n1, n2)) for (n1, n2), _ in pairs]
    idx = reachable_indices(static + lasers[0] + lasers[1], moved_starts)
    sub = {k: i for i, k in enumerate(idx)}
    pick = lambda m: m[idx][:, idx].tocsr()
    s_static, s_l1, s_l2 = pick(static), pick(lasers[0]), pick(lasers[1])
    labels = np.array(np.unravel_index(idx, space.dims)).T
    excited = (labels[:, 0] == E) | (labels[:, 1] == E)
    photons = labels[:, 2].astype(float)
    m1, m2 = labels[:, 3].astype(float), labels[:, 4].astype(float)

    def builder(t):
        o1, o2 = cfg.rabi(t)
        return s_static + o1 * s_l1 + o2 * s_l2

    h = TimeDependentHamiltonian(TensorSpace((len(idx),)), builder)
    psi0 = np.zeros((len(idx), len(pairs)), dtype=complex)
    for k, start in enumerate(moved_starts):
        psi0[sub[start], k] = 1.0
    weights = np.array([wt for _, wt in pairs])
    weights = weights / weights.sum()
    peak = {"excited": 0.0, "cavity": 0.0}

    def watch(t, psi):
        pops = np.abs(psi) ** 2 @ weights
        peak["excited"] = max(peak["excited"], float(pops[excited].sum()))
        peak["cavity"] = max(peak["cavity"], float(pops @ photons))

    t0, t1 = cfg.window
    info: dict = {}
    out = evolve_tdse(h, psi0, t0, t1, tol=cfg.tol, method=method, max_step=cfg.sample_step, callback=watch, info=info)

    nm = cfg.n_motion
    duration = t1 - t0
    components = []
    target = (labels[:, 0] == R) & (labels[:, 1] == ONE) & (labels[:, 2] == 0)
    for k, ((n1, n2), _) in enumerate(pairs):
        moved = np.zeros((nm, nm), dtype=complex)
        moved[labels[target, 3], labels[target, 4]] = out[target, k]
        # |r,r,0,n1,n2> only accumulates its trap phase
        stay = np.zeros((nm, nm), dtype=complex)
        stay[n1, n2] = np.exp(-1j * cfg.omega * (n1 + n2) * duration)
        components.append((weights[k], stay, moved))

    pops = np.abs(out) ** 2 @ weights
    n_start = np.array([[n1, n2] for (n1, n2), _ in pairs], dtype=float).T @ weights
    b2 = abs(beta) ** 2
    res = TransferResult(
        fidelity=0.0,
        max_excited_pop=b2 * peak["excited"],
        max_cavity_pop=b2 * peak["cavity"],
        delta_n1=b2 * float(pops @ m1 - n_start[0]),
        delta_n2=b2 * float(pops @ m2 - n_start[1]),
        alpha=complex(alpha),
        beta=complex(beta),
        transfer_sign=TRANSFER_SIGN,
        norm_drift=info["norm_drift"],
        steps=info["steps"],
        components=tuple(components),
    )
    return replace(res, fidelity=fidelity_for(res, alpha, beta))


def simulate_transfer(
    cfg: AdiabaticConfig,
    alpha: complex = 1 / np.sqrt(2),
    beta: complex = 1 / np.sqrt(2),
    method: str = "magnus4",
    check_cutoffs: bool = True,
    strict: bool = True,
) -> TransferResult:
    """Transfer ``(alpha|r> + beta|1>)_1 |r>_2 |0_c>`` to ``|r>_1 (alpha|r> + beta|1>)_2 |0_c>``.

    The fidelity is the overlap of the motion-traced final state with the
    target. A fidelity below 0.5 raises :class:`NonadiabaticError` when
    ``strict``; so does a shift above 1e-4 when the cutoffs are raised by four
    (as :class:`ConvergenceError`). That check covers the fidelity and the peak
    excited population. The heating numbers
    converge much more slowly once the motion reaches the field nodes; their
    shift is reported as ``heating_shift`` without entering ``converged``.
    """
    if abs(abs(alpha) ** 2 + abs(beta) ** 2 - 1) > 1e-12:
        raise ValueError("|alpha|^2 + |beta|^2 must be 1")
    res = _transfer_once(cfg, alpha, beta, method)
    if check_cutoffs:
        big = _transfer_once(cfg.enlarged(), alpha, beta, method)
        shift = max(abs(res.fidelity - big.fidelity), abs(res.max_excited_pop - big.max_excited_pop))
        heating = max(abs(res.delta_n1 - big.delta_n1), abs(res.delta_n2 - big.delta_n2))
        res = replace(res, cutoff_shift=shift, heating_shift=heating, converged=shift <= CUTOFF_TOL)
        if not res.converged:
            msg = f"transfer moved by {shift:.2e} when cutoffs were raised (eta={cfg.eta})"
            if strict:
                raise ConvergenceError(msg)
            log.warning(msg)
    if res.fidelity < 0.5:
        msg = f"transfer fidelity {res.fidelity:.3f}: passage is not adiabatic for these pulses"
        if strict:
            raise NonadiabaticError(msg)
        log.warning(msg)
    return res


SWEEP_COLUMNS = ("eta", "fidelity", "max_excited_pop", "max_cavity_pop", "delta_n1", "delta_n2",
                 "min_cardinal_fidelity", "cutoff_shift", "heating_shift", "converged")


def sweep_point(template: AdiabaticConfig, eta: float, alpha=1 / np.sqrt(2), beta=1 / np.sqrt(2)) -> dict:
    cfg = replace(template, eta=float(eta), omega=None)
    res = simulate_transfer(cfg, alpha, beta, strict=False)
    row = {"eta": cfg.eta, **{k: v for k, v in res.summary().items() if k in SWEEP_COLUMNS}}
    row["min_cardinal_fidelity"] = min(fidelity_for(res, a, b) for a, b in cardinal_states())
    return {k: row[k] for k in SWEEP_COLUMNS}


def safe_sweep_point(template: AdiabaticConfig, eta: float) -> dict:
    """:func:`sweep_point`, with a failure recorded in the row instead of raised."""
    try:
        return sweep_point(template, eta)
    except Exception as exc:  # recorded, sweep continues
        log.error("adiabatic sweep point eta=%s failed: %s", eta, exc)
        return {"eta": float(eta), "error": f"{type(exc).__name__}: {exc}", "converged": False}


def sweep_eta_transfer(template: AdiabaticConfig, etas: Sequence[float], map_fn=map) -> list[dict]:
    """Transfer fidelity and diagnostics against eta; rows follow the input order."""
    return list(map_fn(partial(safe_sweep_point, template), etas))
