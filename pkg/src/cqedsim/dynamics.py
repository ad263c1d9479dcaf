"""Time propagation of pure states and density matrices.

Both integrators use exact exponentials of a frozen generator on each
step, so every accepted step is unitary (Schrodinger) or trace preserving
(Lindblad) up to round-off. Step sizes are chosen by step doubling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .errors import PropagationError, SpaceMismatchError
from .hilbert import DensityMatrix, Operator, StateVector, TensorSpace

MIN_STEP = 1e-12
DENSE_LIMIT = 600

_SQRT3 = np.sqrt(3.0)
_GAUSS = (0.5 - _SQRT3 / 6, 0.5 + _SQRT3 / 6)
_CF4 = ((3 - 2 * _SQRT3) / 12, (3 + 2 * _SQRT3) / 12)
_ORDER = {"midpoint": 2, "magnus4": 4}


@dataclass(frozen=True)
class TimeDependentHamiltonian:
    """H(t) on a fixed space.

    ``builder(t)`` returns an :class:`Operator` or a (dense or sparse)
    matrix. ``breakpoints`` lists times where H(t) is not smooth; the
    integrator never steps across one.
    """

    space: TensorSpace
    builder: Callable[[float], object]
    breakpoints: tuple[float, ...] = ()

    def __call__(self, t: float):
        m = self.builder(t)
        if isinstance(m, Operator):
            m = m.matrix
        return m

    def operator(self, t: float) -> Operator:
        return Operator(self.space, self(t))

    def hermiticity_error(self, t: float) -> float:
        m = self(t)
        if sp.issparse(m):
            d = abs(m - m.conj().T)
            scale = abs(m).max()
            return float(d.max() / scale) if scale else 0.0
        return Operator(self.space, m).hermiticity_error()


@dataclass(frozen=True)
class LindbladModel:
    """Fixed Hamiltonian plus jump operators; each ``(c, rate)`` adds ``2 rate D[c]``."""

    hamiltonian: Operator
    jump_ops: tuple[tuple[Operator, float], ...] = ()

    def __post_init__(self):
        jumps = tuple((op, float(rate)) for op, rate in self.jump_ops)
        for op, rate in jumps:
            if rate < 0:
                raise ValueError(f"jump rate must be non-negative, got {rate}")
            if op.space != self.hamiltonian.space:
                raise SpaceMismatchError("jump operator and Hamiltonian spaces differ")
        object.__setattr__(self, "jump_ops", jumps)

    @property
    def space(self) -> TensorSpace:
        return self.hamiltonian.space


class _KrylovFailure(Exception):
    pass


def _lanczos_expm(h, v: np.ndarray, dt: float, tol: float = 1e-13, m_max: int = 60) -> np.ndarray:
    """exp(-i h dt) v by Lanczos with full re-orthogonalisation."""
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy()
    n = v.shape[0]
    m_max = min(m_max, n)
    basis = np.empty((m_max, n), dtype=complex)
    basis[0] = v / beta0
    alpha: list[float] = []
    beta: list[float] = []
    for j in range(m_max):
        w = h @ basis[j]
        a = float(np.real(np.vdot(basis[j], w)))
        alpha.append(a)
        w = w - a * basis[j]
        if j > 0:
            w -= beta[j - 1] * basis[j - 1]
        w -= basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        b = float(np.linalg.norm(w))
        if j == 0:
            evals, evecs = np.array([a]), np.ones((1, 1))
        else:
            evals, evecs = sla.eigh_tridiagonal(np.array(alpha), np.array(beta))
        coeff = evecs @ (np.exp(-1j * dt * evals) * evecs[0])
        if b * abs(coeff[-1]) < tol or b < 1e-14 * max(1.0, abs(a)) or j + 1 == n:
            return beta0 * (basis[: j + 1].T @ coeff)
        if j + 1 < m_max:
            beta.append(b)
            basis[j + 1] = w / b
    raise _KrylovFailure(f"Lanczos did not converge in {m_max} iterations")


def expm_apply(h, psi: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i h dt) psi for Hermitian ``h``; ``psi`` may hold several columns."""
    if sp.issparse(h) and h.shape[0] <= DENSE_LIMIT // 3:
        h = h.toarray()
    if not sp.issparse(h) and h.shape[0] <= DENSE_LIMIT:
        evals, evecs = np.linalg.eigh(h)
        phase = np.exp(-1j * dt * evals)
        if psi.ndim == 2:
            phase = phase[:, None]
        return evecs @ (phase * (evecs.conj().T @ psi))
    if psi.ndim == 1:
        return _lanczos_expm(h, psi, dt)
    return np.column_stack([_lanczos_expm(h, psi[:, k], dt) for k in range(psi.shape[1])])


def _step(h: TimeDependentHamiltonian, method: str, t: float, dt: float, psi: np.ndarray) -> np.ndarray:
    if method == "midpoint":
        return expm_apply(h(t + 0.5 * dt), psi, dt)
    h1 = h(t + _GAUSS[0] * dt)
    h2 = h(t + _GAUSS[1] * dt)
    a1, a2 = _CF4
    psi = expm_apply(a2 * h1 + a1 * h2, psi, dt)
    return expm_apply(a1 * h1 + a2 * h2, psi, dt)


def _error_norm(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    if d.ndim == 1:
        return float(np.linalg.norm(d))
    return float(np.max(np.linalg.norm(d, axis=0)))


def _segment_ends(t0: float, t1: float, breakpoints: Sequence[float]) -> list[float]:
    inner = sorted(b for b in breakpoints if t0 < b < t1)
    return inner + [t1]


def evolve_tdse(
    h: TimeDependentHamiltonian,
    psi0,
    t0: float,
    t1: float,
    tol: float = 1e-9,
    method: str = "midpoint",
    max_step: float | None = None,
    first_step: float | None = None,
    callback: Callable[[float, np.ndarray], None] | None = None,
    info: dict | None = None,
):
    """Solve ``i dpsi/dt = H(t) psi`` from ``t0`` to ``t1``.

    ``method="midpoint"`` uses exp(-i H(t+dt/2) dt) per step;
    ``method="magnus4"`` the fourth-order commutator-free Magnus pair of
    exponentials. Steps are accepted when the step-doubling estimate of the
    local error is at most ``tol * dt``; the two half steps are kept.

    ``psi0`` may be a :class:`StateVector` (returned type matches) or an
    array with one state per column. ``callback(t, psi)`` runs after every
    accepted step. Step statistics are written into ``info`` when given.
    """
    if method not in _ORDER:
        raise ValueError(f"unknown method {method!r}")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    as_state = isinstance(psi0, StateVector)
    if as_state and psi0.space != h.space:
        raise SpaceMismatchError("initial state and Hamiltonian spaces differ")
    psi = np.array(psi0.amplitudes if as_state else psi0, dtype=complex)
    if psi.shape[0] != h.space.dim:
        raise SpaceMismatchError(f"state dimension {psi.shape[0]} != {h.space.dim}")
    norm0 = np.linalg.norm(psi, axis=0)
    for ts in (t0, 0.5 * (t0 + t1), t1):
        err = h.hermiticity_error(ts)
        if err > 1e-12:
            raise ValueError(f"H({ts}) is not Hermitian (relative error {err:.1e})")

    order = _ORDER[method]
    cap = (t1 - t0) if max_step is None else max_step
    dt = min(first_step or cap, cap)
    steps = rejected = 0
    t = t0
    for t_end in _segment_ends(t0, t1, h.breakpoints):
        while t_end - t > 1e-14 * max(1.0, abs(t_end)):
            dt_try = min(dt, t_end - t, cap)
            try:
                full = _step(h, method, t, dt_try, psi)
                half = _step(h, method, t, 0.5 * dt_try, psi)
                half = _step(h, method, t + 0.5 * dt_try, 0.5 * dt_try, half)
                err = _error_norm(full, half)
            except _KrylovFailure:
                err = np.inf
            if err <= tol * dt_try or err < 1e-13:
                psi = half
                t = t_end if t_end - (t + dt_try) < 1e-14 * max(1.0, abs(t_end)) else t + dt_try
                steps += 1
                if callback is not None:
                    callback(t, psi)
                grow = 4.0 if err == 0 else min(4.0, max(1.0, 0.9 * (tol * dt_try / err) ** (1.0 / order)))
                # keep a step truncated by a breakpoint from shrinking the next one
                dt = max(dt, dt_try * grow) if dt_try < dt else dt_try * grow
            else:
                rejected += 1
                shrink = 0.2 if not np.isfinite(err) else max(0.2, min(0.9, 0.9 * (tol * dt_try / err) ** (1.0 / order)))
                dt = dt_try * shrink
                if dt < MIN_STEP:
                    raise PropagationError(f"step size underflow at t={t:.6g} (error estimate {err:.2e})")
    drift = float(np.max(np.abs(np.linalg.norm(psi, axis=0) - norm0)))
    if info is not None:
        info.update(steps=steps, rejected=rejected, norm_drift=drift)
    if drift > 1e-9:
        raise PropagationError(f"norm drift {drift:.2e} exceeds 1e-9")
    return StateVector(h.space, psi) if as_state else psi


def lindblad_generator(model: LindbladModel) -> sp.csr_matrix:
    """Superoperator acting on row-major ``vec(rho)``: vec(A rho B) = (A x B^T) vec(rho)."""
    n = model.space.dim
    eye = sp.identity(n, dtype=complex, format="csr")
    hm = sp.csr_matrix(model.hamiltonian.matrix)
    gen = -1j * (sp.kron(hm, eye) - sp.kron(eye, hm.T))
    for op, rate in model.jump_ops:
        if rate == 0:
            continue
        c = sp.csr_matrix(op.matrix)
        cdc = c.conj().T @ c
        gen = gen + 2 * rate * (sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, eye) - 0.5 * sp.kron(eye, cdc.T))
    return sp.csr_matrix(gen)


def evolve_lindblad(
    model: LindbladModel,
    rho0: DensityMatrix,
    t0: float,
    t1: float,
    tol: float = 1e-9,
    generator: sp.csr_matrix | None = None,
    info: dict | None = None,
) -> DensityMatrix:
    """Integrate ``drho/dt = -i[H, rho] + sum_k 2 rate_k D[c_k] rho``.

    The generator is time independent, so each step is the exact exponential;
    step doubling still guards against inaccurate exponentials. The state is
    re-symmetrised after every step and checked for negative eigenvalues.
    """
    if rho0.space != model.space:
        raise SpaceMismatchError("initial state and model spaces differ")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    n = model.space.dim
    gen = lindblad_generator(model) if generator is None else generator
    vec = rho0.matrix.reshape(-1).astype(complex)
    tr0 = np.trace(rho0.matrix).real
    t, dt = t0, t1 - t0
    steps = rejected = 0
    while t1 - t > 1e-14 * max(1.0, abs(t1)):
        dt = min(dt, t1 - t)
        full = expm_multiply(gen * dt, vec)
        half = expm_multiply(gen * (0.5 * dt), vec)
        half = expm_multiply(gen * (0.5 * dt), half)
        err = float(np.linalg.norm(full - half))
        if err <= tol * dt or err < 1e-13:
            m = half.reshape(n, n)
            m = 0.5 * (m + m.conj().T)
            lam = np.linalg.eigvalsh(m)[0]
            if lam < -1e-7:
                raise PropagationError(f"density matrix lost positivity (eigenvalue {lam:.2e}) at t={t + dt:.6g}")
            vec = m.reshape(-1)
            t += dt
            steps += 1
            dt *= 2.0
        else:
            rejected += 1
            dt *= 0.5
            if dt < MIN_STEP:
                raise PropagationError(f"step size underflow at t={t:.6g}")
    rho = vec.reshape(n, n)
    drift = abs(np.trace(rho).real - tr0)
    if info is not None:
        info.update(steps=steps, rejected=rejected, trace_drift=drift)
    if drift > 1e-8:
        raise PropagationError(f"trace drift {drift:.2e} exceeds 1e-8")
    return DensityMatrix(model.space, rho)
