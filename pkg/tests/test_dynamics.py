import numpy as np
import pytest
from scipy.special import factorial

from cqedsim.dynamics import (
    LindbladModel,
    TimeDependentHamiltonian,
    evolve_lindblad,
    evolve_tdse,
    expm_apply,
)
from cqedsim.errors import PropagationError
from cqedsim.hilbert import (
    DensityMatrix,
    Operator,
    StateVector,
    TensorSpace,
    basis_state,
    fock_lowering,
    identity,
    kron,
    projector,
)

ATOM_1, ATOM_R = 1, 2  # labels |0>, |1>, |r>


def exchange_hamiltonian(g=1.0, ncav=3):
    """(g/2)(s + s^dag) with s = |1><r| a on (atom, cavity)."""
    s = kron(projector(3, ATOM_1, ATOM_R), fock_lowering(ncav))
    h = 0.5 * g * (s + s.dag())
    return TimeDependentHamiltonian(h.space, lambda t: h)


def coherent(alpha, dim):
    n = np.arange(dim)
    return np.exp(-abs(alpha) ** 2 / 2) * alpha**n / np.sqrt(factorial(n))


def test_zero_hamiltonian_leaves_state():
    space = TensorSpace((4,))
    h = TimeDependentHamiltonian(space, lambda t: np.zeros((4, 4)))
    psi = StateVector(space, [0.5, 0.5j, -0.5, 0.5])
    out = evolve_tdse(h, psi, 0.0, 3.0)
    np.testing.assert_allclose(out.amplitudes, psi.amplitudes, atol=1e-15)


@pytest.mark.parametrize("method", ["midpoint", "magnus4"])
def test_rabi_pi_pulse(method):
    h = exchange_hamiltonian()
    psi0 = basis_state(h.space, (ATOM_1, 0))
    out = evolve_tdse(h, psi0, 0.0, np.pi, method=method)
    target = basis_state(h.space, (ATOM_R, 1))
    expected = -1j * target.amplitudes
    np.testing.assert_allclose(out.amplitudes, expected, atol=1e-8)


def test_oscillator_revival():
    dim, omega = 40, 0.7
    a = fock_lowering(dim)
    h0 = omega * (a.dag() @ a)
    h = TimeDependentHamiltonian(h0.space, lambda t: h0)
    psi0 = StateVector(h0.space, coherent(1.5 + 0.5j, dim)).normalized()
    out = evolve_tdse(h, psi0, 0.0, 2 * np.pi / omega)
    np.testing.assert_allclose(out.amplitudes, psi0.amplitudes, atol=1e-7)


def driven_two_level(offset=0.0):
    space = TensorSpace((2,))
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sz = np.diag([1.0, -1.0]).astype(complex)
    return TimeDependentHamiltonian(
        space, lambda t: 0.3 * sz + np.exp(-((t - 2) ** 2)) * sx + offset * np.eye(2)
    )


@pytest.mark.parametrize("method", ["midpoint", "magnus4"])
def test_global_phase_from_identity_shift(method):
    c = 0.37
    psi0 = basis_state((2,), (0,))
    a = evolve_tdse(driven_two_level(), psi0, 0.0, 4.0, tol=1e-10, method=method)
    b = evolve_tdse(driven_two_level(c), psi0, 0.0, 4.0, tol=1e-10, method=method)
    np.testing.assert_allclose(b.amplitudes, np.exp(-1j * c * 4.0) * a.amplitudes, atol=1e-9)


@pytest.mark.parametrize("method", ["midpoint", "magnus4"])
def test_halving_tol_stability(method):
    psi0 = basis_state((2,), (0,))
    ref = evolve_tdse(driven_two_level(), psi0, 0.0, 4.0, tol=1e-12, method="magnus4")
    for tol in (1e-6, 1e-7, 1e-8):
        a = evolve_tdse(driven_two_level(), psi0, 0.0, 4.0, tol=tol, method=method)
        b = evolve_tdse(driven_two_level(), psi0, 0.0, 4.0, tol=tol / 2, method=method)
        fa = abs(ref.overlap(a)) ** 2
        fb = abs(ref.overlap(b)) ** 2
        assert abs(fa - fb) <= tol


def test_breakpoints_are_honoured():
    seen = []
    space = TensorSpace((2,))
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    h = TimeDependentHamiltonian(space, lambda t: sx if t < 1.0 else -sx, breakpoints=(1.0,))
    out = evolve_tdse(h, basis_state(space, (0,)), 0.0, 2.0, callback=lambda t, psi: seen.append(t))
    assert 1.0 in seen
    # exact: rotation forward then back
    np.testing.assert_allclose(out.amplitudes, [1, 0], atol=1e-12)


def test_norm_and_batch_columns():
    h = exchange_hamiltonian(ncav=2)
    cols = np.eye(h.space.dim, dtype=complex)[:, :3]
    out = evolve_tdse(h, cols, 0.0, 2.0)
    np.testing.assert_allclose(np.linalg.norm(out, axis=0), 1, atol=1e-12)


def test_step_underflow_reported():
    space = TensorSpace((2,))
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    # discontinuous without a declared breakpoint: tiny tolerance cannot be met
    h = TimeDependentHamiltonian(space, lambda t: 1e6 * sx * np.sign(np.sin(1e6 * t)))
    with pytest.raises(PropagationError):
        evolve_tdse(h, basis_state(space, (0,)), 0.0, 1.0, tol=1e-15)


def test_non_hermitian_rejected():
    space = TensorSpace((2,))
    h = TimeDependentHamiltonian(space, lambda t: np.array([[0, 1], [0, 0]], dtype=complex))
    with pytest.raises(ValueError):
        evolve_tdse(h, basis_state(space, (0,)), 0.0, 1.0)


def test_lanczos_path_matches_dense():
    rng = np.random.default_rng(7)
    n = 800
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = (m + m.conj().T) / np.sqrt(n)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    v /= np.linalg.norm(v)
    evals, evecs = np.linalg.eigh(h)
    exact = evecs @ (np.exp(-0.3j * evals) * (evecs.conj().T @ v))
    out = expm_apply(h, v, 0.3)
    np.testing.assert_allclose(out, exact, atol=1e-11)
    assert np.linalg.norm(out) == pytest.approx(1, abs=1e-13)


# --- Lindblad -----------------------------------------------------------------


def test_lindblad_unitary_limit():
    hs = exchange_hamiltonian(ncav=3)
    h = hs(0.0)
    psi0 = basis_state(hs.space, (ATOM_1, 0))
    rho = evolve_lindblad(LindbladModel(Operator(hs.space, h)), psi0.to_density(), 0.0, 1.3)
    psi = evolve_tdse(hs, psi0, 0.0, 1.3)
    np.testing.assert_allclose(rho.matrix, psi.to_density().matrix, atol=1e-8)


def test_damped_oscillator():
    dim, gamma, t = 12, 0.15, 2.0
    a = fock_lowering(dim)
    model = LindbladModel(Operator(a.space, np.zeros((dim, dim))), ((a, gamma),))
    rho0 = basis_state(a.space, (3,)).to_density()
    rho = evolve_lindblad(model, rho0, 0.0, t)
    n = rho.expect(a.dag() @ a)
    assert n == pytest.approx(3 * np.exp(-2 * gamma * t), abs=1e-10)


def test_identity_jump_is_neutral():
    rng = np.random.default_rng(8)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    rho0 = StateVector(TensorSpace((4,)), v / np.linalg.norm(v)).to_density()
    model = LindbladModel(Operator(rho0.space, np.zeros((4, 4))), ((identity(4), 0.8),))
    rho = evolve_lindblad(model, rho0, 0.0, 5.0)
    np.testing.assert_allclose(rho.matrix, rho0.matrix, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_lindblad_positivity_random_models(seed):
    rng = np.random.default_rng(seed)
    n = 8
    space = TensorSpace((n,))
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = Operator(space, m + m.conj().T)
    jumps = []
    for _ in range(3):
        c = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        jumps.append((Operator(space, c / n), rng.uniform(0, 1)))
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    rho0 = StateVector(space, v / np.linalg.norm(v)).to_density()
    info = {}
    rho = evolve_lindblad(LindbladModel(h, tuple(jumps)), rho0, 0.0, 3.0, info=info)
    assert rho.min_eigenvalue() >= -1e-9
    assert info["trace_drift"] <= 1e-8
    assert np.max(np.abs(rho.matrix - rho.matrix.conj().T)) < 1e-14


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        LindbladModel(identity(2), ((identity(2), -1.0),))
