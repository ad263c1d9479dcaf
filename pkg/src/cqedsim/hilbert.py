"""Truncated Fock spaces, tensor products, states and fidelity functionals.

Subsystem ordering used throughout the package is
``(atom 1 internal, atom 2 internal, cavity, motion 1, motion 2)``; single
atom problems use the subset ``(atom internal, cavity, motion)``.

Matrices are plain :mod:`numpy` arrays; large Hamiltonians may instead be
:mod:`scipy.sparse` matrices, which every function here accepts where an
operator matrix is expected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import prod
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CutoffError, SpaceMismatchError, TruncationError

THERMAL_TAIL = 1e-6


@dataclass(frozen=True)
class TensorSpace:
    """Ordered list of subsystem dimensions of a truncated composite space."""

    dims: tuple[int, ...]

    def __init__(self, dims: Sequence[int]):
        dims = tuple(int(d) for d in dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"dimensions must be positive integers, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return prod(self.dims)

    def __len__(self) -> int:
        return len(self.dims)

    def check_index(self, index: int) -> int:
        if not 0 <= index < len(self.dims):
            raise IndexError(f"subsystem index {index} out of range for {self.dims}")
        return index

    def index_of(self, labels: Sequence[int]) -> int:
        """Flat index of the product basis state with the given labels."""
        return int(np.ravel_multi_index(tuple(labels), self.dims))


def _as_space(space) -> TensorSpace:
    return space if isinstance(space, TensorSpace) else TensorSpace(space)


def _require_same(a: TensorSpace, b: TensorSpace) -> None:
    if a != b:
        raise SpaceMismatchError(f"space mismatch: {a.dims} vs {b.dims}")


@dataclass(frozen=True)
class Operator:
    """Square matrix tagged with the space it acts on."""

    space: TensorSpace
    matrix: np.ndarray | sp.spmatrix = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "space", _as_space(self.space))
        m = self.matrix
        if not sp.issparse(m):
            m = np.asarray(m, dtype=complex)
        n = self.space.dim
        if m.shape != (n, n):
            raise SpaceMismatchError(f"matrix shape {m.shape} does not match space {self.space.dims}")
        object.__setattr__(self, "matrix", m)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    def hermiticity_error(self) -> float:
        """max |M - M^dag| relative to max |M| (0 for the zero matrix)."""
        m = self.dense()
        scale = np.max(np.abs(m)) if m.size else 0.0
        if scale == 0:
            return 0.0
        return float(np.max(np.abs(m - m.conj().T)) / scale)

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        return self.hermiticity_error() <= rtol

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _require_same(self.space, other.space)
            return Operator(self.space, self.matrix @ other.matrix)
        if isinstance(other, StateVector):
            _require_same(self.space, other.space)
            return StateVector(self.space, self.matrix @ other.amplitudes)
        return NotImplemented

    def __add__(self, other: "Operator") -> "Operator":
        _require_same(self.space, other.space)
        return Operator(self.space, self.matrix + other.matrix)

    def __sub__(self, other: "Operator") -> "Operator":
        _require_same(self.space, other.space)
        return Operator(self.space, self.matrix - other.matrix)

    def __mul__(self, c: complex) -> "Operator":
        return Operator(self.space, self.matrix * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class StateVector:
    space: TensorSpace
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "space", _as_space(self.space))
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amp.size != self.space.dim:
            raise SpaceMismatchError(f"{amp.size} amplitudes for space {self.space.dims}")
        object.__setattr__(self, "amplitudes", amp)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.space, self.amplitudes / n)

    def overlap(self, other: "StateVector") -> complex:
        """<self|other>."""
        _require_same(self.space, other.space)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def expect(self, op: Operator) -> float:
        _require_same(self.space, op.space)
        return float(np.real(np.vdot(self.amplitudes, op.matrix @ self.amplitudes)))

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(self.space, np.outer(self.amplitudes, self.amplitudes.conj()))

    def tensor(self) -> np.ndarray:
        """Amplitudes reshaped to one axis per subsystem."""
        return self.amplitudes.reshape(self.space.dims)


@dataclass(frozen=True)
class DensityMatrix:
    space: TensorSpace
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "space", _as_space(self.space))
        m = np.asarray(self.matrix, dtype=complex)
        n = self.space.dim
        if m.shape != (n, n):
            raise SpaceMismatchError(f"matrix shape {m.shape} does not match space {self.space.dims}")
        object.__setattr__(self, "matrix", m)

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def expect(self, op: Operator) -> float:
        _require_same(self.space, op.space)
        return float(np.real(np.sum(op.dense().T * self.matrix)))

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def validate(self, trace_tol: float = 1e-8, eig_tol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless Hermitian, unit trace and positive."""
        if np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) > 1e-10:
            raise ValueError("density matrix is not Hermitian")
        if abs(self.trace() - 1) > trace_tol:
            raise ValueError(f"trace {self.trace()} differs from 1")
        if self.min_eigenvalue() < -eig_tol:
            raise ValueError(f"negative eigenvalue {self.min_eigenvalue()}")


@dataclass(frozen=True)
class ThermalSpec:
    """Thermal motional occupation ``nbar``; ``cutoff`` is the largest Fock index kept.

    With ``cutoff=None`` the smallest cutoff meeting the retained-weight
    requirement is chosen.
    """

    nbar: float
    cutoff: int | None = None

    def __post_init__(self):
        if self.nbar < 0:
            raise ValueError("nbar must be non-negative")
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", thermal_cutoff(self.nbar))
        elif self.cutoff < 0:
            raise ValueError("cutoff must be non-negative")


class ThermalWeights(NamedTuple):
    weights: np.ndarray
    retained: float


def thermal_cutoff(nbar: float, tail: float = THERMAL_TAIL) -> int:
    """Smallest Fock cutoff whose discarded geometric tail is below ``tail``."""
    if nbar == 0:
        return 0
    q = nbar / (1 + nbar)
    # discarded weight beyond cutoff K is q**(K+1)
    k = int(np.ceil(np.log(tail) / np.log(q))) - 1
    return max(k, 0)


def thermal_weights(spec: ThermalSpec) -> ThermalWeights:
    """Geometric occupation probabilities ``nbar**n / (1+nbar)**(n+1)`` up to the cutoff."""
    n = np.arange(spec.cutoff + 1)
    if spec.nbar == 0:
        raw = (n == 0).astype(float)
    else:
        raw = spec.nbar**n / (1 + spec.nbar) ** (n + 1)
    retained = float(raw.sum())
    if retained < 1 - THERMAL_TAIL:
        raise CutoffError(
            f"thermal cutoff {spec.cutoff} keeps only {retained:.8f} of the weight for "
            f"nbar={spec.nbar}; use cutoff >= {thermal_cutoff(spec.nbar)}"
        )
    return ThermalWeights(raw / retained, retained)


def identity(dim: int) -> Operator:
    return Operator(TensorSpace((dim,)), np.eye(dim, dtype=complex))


def fock_lowering(dim: int) -> Operator:
    """Truncated annihilation operator with <n-1|a|n> = sqrt(n)."""
    if dim < 2:
        raise ValueError("Fock space dimension must be at least 2")
    return Operator(TensorSpace((dim,)), np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex))


def projector(dim: int, i: int, j: int | None = None) -> Operator:
    """|i><j| on a single subsystem."""
    m = np.zeros((dim, dim), dtype=complex)
    m[i, i if j is None else j] = 1.0
    return Operator(TensorSpace((dim,)), m)


def kron(*ops) -> Operator:
    """Tensor product of operators, dims concatenated in argument order."""
    dims: list[int] = []
    mat = np.ones((1, 1), dtype=complex)
    for op in ops:
        dims.extend(op.space.dims)
        mat = np.kron(mat, op.dense())
    return Operator(TensorSpace(dims), mat)


def tensor_embed(op: Operator, index: int, space: TensorSpace) -> Operator:
    """Lift a single-subsystem operator to ``space`` (identity elsewhere)."""
    space = _as_space(space)
    space.check_index(index)
    d = space.dims[index]
    if op.space.dim != d:
        raise SpaceMismatchError(f"operator of dimension {op.space.dim} cannot act on factor {index} of size {d}")
    left = prod(space.dims[:index])
    right = prod(space.dims[index + 1:])
    mat = sp.kron(sp.kron(sp.identity(left, format="csr"), sp.csr_matrix(op.dense())), sp.identity(right, format="csr"))
    return Operator(space, mat.toarray())


def embed_sparse(factors: dict[int, np.ndarray], space: TensorSpace) -> sp.csr_matrix:
    """Sparse Kronecker product of per-factor matrices (identity where absent)."""
    out = sp.identity(1, dtype=complex, format="csr")
    for k, d in enumerate(space.dims):
        m = factors.get(k)
        out = sp.kron(out, sp.identity(d, dtype=complex, format="csr") if m is None else sp.csr_matrix(m), format="csr")
    return out


def basis_state(space: TensorSpace | Sequence[int], labels: Sequence[int]) -> StateVector:
    space = _as_space(space)
    amp = np.zeros(space.dim, dtype=complex)
    amp[space.index_of(labels)] = 1.0
    return StateVector(space, amp)


@lru_cache(maxsize=256)
def _cosine_block(eta: float, dim: int, total: int) -> np.ndarray:
    a = np.diag(np.sqrt(np.arange(1, total)), 1)
    evals, evecs = np.linalg.eigh(a + a.T)
    c = (evecs * np.cos(eta * evals)) @ evecs.T
    c = c[:dim, :dim]
    block = 0.5 * (c + c.T)
    block.setflags(write=False)
    return block


def cosine_displacement(eta: float, dim: int, guard: int = 16, check: bool = True) -> Operator:
    """``cos(eta (a + a^dag))`` on ``dim`` Fock levels.

    The function is evaluated spectrally on ``dim + guard`` levels and the
    leading block kept. With ``check`` the guard is doubled and the block
    must not move by more than 1e-10.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if guard < 10:
        raise ValueError("guard must be at least 10 levels")
    if eta == 0:
        return identity(dim)
    block = _cosine_block(float(eta), int(dim), int(dim + guard))
    if check:
        wider = _cosine_block(float(eta), int(dim), int(dim + 2 * guard))
        diff = float(np.max(np.abs(block - wider)))
        if diff > 1e-10:
            raise TruncationError(
                f"cos(eta X) block not converged (eta={eta}, dim={dim}, guard={guard}): change {diff:.2e}"
            )
    return Operator(TensorSpace((dim,)), block.astype(complex))


def _state_matrix(state) -> tuple[TensorSpace, np.ndarray, bool]:
    if isinstance(state, StateVector):
        return state.space, state.amplitudes, True
    if isinstance(state, DensityMatrix):
        return state.space, state.matrix, False
    raise TypeError("expected a StateVector or DensityMatrix")


def partial_trace(state, keep: Sequence[int]) -> DensityMatrix:
    """Reduced density matrix on the subsystems listed in ``keep``."""
    space, data, is_ket = _state_matrix(state)
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    for k in keep:
        space.check_index(k)
    drop = [k for k in range(len(space)) if k not in keep]
    dk = prod(space.dims[k] for k in keep)
    dd = prod(space.dims[k] for k in drop)
    n = len(space)
    if is_ket:
        psi = np.transpose(data.reshape(space.dims), keep + drop).reshape(dk, dd)
        rho = psi @ psi.conj().T
    else:
        t = data.reshape(space.dims + space.dims)
        t = np.transpose(t, keep + drop + [n + k for k in keep] + [n + k for k in drop])
        rho = np.einsum("ajbj->ab", t.reshape(dk, dd, dk, dd))
    return DensityMatrix(TensorSpace([space.dims[k] for k in keep]), rho)


def state_fidelity(target: StateVector, rho: DensityMatrix) -> float:
    """<target|rho|target>."""
    _require_same(target.space, rho.space)
    v = target.amplitudes
    return float(np.real(np.vdot(v, rho.matrix @ v)))


def purification(evolved: np.ndarray, env_dims: Sequence[int]) -> StateVector:
    """Purification ``1/2 sum_i |i>_R (V|i>)`` from evolved computational inputs.

    ``evolved[i]`` is the joint (computational x environment) vector reached
    from input ``i``, shaped ``(4, d_env)`` or flat; components outside the
    computational subspace must already be dropped.
    """
    evolved = np.asarray(evolved, dtype=complex)
    denv = prod(env_dims)
    evolved = evolved.reshape(4, 4, denv)
    return StateVector(TensorSpace((4, 4, *env_dims)), 0.5 * evolved.reshape(-1))


def gate_entanglement_fidelity(
    final_states: Sequence[StateVector],
    ideal_gate: np.ndarray,
    weights: Sequence[float] | None = None,
) -> float:
    """Entanglement fidelity of a two-qubit gate against ``ideal_gate``.

    Each final state lives on ``(4, 4, *env)``: a reference system, the
    computational subspace and the environment. The reference was initially
    maximally entangled with the computational subspace, so the overlap is
    taken with ``(I x U)|Phi>``, ``|Phi> = 1/2 sum_i |i>|i>``. Thermal or other
    ensembles enter through ``weights``.
    """
    u = np.asarray(ideal_gate, dtype=complex)
    if u.shape != (4, 4):
        raise ValueError("ideal gate must be a 4x4 matrix")
    if weights is None:
        weights = np.full(len(final_states), 1.0 / len(final_states))
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(final_states):
        raise ValueError("one weight per final state required")
    if abs(weights.sum() - 1) > 1e-9:
        raise ValueError(f"weights sum to {weights.sum()}, not 1")
    # Phi_U[r, c] = <r, c|(I x U)|Phi> = U[c, r] / 2
    phi_u = (0.5 * u.T).reshape(-1)
    total = 0.0
    for w, state in zip(weights, final_states):
        dims = state.space.dims
        if dims[:2] != (4, 4):
            raise SpaceMismatchError(f"purification must start with (4, 4) factors, got {dims}")
        rho_rc = partial_trace(state, [0, 1]).matrix
        total += w * float(np.real(np.vdot(phi_u, rho_rc @ phi_u)))
    return float(min(max(total, 0.0), 1.0))
