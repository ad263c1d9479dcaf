"""Closed-form Lamb-Dicke expansions for the Raman exchange and gate.

All quantities are in units where hbar = 1 and rates are measured in the
same unit as ``g``. Results are accurate through fourth order in ``eta``.

Two printed coefficients are known to be inconsistent and are corrected
here; the literal forms stay available through ``printed=True``:

* the exchange-fidelity cross term is ``pi^2 eta^2 delta (2 nbar + 1) / 4``
  (the literal ``eta`` is not stationary at the quoted optimal trim);
* the second gate-fidelity term carries ``(eta^2 g / 2 omega)^2`` rather
  than ``eta^2 g^2 / 4 omega``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .hilbert import ThermalSpec, thermal_weights

SERIES_LIMIT = 0.45


@dataclass(frozen=True)
class ExchangeParams:
    eta: float
    omega: float
    g: float = 1.0
    nbar: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.eta < 0 or self.omega <= 0 or self.g <= 0 or self.nbar < 0:
            raise ValueError(f"invalid exchange parameters {self}")
        if self.eta > SERIES_LIMIT:
            warnings.warn(
                f"eta={self.eta} is outside the range where the eta^4 expansion is reliable",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def recoil_term(self) -> float:
        """(eta^2 g / 2 omega)^2 sin^2(pi omega / g)."""
        return (self.eta**2 * self.g / (2 * self.omega)) ** 2 * np.sin(np.pi * self.omega / self.g) ** 2


def post_pulse_state_coeffs(n: int, p: ExchangeParams) -> np.ndarray:
    """Amplitudes after one exchange pulse started in ``|1>|0_c>|n>``.

    Order: ``|r,1_c,n>``, ``|1,0_c,n>``, ``|1,0_c,n+2>``, ``|1,0_c,n-2>``.
    Only terms that affect populations through ``eta^4`` are kept and the
    overall phase is dropped.
    """
    if n < 0:
        raise ValueError("Fock index must be non-negative")
    eta2, g, w = p.eta**2, p.g, p.omega
    x = np.pi * eta2 * (2 * n + 1) / 4 - np.pi * p.delta / 2
    s = eta2 * g / (4 * w) * np.sin(np.pi * w / g)
    k = eta2 * g / (8 * w)
    up = k * np.sqrt((n + 1) * (n + 2)) * (1 - np.exp(-2j * np.pi * w / g))
    down = -k * np.sqrt(n * (n - 1)) * (1 - np.exp(2j * np.pi * w / g)) if n >= 2 else 0.0
    return np.array([1 - 0.5 * x**2 - s**2 * (n * n + n + 1), 1j * x, up, down], dtype=complex)


def exchange_fidelity(p: ExchangeParams, printed: bool = False) -> float:
    """Thermally averaged population transferred to ``|r>|1_c>`` by one pulse."""
    nb, d = p.nbar, p.delta
    cross_eta = p.eta if printed else p.eta**2
    return float(
        1
        - np.pi**2 * d**2 / 4
        + np.pi**2 * cross_eta * d * (2 * nb + 1) / 4
        - (np.pi * p.eta**2 / 4) ** 2 * (8 * nb * nb + 8 * nb + 1)
        - p.recoil_term * (nb * nb + nb + 0.5)
    )


def optimal_delta(eta: float, nbar: float = 0.0) -> float:
    """Pulse trim maximising :func:`exchange_fidelity`."""
    return eta**2 * (2 * nbar + 1) / 2


def exchange_fidelity_optimal(p: ExchangeParams) -> float:
    nb = p.nbar
    return float(1 - (np.pi * p.eta**2 / 2) ** 2 * (nb * nb + nb) - p.recoil_term * (nb * nb + nb + 0.5))


def exchange_fidelity_optimal_slow(eta: float, nbar: float = 0.0) -> float:
    """``omega << g`` limit of :func:`exchange_fidelity_optimal`."""
    return float(1 - 2 * (np.pi * eta**2 / 2) ** 2 * (nbar * nbar + nbar + 0.25))


def exchange_fidelity_optimal_fast(eta: float, nbar: float = 0.0) -> float:
    """``omega >> g`` limit, where the motion is averaged over many periods."""
    return float(1 - (np.pi * eta**2 / 2) ** 2 * (nbar * nbar + nbar))


def exchange_heating(p: ExchangeParams) -> float:
    """<A^dag A> - nbar after one exchange; independent of the trim."""
    return float(p.recoil_term * (2 * p.nbar + 1))


def exchange_fidelity_series(p: ExchangeParams, cutoff: int | None = None) -> float:
    """Thermal average of ``|<r,1_c,n|psi_n>|^2`` built from the per-n amplitudes."""
    weights, _ = thermal_weights(ThermalSpec(p.nbar, cutoff))
    pops = [abs(post_pulse_state_coeffs(n, p)[0]) ** 2 for n in range(len(weights))]
    return float(np.dot(weights, pops))


def gate_fidelity_analytic(p: ExchangeParams, printed: bool = False) -> float:
    """Gate entanglement fidelity of the untrimmed three-pulse phase gate."""
    nb = p.nbar
    x = np.pi * p.omega / p.g
    if printed:
        coeff = p.eta**2 * p.g**2 / (4 * p.omega)
    else:
        coeff = (p.eta**2 * p.g / (2 * p.omega)) ** 2
    return float(
        1
        - np.pi**2 * p.eta**4 * (nb * nb + nb + 1 / 8)
        - coeff * np.sin(x) ** 2 * (1 + np.cos(x) ** 2) * (nb * nb + nb + 0.5)
    )


def gate_heating_analytic(p: ExchangeParams) -> tuple[float, float]:
    """Motional excitation gained by atom 1 and atom 2 over the gate."""
    x = np.pi * p.omega / p.g
    e2 = p.eta**2 * p.g / p.omega
    n1 = (e2 / 2) ** 2 * np.sin(x) ** 2 * (2 * p.nbar + 1)
    n2 = (e2 / 4) ** 2 * np.sin(2 * x) ** 2 * (2 * p.nbar + 1)
    return float(n1), float(n2)
