import numpy as np
import pytest

from cqedsim.adiabatic import (
    E,
    ONE,
    R,
    AdiabaticConfig,
    adiabatic_hamiltonian,
    cardinal_states,
    default_motion_cutoff,
    dark_state_analytic,
    dark_state_residual,
    fidelity_for,
    reachable_indices,
    simulate_transfer,
    sweep_eta_transfer,
    transfer_space,
)
from cqedsim.dynamics import evolve_tdse
from cqedsim.errors import NonadiabaticError
from cqedsim.hilbert import basis_state

S = 1 / np.sqrt(2)


def short_pulses(eta):
    """Fast but still adiabatic pulses on small cutoffs, for full-space checks."""
    return AdiabaticConfig(eta, omega_r=eta**2 * 0.05, omega=0.05, pulse_width=6.0, separation=12.0, n_motion=5)


def test_config_defaults():
    cfg = AdiabaticConfig(0.2)
    assert cfg.omega == pytest.approx(1e-4 / 0.04)
    assert cfg.centers == (80.0, 0.0)
    assert cfg.window == (-150.0, 230.0)
    assert cfg.omega_max == 2.0
    assert max(cfg.envelope(j, t) for j in (1, 2) for t in cfg.window) < 1e-3


def test_motion_cutoff_grows_when_ground_state_reaches_field_node():
    assert default_motion_cutoff(0.2, 0) == 8
    assert default_motion_cutoff(0.35, 0) == 8
    assert default_motion_cutoff(0.4, 0) == 38
    assert default_motion_cutoff(0.1, 10) == 16
    assert AdiabaticConfig(0.4).n_motion == 38


def test_window_clipping_rejected():
    with pytest.raises(ValueError, match="clipped"):
        AdiabaticConfig(0.2, window=(-120.0, 200.0))


def test_counterintuitive_order():
    cfg = AdiabaticConfig(0.2)
    o1, o2 = cfg.rabi(-60.0)
    assert o2 > 100 * o1
    o1, o2 = cfg.rabi(140.0)
    assert o1 > 100 * o2


def test_hamiltonian_hermitian():
    h = adiabatic_hamiltonian(AdiabaticConfig(0.3, n_motion=4))
    for t in (-100.0, 0.0, 40.0, 123.4):
        assert h.hermiticity_error(t) < 1e-14


@pytest.mark.parametrize("n1,n2", [(0, 0), (1, 2), (3, 0)])
def test_rr0_is_exact_eigenstate(n1, n2):
    cfg = AdiabaticConfig(0.5, n_motion=5)
    h = adiabatic_hamiltonian(cfg)
    psi = basis_state(h.space, (R, R, 0, n1, n2)).amplitudes
    for t in (0.0, 40.0, 90.0):
        np.testing.assert_allclose(h(t) @ psi, cfg.omega * (n1 + n2) * psi, atol=1e-15)


@pytest.mark.parametrize("printed", [False, True])
def test_point_dipole_dark_state_annihilated(printed):
    cfg = AdiabaticConfig(0.0, omega=0.01, n_motion=4)
    for rabi in ((0.3, 1.1), (1.0, 1.0), (2.0, 0.1)):
        assert dark_state_residual(cfg, 0.0, printed=printed, rabi=rabi) <= 1e-12


def test_dark_state_single_pulse_limit():
    d = dark_state_analytic(0.0, 0.7, 1.0, 0.3, 1, 2, n_motion=6)
    expected = basis_state(d.space, (ONE, R, 0, 1, 2))
    # (1 - eta^2 X^2/2)|1> with X^2|1> = 3|1> + sqrt(6)|3>
    a1, a3 = 1 - 1.5 * 0.09, -0.045 * np.sqrt(6)
    assert abs(expected.overlap(d)) ** 2 == pytest.approx(a1**2 / (a1**2 + a3**2), abs=1e-14)
    d0 = dark_state_analytic(0.0, 0.7, 1.0, 0.0, 1, 2, n_motion=6)
    np.testing.assert_allclose(d0.amplitudes, expected.amplitudes, atol=1e-15)


def test_dark_state_rejects_zero_drive():
    with pytest.raises(ValueError):
        dark_state_analytic(0.0, 0.0)


def test_dark_state_eta_zero_forms_agree():
    a = dark_state_analytic(0.4, 0.9, eta=0.0, n1=1, n2=0)
    b = dark_state_analytic(0.4, 0.9, eta=0.0, n1=1, n2=0, printed=True)
    np.testing.assert_allclose(a.amplitudes, b.amplitudes, atol=1e-15)


def test_residual_zero_without_motion():
    assert dark_state_residual(AdiabaticConfig(0.2), 40.0, eta=0.0) <= 1e-10


def test_residual_quartic_scaling():
    cfg = AdiabaticConfig(0.2, n_motion=14)
    etas = np.array([0.05, 0.1, 0.15, 0.2, 0.3])
    r = np.array([dark_state_residual(cfg, 40.0, eta=e) for e in etas])
    assert np.polyfit(np.log(etas), np.log(r), 1)[0] == pytest.approx(4, abs=0.5)
    assert r[3] / r[1] == pytest.approx(16, rel=0.4)


def test_printed_correction_is_only_quadratic():
    cfg = AdiabaticConfig(0.2, n_motion=14)
    etas = np.array([0.05, 0.1, 0.2])
    r = [dark_state_residual(cfg, 40.0, eta=e, printed=True) for e in etas]
    assert np.polyfit(np.log(etas), np.log(r), 1)[0] == pytest.approx(2, abs=0.3)


def test_residual_excited_thermal_fock_state():
    cfg = AdiabaticConfig(0.2, n_motion=16)
    a = dark_state_residual(cfg, 40.0, eta=0.1, n1=2, n2=1)
    b = dark_state_residual(cfg, 40.0, eta=0.05, n1=2, n2=1)
    assert a / b == pytest.approx(16, rel=0.4)


def test_reachable_manifold_has_five_internal_states():
    cfg = AdiabaticConfig(0.3, n_motion=4)
    space = transfer_space(cfg)
    h = adiabatic_hamiltonian(cfg)(40.0)
    idx = reachable_indices(h, [space.index_of((ONE, R, 0, 0, 0))])
    labels = {tuple(x[:3]) for x in np.array(np.unravel_index(idx, space.dims)).T}
    assert labels == {(ONE, R, 0), (E, R, 0), (R, R, 1), (R, E, 0), (R, ONE, 0)}
    assert len(idx) == 5 * 16


def test_restricted_evolution_matches_full_space():
    cfg = short_pulses(0.3)
    res = simulate_transfer(cfg, S, S, check_cutoffs=False)
    h = adiabatic_hamiltonian(cfg)
    psi0 = (basis_state(h.space, (R, R, 0, 0, 0)).amplitudes + basis_state(h.space, (ONE, R, 0, 0, 0)).amplitudes) * S
    out = evolve_tdse(h, psi0, *cfg.window, method="magnus4").reshape(h.space.dims)
    amp = S * (out[R, R, 0] + out[R, ONE, 0])
    assert res.fidelity == pytest.approx(float(np.sum(np.abs(amp) ** 2)), abs=1e-8)


def test_fidelity_for_matches_direct_run():
    cfg = short_pulses(0.2)
    base = simulate_transfer(cfg, S, S, check_cutoffs=False)
    for a, b in [(S, -S), (0.6, 0.8j)]:
        direct = simulate_transfer(cfg, a, b, check_cutoffs=False)
        assert fidelity_for(base, a, b) == pytest.approx(direct.fidelity, abs=1e-12)


def test_relative_phase_errors_count():
    cfg = short_pulses(0.2)
    res = simulate_transfer(cfg, S, S, check_cutoffs=False)
    fids = [fidelity_for(res, a, b) for a, b in cardinal_states()]
    assert fids[0] == pytest.approx(1, abs=1e-12)
    assert min(fids) < fids[0]


def test_rr0_input_transfers_exactly_at_large_eta():
    res = simulate_transfer(AdiabaticConfig(0.5), 1.0, 0.0, check_cutoffs=False)
    assert res.fidelity >= 1 - 1e-8
    assert res.max_excited_pop == 0


def test_point_dipole_transfer():
    res = simulate_transfer(AdiabaticConfig(0.01))
    assert res.fidelity >= 0.999
    assert res.norm_drift <= 1e-9
    assert 0 <= res.max_excited_pop <= 1e-3
    assert res.converged
    assert res.transfer_sign == 1.0


def test_cavity_population_follows_dark_state():
    cfg = AdiabaticConfig(0.1)
    res = simulate_transfer(cfg, check_cutoffs=False)
    ts = np.linspace(*cfg.window, 4001)
    o1, o2 = np.array([cfg.rabi(t) for t in ts]).T
    predicted = np.max(o1**2 * o2**2 / (o1**2 + o2**2 + o1**2 * o2**2)) * 0.5
    assert res.max_cavity_pop <= 2 * predicted
    assert res.max_cavity_pop >= 0.5 * predicted


def test_slower_passage_not_worse():
    fast = simulate_transfer(AdiabaticConfig(0.1), check_cutoffs=False)
    slow = simulate_transfer(AdiabaticConfig(0.1, pulse_width=80.0, separation=160.0), check_cutoffs=False)
    assert slow.fidelity >= fast.fidelity - 1e-4


def test_nonadiabatic_failure_reported():
    cfg = AdiabaticConfig(0.1, pulse_width=0.5, separation=0.0)
    with pytest.raises(NonadiabaticError):
        simulate_transfer(cfg, check_cutoffs=False)
    assert simulate_transfer(cfg, check_cutoffs=False, strict=False).fidelity < 0.5


def test_rejects_unnormalised_input():
    with pytest.raises(ValueError):
        simulate_transfer(short_pulses(0.1), 1.0, 1.0)


def test_sweep_records_failures_in_order():
    template = AdiabaticConfig(0.1, omega_r=1e-4, pulse_width=6.0, separation=12.0, n_motion=5)
    rows = sweep_eta_transfer(template, [0.1, -1.0])
    assert rows[0]["eta"] == 0.1 and rows[0]["fidelity"] > 0.9
    assert 0 <= rows[0]["min_cardinal_fidelity"] <= rows[0]["fidelity"]
    assert "error" in rows[1]
