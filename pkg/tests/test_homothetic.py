import numpy as np
import pytest
from scipy.integrate import quad

from maslov_nbody import central, core, homothetic, maslov
from maslov_nbody.errors import InputError, NonSpiralError, SpiralError


@pytest.mark.parametrize("H0", [-1.0, 0.0, 0.3])
def test_profiles_satisfy_the_energy_identity(H0):
    orbit = homothetic.synthetic_orbit(2.0, [0.5], H0=H0)
    taus = np.linspace(-6.0, -0.2, 12) if H0 > 0 else np.linspace(-6.0, 6.0, 25)
    for tau in taus:
        assert abs(orbit.energy_residual(tau)) <= 1e-12 * max(1.0, orbit.r(tau))
        h = 1e-5
        fd_r = (orbit.r(tau + h) - orbit.r(tau - h)) / (2 * h)
        assert fd_r == pytest.approx(orbit.r(tau) * orbit.v(tau), rel=1e-7, abs=1e-12)
        fd_v = (orbit.v(tau + h) - orbit.v(tau - h)) / (2 * h)
        assert fd_v == pytest.approx(orbit.dv(tau), rel=1e-6, abs=1e-9)


def test_negative_energy_profile():
    orbit = homothetic.synthetic_orbit(2.0, [], H0=-0.5)
    assert orbit.v(0.0) == 0.0
    assert orbit.r(0.0) == pytest.approx(4.0)
    assert orbit.ends == (homothetic.COLLISION, homothetic.COLLISION)
    c = orbit.rate
    assert orbit.v(30.0) == pytest.approx(-c)
    lo, hi = orbit.collision_times
    assert orbit.t(40.0) == pytest.approx(hi, rel=1e-12)
    assert orbit.t(-40.0) == pytest.approx(lo, rel=1e-12)
    val, _ = quad(lambda s: orbit.r(s) ** 1.5, 0.0, 1.7)
    assert orbit.t(1.7) == pytest.approx(val, rel=1e-10)


def test_log_beta_is_consistent_with_time():
    orbit = homothetic.synthetic_orbit(8.0, [-2.0])
    hi = orbit.collision_times[1]
    for tau in (0.3, 1.0, 2.5):
        assert orbit.log_beta(tau) == pytest.approx(np.log(hi - orbit.t(tau)), rel=1e-9)
    # continuity across the series switch and the inverse map
    y = 2.0 / (0.5 * orbit.rate)
    assert orbit.log_beta(y - 1e-9) == pytest.approx(orbit.log_beta(y + 1e-9), abs=1e-7)
    for lb in (-5.0, -100.0, -690.0):
        assert orbit.log_beta(orbit.tau_at_log_beta(lb)) == pytest.approx(lb, rel=1e-12)


def test_positive_energy_profile_ends_at_zero():
    orbit = homothetic.synthetic_orbit(2.0, [], H0=0.3)
    assert orbit.ends[1] == homothetic.HYPERBOLIC_END
    assert orbit.v(-1e-6) > 1e5
    # in hyperbolic time the radial speed tends to sqrt(2 H0)
    tau = -1e-4
    assert orbit.v(tau) / np.sqrt(orbit.r(tau)) == pytest.approx(np.sqrt(2 * 0.3), rel=1e-6)
    with pytest.raises(InputError):
        orbit.v(0.5)


def test_shear_frames_give_the_diagonal_entries():
    for H0 in (-1.0, 0.0, 0.3):
        orbit = homothetic.synthetic_orbit(2.0, [0.7], H0=H0)
        for tau in (-3.0, -0.7):
            rad = homothetic.radial_sheared(orbit)(tau)
            np.testing.assert_allclose(rad, np.diag([1.0, homothetic.radial_sheared_entry(orbit, tau)]),
                                       atol=1e-12)
            eig = homothetic.eigen_sheared(orbit, 0.7)(tau)
            np.testing.assert_allclose(eig, np.diag([1.0, homothetic.eigen_sheared_entry(orbit, 0.7, tau)]),
                                       atol=1e-11)


@pytest.mark.parametrize("H0", [-1.0, 0.0, 0.3])
@pytest.mark.parametrize("coefficient", [None, 3.0 / 16.0, 3.0 / 11.0])
def test_radial_block_index_vanishes(H0, coefficient):
    orbit = homothetic.synthetic_orbit(2.0, [], H0=H0)
    assert homothetic.mu_B1(orbit, coefficient) == 0


def test_eigen_block_dichotomy_subset():
    orbit = homothetic.synthetic_orbit(2.0, [])
    for lam, expected in ((-0.2, (1, 0)), (0.0, (0, 1)), (0.5, (0, 0))):
        blk = homothetic.mu_lambda(orbit, lam)
        assert (blk.mu, blk.nu) == expected


def test_neumann_index_vanishes():
    orbit = homothetic.synthetic_orbit(2.0, [])
    for lam in (-0.2, -0.05, 0.3, 3.0):
        assert homothetic.mu_lambda(orbit, lam, against=maslov.neumann(1)).mu == 0


@pytest.mark.parametrize("lam,expected", [(-0.2, 1), (-0.1, 1), (0.1, 0), (2.0, 0)])
def test_eigen_block_hormander_value(lam, expected):
    orbit = homothetic.synthetic_orbit(2.0, [])
    assert homothetic.hormander_value(orbit, lam) == expected


def test_eigen_block_preconditions():
    orbit = homothetic.synthetic_orbit(2.0, [])
    with pytest.raises(SpiralError):
        homothetic.mu_lambda(orbit, -0.3)
    with pytest.raises(InputError):
        homothetic.mu_lambda(homothetic.synthetic_orbit(2.0, [], H0=0.0), 0.5)


def test_synthetic_morse_counts_negative_eigenvalues():
    orbit = homothetic.synthetic_orbit(2.0, [-0.2, -0.1, 0.5])
    cert = homothetic.homothetic_morse(orbit, workers=2)
    assert cert.morse == 2 == homothetic.negative_count(orbit)
    assert cert.method == "full-line"
    assert [b["mu"] for b in cert.per_block] == [1, 1, 0]


def test_boundary_spectrum_uses_the_perturbation():
    orbit = homothetic.synthetic_orbit(2.0, [-0.25, 0.3])
    assert orbit.spiral_class == central.BOUNDARY
    cert = homothetic.homothetic_morse(orbit)
    assert cert.morse == 1
    assert cert.method == "perturbed-full-line"
    assert set(cert.evidence["perturbed"].values()) == {1}


def test_kernel_is_handled_by_perturbation(lagrange_orbit):
    cert = homothetic.homothetic_morse(lagrange_orbit)
    assert cert.morse == 0
    assert cert.evidence["full_line_nu"] == lagrange_orbit.cc.kernel_dim == 1
    assert cert.method == "perturbed-full-line"


@pytest.mark.parametrize("H0", [-1.0, 0.0, 0.3])
def test_euler_line_orbit(euler_line_cc, H0):
    assert homothetic.homothetic_morse(homothetic.build_orbit(euler_line_cc, H0)).morse == 0


def test_mass_rescaling_keeps_the_index():
    system = core.MassSystem([2.0, 2.0, 2.0], 2)
    cc = central.find_cc(system, system.builtin("equilateral"))
    assert homothetic.homothetic_morse(homothetic.build_orbit(cc, -1.0)).morse == 0


def test_spiral_orbit_is_refused(euler_cc):
    with pytest.raises(SpiralError):
        homothetic.homothetic_morse(homothetic.build_orbit(euler_cc, -1.0))


def test_growth_preconditions(lagrange_orbit):
    with pytest.raises(NonSpiralError):
        homothetic.growth_rate(lagrange_orbit, [-10.0])
    with pytest.raises(InputError):
        homothetic.growth_rate(homothetic.synthetic_orbit(8.0, [-2.0], H0=0.0), [-10.0])
    with pytest.raises(InputError):
        homothetic.growth_rate(homothetic.synthetic_orbit(8.0, [-2.0]), [-10.0], eps=0.5)


def test_growth_counts_are_monotone():
    orbit = homothetic.synthetic_orbit(8.0, [-2.0])
    rep = homothetic.growth_rate(orbit, homothetic.geometric_log_betas(1e-2, 1e-60, 8))
    counts = [s.morse for s in rep.samples]
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]
    assert rep.sandwich_holds
    assert rep.limit_from_tau == pytest.approx(1.0 / (6.0 * np.pi), rel=1e-12)


def test_formula_coefficient():
    assert homothetic.formula_coefficient(8.0, [-2.0, 3.0]) == pytest.approx(0.0265258, rel=1e-5)
    assert homothetic.formula_coefficient(8.0, [-0.5]) == 0.0
