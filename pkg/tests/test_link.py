import numpy as np
import pytest

from dm_ldbp.errors import ConfigError, ParameterError
from dm_ldbp.field import DualPolField, d_to_beta2, time_axis
from dm_ldbp.link import (
    DCF_13,
    SMF_72,
    DispersionMap,
    FiberParams,
    PmdRealization,
    PmdSection,
    SpanConfig,
    SsfmConfig,
    apply_dispersion,
    apply_pmd_section,
    draw_pmd_sections,
    edfa,
    linear_step,
    nonlinear_step_cnlse,
    nonlinear_step_manakov,
    propagate_fiber,
    propagate_link,
)


def random_band_limited(n, fs, seed, occupancy=0.25):
    rng = np.random.default_rng(seed)
    keep = int(n * occupancy / 2)
    spec = np.zeros(n, complex)
    spec[:keep] = rng.standard_normal(keep) + 1j * rng.standard_normal(keep)
    spec[-keep:] = rng.standard_normal(keep) + 1j * rng.standard_normal(keep)
    x = np.fft.ifft(spec)
    spec2 = np.zeros(n, complex)
    spec2[:keep] = rng.standard_normal(keep) + 1j * rng.standard_normal(keep)
    spec2[-keep:] = rng.standard_normal(keep) + 1j * rng.standard_normal(keep)
    y = np.fft.ifft(spec2)
    f = DualPolField(x, y, fs)
    return f.scaled(1.0 / np.sqrt(f.power()))


class TestLinearStep:
    def test_gaussian_broadening_matches_closed_form(self):
        # RMS width of a chirp-free Gaussian grows as sqrt(1 + (beta2 z/T0^2)^2)
        n, fs = 8192, 4e12
        t = time_axis(n, fs) - n / fs / 2
        t0 = 25e-12
        x = np.exp(-(t**2) / (2 * t0**2)).astype(complex)
        f = DualPolField(x, np.zeros(n, complex), fs)
        beta2 = d_to_beta2(17.0)
        z = 100e3
        out = linear_step(f, beta2, 0.0, z, "forward")

        def rms_width(a):
            p = np.abs(a) ** 2
            mu = np.sum(t * p) / np.sum(p)
            return np.sqrt(np.sum((t - mu) ** 2 * p) / np.sum(p))

        grew = rms_width(out.x) / rms_width(f.x)
        expect = np.sqrt(1.0 + (beta2 * z / t0**2) ** 2)
        assert grew == pytest.approx(expect, rel=5e-3)

    def test_backward_undoes_forward(self):
        f = random_band_limited(2048, 512e9, 1)
        g = linear_step(f, d_to_beta2(17.0), 0.2 * np.log(10) / 1e4, 72e3, "forward")
        h = linear_step(g, d_to_beta2(17.0), 0.2 * np.log(10) / 1e4, 72e3, "backward")
        assert np.max(np.abs(h.x - f.x)) < 1e-9
        assert np.max(np.abs(h.y - f.y)) < 1e-9

    def test_loss_only_scales_power(self):
        f = random_band_limited(1024, 64e9, 2)
        alpha = 0.2 * np.log(10) / 10 / 1e3
        out = linear_step(f, 0.0, alpha, 10e3, "forward")
        # 2 dB of power loss over 10 km
        assert out.power() / f.power() == pytest.approx(10 ** (-0.2), rel=1e-9)

    def test_rejects_bad_sign(self):
        f = random_band_limited(64, 1e9, 3)
        with pytest.raises(ParameterError):
            linear_step(f, 0.0, 0.0, 1.0, "up")


class TestNonlinearSteps:
    def test_cw_spm_phase_in_x_only(self):
        p = 2e-3
        n = 32
        f = DualPolField(np.full(n, np.sqrt(p), complex), np.zeros(n, complex), 1e9)
        gamma_m = 1.4e-3
        out = nonlinear_step_cnlse(f, gamma_m, 1e3)
        ph = np.angle(out.x / f.x)
        assert ph == pytest.approx(gamma_m * 1e3 * p, rel=1e-12)

    def test_cross_coupling_is_two_thirds(self):
        px, py = 1e-3, 3e-3
        n = 8
        f = DualPolField(
            np.full(n, np.sqrt(px), complex), np.full(n, np.sqrt(py), complex), 1e9
        )
        out = nonlinear_step_cnlse(f, 1.3e-3, 500.0)
        g = 1.3e-3 * 500.0
        assert np.angle(out.x[0] / f.x[0]) == pytest.approx(g * (px + 2 * py / 3))
        assert np.angle(out.y[0] / f.y[0]) == pytest.approx(g * (py + 2 * px / 3))

    def test_manakov_rotates_both_by_total_power(self):
        p = 4e-3  # split equally
        n = 8
        amp = np.sqrt(p / 2)
        f = DualPolField(np.full(n, amp, complex), np.full(n, amp, complex), 1e9)
        out = nonlinear_step_manakov(f, 2.0e-3, 1e3)
        expect = (8.0 / 9.0) * 2.0e-3 * 1e3 * p
        assert np.angle(out.x[0] / f.x[0]) == pytest.approx(expect, rel=1e-12)
        assert np.angle(out.y[0] / f.y[0]) == pytest.approx(expect, rel=1e-12)

    def test_magnitudes_untouched(self):
        f = random_band_limited(512, 64e9, 4)
        out = nonlinear_step_cnlse(f, 1.4e-3, 1e3)
        assert np.allclose(np.abs(out.x), np.abs(f.x))
        assert np.allclose(np.abs(out.y), np.abs(f.y))


class TestFiber:
    def test_cw_accumulates_effective_length_phase(self):
        # CW excites only the DC bin, so dispersion is inert and the SPM
        # phase integrates gamma * P * exp(-alpha z) to gamma * P * L_eff
        p = 5e-3
        n = 64
        f = DualPolField(np.full(n, np.sqrt(p), complex), np.zeros(n, complex), 1e9)
        out = propagate_fiber(f, SMF_72, 72, "cnlse")
        leff_km = SMF_72.effective_length_km()
        assert leff_km == pytest.approx(20.9263, rel=1e-4)
        expect = 1.4 * p * leff_km  # gamma [1/(W km)] * P * Leff [km]
        got = np.angle(out.x[0] / f.x[0])
        assert got == pytest.approx(expect, rel=5e-3)

    def test_split_step_is_second_order(self):
        n, fs = 2048, 256e9
        t = time_axis(n, fs) - n / fs / 2
        x = 0.1 * np.exp(-(t**2) / (2 * (20e-12) ** 2)).astype(complex)
        f = DualPolField(x, 0.5 * x, fs)
        fiber = FiberParams(20.0, 0.2, 17.0, 1.4)
        ref = propagate_fiber(f, fiber, 128, "cnlse")
        err = []
        for steps in (4, 8):
            out = propagate_fiber(f, fiber, steps, "cnlse")
            err.append(np.linalg.norm(out.x - ref.x) / np.linalg.norm(ref.x))
        assert 3.5 < err[0] / err[1] < 4.5

    def test_max_phase_guard(self):
        n = 64
        f = DualPolField(np.full(n, 1.0, complex), np.zeros(n, complex), 1e9)
        with pytest.raises(ConfigError):
            propagate_fiber(f, SMF_72, 2, "cnlse", max_phase_rad=0.01)

    def test_rejects_zero_length(self):
        with pytest.raises(ParameterError):
            FiberParams(0.0, 0.2, 17.0, 1.4)


class TestPmd:
    def test_section_preserves_power(self):
        f = random_band_limited(1024, 64e9, 5)
        s = PmdSection(3e-12, (0.3, 1.1, 2.0))
        out = apply_pmd_section(f, s)
        assert out.power() == pytest.approx(f.power(), rel=1e-12)

    def test_inverse_restores_field(self):
        f = random_band_limited(1024, 64e9, 6)
        s = PmdSection(5e-12, (0.7, 0.4, 5.1))
        out = apply_pmd_section(apply_pmd_section(f, s), s, inverse=True)
        assert np.max(np.abs(out.x - f.x)) < 1e-12

    def test_zero_dgd_identity_section(self):
        f = random_band_limited(256, 64e9, 7)
        out = apply_pmd_section(f, PmdSection(0.0, (0.0, 0.0, 0.0)))
        assert np.max(np.abs(out.x - f.x)) < 1e-12

    def test_section_statistics_follow_maxwellian_scaling(self):
        # E[sum dgd_k^2] over a fiber = (3 pi / 8) * (pmd_coef sqrt(L))^2
        rng = np.random.default_rng(42)
        fiber = SMF_72
        tau_mean = 0.1e-12 * np.sqrt(72.0)
        acc = 0.0
        n_draw = 400
        for _ in range(n_draw):
            secs = draw_pmd_sections(fiber, 8, rng)
            acc += sum(s.dgd_s**2 for s in secs)
        got = acc / n_draw
        expect = (3 * np.pi / 8) * tau_mean**2
        assert got == pytest.approx(expect, rel=0.08)

    def test_realization_round_trip(self):
        dmap = DispersionMap.standard(2)
        rng = np.random.default_rng(0)
        pmd = PmdRealization.draw(dmap, 8, rng)
        again = PmdRealization.from_jsonable(pmd.to_jsonable())
        assert again == pmd


class TestEdfa:
    def test_gain_scales_power(self):
        f = random_band_limited(512, 64e9, 8)
        out = edfa(f, 14.4, None)
        assert out.power() / f.power() == pytest.approx(10 ** 1.44, rel=1e-12)

    def test_ase_power_matches_psd(self):
        # zero signal in: output power is pure ASE, PSD = nsp h nu (G-1)
        n, fs = 1 << 16, 100e9
        f = DualPolField(np.zeros(n, complex), np.zeros(n, complex), fs)
        rng = np.random.default_rng(9)
        out = edfa(f, 14.4, 5.0, rng)
        psd = 5.378403e-18  # W/Hz per polarization at 1550 nm, frozen
        per_pol = np.mean(np.abs(out.x) ** 2)
        assert per_pol == pytest.approx(psd * fs, rel=0.03)
        assert np.mean(np.abs(out.y) ** 2) == pytest.approx(psd * fs, rel=0.03)

    def test_noise_requires_rng(self):
        f = random_band_limited(64, 1e9, 10)
        with pytest.raises(ParameterError):
            edfa(f, 10.0, 5.0, None)


class TestDispersionMap:
    def test_standard_map_closes_to_zero(self):
        dmap = DispersionMap.standard(28)
        assert dmap.precompensation_ps_nm == -1224.0
        assert dmap.spans[0].net_dispersion_ps_nm() == pytest.approx(184.0)
        assert dmap.terminal_ps_nm == pytest.approx(-3928.0)
        assert dmap.residual_at_rx_ps_nm() == pytest.approx(0.0, abs=1e-9)

    def test_accumulated_walks_the_fibers(self):
        dmap = DispersionMap.standard(28)
        assert dmap.accumulated(0.0) == pytest.approx(-1224.0)
        assert dmap.accumulated(72.0) == pytest.approx(0.0, abs=1e-9)
        assert dmap.accumulated(85.0) == pytest.approx(-1040.0)
        assert dmap.accumulated(2 * 85.0) == pytest.approx(-1040.0 + 184.0)
        with pytest.raises(ParameterError):
            dmap.accumulated(-1.0)

    def test_lumped_element_matches_distributed_fiber(self):
        f = random_band_limited(2048, 512e9, 11)
        lumped = apply_dispersion(f, 17.0 * 72.0)
        fiber = linear_step(f, d_to_beta2(17.0), 0.0, 72e3, "forward")
        assert np.max(np.abs(lumped.x - fiber.x)) < 1e-9


class TestPropagateLink:
    def test_linear_lossmatched_link_is_identity(self):
        f = random_band_limited(4096, 512e9, 12).scaled(np.sqrt(1e-3))
        dmap = DispersionMap.standard(4)
        ssfm = SsfmConfig(steps_smf=8, steps_dcf=2, nonlinearity="none")
        out, _ = propagate_link(
            f, dmap, ssfm, None, noise_figure_db=None, pmd=PmdRealization.none(dmap)
        )
        rms = np.sqrt(np.mean(np.abs(out.x - f.x) ** 2 + np.abs(out.y - f.y) ** 2))
        assert rms / np.sqrt(f.power()) < 1e-9

    def test_noise_free_output_power_returns_to_launch(self):
        f = random_band_limited(2048, 512e9, 13).scaled(np.sqrt(2e-3))
        dmap = DispersionMap.standard(2)
        ssfm = SsfmConfig(steps_smf=8, steps_dcf=2)
        out, _ = propagate_link(
            f, dmap, ssfm, None, noise_figure_db=None, pmd=PmdRealization.none(dmap)
        )
        assert out.power() == pytest.approx(f.power(), rel=1e-6)

    def test_pmd_drawn_when_not_supplied(self):
        f = random_band_limited(1024, 512e9, 14).scaled(np.sqrt(1e-3))
        dmap = DispersionMap.standard(2)
        ssfm = SsfmConfig(steps_smf=4, steps_dcf=1, nonlinearity="none")
        rng = np.random.default_rng(15)
        out, pmd = propagate_link(f, dmap, ssfm, rng, noise_figure_db=None)
        assert len(pmd.sections_per_fiber) == 4
        assert all(len(s) == 8 for s in pmd.sections_per_fiber)
        # smf carries pmd, dcf has none by default
        assert pmd.sections_per_fiber[0][0].dgd_s > 0
        assert pmd.sections_per_fiber[1][0].dgd_s == 0.0

    def test_mismatched_pmd_rejected(self):
        f = random_band_limited(256, 512e9, 16)
        d2 = DispersionMap.standard(2)
        d3 = DispersionMap.standard(3)
        pmd = PmdRealization.none(d3)
        with pytest.raises(ParameterError):
            propagate_link(f, d2, SsfmConfig(4, 1, "none"), None, None, pmd=pmd)
