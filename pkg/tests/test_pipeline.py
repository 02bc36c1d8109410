"""End-to-end run orchestration: simulation, receiver chain, datasets, arms."""

import logging

import numpy as np
import pytest

from dm_ldbp.dbp import build_dbp_plan, dbp_equalize
from dm_ldbp.errors import ParameterError, SyncError
from dm_ldbp.ldbp import init_from_dbp
from dm_ldbp.pipeline import (
    Arm,
    LinkConfig,
    RunSpec,
    clean_reference,
    equalized_symbols,
    evaluate_cell,
    generate_dataset,
    ldbp_equalize_run,
    pmd_for,
    receiver_front_end,
    simulate_run,
)
from dm_ldbp.transceiver import WdmConfig
from dm_ldbp.link import SsfmConfig


def spec_for(
    n_spans=2,
    n_channels=1,
    n_symbols=960,
    power_dbm=-2.0,
    nonlinearity="none",
    noise_figure_db=None,
    pmd_coef=0.0,
    seed=123,
):
    return RunSpec(
        link=LinkConfig(
            n_spans=n_spans,
            noise_figure_db=noise_figure_db,
            pmd_coef_ps_sqrt_km=pmd_coef,
        ),
        wdm=WdmConfig(
            n_channels=n_channels, launch_power_dbm=power_dbm, rrc_span=64
        ),
        ssfm=SsfmConfig(nonlinearity=nonlinearity),
        n_symbols=n_symbols,
        master_seed=seed,
    )


class TestLinkConfig:
    def test_standard_map_terminal(self):
        dmap = LinkConfig(n_spans=4).dispersion_map()
        assert dmap.n_spans == 4
        assert dmap.precompensation_ps_nm == -1224.0
        assert dmap.terminal_ps_nm == pytest.approx(1224.0 - 4 * 184.0)
        assert dmap.residual_at_rx_ps_nm() == pytest.approx(0.0)

    def test_pmd_coefficient_override(self):
        dmap = LinkConfig(n_spans=1, pmd_coef_ps_sqrt_km=0.3).dispersion_map()
        smf = dmap.spans[0].smf
        assert smf.pmd_ps_sqrt_km == 0.3
        assert dmap.spans[0].dcf.pmd_ps_sqrt_km == 0.0

    def test_zero_pmd_gives_identity_realization(self):
        spec = spec_for(pmd_coef=0.0)
        pmd = pmd_for(spec)
        assert pmd.mean_total_dgd_s() == 0.0
        for sections in pmd.sections_per_fiber:
            assert all(s.angles == (0.0, 0.0, 0.0) for s in sections)

    def test_nonzero_pmd_is_deterministic_per_seed(self):
        spec = spec_for(pmd_coef=0.1)
        a, b = pmd_for(spec), pmd_for(spec)
        assert a.mean_total_dgd_s() == b.mean_total_dgd_s()
        assert a.mean_total_dgd_s() > 0


class TestSimulateRun:
    def test_deterministic_given_indices(self):
        spec = spec_for(n_symbols=384)
        pmd = pmd_for(spec)
        rx1, frames1 = simulate_run(spec, 0, "test_run", pmd)
        rx2, frames2 = simulate_run(spec, 0, "test_run", pmd)
        assert np.array_equal(rx1.x, rx2.x)
        assert np.array_equal(frames1[0].symbols_x, frames2[0].symbols_x)

    def test_run_index_changes_data(self):
        spec = spec_for(n_symbols=384)
        pmd = pmd_for(spec)
        rx0, f0 = simulate_run(spec, 0, "test_run", pmd)
        rx1, f1 = simulate_run(spec, 1, "test_run", pmd)
        assert not np.array_equal(f0[0].symbols_x, f1[0].symbols_x)
        assert not np.array_equal(rx0.x, rx1.x)

    def test_splits_draw_different_bits(self):
        spec = spec_for(n_symbols=384)
        pmd = pmd_for(spec)
        _, train_frames = simulate_run(spec, 0, "train_run", pmd)
        _, test_frames = simulate_run(spec, 0, "test_run", pmd)
        assert not np.array_equal(
            train_frames[0].symbols_x, test_frames[0].symbols_x
        )


class TestFrontEnd:
    def test_noiseless_linear_channel_recovers_symbols(self):
        spec = spec_for()
        pmd = pmd_for(spec)
        rx16, frames = simulate_run(spec, 0, "test_run", pmd)
        frame = frames[spec.wdm.center_index]
        front = receiver_front_end(rx16, frame, spec, use_mimo=False)
        assert front.power() == pytest.approx(1.0, rel=1e-12)
        assert front.sample_rate == pytest.approx(2 * spec.wdm.baud)
        sym = front.x[:: 2]
        g = np.vdot(frame.symbols_x, sym) / np.vdot(
            frame.symbols_x, frame.symbols_x
        )
        # skip the shaping-filter edge transients, then the error floor is the
        # truncated tail of the slowly decaying low-rolloff pulse
        err = np.abs(sym / g - frame.symbols_x)[100:-100]
        assert np.max(err) < 2e-2
        assert np.sqrt(np.mean(err**2)) < 5e-3

    def test_front_end_matches_clean_reference(self):
        spec = spec_for()
        pmd = pmd_for(spec)
        rx16, frames = simulate_run(spec, 0, "test_run", pmd)
        frame = frames[spec.wdm.center_index]
        front = receiver_front_end(rx16, frame, spec, use_mimo=False)
        ref = clean_reference(frame, spec.wdm)
        sl = slice(200, -200)
        err = np.sqrt(
            np.mean(np.abs(front.x[sl] - ref.x[sl]) ** 2)
            / np.mean(np.abs(ref.x[sl]) ** 2)
        )
        assert err < 1e-6

    def test_mimo_front_end_untangles_pmd(self):
        spec = spec_for(pmd_coef=0.2)
        pmd = pmd_for(spec)
        rx16, frames = simulate_run(spec, 0, "test_run", pmd)
        frame = frames[spec.wdm.center_index]
        front = receiver_front_end(rx16, frame, spec, use_mimo=True)
        sym = front.x[:: 2][128:-128]
        ref = frame.symbols_x[128:-128]
        g = np.vdot(ref, sym) / np.vdot(ref, ref)
        rms = np.sqrt(np.mean(np.abs(sym / g - ref) ** 2))
        assert rms < 0.05


class TestGenerateDataset:
    def test_degenerate_channel_target_is_crop_of_received(self):
        spec = spec_for(n_symbols=960)
        ds = generate_dataset(spec, 4, purpose="train_run", use_mimo=False)
        assert len(ds) == 4
        margin = (ds.input_len - ds.output_len) // 2
        for i in range(len(ds)):
            crop = ds.rx_x[i][margin : margin + ds.output_len]
            err = np.sqrt(
                np.mean(np.abs(crop - ds.tx_x[i]) ** 2)
                / np.mean(np.abs(ds.tx_x[i]) ** 2)
            )
            assert err < 1e-6

    def test_window_alignment_correlation_peak_at_zero_lag(self):
        spec = spec_for(n_symbols=960)
        ds = generate_dataset(spec, 2, purpose="train_run", use_mimo=False)
        margin = (ds.input_len - ds.output_len) // 2
        crop = ds.rx_x[0][margin : margin + ds.output_len]
        corr = np.abs(
            np.fft.ifft(np.fft.fft(crop) * np.conj(np.fft.fft(ds.tx_x[0])))
        )
        assert np.argmax(corr) == 0

    def test_splits_share_no_windows(self):
        spec = spec_for(n_symbols=960)
        train = generate_dataset(spec, 3, purpose="train_run", use_mimo=False)
        test = generate_dataset(spec, 3, purpose="test_run", use_mimo=False)
        train_rows = {r.tobytes() for r in train.rx_x}
        test_rows = {r.tobytes() for r in test.rx_x}
        assert not train_rows & test_rows

    def test_metadata_records_provenance(self):
        spec = spec_for(n_symbols=960)
        ds = generate_dataset(spec, 2, purpose="val_run", use_mimo=False)
        assert ds.metadata["split"] == "val_run"
        assert ds.metadata["master_seed"] == spec.master_seed
        assert ds.metadata["run_indices"] == [0]
        assert ds.launch_power_dbm == spec.wdm.launch_power_dbm

    def test_failed_sync_drops_run_and_logs(self, monkeypatch, caplog):
        import dm_ldbp.pipeline as pl

        real = pl.synchronize
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 1:
                raise SyncError("no correlation peak")
            return real(*args, **kwargs)

        monkeypatch.setattr(pl, "synchronize", flaky)
        spec = spec_for(n_symbols=960)
        with caplog.at_level(logging.WARNING):
            ds = generate_dataset(spec, 2, purpose="train_run", use_mimo=False)
        assert len(ds) == 2
        assert 0 not in ds.metadata["run_indices"]
        assert any("dropp" in r.message for r in caplog.records)

    def test_too_many_failures_raise(self, monkeypatch):
        import dm_ldbp.pipeline as pl

        def broken(*args, **kwargs):
            raise SyncError("no correlation peak")

        monkeypatch.setattr(pl, "synchronize", broken)
        spec = spec_for(n_symbols=960)
        with pytest.raises(SyncError):
            generate_dataset(spec, 2, purpose="train_run", use_mimo=False)


class TestLdbpRunTiling:
    def test_tiled_model_matches_full_run_dbp(self):
        spec = spec_for(n_spans=4, n_symbols=1344)
        pmd = pmd_for(spec)
        rx16, frames = simulate_run(spec, 0, "test_run", pmd)
        frame = frames[spec.wdm.center_index]
        front = receiver_front_end(rx16, frame, spec, use_mimo=False)
        dmap = spec.link.dispersion_map()
        fs2 = 2 * spec.wdm.baud
        plan_run = build_dbp_plan(
            dmap, 2, spec.wdm.launch_power_dbm, fs2, front.n_samples
        )
        plan_win = build_dbp_plan(dmap, 2, spec.wdm.launch_power_dbm, fs2, 512)
        model = init_from_dbp(plan_win)
        tiled = ldbp_equalize_run(model, front)
        full = dbp_equalize(front, plan_run)
        err = np.sqrt(
            np.mean(np.abs(tiled.x - full.x) ** 2) / np.mean(np.abs(full.x) ** 2)
        )
        # windowed layers see a 512-circular world; the mismatch is the response
        # tail that escapes the 64-sample stitch margin
        assert err < 1e-3

    def test_run_length_must_tile(self):
        spec = spec_for(n_symbols=896)  # 1792 samples, not a multiple of 384
        pmd = pmd_for(spec)
        rx16, frames = simulate_run(spec, 0, "test_run", pmd)
        front = receiver_front_end(
            rx16, frames[spec.wdm.center_index], spec, use_mimo=False
        )
        dmap = spec.link.dispersion_map()
        plan = build_dbp_plan(dmap, 1, -2.0, 2 * spec.wdm.baud, 512)
        model = init_from_dbp(plan)
        with pytest.raises(ParameterError):
            ldbp_equalize_run(model, front)


class TestEvaluateCell:
    def test_dbp_beats_linear_at_high_power(self):
        # +6 dBm: self-phase modulation dominates but stays within reach of a
        # one-step-per-span lumped inverse (coarser help fades beyond ~+7 dBm)
        spec = spec_for(
            n_spans=2, n_symbols=1152, power_dbm=6.0, nonlinearity="cnlse"
        )
        arms = [Arm(kind="linear"), Arm(kind="dbp", m_steps=2)]
        results = evaluate_cell(spec, arms, n_runs=1, guard_symbols=128)
        assert set(results) == {"linear", "dbp2"}
        assert results["dbp2"].ber < results["linear"].ber
        assert results["dbp2"].q_db > results["linear"].q_db

    def test_aggregates_over_runs(self):
        spec = spec_for(
            n_spans=2, n_symbols=576, power_dbm=8.0, nonlinearity="cnlse",
            noise_figure_db=5.0,
        )
        arms = [Arm(kind="linear")]
        results = evaluate_cell(spec, arms, n_runs=2, guard_symbols=96)
        agg = results["linear"]
        assert len(agg.per_run_ber) == 2
        per_run_bits = (576 - 2 * 96) * 2 * 4
        assert agg.n_bits == 2 * per_run_bits
        again = evaluate_cell(spec, arms, n_runs=2, guard_symbols=96)
        assert again["linear"].ber == agg.ber

    def test_pmd_aware_arm_inverts_linear_pmd_channel(self):
        spec = spec_for(n_spans=2, n_symbols=576, pmd_coef=0.5)
        arms = [Arm(kind="pmd_aware_dbp", m_steps=2), Arm(kind="linear")]
        results = evaluate_cell(spec, arms, n_runs=1, guard_symbols=96)
        assert results["pmd_aware_dbp2"].ber == 0.0
        assert results["pmd_aware_dbp2"].q_db >= results["linear"].q_db

    def test_ldbp_arm_uses_model(self):
        spec = spec_for(n_spans=2, n_symbols=1152, power_dbm=6.0, nonlinearity="cnlse")
        dmap = spec.link.dispersion_map()
        plan = build_dbp_plan(dmap, 2, 6.0, 2 * spec.wdm.baud, 512)
        model = init_from_dbp(plan)
        arms = [Arm(kind="ldbp", model=model), Arm(kind="dbp", m_steps=2)]
        results = evaluate_cell(spec, arms, n_runs=1, guard_symbols=128)
        # initialized straight from the plan, the model matches its DBP twin
        assert results["ldbp"].ber == pytest.approx(results["dbp2"].ber, abs=2e-3)

    def test_equalized_symbols_land_on_grid(self):
        spec = spec_for(n_spans=2, n_symbols=576)
        sx, sy = equalized_symbols(
            spec, Arm(kind="linear"), 200, guard_symbols=128
        )
        assert sx.shape == (200,) and sy.shape == (200,)
        _, frames = simulate_run(spec, 0, "test_run", pmd_for(spec))
        ref = frames[0].symbols_x[128:328]
        assert np.sqrt(np.mean(np.abs(sx - ref) ** 2)) < 0.05

    def test_equalized_symbols_clamps_to_interior(self):
        spec = spec_for(n_spans=2, n_symbols=576)
        sx, _ = equalized_symbols(
            spec, Arm(kind="linear"), 10**6, guard_symbols=128
        )
        assert sx.shape == (576 - 256,)
