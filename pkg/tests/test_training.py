"""Training loop, dataset container and IO, validation metrics."""

import json

import numpy as np
import pytest
from conftest import circular_rc_field, random_qam_symbols

from dm_ldbp.errors import ConfigError, NumericalError, ParameterError
from dm_ldbp.field import DualPolField
from dm_ldbp.ldbp import LdbpLayer, LdbpModel, ldbp_forward
from dm_ldbp.link import apply_dispersion
from dm_ldbp.training import (
    Dataset,
    TrainConfig,
    frame_from_targets,
    load_dataset,
    save_dataset,
    train,
    validation_q,
)

BAUD = 32e9
FS = 2 * BAUD


def make_dataset(seed, n_windows=6, input_len=256, output_len=192, distort_ps_nm=0.0):
    """Windows cut from one circular RC run; received = dispersed clean run."""
    rng = np.random.default_rng(seed)
    stride = input_len
    guard = 64
    n_samples = guard * 2 + n_windows * stride + input_len
    n_sym = n_samples // 2
    clean = circular_rc_field(
        random_qam_symbols(rng, n_sym), random_qam_symbols(rng, n_sym), 2, BAUD
    )
    clean = clean.scaled(1.0 / np.sqrt(clean.power()))
    rx = apply_dispersion(clean, distort_ps_nm) if distort_ps_nm else clean
    margin = (input_len - output_len) // 2
    rx_x, rx_y, tx_x, tx_y = [], [], [], []
    for w in range(n_windows):
        a = guard + w * stride
        rx_x.append(rx.x[a : a + input_len])
        rx_y.append(rx.y[a : a + input_len])
        tx_x.append(clean.x[a + margin : a + margin + output_len])
        tx_y.append(clean.y[a + margin : a + margin + output_len])
    return Dataset(
        rx_x=np.array(rx_x),
        rx_y=np.array(rx_y),
        tx_x=np.array(tx_x),
        tx_y=np.array(tx_y),
        sample_rate=FS,
        launch_power_dbm=-2.0,
        metadata={"seed": seed, "split": "train"},
    )


def small_model(input_len=256, output_len=192, n_taps=17, gamma=0.0):
    layers = []
    for i in range(2):
        taps = np.zeros(n_taps, dtype=np.complex128)
        taps[(n_taps - 1) // 2] = 1.0
        last = i == 1
        layers.append(
            LdbpLayer(
                taps=taps,
                gamma_bar=0.0 if last else gamma,
                delta_km=0.0 if last else 20.0,
                power_scale_w=0.0 if last else 1e-3,
            )
        )
    return LdbpModel(
        layers=layers,
        input_len=input_len,
        output_len=output_len,
        sample_rate=FS,
        launch_power_dbm=-2.0,
    )


class TestTrainConfig:
    def test_defaults_are_valid(self):
        TrainConfig().validate()

    def test_rejects_unknown_optimizer(self):
        with pytest.raises(ConfigError):
            TrainConfig(optimizer="lbfgs").validate()

    def test_rejects_unknown_loss(self):
        with pytest.raises(ConfigError):
            TrainConfig(loss="crossentropy").validate()

    def test_rejects_bad_batch_size(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0).validate()

    def test_rejects_negative_learning_rate(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=-1e-4).validate()

    def test_zero_learning_rate_is_allowed(self):
        TrainConfig(learning_rate=0.0).validate()


class TestDatasetIo:
    def test_round_trip_is_bit_exact(self, tmp_path):
        ds = make_dataset(0, n_windows=3)
        path = tmp_path / "train.dmld"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert np.array_equal(back.rx_x, ds.rx_x)
        assert np.array_equal(back.rx_y, ds.rx_y)
        assert np.array_equal(back.tx_x, ds.tx_x)
        assert np.array_equal(back.tx_y, ds.tx_y)
        assert back.sample_rate == ds.sample_rate
        assert back.launch_power_dbm == ds.launch_power_dbm
        assert back.metadata["seed"] == 0

    def test_manifest_is_written_alongside(self, tmp_path):
        ds = make_dataset(1, n_windows=2)
        path = tmp_path / "train.dmld"
        save_dataset(ds, path)
        manifest = json.loads((tmp_path / "train.dmld.json").read_text())
        assert manifest["count"] == 2
        assert manifest["input_len"] == 256
        assert manifest["output_len"] == 192
        assert manifest["metadata"]["split"] == "train"

    def test_corrupt_magic_rejected(self, tmp_path):
        ds = make_dataset(2, n_windows=2)
        path = tmp_path / "train.dmld"
        save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(ConfigError):
            load_dataset(path)

    def test_truncated_file_rejected(self, tmp_path):
        ds = make_dataset(3, n_windows=2)
        path = tmp_path / "train.dmld"
        save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(ConfigError):
            load_dataset(path)

    def test_subset_selects_windows(self):
        ds = make_dataset(4, n_windows=5)
        sub = ds.subset([0, 3])
        assert len(sub) == 2
        assert np.array_equal(sub.rx_x[1], ds.rx_x[3])

    def test_mismatched_shapes_rejected(self):
        ds = make_dataset(5, n_windows=2)
        with pytest.raises(ParameterError):
            Dataset(
                rx_x=ds.rx_x,
                rx_y=ds.rx_y[:1],
                tx_x=ds.tx_x,
                tx_y=ds.tx_y,
                sample_rate=FS,
                launch_power_dbm=-2.0,
            ).validate()


class TestFrameFromTargets:
    def test_recovers_exact_bits_from_clean_waveform(self):
        rng = np.random.default_rng(6)
        sx = random_qam_symbols(rng, 400)
        sy = random_qam_symbols(rng, 400)
        # arbitrary positive scale, as left by run-level power normalization
        frame = frame_from_targets(0.731 * sx, 0.731 * sy, BAUD)
        assert np.allclose(frame.symbols_x, sx, atol=1e-12)
        assert np.allclose(frame.symbols_y, sy, atol=1e-12)


class TestValidationQ:
    def test_clean_dataset_identity_model_gives_error_free_q(self):
        ds = make_dataset(7, n_windows=4)
        model = small_model()
        q, ber = validation_q(model, ds)
        assert ber == 0.0
        assert q > 10.0

    def test_distortion_lowers_q(self):
        clean = make_dataset(8, n_windows=4)
        distorted = make_dataset(8, n_windows=4, distort_ps_nm=120.0)
        model = small_model()
        q_clean, _ = validation_q(model, clean)
        q_dist, ber_dist = validation_q(model, distorted)
        assert ber_dist > 0.0
        assert q_dist < q_clean


class TestTrain:
    def test_zero_learning_rate_leaves_model_bit_exact(self):
        ds = make_dataset(9, n_windows=4, distort_ps_nm=20.0)
        model = small_model()
        before = [layer.taps.copy() for layer in model.layers]
        cfg = TrainConfig(learning_rate=0.0, batch_size=2, epochs=3, seed=1)
        result = train(model, ds, cfg)
        for layer, taps in zip(result.final_model.layers, before):
            assert np.array_equal(layer.taps, taps)
        assert np.allclose(result.loss_trace, result.loss_trace[0], rtol=1e-12)
        assert result.best_epoch == 0

    def test_input_model_is_not_mutated(self):
        ds = make_dataset(10, n_windows=4, distort_ps_nm=20.0)
        model = small_model()
        before = [layer.taps.copy() for layer in model.layers]
        train(model, ds, TrainConfig(learning_rate=1e-3, batch_size=2, epochs=2, seed=2))
        for layer, taps in zip(model.layers, before):
            assert np.array_equal(layer.taps, taps)

    def test_loss_decreases_on_realizable_linear_target(self):
        ds = make_dataset(11, n_windows=6, distort_ps_nm=30.0)
        model = small_model(n_taps=33)
        cfg = TrainConfig(
            optimizer="adam", learning_rate=2e-3, batch_size=2, epochs=8, seed=3
        )
        result = train(model, ds, cfg)
        assert result.loss_trace[-1] < result.loss_trace[0]
        assert result.loss_trace[-1] <= min(result.loss_trace) * 1.5

    def test_training_improves_validation_q_on_distorted_channel(self):
        train_ds = make_dataset(12, n_windows=8, distort_ps_nm=120.0)
        val_ds = make_dataset(13, n_windows=4, distort_ps_nm=120.0)
        model = small_model(n_taps=33)
        cfg = TrainConfig(
            optimizer="adam", learning_rate=5e-3, batch_size=2, epochs=8, seed=4
        )
        result = train(model, train_ds, cfg, val_dataset=val_ds)
        assert len(result.val_q_trace) == cfg.epochs + 1
        assert max(result.val_q_trace) > result.val_q_trace[0]
        assert result.val_q_trace[result.best_epoch] == max(result.val_q_trace)
        # the returned model reproduces its recorded validation Q
        q, _ = validation_q(result.model, val_ds)
        assert q == pytest.approx(result.val_q_trace[result.best_epoch], abs=1e-12)

    def test_determinism_bitwise(self):
        ds = make_dataset(14, n_windows=6, distort_ps_nm=25.0)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=2, epochs=3, seed=5)
        r1 = train(small_model(n_taps=21), ds, cfg)
        r2 = train(small_model(n_taps=21), ds, cfg)
        for a, b in zip(r1.final_model.layers, r2.final_model.layers):
            assert np.array_equal(a.taps, b.taps)
            assert a.gamma_bar == b.gamma_bar
        assert r1.loss_trace == r2.loss_trace

    def test_divergence_aborts_with_diagnostic(self):
        ds = make_dataset(15, n_windows=4, distort_ps_nm=30.0)
        model = small_model(n_taps=17, gamma=1.5)
        cfg = TrainConfig(
            optimizer="sgd", learning_rate=1e12, batch_size=2, epochs=50, seed=6
        )
        with pytest.raises(NumericalError, match="learning rate"):
            train(model, ds, cfg)

    def test_freeze_gamma_keeps_gamma_fixed(self):
        ds = make_dataset(16, n_windows=4, distort_ps_nm=20.0)
        model = small_model(gamma=1.5)
        cfg = TrainConfig(
            learning_rate=1e-3, batch_size=2, epochs=3, seed=7, freeze_gamma=True
        )
        result = train(model, ds, cfg)
        assert result.final_model.layers[0].gamma_bar == 1.5
        assert not np.array_equal(result.final_model.layers[0].taps, model.layers[0].taps)

    def test_gamma_moves_when_not_frozen(self):
        ds = make_dataset(17, n_windows=4, distort_ps_nm=20.0)
        # power high enough that the activation influences the loss
        model = small_model(gamma=1.5)
        for layer in model.layers[:-1]:
            layer.power_scale_w = 0.05
        cfg = TrainConfig(learning_rate=1e-3, batch_size=2, epochs=3, seed=8)
        result = train(model, ds, cfg)
        assert result.final_model.layers[0].gamma_bar != 1.5

    def test_tie_gamma_keeps_active_layers_shared(self):
        ds = make_dataset(18, n_windows=4, distort_ps_nm=20.0)
        model = small_model(input_len=256, output_len=192, n_taps=17, gamma=1.2)
        extra = LdbpLayer(
            taps=model.layers[0].taps.copy(),
            gamma_bar=1.2,
            delta_km=15.0,
            power_scale_w=0.05,
        )
        model.layers.insert(1, extra)
        for layer in model.layers[:-1]:
            layer.power_scale_w = 0.05
        cfg = TrainConfig(learning_rate=1e-3, batch_size=2, epochs=3, seed=9, tie_gamma=True)
        result = train(model, ds, cfg)
        gammas = [layer.gamma_bar for layer in result.final_model.layers[:-1]]
        assert gammas[0] == gammas[1]
        assert gammas[0] != 1.2

    def test_symbol_domain_loss_trains(self):
        ds = make_dataset(19, n_windows=6, distort_ps_nm=30.0)
        model = small_model(n_taps=33)
        cfg = TrainConfig(
            learning_rate=2e-3, batch_size=2, epochs=6, seed=10, loss="mse_symbols"
        )
        result = train(model, ds, cfg)
        assert all(np.isfinite(result.loss_trace))
        assert result.loss_trace[-1] < result.loss_trace[0]

    def test_empty_dataset_rejected(self):
        ds = make_dataset(20, n_windows=2)
        with pytest.raises(ParameterError):
            train(small_model(), ds.subset([]), TrainConfig())
