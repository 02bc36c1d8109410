"""Dataset container, binary dataset IO, and the mini-batch training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError, ParameterError
from .ldbp import (
    LdbpModel,
    clone_model,
    ldbp_backward,
    ldbp_forward,
    mse_loss,
    mse_loss_grad,
)
from .optimizers import AdamOptimizer, SgdOptimizer
from .rng import rng_for
from .transceiver import SymbolFrame, measure, qam16_demodulate, qam16_modulate

_DATASET_MAGIC = b"DMLDBP01"
_DATASET_VERSION = 1

_OPTIMIZERS = ("adam", "sgd")
_LOSSES = ("mse_waveform", "mse_symbols")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    loss: str = "mse_waveform"
    freeze_gamma: bool = False
    tie_gamma: bool = False

    def validate(self) -> "TrainConfig":
        if self.optimizer not in _OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {_OPTIMIZERS}")
        if self.loss not in _LOSSES:
            raise ConfigError(f"loss must be one of {_LOSSES}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        return self


@dataclass
class Dataset:
    """Aligned window pairs: received at 2 sps and the clean target waveform.

    Every even-indexed sample of a target window is a symbol instant; the
    received window extends the target symmetrically on both sides.
    """

    rx_x: np.ndarray  # (count, input_len) complex128
    rx_y: np.ndarray
    tx_x: np.ndarray  # (count, output_len) complex128
    tx_y: np.ndarray
    sample_rate: float
    launch_power_dbm: float
    sps: int = 2
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.rx_x.shape[0]

    @property
    def input_len(self) -> int:
        return self.rx_x.shape[1]

    @property
    def output_len(self) -> int:
        return self.tx_x.shape[1]

    @property
    def baud(self) -> float:
        return self.sample_rate / self.sps

    def validate(self) -> "Dataset":
        arrays = (self.rx_x, self.rx_y, self.tx_x, self.tx_y)
        if any(a.ndim != 2 for a in arrays):
            raise ParameterError("dataset arrays must be 2-D (window, sample)")
        n = self.rx_x.shape[0]
        if any(a.shape[0] != n for a in arrays):
            raise ParameterError("dataset arrays disagree on window count")
        if self.rx_y.shape != self.rx_x.shape or self.tx_y.shape != self.tx_x.shape:
            raise ParameterError("polarization arrays disagree on shape")
        if self.tx_x.shape[1] > self.rx_x.shape[1]:
            raise ParameterError("target windows longer than received windows")
        if (self.rx_x.shape[1] - self.tx_x.shape[1]) % 2:
            raise ParameterError("received/target length difference must be even")
        if self.sps < 1:
            raise ParameterError("sps must be at least 1")
        if self.sample_rate <= 0:
            raise ParameterError("sample_rate must be positive")
        return self

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            rx_x=self.rx_x[idx],
            rx_y=self.rx_y[idx],
            tx_x=self.tx_x[idx],
            tx_y=self.tx_y[idx],
            sample_rate=self.sample_rate,
            launch_power_dbm=self.launch_power_dbm,
            sps=self.sps,
            metadata=dict(self.metadata),
        )


def _dataset_header(ds: Dataset) -> dict:
    return {
        "version": _DATASET_VERSION,
        "count": len(ds),
        "input_len": ds.input_len,
        "output_len": ds.output_len,
        "sps": ds.sps,
        "sample_rate": ds.sample_rate,
        "launch_power_dbm": ds.launch_power_dbm,
        "metadata": ds.metadata,
    }


def save_dataset(ds: Dataset, path) -> None:
    """Write magic + JSON header + raw little-endian complex128 arrays.

    A human-readable manifest with the same header lands next to the file.
    """
    ds.validate()
    path = Path(path)
    header = json.dumps(_dataset_header(ds), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(np.uint64(len(header)).tobytes())
        fh.write(header)
        for arr in (ds.rx_x, ds.rx_y, ds.tx_x, ds.tx_y):
            fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    manifest = dict(_dataset_header(ds), format="dm-ldbp-dataset")
    Path(str(path) + ".json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if raw[:8] != _DATASET_MAGIC:
        raise ConfigError(f"{path} is not a dataset file (bad magic)")
    header_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    try:
        header = json.loads(raw[16 : 16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"corrupt dataset header in {path}: {exc}") from exc
    if header.get("version") != _DATASET_VERSION:
        raise ConfigError(f"unsupported dataset version in {path}")
    count = int(header["count"])
    n_in = int(header["input_len"])
    n_out = int(header["output_len"])
    body = raw[16 + header_len :]
    expected = count * (2 * n_in + 2 * n_out) * 16
    if len(body) != expected:
        raise ConfigError(
            f"dataset payload in {path} is {len(body)} bytes, expected {expected}"
        )
    flat = np.frombuffer(body, dtype="<c16")
    pos = 0
    arrays = []
    for width in (n_in, n_in, n_out, n_out):
        arrays.append(flat[pos : pos + count * width].reshape(count, width).copy())
        pos += count * width
    return Dataset(
        rx_x=arrays[0],
        rx_y=arrays[1],
        tx_x=arrays[2],
        tx_y=arrays[3],
        sample_rate=float(header["sample_rate"]),
        launch_power_dbm=float(header["launch_power_dbm"]),
        sps=int(header["sps"]),
        metadata=header.get("metadata", {}),
    ).validate()


def frame_from_targets(sym_x: np.ndarray, sym_y: np.ndarray, baud: float) -> SymbolFrame:
    """Reconstruct the transmitted frame from clean target symbol samples.

    Targets are noise-free waveforms, so after removing the run-level power
    scale the nearest-constellation decision recovers the exact bits.
    """
    out = []
    for sym in (sym_x, sym_y):
        scale = np.sqrt(np.mean(np.abs(sym) ** 2))
        if scale == 0:
            raise ParameterError("target polarization is identically zero")
        bits = qam16_demodulate(sym / scale)
        out.append((bits, qam16_modulate(bits)))
    return SymbolFrame(out[0][0], out[1][0], out[0][1], out[1][1], baud)


def validation_q(
    model: LdbpModel, ds: Dataset, batch_size: int = 64
) -> tuple[float, float]:
    """Q factor (dB) and BER of the model's symbol decisions over a dataset."""
    ds.validate()
    if len(ds) == 0:
        raise ParameterError("validation dataset is empty")
    if ds.input_len != model.input_len or ds.output_len != model.output_len:
        raise ParameterError("dataset window geometry does not match the model")
    outs_x, outs_y = [], []
    for b0 in range(0, len(ds), batch_size):
        sl = slice(b0, b0 + batch_size)
        ox, oy, _ = ldbp_forward(model, ds.rx_x[sl], ds.rx_y[sl])
        outs_x.append(ox[:, :: ds.sps].ravel())
        outs_y.append(oy[:, :: ds.sps].ravel())
    out_x = np.concatenate(outs_x)
    out_y = np.concatenate(outs_y)
    frame = frame_from_targets(
        ds.tx_x[:, :: ds.sps].ravel(), ds.tx_y[:, :: ds.sps].ravel(), ds.baud
    )
    metrics = measure(out_x, out_y, frame)
    return metrics.q_db, metrics.ber


def validation_loss(model: LdbpModel, ds: Dataset, batch_size: int = 64) -> float:
    """Mean waveform MSE of the model over a dataset (no gradient work)."""
    ds.validate()
    if len(ds) == 0:
        raise ParameterError("validation dataset is empty")
    if ds.input_len != model.input_len or ds.output_len != model.output_len:
        raise ParameterError("dataset window geometry does not match the model")
    total = 0.0
    count = 0
    for b0 in range(0, len(ds), batch_size):
        sl = slice(b0, b0 + batch_size)
        ox, oy, _ = ldbp_forward(model, ds.rx_x[sl], ds.rx_y[sl])
        b = ox.shape[0]
        total += b * mse_loss(ox, oy, ds.tx_x[sl], ds.tx_y[sl])
        count += b
    return total / count


@dataclass
class TrainResult:
    model: LdbpModel  # best-validation snapshot (epoch 0 = initialization)
    final_model: LdbpModel
    loss_trace: list[float]  # per-epoch mean training loss
    val_q_trace: list[float]  # epochs + 1 entries; [0] is the initial model
    val_loss_trace: list[float]  # epochs + 1 entries, same convention
    best_epoch: int
    best_val_q: float


def _register_params(model: LdbpModel, cfg: TrainConfig):
    """Float64 views for the optimizer plus write-back slots for gamma."""
    params: dict[str, np.ndarray] = {}
    for i, layer in enumerate(model.layers):
        params[f"layer{i}.taps"] = layer.taps.view(np.float64)
        if layer.taps_y is not None:
            params[f"layer{i}.taps_y"] = layer.taps_y.view(np.float64)
    gamma_slots: list[tuple[str, list[int]]] = []
    active = [i for i, layer in enumerate(model.layers) if not layer.is_linear()]
    if not cfg.freeze_gamma and active:
        if cfg.tie_gamma:
            shared = np.array([model.layers[active[0]].gamma_bar])
            for i in active:
                model.layers[i].gamma_bar = float(shared[0])
            params["gamma_bar"] = shared
            gamma_slots.append(("gamma_bar", active))
        else:
            for i in active:
                params[f"layer{i}.gamma_bar"] = np.array([model.layers[i].gamma_bar])
                gamma_slots.append((f"layer{i}.gamma_bar", [i]))
    return params, gamma_slots


def train(
    model: LdbpModel,
    dataset: Dataset,
    cfg: TrainConfig,
    val_dataset: Dataset | None = None,
) -> TrainResult:
    """Deterministic mini-batch training; returns the best-validation model.

    Validation Q is recorded before the first epoch and after every epoch, so
    a model that training never improves is returned at its initialization.
    The input model is never mutated.
    """
    cfg.validate()
    dataset.validate()
    if len(dataset) == 0:
        raise ParameterError("training dataset is empty")
    if dataset.input_len != model.input_len or dataset.output_len != model.output_len:
        raise ParameterError("dataset window geometry does not match the model")
    val_ds = dataset if val_dataset is None else val_dataset

    work = clone_model(model)
    params, gamma_slots = _register_params(work, cfg)
    if cfg.optimizer == "adam":
        opt = AdamOptimizer(params, learning_rate=cfg.learning_rate)
    else:
        opt = SgdOptimizer(params, learning_rate=cfg.learning_rate)
    rng = rng_for(cfg.seed, "train_shuffle")

    q0, _ = validation_q(work, val_ds)
    val_q_trace = [q0]
    val_loss_trace = [validation_loss(work, val_ds)]
    best = clone_model(work)
    best_epoch, best_q = 0, q0
    loss_trace: list[float] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            xb, yb = dataset.rx_x[idx], dataset.rx_y[idx]
            tx, ty = dataset.tx_x[idx], dataset.tx_y[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                loss = _train_batch(work, cfg, dataset, xb, yb, tx, ty, opt, gamma_slots, params)
            if not np.isfinite(loss) or not _params_finite(params):
                raise NumericalError(
                    f"training diverged at epoch {epoch + 1},"
                    f" batch {b0 // cfg.batch_size}: loss {loss!r} and/or"
                    f" parameters overflowed; the learning rate"
                    f" ({cfg.learning_rate:g}) is likely too large for this data"
                )
            epoch_losses.append(loss)
        loss_trace.append(float(np.mean(epoch_losses)))
        q, _ = validation_q(work, val_ds)
        val_q_trace.append(q)
        val_loss_trace.append(validation_loss(work, val_ds))
        if q > best_q:
            best, best_epoch, best_q = clone_model(work), epoch + 1, q

    return TrainResult(
        model=best,
        final_model=work,
        loss_trace=loss_trace,
        val_q_trace=val_q_trace,
        val_loss_trace=val_loss_trace,
        best_epoch=best_epoch,
        best_val_q=best_q,
    )


def _params_finite(params: dict[str, np.ndarray]) -> bool:
    return all(np.all(np.isfinite(p)) for p in params.values())


def _train_batch(work, cfg, dataset, xb, yb, tx, ty, opt, gamma_slots, params) -> float:
    ox, oy, cache = ldbp_forward(work, xb, yb)
    if cfg.loss == "mse_waveform":
        loss = mse_loss(ox, oy, tx, ty)
        gx, gy = mse_loss_grad(ox, oy, tx, ty)
    else:  # symbol-domain MSE: decimate, gradients zero off-symbol
        dec = slice(None, None, dataset.sps)
        loss = mse_loss(ox[:, dec], oy[:, dec], tx[:, dec], ty[:, dec])
        gsx, gsy = mse_loss_grad(ox[:, dec], oy[:, dec], tx[:, dec], ty[:, dec])
        gx = np.zeros_like(ox)
        gy = np.zeros_like(oy)
        gx[:, dec] = gsx
        gy[:, dec] = gsy
    if not np.isfinite(loss):
        return loss  # caller raises with context
    grads = ldbp_backward(work, cache, gx, gy)
    gd: dict[str, np.ndarray] = {}
    for i, layer in enumerate(work.layers):
        gd[f"layer{i}.taps"] = (2.0 * grads.taps[i]).view(np.float64)
        if layer.taps_y is not None:
            gd[f"layer{i}.taps_y"] = (2.0 * grads.taps_y[i]).view(np.float64)
    for name, members in gamma_slots:
        gd[name] = np.array([sum(grads.gamma_bar[j] for j in members)])
    opt.step(gd)
    for name, members in gamma_slots:
        for j in members:
            work.layers[j].gamma_bar = float(params[name][0])
    return loss
