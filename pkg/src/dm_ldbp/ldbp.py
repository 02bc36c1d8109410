"""Learned digital back-propagation model.

The model alternates complex-valued circular FIR layers with a Kerr phase
activation, mirroring the step structure of a back-propagation plan: M
nonlinear steps become M filter+activation pairs plus one trailing filter,
so a model built from a plan starts out numerically identical to running
the plan and every parameter is then free to move.

All gradients are derived by hand in Wirtinger calculus.  For a real loss
L and a complex parameter w, the value propagated everywhere below is
lambda(w) = dL/dw*; the steepest-descent update over the (Re, Im) pair is
then (2 Re lambda, 2 Im lambda).  Real parameters (the per-layer
nonlinearity coefficient) carry plain real derivatives.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dbp import DbpPlan
from .errors import ConfigError, ParameterError

_CHECKPOINT_FORMAT = "dm-ldbp-model"
_CHECKPOINT_VERSION = 1

_MANAKOV_FACTOR = 8.0 / 9.0


@dataclass
class LdbpLayer:
    """One convolutional layer with an optional Kerr activation after it.

    taps          -- centered complex FIR taps shared by both polarizations
                     (or the X taps when ``taps_y`` is set)
    gamma_bar     -- trainable nonlinearity coefficient in 1/(W km)
    delta_km      -- nonlinear step length in km; 0 marks a purely linear layer
    power_scale_w -- entry power of the step in watts (per unit of normalized
                     waveform power), absorbed into the activation coefficient
    taps_y        -- separate Y-polarization taps; None ties both to ``taps``
    """

    taps: np.ndarray
    gamma_bar: float
    delta_km: float
    power_scale_w: float
    taps_y: np.ndarray | None = None

    def kerr_coefficient(self) -> float:
        """Phase radians per unit normalized power, entering as exp(-1j c s)."""
        return _MANAKOV_FACTOR * self.gamma_bar * self.delta_km * self.power_scale_w

    def is_linear(self) -> bool:
        """True when the activation is structurally inert (not just gamma=0)."""
        return self.delta_km * self.power_scale_w == 0.0


@dataclass
class LdbpModel:
    layers: list[LdbpLayer]
    input_len: int
    output_len: int
    sample_rate: float
    launch_power_dbm: float
    metadata: dict = field(default_factory=dict)

    @property
    def m_steps(self) -> int:
        return len(self.layers) - 1

    @property
    def n_convolutions(self) -> int:
        return len(self.layers)

    def parameter_count(self) -> int:
        n = 0
        for layer in self.layers:
            n += 2 * layer.taps.size + 1
            if layer.taps_y is not None:
                n += 2 * layer.taps_y.size
        return n

    def validate(self) -> None:
        if not self.layers:
            raise ParameterError("model needs at least one layer")
        if self.input_len <= 0 or self.output_len <= 0:
            raise ParameterError("window lengths must be positive")
        if self.output_len > self.input_len:
            raise ParameterError(
                f"output_len {self.output_len} exceeds input_len {self.input_len}"
            )
        if (self.input_len - self.output_len) % 2:
            raise ParameterError("input/output length difference must be even")
        for i, layer in enumerate(self.layers):
            for name, taps in (("taps", layer.taps), ("taps_y", layer.taps_y)):
                if taps is None:
                    continue
                if taps.ndim != 1 or taps.size == 0:
                    raise ParameterError(f"layer {i} {name} must be a 1-D array")
                if taps.size > self.input_len:
                    raise ParameterError(
                        f"layer {i} {name} longer than the input window"
                    )
                if taps.size % 2 == 0 and taps.size != self.input_len:
                    raise ParameterError(
                        f"layer {i} {name} must have odd length unless it spans "
                        f"the full window ({taps.size} vs {self.input_len})"
                    )
            if layer.delta_km < 0:
                raise ParameterError(f"layer {i} has negative delta_km")
            if not np.isfinite(layer.gamma_bar):
                raise ParameterError(f"layer {i} gamma_bar is not finite")


@dataclass
class LdbpGradients:
    """Wirtinger gradients dL/dw* per layer; gamma_bar carries dL/dgamma."""

    taps: list[np.ndarray]
    taps_y: list[np.ndarray | None]
    gamma_bar: np.ndarray


def kerr_activation(
    x: np.ndarray,
    y: np.ndarray,
    gamma_bar: float,
    delta_km: float,
    power_scale_w: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Joint-power phase de-rotation exp(-1j c (|x|^2 + |y|^2)) on both pols.

    With c = (8/9) gamma_bar delta power_scale this is exactly one nonlinear
    step of Manakov back-propagation on unit-power-normalized waveforms.
    Returns the inputs unchanged when the coefficient is zero.
    """
    c = _MANAKOV_FACTOR * gamma_bar * delta_km * power_scale_w
    if c == 0.0:
        return x, y
    rot = np.exp(-1j * c * (np.abs(x) ** 2 + np.abs(y) ** 2))
    return x * rot, y * rot


def _tap_indices(n_taps: int, n_fft: int) -> np.ndarray:
    """Circular positions of centered taps: tap j sits at (j - c0) mod N."""
    c0 = (n_taps - 1) // 2
    return (np.arange(n_taps) - c0) % n_fft


def _embed_taps(taps: np.ndarray, n_fft: int) -> np.ndarray:
    kern = np.zeros(n_fft, dtype=np.complex128)
    kern[_tap_indices(taps.size, n_fft)] = taps
    return kern


def ldbp_forward(
    model: LdbpModel, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Run a batch through the model.

    x, y  -- complex arrays of shape (batch, input_len)
    Returns the centrally cropped outputs of shape (batch, output_len) and
    the cache of intermediates consumed by ldbp_backward.
    """
    model.validate()
    x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    y = np.atleast_2d(np.asarray(y, dtype=np.complex128))
    n = model.input_len
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != n:
        raise ParameterError(
            f"expected matching (batch, {n}) inputs, got {x.shape} and {y.shape}"
        )

    records = []
    for layer in model.layers:
        x_f = np.fft.fft(x, axis=-1)
        y_f = np.fft.fft(y, axis=-1)
        kern_f = np.fft.fft(_embed_taps(layer.taps, n))
        kern_f_y = kern_f if layer.taps_y is None else np.fft.fft(
            _embed_taps(layer.taps_y, n)
        )
        u = np.fft.ifft(x_f * kern_f, axis=-1)
        v = np.fft.ifft(y_f * kern_f_y, axis=-1)
        if layer.is_linear():
            rot = None
            x, y = u, v
        else:
            c = layer.kerr_coefficient()
            rot = np.exp(-1j * c * (np.abs(u) ** 2 + np.abs(v) ** 2))
            x, y = u * rot, v * rot
        records.append(
            {"x_f": x_f, "y_f": y_f, "kern_f": kern_f, "kern_f_y": kern_f_y,
             "u": u, "v": v, "rot": rot}
        )

    start = (n - model.output_len) // 2
    stop = start + model.output_len
    cache = {"records": records, "batch": x.shape[0], "n": n, "start": start}
    return x[:, start:stop].copy(), y[:, start:stop].copy(), cache


def mse_loss(
    out_x: np.ndarray, out_y: np.ndarray, tgt_x: np.ndarray, tgt_y: np.ndarray
) -> float:
    """Mean |error|^2 over every complex sample of both polarizations."""
    if out_x.shape != tgt_x.shape or out_y.shape != tgt_y.shape:
        raise ParameterError("output/target shapes differ")
    k = out_x.size + out_y.size
    return float(
        (np.sum(np.abs(out_x - tgt_x) ** 2) + np.sum(np.abs(out_y - tgt_y) ** 2)) / k
    )


def mse_loss_grad(
    out_x: np.ndarray, out_y: np.ndarray, tgt_x: np.ndarray, tgt_y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """dL/d(output*) for the mean-squared-error loss: (out - tgt) / K."""
    if out_x.shape != tgt_x.shape or out_y.shape != tgt_y.shape:
        raise ParameterError("output/target shapes differ")
    k = out_x.size + out_y.size
    return (out_x - tgt_x) / k, (out_y - tgt_y) / k


def ldbp_backward(
    model: LdbpModel, cache: dict, grad_x: np.ndarray, grad_y: np.ndarray
) -> LdbpGradients:
    """Back-propagate dL/d(output*) through the cached forward pass.

    Per layer, with U, V the filter outputs, theta = -c (|U|^2 + |V|^2),
    P = U e^{j theta}, and r = lambda(P) e^{-j theta}, s = lambda(Q) e^{-j theta}:

        lambda(U) = r (1 + j c |U|^2) - j c U^2 conj(r)
                    + j c U conj(V) s - j c U V conj(s)

    (V symmetric, swapping U<->V and r<->s), then through the convolution

        lambda(X) = IFFT(conj(H) FFT(lambda(U)))
        dL/dh_k*  = sum_batch IFFT(FFT(lambda(U)) conj(FFT(X)))[k]

    and dL/dgamma = sum 2 theta' Im{lambda(P) conj(P)} with
    theta' = -(8/9) delta power_scale (|U|^2 + |V|^2).
    """
    if not isinstance(cache, dict) or "records" not in cache:
        raise ParameterError("backward needs the cache produced by ldbp_forward")
    records = cache["records"]
    if len(records) != len(model.layers):
        raise ParameterError("cache does not match this model")
    n = cache["n"]
    batch = cache["batch"]
    start = cache["start"]
    grad_x = np.asarray(grad_x, dtype=np.complex128)
    grad_y = np.asarray(grad_y, dtype=np.complex128)
    if grad_x.shape != (batch, model.output_len) or grad_y.shape != grad_x.shape:
        raise ParameterError("loss gradient shape does not match the cached batch")

    lp = np.zeros((batch, n), dtype=np.complex128)
    lq = np.zeros((batch, n), dtype=np.complex128)
    lp[:, start : start + model.output_len] = grad_x
    lq[:, start : start + model.output_len] = grad_y

    g_taps: list[np.ndarray] = [None] * len(model.layers)
    g_taps_y: list[np.ndarray | None] = [None] * len(model.layers)
    g_gamma = np.zeros(len(model.layers))

    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        rec = records[li]
        u, v, rot = rec["u"], rec["v"], rec["rot"]
        if rot is None:
            lu, lv = lp, lq
        else:
            c = layer.kerr_coefficient()
            p, q = u * rot, v * rot
            r = lp * np.conj(rot)
            s = lq * np.conj(rot)
            power = np.abs(u) ** 2 + np.abs(v) ** 2
            theta_prime = -_MANAKOV_FACTOR * layer.delta_km * layer.power_scale_w * power
            g_gamma[li] = float(
                np.sum(
                    2.0
                    * theta_prime
                    * (np.imag(lp * np.conj(p)) + np.imag(lq * np.conj(q)))
                )
            )
            jc = 1j * c
            lu = (
                r * (1.0 + jc * np.abs(u) ** 2)
                - jc * u * u * np.conj(r)
                + jc * u * np.conj(v) * s
                - jc * u * v * np.conj(s)
            )
            lv = (
                s * (1.0 + jc * np.abs(v) ** 2)
                - jc * v * v * np.conj(s)
                + jc * v * np.conj(u) * r
                - jc * v * u * np.conj(r)
            )
        lu_f = np.fft.fft(lu, axis=-1)
        lv_f = np.fft.fft(lv, axis=-1)
        idx = _tap_indices(layer.taps.size, n)
        gx_kern = np.sum(np.fft.ifft(lu_f * np.conj(rec["x_f"]), axis=-1), axis=0)
        gy_kern = np.sum(np.fft.ifft(lv_f * np.conj(rec["y_f"]), axis=-1), axis=0)
        if layer.taps_y is None:
            g_taps[li] = (gx_kern + gy_kern)[idx]
        else:
            g_taps[li] = gx_kern[idx]
            g_taps_y[li] = gy_kern[_tap_indices(layer.taps_y.size, n)]
        if li > 0:
            lp = np.fft.ifft(np.conj(rec["kern_f"]) * lu_f, axis=-1)
            lq = np.fft.ifft(np.conj(rec["kern_f_y"]) * lv_f, axis=-1)

    return LdbpGradients(taps=g_taps, taps_y=g_taps_y, gamma_bar=g_gamma)


def init_from_dbp(
    plan: DbpPlan,
    taps_per_layer: int | None = None,
    output_len: int | None = None,
    tied: bool = True,
) -> LdbpModel:
    """Build a model whose initial state reproduces the plan exactly.

    Each plan step becomes a filter layer (taps = centered impulse response
    of the step's linear response) followed by a Kerr activation carrying the
    step's gamma, length, and entry power; the trailing response becomes one
    final linear layer.  ``taps_per_layer`` truncates the impulse responses
    to a centered odd window, renormalized to keep unit kernel energy; the
    default keeps the full window, which is lossless.
    """
    n = plan.n_fft
    n_taps = n if taps_per_layer is None else int(taps_per_layer)
    if n_taps != n and n_taps % 2 == 0:
        raise ParameterError(f"truncated tap count must be odd, got {n_taps}")
    if not 0 < n_taps <= n:
        raise ParameterError(f"taps_per_layer must be in [1, {n}], got {n_taps}")
    if output_len is None:
        output_len = (3 * n) // 4

    responses = [step.linear_response for step in plan.steps] + [plan.final_response]
    idx = _tap_indices(n_taps, n)
    layers = []
    captured = []
    for i, resp in enumerate(responses):
        h = np.fft.ifft(resp)
        total = float(np.sum(np.abs(h) ** 2))
        taps = h[idx].copy()
        kept = float(np.sum(np.abs(taps) ** 2))
        if n_taps != n:
            taps *= np.sqrt(total / kept)
        captured.append(kept / total)
        if i < len(plan.steps):
            step = plan.steps[i]
            gamma_bar = step.gamma_eff
            delta_km = step.nonlinear_length
            power_scale_w = step.power_scale * plan.launch_power_w
        else:
            gamma_bar, delta_km, power_scale_w = 0.0, 0.0, 0.0
        layers.append(
            LdbpLayer(
                taps=taps,
                gamma_bar=gamma_bar,
                delta_km=delta_km,
                power_scale_w=power_scale_w,
                taps_y=None if tied else taps.copy(),
            )
        )

    truncated = any(frac < 0.99 for frac in captured)
    if truncated:
        warnings.warn(
            f"tap truncation to {n_taps} keeps only "
            f"{min(captured):.1%} of the worst layer's kernel energy",
            stacklevel=2,
        )
    model = LdbpModel(
        layers=layers,
        input_len=n,
        output_len=output_len,
        sample_rate=plan.sample_rate,
        launch_power_dbm=plan.launch_power_dbm,
        metadata={
            "init_energy_captured": captured,
            "init_truncation_warning": truncated,
            "m_steps": plan.m_steps,
            "symmetric": plan.symmetric,
        },
    )
    model.validate()
    return model


def _complex_to_pairs(arr: np.ndarray) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in arr]


def _pairs_to_complex(pairs) -> np.ndarray:
    return np.array([complex(re, im) for re, im in pairs], dtype=np.complex128)


def save_checkpoint(model: LdbpModel, path) -> None:
    """Write the model as JSON; float repr round-trips bit-exactly."""
    doc = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "input_len": model.input_len,
        "output_len": model.output_len,
        "sample_rate": model.sample_rate,
        "launch_power_dbm": model.launch_power_dbm,
        "layers": [
            {
                "taps": _complex_to_pairs(layer.taps),
                "taps_y": None
                if layer.taps_y is None
                else _complex_to_pairs(layer.taps_y),
                "gamma_bar": layer.gamma_bar,
                "delta_km": layer.delta_km,
                "power_scale_w": layer.power_scale_w,
            }
            for layer in model.layers
        ],
        "metadata": model.metadata,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> LdbpModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a model checkpoint")
    if doc.get("version") != _CHECKPOINT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint version {doc.get('version')!r} in {path}"
        )
    try:
        layers = [
            LdbpLayer(
                taps=_pairs_to_complex(spec["taps"]),
                gamma_bar=float(spec["gamma_bar"]),
                delta_km=float(spec["delta_km"]),
                power_scale_w=float(spec["power_scale_w"]),
                taps_y=None
                if spec.get("taps_y") is None
                else _pairs_to_complex(spec["taps_y"]),
            )
            for spec in doc["layers"]
        ]
        model = LdbpModel(
            layers=layers,
            input_len=int(doc["input_len"]),
            output_len=int(doc["output_len"]),
            sample_rate=float(doc["sample_rate"]),
            launch_power_dbm=float(doc["launch_power_dbm"]),
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model checkpoint {path}: {exc}") from exc
    model.validate()
    return model


def clone_model(model: LdbpModel) -> LdbpModel:
    """Deep copy with fresh parameter arrays (training-safe snapshot)."""
    layers = [
        dataclasses.replace(
            layer,
            taps=layer.taps.copy(),
            taps_y=None if layer.taps_y is None else layer.taps_y.copy(),
        )
        for layer in model.layers
    ]
    return dataclasses.replace(model, layers=layers, metadata=dict(model.metadata))
