"""Flat-vector-parameterized feedforward policy networks.

A policy is a plain real vector holding every weight and bias of a small
feedforward network.  The optimizer only ever sees the vector; this module
is the bridge to an executable network with a deterministic greedy action.

Weight layout is fixed so checkpoints and tests are portable: layers in
order, within each layer the weight tensor (row-major / C order) followed
by the bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, NumericError

ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    activation: str = "relu"


@dataclass(frozen=True)
class Conv2d:
    """Valid-padding 2-D convolution over (channels, height, width) input."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    activation: str = "relu"


Layer = Dense | Conv2d


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer descriptors plus the input tensor shape.

    Validated on construction: every layer must accept the (flattened, for
    dense layers) output shape of its predecessor, and the final layer must
    emit exactly ``action_count`` logits.  ``action_count=None`` infers the
    count from the last layer.
    """

    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    action_count: int | None = None
    _shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("network spec needs at least one layer")
        shapes = [tuple(int(s) for s in self.input_shape)]
        for idx, layer in enumerate(self.layers):
            shapes.append(_output_shape(layer, shapes[-1], idx))
        if len(shapes[-1]) != 1:
            raise ConfigurationError(
                f"final layer {len(self.layers) - 1} must produce a flat action "
                f"vector, got shape {shapes[-1]}"
            )
        if self.action_count is None:
            object.__setattr__(self, "action_count", shapes[-1][0])
        elif self.action_count != shapes[-1][0]:
            raise ConfigurationError(
                f"final layer outputs {shapes[-1][0]} logits, expected "
                f"action_count={self.action_count}"
            )
        object.__setattr__(self, "_shapes", tuple(shapes))

    def layer_input_shapes(self) -> tuple[tuple[int, ...], ...]:
        return self._shapes[:-1]


def _output_shape(layer: Layer, in_shape: tuple[int, ...], idx: int) -> tuple[int, ...]:
    """Shape produced by ``layer`` on ``in_shape``, or ConfigurationError."""
    if isinstance(layer, Dense):
        flat = int(np.prod(in_shape))
        if flat != layer.in_features:
            raise ConfigurationError(
                f"layer {idx} (Dense) expects {layer.in_features} inputs but "
                f"layer {idx - 1} outputs {flat} (shape {in_shape})"
            )
        return (layer.out_features,)
    if isinstance(layer, Conv2d):
        if len(in_shape) != 3:
            raise ConfigurationError(
                f"layer {idx} (Conv2d) needs (channels, h, w) input, got "
                f"shape {in_shape} from layer {idx - 1}"
            )
        c, h, w = in_shape
        if c != layer.in_channels:
            raise ConfigurationError(
                f"layer {idx} (Conv2d) expects {layer.in_channels} channels "
                f"but layer {idx - 1} outputs {c}"
            )
        kh, kw = layer.kernel
        if kh > h or kw > w:
            raise ConfigurationError(
                f"layer {idx} (Conv2d) kernel {layer.kernel} larger than "
                f"input {h}x{w} from layer {idx - 1}"
            )
        oh = (h - kh) // layer.stride + 1
        ow = (w - kw) // layer.stride + 1
        return (layer.out_channels, oh, ow)
    raise ConfigurationError(f"layer {idx}: unknown layer type {type(layer).__name__}")


def layer_param_count(layer: Layer) -> int:
    if isinstance(layer, Dense):
        return layer.in_features * layer.out_features + layer.out_features
    kh, kw = layer.kernel
    return kh * kw * layer.in_channels * layer.out_channels + layer.out_channels


def param_count(spec: NetworkSpec) -> int:
    """Total number of weights plus biases across all layers."""
    return sum(layer_param_count(layer) for layer in spec.layers)


@dataclass(frozen=True)
class PolicyVector:
    """A flat weight vector together with the spec it parameterizes."""

    weights: np.ndarray
    spec: NetworkSpec

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        expected = param_count(self.spec)
        if w.ndim != 1 or w.shape[0] != expected:
            raise InputError(
                f"policy vector has length {w.shape[0] if w.ndim == 1 else w.shape}, "
                f"spec needs {expected}"
            )
        if not np.all(np.isfinite(w)):
            raise InputError("policy vector contains non-finite entries")


def unflatten(spec: NetworkSpec, vector: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer (weight tensor, bias) pairs.

    The cursor-based split doubles as the accounting check that every entry
    is consumed exactly once: a length mismatch at either end raises.
    """
    vector = np.asarray(vector, dtype=np.float64)
    total = param_count(spec)
    if vector.shape != (total,):
        raise InputError(f"expected a flat vector of length {total}, got {vector.shape}")
    params = []
    cursor = 0
    for layer in spec.layers:
        if isinstance(layer, Dense):
            w_shape = (layer.out_features, layer.in_features)
        else:
            kh, kw = layer.kernel
            w_shape = (layer.out_channels, layer.in_channels, kh, kw)
        n_w = int(np.prod(w_shape))
        w = vector[cursor:cursor + n_w].reshape(w_shape)
        cursor += n_w
        n_b = w_shape[0]
        b = vector[cursor:cursor + n_b]
        cursor += n_b
        params.append((w, b))
    assert cursor == total
    return params


def flatten(params: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Inverse of :func:`unflatten`."""
    pieces = []
    for w, b in params:
        pieces.append(np.asarray(w, dtype=np.float64).ravel())
        pieces.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(pieces)


def _layer_params(policy: PolicyVector) -> list[tuple[np.ndarray, np.ndarray]]:
    # unflatten once per policy, not once per environment step
    params = policy.__dict__.get("_params")
    if params is None:
        params = unflatten(policy.spec, policy.weights)
        object.__setattr__(policy, "_params", params)
    return params


def forward_logits(policy: PolicyVector, observation: np.ndarray) -> np.ndarray:
    """Run the network and return the raw output vector."""
    spec = policy.spec
    obs = np.asarray(observation, dtype=np.float64)
    if obs.shape != spec.input_shape:
        raise InputError(
            f"observation shape {obs.shape} does not match spec input "
            f"shape {spec.input_shape}"
        )
    out = obs
    for idx, (layer, (w, b)) in enumerate(zip(spec.layers, _layer_params(policy))):
        if isinstance(layer, Dense):
            out = w @ out.ravel() + b
        else:
            out = _conv2d_valid(out, w, b, layer.stride)
        if layer.activation == "relu":
            out = np.maximum(out, 0.0)
        if not np.isfinite(out).all():
            raise NumericError(f"non-finite activation after layer {idx}")
    return out


def forward(policy: PolicyVector, observation: np.ndarray) -> int:
    """Greedy action: index of the maximal logit, lowest index on ties."""
    return int(np.argmax(forward_logits(policy, observation)))


def _conv2d_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    # x: (C, H, W); w: (O, C, kh, kw) -> (O, H', W') via strided windows
    kh, kw = w.shape[2], w.shape[3]
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride, :, :]
    return np.einsum("chwij,ocij->ohw", windows, w) + b[:, None, None]


def parse_network_spec(text: str) -> NetworkSpec:
    """Parse the run-config network schema into a NetworkSpec.

    Whitespace-separated tokens, layers in order::

        input=<d0>[x<d1>x<d2>] dense:<out>:<relu|none> conv:<out>:<kh>x<kw>:<stride>:<relu|none>

    Input sizes of each layer are inferred from the previous layer, e.g.
    ``input=4 dense:32:relu dense:2:none`` is a 4-32-2 MLP.
    """
    tokens = text.replace(",", " ").split()
    if not tokens or not tokens[0].startswith("input="):
        raise ConfigurationError("network spec must start with input=<dims>")
    try:
        input_shape = tuple(int(v) for v in tokens[0][len("input="):].split("x"))
    except ValueError as exc:
        raise ConfigurationError(f"bad input shape in {tokens[0]!r}") from exc
    layers: list[Layer] = []
    shape = input_shape
    for tok in tokens[1:]:
        parts = tok.split(":")
        kind = parts[0].lower()
        try:
            if kind == "dense" and len(parts) == 3:
                out, act = int(parts[1]), parts[2]
                layer: Layer = Dense(int(np.prod(shape)), out, _check_act(act, tok))
            elif kind == "conv" and len(parts) == 5:
                out, act = int(parts[1]), parts[4]
                kh, kw = (int(v) for v in parts[2].split("x"))
                if len(shape) != 3:
                    raise ConfigurationError(f"conv layer {tok!r} needs 3-d input, has {shape}")
                layer = Conv2d(shape[0], out, (kh, kw), int(parts[3]), _check_act(act, tok))
            else:
                raise ConfigurationError(f"unrecognized layer token {tok!r}")
        except ValueError as exc:
            raise ConfigurationError(f"bad number in layer token {tok!r}") from exc
        shape = _output_shape(layer, shape, len(layers))
        layers.append(layer)
    return NetworkSpec(tuple(layers), input_shape)


def format_network_spec(spec: NetworkSpec) -> str:
    """Inverse of :func:`parse_network_spec`."""
    tokens = ["input=" + "x".join(str(s) for s in spec.input_shape)]
    for layer in spec.layers:
        if isinstance(layer, Dense):
            tokens.append(f"dense:{layer.out_features}:{layer.activation}")
        else:
            kh, kw = layer.kernel
            tokens.append(f"conv:{layer.out_channels}:{kh}x{kw}:{layer.stride}:{layer.activation}")
    return " ".join(tokens)


def _check_act(act: str, tok: str) -> str:
    if act not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {act!r} in {tok!r}")
    return act
