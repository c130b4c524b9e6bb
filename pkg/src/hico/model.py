"""Small MLPs with hand-written forward/backward passes.

Four networks make up the model: the encoder trunk, the visual projection
head, the topical projection head, and the pairwise topical predictor.
Gradients are derived by hand and validated against the central-difference
oracle in :mod:`hico.numerics`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, as_f64, sigmoid
from .timeline import ClipTriple

HIDDEN_ACTIVATIONS = ("relu", "tanh")
FINAL_ACTIVATIONS = ("none", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    activation: tuple[str, ...] | str = "relu"
    final_activation: str = "none"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ValueError("need at least two positive layer dims")
        acts = self.activation
        if isinstance(acts, str):
            acts = (acts,) * self.n_hidden
        acts = tuple(acts)
        if len(acts) != self.n_hidden:
            raise ValueError("need one activation per hidden layer")
        if any(a not in HIDDEN_ACTIVATIONS for a in acts):
            raise ValueError(f"activations must be one of {HIDDEN_ACTIVATIONS}")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ValueError(f"final activation must be one of {FINAL_ACTIVATIONS}")
        object.__setattr__(self, "activation", acts)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_hidden(self) -> int:
        return len(self.layer_dims) - 2

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def layer_activation(self, layer: int) -> str:
        if layer < self.n_hidden:
            return self.activation[layer]
        return self.final_activation


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # (fan_out, fan_in) per layer
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [w.reshape(-1) for w in self.weights] + [b for b in self.biases]
        )

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        """Rebuild params from a flat vector (same layout as ``flatten``)."""
        flat = as_f64(flat)
        ws, bs, k = [], [], 0
        for w in self.weights:
            ws.append(flat[k : k + w.size].reshape(w.shape).copy())
            k += w.size
        for b in self.biases:
            bs.append(flat[k : k + b.size].copy())
            k += b.size
        if k != flat.size:
            raise ValueError("flat vector does not match parameter shapes")
        return MlpParams(ws, bs)


def init_params(spec: MlpSpec, rng: Rng) -> MlpParams:
    """He-scaled gaussians before relu layers, Xavier otherwise; zero biases."""
    weights, biases = [], []
    for layer in range(spec.n_layers):
        fan_in = spec.layer_dims[layer]
        fan_out = spec.layer_dims[layer + 1]
        if spec.layer_activation(layer) == "relu":
            std = math.sqrt(2.0 / fan_in)
        else:
            std = math.sqrt(2.0 / (fan_in + fan_out))
        weights.append(std * rng.normal(size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _check_shapes(spec: MlpSpec, params: MlpParams) -> None:
    if len(params.weights) != spec.n_layers or len(params.biases) != spec.n_layers:
        raise ValueError("parameter count does not match spec")
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        expect = (spec.layer_dims[layer + 1], spec.layer_dims[layer])
        if w.shape != expect or b.shape != (expect[0],):
            raise ValueError(f"layer {layer} shape mismatch: {w.shape} vs {expect}")


def _apply_activation(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    if name == "sigmoid":
        return sigmoid(a)
    return a  # none


@dataclass
class MlpCache:
    inputs: list[np.ndarray]   # layer inputs X_{k-1}
    preacts: list[np.ndarray]  # pre-activations A_k
    outputs: np.ndarray        # final activations
    squeeze: bool              # input was a single vector


def mlp_forward(spec: MlpSpec, params: MlpParams, x) -> tuple[np.ndarray, MlpCache]:
    """Forward pass over a vector or a row batch; the cache feeds backward."""
    _check_shapes(spec, params)
    x = as_f64(x)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != spec.in_dim:
        raise ValueError(f"input dim {h.shape[1]} does not match spec {spec.in_dim}")
    inputs, preacts = [], []
    for layer in range(spec.n_layers):
        inputs.append(h)
        a = h @ params.weights[layer].T + params.biases[layer]
        preacts.append(a)
        h = _apply_activation(spec.layer_activation(layer), a)
    cache = MlpCache(inputs, preacts, h, squeeze)
    return (h[0] if squeeze else h), cache


def mlp_backward(
    spec: MlpSpec, params: MlpParams, cache: MlpCache, dy
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Exact gradients of the forward map.

    Returns the gradient w.r.t. the input and ``[(dW, db), ...]`` per layer.
    """
    _check_shapes(spec, params)
    dy = as_f64(dy)
    d = np.atleast_2d(dy)
    if len(cache.preacts) != spec.n_layers or d.shape != cache.preacts[-1].shape:
        raise ValueError("stale cache: output gradient shape mismatch")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * spec.n_layers
    for layer in range(spec.n_layers - 1, -1, -1):
        act = spec.layer_activation(layer)
        a = cache.preacts[layer]
        if act == "relu":
            da = d * (a > 0)
        elif act == "tanh":
            da = d * (1.0 - np.tanh(a) ** 2)
        elif act == "sigmoid":
            s = _apply_activation("sigmoid", a)
            da = d * s * (1.0 - s)
        else:
            da = d
        grads[layer] = (da.T @ cache.inputs[layer], da.sum(axis=0))
        d = da @ params.weights[layer]
    dx = d[0] if cache.squeeze else d
    return dx, grads


@dataclass
class Net:
    spec: MlpSpec
    params: MlpParams


@dataclass
class ModelBundle:
    """The four networks: encoder trunk, visual head, topical head, and
    the pairwise topical predictor."""

    encoder: Net
    visual_head: Net
    topical_head: Net
    predictor: Net

    def nets(self) -> dict[str, Net]:
        return {
            "encoder": self.encoder,
            "visual_head": self.visual_head,
            "topical_head": self.topical_head,
            "predictor": self.predictor,
        }


def build_model(
    d_feat: int,
    rng: Rng,
    encoder_hidden: tuple[int, ...] = (64, 64),
    encoder_out: int = 64,
    embed_dim: int = 128,
    head_hidden: tuple[int, ...] = (128, 128),
    phi_hidden: tuple[int, ...] = (128, 128),
    activation: str = "relu",
) -> ModelBundle:
    """Default architecture: two-hidden-layer trunk and projection heads
    with matching visual/topical output width, and a scalar-output
    predictor squashed by a sigmoid."""
    f_spec = MlpSpec((d_feat, *encoder_hidden, encoder_out), activation)
    g_spec = MlpSpec((encoder_out, *head_hidden, embed_dim), activation)
    h_spec = MlpSpec((encoder_out, *head_hidden, embed_dim), activation)
    phi_spec = MlpSpec(
        (2 * embed_dim, *phi_hidden, 1), activation, final_activation="sigmoid"
    )
    return ModelBundle(
        encoder=Net(f_spec, init_params(f_spec, rng.split("encoder"))),
        visual_head=Net(g_spec, init_params(g_spec, rng.split("visual_head"))),
        topical_head=Net(h_spec, init_params(h_spec, rng.split("topical_head"))),
        predictor=Net(phi_spec, init_params(phi_spec, rng.split("predictor"))),
    )


@dataclass
class EmbeddingBatch:
    """Visual and topical embeddings for the 3N clips of a minibatch.

    Rows are laid out per video: row 3n+0 is the first visual clip, 3n+1
    the second, 3n+2 the topical clip.
    """

    z: np.ndarray          # (3N, d_z) visual embeddings
    t: np.ndarray          # (3N, c_t) topical embeddings
    video_ids: np.ndarray  # (3N,) source video per row
    slots: np.ndarray      # (3N,) 0 = first visual, 1 = second visual, 2 = topical

    def __post_init__(self):
        rows = self.z.shape[0]
        if rows % 3 != 0 or self.t.shape[0] != rows:
            raise ValueError("row count must be 3N across both embeddings")
        if self.video_ids.shape != (rows,) or self.slots.shape != (rows,):
            raise ValueError("index map must cover every row exactly once")
        if sorted(zip(self.video_ids.tolist(), self.slots.tolist())) != sorted(
            set(zip(self.video_ids.tolist(), self.slots.tolist()))
        ):
            raise ValueError("index map must be a bijection onto rows")

    @property
    def n_videos(self) -> int:
        return self.z.shape[0] // 3


@dataclass
class EncodeCache:
    features: np.ndarray
    encoder: MlpCache
    visual: MlpCache
    topical: MlpCache


def encode_batch(
    bundle: ModelBundle, triples: list[ClipTriple], with_cache: bool = False
):
    """Run the trunk once per clip and both heads on the shared trunk
    output."""
    feats, vids, slots = [], [], []
    for tri in triples:
        for slot, (clip, x) in enumerate(
            ((tri.vi, tri.xi), (tri.vj, tri.xj), (tri.vk, tri.xk))
        ):
            feats.append(as_f64(x))
            vids.append(clip.timeline_id)
            slots.append(slot)
    X = np.stack(feats)
    F, f_cache = mlp_forward(bundle.encoder.spec, bundle.encoder.params, X)
    Z, g_cache = mlp_forward(bundle.visual_head.spec, bundle.visual_head.params, F)
    T, h_cache = mlp_forward(bundle.topical_head.spec, bundle.topical_head.params, F)
    batch = EmbeddingBatch(
        z=Z, t=T, video_ids=np.array(vids), slots=np.array(slots)
    )
    if with_cache:
        return batch, EncodeCache(X, f_cache, g_cache, h_cache)
    return batch


def backward_batch(
    bundle: ModelBundle, cache: EncodeCache, d_z: np.ndarray, d_t: np.ndarray
) -> dict[str, list[tuple[np.ndarray, np.ndarray]]]:
    """Backpropagate loss gradients on the embeddings into trunk and head
    parameters (the two heads share the trunk output)."""
    dF_g, g_grads = mlp_backward(
        bundle.visual_head.spec, bundle.visual_head.params, cache.visual, d_z
    )
    dF_h, h_grads = mlp_backward(
        bundle.topical_head.spec, bundle.topical_head.params, cache.topical, d_t
    )
    _, f_grads = mlp_backward(
        bundle.encoder.spec, bundle.encoder.params, cache.encoder, dF_g + dF_h
    )
    return {"encoder": f_grads, "visual_head": g_grads, "topical_head": h_grads}


CHECKPOINT_FORMAT = "hico-ckpt-v1"


def _net_to_dict(net: Net) -> dict:
    return {
        "layer_dims": list(net.spec.layer_dims),
        "activation": list(net.spec.activation),
        "final_activation": net.spec.final_activation,
        "weights": [w.tolist() for w in net.params.weights],
        "biases": [b.tolist() for b in net.params.biases],
    }


def _net_from_dict(data: dict) -> Net:
    spec = MlpSpec(
        tuple(data["layer_dims"]),
        tuple(data["activation"]),
        data["final_activation"],
    )
    params = MlpParams(
        [np.array(w, dtype=np.float64) for w in data["weights"]],
        [np.array(b, dtype=np.float64) for b in data["biases"]],
    )
    _check_shapes(spec, params)
    return Net(spec, params)


def save_checkpoint(bundle: ModelBundle, path, meta: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "nets": {name: _net_to_dict(net) for name, net in bundle.nets().items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format: {payload.get('format')!r}")
    nets = {name: _net_from_dict(d) for name, d in payload["nets"].items()}
    bundle = ModelBundle(
        encoder=nets["encoder"],
        visual_head=nets["visual_head"],
        topical_head=nets["topical_head"],
        predictor=nets["predictor"],
    )
    return bundle, payload.get("meta", {})
