"""The dual-branch classifier: positional head, invariant/specific encoders, two linear heads."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import ClassScheme, FeatureStats, RegionScheme
from .nn import INFER, TRAIN, Block, Dense, Layer, ShapeError, softmax_rows
from .posenc import LearnedPositionalEncoder, concat_features, fixed_encode


class BranchEncoder(Layer):
    """Three Dense-BN-ReLU-Dropout blocks: in -> D -> D -> D."""

    def __init__(self, n_in, width, rng, dropout=0.5, bn_eps=1e-5, bn_momentum=0.1, depth=3):
        super().__init__()
        self.blocks = []
        for k in range(depth):
            self.blocks.append(Block(n_in if k == 0 else width, width, rng, dropout, bn_eps, bn_momentum))

    def layers(self):
        out = {}
        for k, b in enumerate(self.blocks):
            out[f"{k}.dense"] = b.dense
            out[f"{k}.bn"] = b.bn
        return out

    def forward(self, x, mode=INFER, rng=None, frozen_bn=False):
        self.calls += 1
        for b in self.blocks:
            x = b.forward(x, mode, rng, frozen_bn)
        return x

    def backward(self, g):
        for b in reversed(self.blocks):
            g = b.backward(g)
        return g


@dataclass
class PredictionOutputs:
    lc_logits: np.ndarray  # (B, C)
    region_logits: np.ndarray | None  # (B, R)
    z_inv: np.ndarray  # (B, D)
    z_spec: np.ndarray | None
    positional: np.ndarray | None  # (B, 2d) or None without coordinates


class BridgeModel:
    def __init__(self, cfg: TrainConfig, n_features: int, class_scheme: ClassScheme,
                 region_scheme: RegionScheme, rng: np.random.Generator | None = None):
        if n_features < 1:
            raise ValueError("need at least one input feature")
        self.cfg = cfg
        self.n_features = n_features
        self.class_scheme = class_scheme
        self.region_scheme = region_scheme
        self.stats = FeatureStats(np.zeros(n_features), np.ones(n_features))
        bn = dict(bn_eps=cfg.bn_eps, bn_momentum=cfg.bn_momentum)
        self.pe_head = None
        if cfg.use_latlon and cfg.learned_pe:
            self.pe_head = LearnedPositionalEncoder(cfg.pe_width, cfg.pe_hidden, rng,
                                                    cfg.pe_dropout, **bn)
        n_in = n_features + cfg.pe_width
        D = cfg.hidden
        self.enc_inv = BranchEncoder(n_in, D, rng, cfg.dropout, **bn)
        self.clf_lc = Dense(D, class_scheme.num_classes, rng, init="xavier")
        self.enc_spec = None
        self.clf_region = None
        if cfg.use_region:
            self.enc_spec = BranchEncoder(n_in, D, rng, cfg.dropout, **bn)
            self.clf_region = Dense(D, region_scheme.num_regions, rng, init="xavier")

    # -- parameter access ------------------------------------------------

    def components(self) -> dict:
        comps = {}
        if self.pe_head is not None:
            comps["pe"] = self.pe_head
        comps["enc_inv"] = self.enc_inv
        comps["clf_lc"] = self.clf_lc
        if self.enc_spec is not None:
            comps["enc_spec"] = self.enc_spec
            comps["clf_region"] = self.clf_region
        return comps

    def leaf_layers(self) -> dict:
        out = {}
        for cname, comp in self.components().items():
            if hasattr(comp, "layers"):
                for lname, layer in comp.layers().items():
                    out[f"{cname}.{lname}"] = layer
            else:
                out[cname] = comp
        return out

    def parameters(self) -> dict:
        """Flat name -> array view of every trainable block (the live arrays)."""
        return {f"{ln}.{k}": v for ln, layer in self.leaf_layers().items() for k, v in layer.params.items()}

    def gradients(self) -> dict:
        return {f"{ln}.{k}": layer.grads[k] for ln, layer in self.leaf_layers().items() for k in layer.params}

    def zero_grad(self):
        for layer in self.leaf_layers().values():
            layer.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    @property
    def input_width(self) -> int:
        return self.n_features + self.cfg.pe_width

    # -- forward / backward ---------------------------------------------

    def standardize(self, x):
        return self.stats.apply(np.asarray(x, dtype=np.float64))

    def positional(self, lat, lon, mode=INFER, rng=None, frozen_bn=False):
        if not self.cfg.use_latlon:
            return None
        enc = fixed_encode(np.atleast_1d(lat), np.atleast_1d(lon), self.cfg.posenc)
        if self.pe_head is None:
            return enc
        return self.pe_head.forward(enc, mode, rng, frozen_bn)

    def forward(self, x_std, lat, lon, mode=TRAIN, rng=None, frozen_bn=False,
                branches=("inv", "spec")) -> PredictionOutputs:
        """Forward on an already-standardised batch.

        Train mode needs a batch of at least 2 (batch norm) and an rng for dropout.
        """
        x_std = np.asarray(x_std, dtype=np.float64)
        if x_std.ndim != 2 or x_std.shape[1] != self.n_features:
            raise ShapeError(f"expected (B, {self.n_features}) features, got {x_std.shape}")
        if mode == TRAIN and not frozen_bn and x_std.shape[0] < 2:
            raise ShapeError("training batches must hold at least 2 samples")
        p = self.positional(lat, lon, mode, rng, frozen_bn)
        h = concat_features(x_std, p)
        z_inv = self.enc_inv.forward(h, mode, rng, frozen_bn)
        lc = self.clf_lc.forward(z_inv, mode)
        z_spec = reg = None
        if self.enc_spec is not None and "spec" in branches:
            z_spec = self.enc_spec.forward(h, mode, rng, frozen_bn)
            reg = self.clf_region.forward(z_spec, mode)
        return PredictionOutputs(lc, reg, z_inv, z_spec, p)

    def forward_train(self, x_std, lat, lon, rng, frozen_bn=False) -> PredictionOutputs:
        return self.forward(x_std, lat, lon, TRAIN, rng, frozen_bn)

    def backward(self, grads: dict) -> None:
        """Accumulate parameter gradients from gradients wrt the forward outputs."""
        g_z_inv = self.clf_lc.backward(grads["lc_logits"])
        if grads.get("z_inv") is not None:
            g_z_inv = g_z_inv + grads["z_inv"]
        g_h = self.enc_inv.backward(g_z_inv)
        if self.enc_spec is not None and grads.get("region_logits") is not None:
            g_z_spec = self.clf_region.backward(grads["region_logits"])
            if grads.get("z_spec") is not None:
                g_z_spec = g_z_spec + grads["z_spec"]
            g_h = g_h + self.enc_spec.backward(g_z_spec)
        if self.pe_head is not None:
            self.pe_head.backward(g_h[:, self.n_features:])

    def forward_infer(self, x_raw, lat, lon) -> np.ndarray:
        """Class probabilities from raw features; the region branch is never evaluated.

        Accepts one sample (1-D ``x_raw``, scalar coordinates) or a batch.
        """
        x = np.asarray(x_raw, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise ValueError(f"non-finite feature value at sample {bad[0]}, feature {bad[1]}")
        out = self.forward(self.standardize(x), lat, lon, INFER, branches=("inv",))
        probs = softmax_rows(out.lc_logits)
        return probs[0] if single else probs


def build_model(cfg: TrainConfig, n_features: int, class_scheme: ClassScheme,
                region_scheme: RegionScheme | None = None, rng=None) -> BridgeModel:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return BridgeModel(cfg, n_features, class_scheme, region_scheme or RegionScheme(), rng)


def expected_param_count(cfg: TrainConfig, n_features: int, n_classes: int, n_regions: int) -> int:
    """Trainable parameter count implied by the architecture, computed independently of the model."""
    D = cfg.hidden

    def block(i, o):  # dense + batch-norm affine
        return i * o + o + 2 * o

    n_in = n_features + cfg.pe_width
    encoder = block(n_in, D) + 2 * block(D, D)
    total = encoder + D * n_classes + n_classes
    if cfg.use_region:
        total += encoder + D * n_regions + n_regions
    if cfg.use_latlon and cfg.learned_pe:
        w = cfg.pe_width
        total += block(w, cfg.pe_hidden) + cfg.pe_hidden * w + w
    return total


# --------------------------------------------------------------------------
# checkpoint files
#
# layout (little endian):
#   magic      8 bytes  b"GEOBRDG\x00"
#   version    u32
#   header_len u32
#   payload_len u64
#   header     UTF-8 JSON: config, schemes, n_features, blocks [{name, shape, offset}]
#   payload    concatenated float64 blocks
#   digest     32 bytes SHA-256 over everything above

MAGIC = b"GEOBRDG\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIIQ")


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def _model_state(model: BridgeModel) -> dict:
    state = {}
    for ln, layer in model.leaf_layers().items():
        for k, v in layer.state().items():
            state[f"{ln}.{k}"] = v
    state["stats.mean"] = model.stats.mean
    state["stats.std"] = model.stats.std
    return state


def encode_model(model: BridgeModel) -> bytes:
    blocks, chunks, offset = [], [], 0
    for name, arr in _model_state(model).items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        blocks.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({
        "config": model.cfg.to_dict(),
        "n_features": model.n_features,
        "classes": list(model.class_scheme.names),
        "regions": list(model.region_scheme.names),
        "blocks": blocks,
    }, sort_keys=True).encode()
    payload = b"".join(chunks)
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header), len(payload)) + header + payload
    return body + hashlib.sha256(body).digest()


def decode_model(raw: bytes) -> BridgeModel:
    if len(raw) < _PREFIX.size:
        raise CheckpointTruncatedError("file shorter than the fixed header")
    magic, version, hlen, plen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    expected = _PREFIX.size + hlen + plen + 32
    if len(raw) < expected:
        raise CheckpointTruncatedError(f"checkpoint truncated: {len(raw)} of {expected} bytes")
    if len(raw) > expected:
        raise CheckpointChecksumError("trailing bytes after checkpoint digest")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError("checkpoint checksum mismatch")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen])
    payload = raw[_PREFIX.size + hlen:_PREFIX.size + hlen + plen]
    cfg = TrainConfig.from_dict(header["config"])
    model = BridgeModel(cfg, header["n_features"], ClassScheme(tuple(header["classes"])),
                        RegionScheme(tuple(header["regions"])), rng=None)
    arrays = {}
    for b in header["blocks"]:
        n = int(np.prod(b["shape"])) if b["shape"] else 1
        arrays[b["name"]] = np.frombuffer(payload, dtype="<f8", count=n, offset=b["offset"]).reshape(b["shape"]).astype(np.float64)
    for ln, layer in model.leaf_layers().items():
        layer.load_state({k[len(ln) + 1:]: v for k, v in arrays.items() if k.startswith(ln + ".")})
    model.stats = FeatureStats(arrays["stats.mean"], arrays["stats.std"])
    return model


def save_model(model: BridgeModel, path) -> None:
    """Write atomically: a failed write never leaves a partial file at ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_model(model))
    tmp.replace(path)


def load_model(path) -> BridgeModel:
    return decode_model(Path(path).read_bytes())
