"""Model parameters, the Adam update rule, and checkpoint persistence.

A model is a flat ``name -> float64 array`` dictionary plus a
:class:`ModelConfig` describing shapes.  Parameter names are prefixed
by component: ``enc.`` (encoder projection), ``clf.`` (base weight
rows and log-temperature), ``dmm.`` / ``qim.`` (routing transforms).
With ``share_routing`` both routing operators read the ``dmm.`` set
and no ``qim.`` parameters exist.

Checkpoints are single JSON files: a manifest with config, format
version and a sha256 checksum, and each array embedded as base64 of
its little-endian float64 bytes.  Serialization is canonical (sorted
keys, fixed separators), so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nm
from .classifier import CosineClassifier, init_classifier_arrays
from .encoder import EncoderConfig, FeatureHashEncoder, init_encoder_arrays
from .numerics import Tensor
from .routing import (RoutingConfig, RoutingParams, init_routing_arrays,
                      params_from_tensors)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int
    num_base_classes: int
    encoder: EncoderConfig
    dmm: RoutingConfig
    qim: RoutingConfig
    share_routing: bool = False

    def __post_init__(self):
        if self.embed_dim != self.encoder.embed_dim:
            raise ValueError(
                f"embed_dim {self.embed_dim} != encoder.embed_dim "
                f"{self.encoder.embed_dim}")
        for name, rc in (("dmm", self.dmm), ("qim", self.qim)):
            if rc.input_dim != self.embed_dim:
                raise ValueError(
                    f"{name}.input_dim {rc.input_dim} != embed_dim "
                    f"{self.embed_dim}")
            if rc.output_dim != self.embed_dim:
                raise ValueError(
                    f"{name} output dimension {rc.output_dim} != embed_dim "
                    f"{self.embed_dim}")
        if self.num_base_classes < 1:
            raise ValueError(
                f"num_base_classes must be >= 1, got {self.num_base_classes}")
        if self.share_routing and self.dmm != self.qim:
            raise ValueError(
                "share_routing requires identical dmm and qim configs")

    @classmethod
    def build(cls, embed_dim: int, num_base_classes: int,
              encoder_kind: str = "precomputed", vocab_buckets: int = 4096,
              capsule_count: int = 4, iterations: int = 3,
              share_routing: bool = False) -> "ModelConfig":
        enc = EncoderConfig(kind=encoder_kind, embed_dim=embed_dim,
                            vocab_buckets=max(vocab_buckets, embed_dim))
        rc = RoutingConfig.for_pipeline(embed_dim, capsule_count=capsule_count,
                                        iterations=iterations)
        return cls(embed_dim=embed_dim, num_base_classes=num_base_classes,
                   encoder=enc, dmm=rc, qim=rc, share_routing=share_routing)


@dataclass
class Model:
    config: ModelConfig
    params: dict  # name -> np.ndarray, float64
    meta: dict = field(default_factory=dict)  # e.g. which stages have run

    def tensors(self, tape: nm.Tape | None = None) -> dict:
        """All parameters as Tensors: tape leaves when training, else constants."""
        if tape is None:
            return {k: nm.constant(v) for k, v in self.params.items()}
        return {k: tape.leaf(v) for k, v in self.params.items()}

    def classifier(self, tensors: dict) -> CosineClassifier:
        return CosineClassifier(w_base=tensors["clf.w_base"],
                                log_tau=tensors["clf.log_tau"])

    def dmm_params(self, tensors: dict) -> RoutingParams:
        return params_from_tensors(tensors, "dmm.", self.config.dmm)

    def qim_params(self, tensors: dict) -> RoutingParams:
        prefix = "dmm." if self.config.share_routing else "qim."
        return params_from_tensors(tensors, prefix, self.config.qim)

    def encode(self, tensors: dict, payload) -> Tensor:
        """Sample vector for one payload: text through the hash encoder,
        precomputed vectors passed straight through."""
        if isinstance(payload, np.ndarray):
            if payload.shape != (self.config.embed_dim,):
                raise ValueError(
                    f"vector payload has shape {payload.shape}, model "
                    f"expects ({self.config.embed_dim},)")
            return nm.constant(payload)
        if self.config.encoder.kind != "feature_hash":
            raise ValueError(
                f"text payloads need a feature_hash encoder, model was "
                f"built with {self.config.encoder.kind!r}")
        enc = FeatureHashEncoder(self.config.encoder,
                                 tensors["enc.projection"])
        return enc.encode(payload)

    def param_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.asarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    params: dict = {}
    for k, v in init_encoder_arrays(config.encoder, rng).items():
        params[f"enc.{k}"] = v
    for k, v in init_classifier_arrays(config.num_base_classes,
                                       config.embed_dim, rng).items():
        params[f"clf.{k}"] = v
    for k, v in init_routing_arrays(config.dmm, rng,
                                    identity_blocks=True).items():
        params[f"dmm.{k}"] = v
    if not config.share_routing:
        for k, v in init_routing_arrays(config.qim, rng,
                                        identity_blocks=True).items():
            params[f"qim.{k}"] = v
    return Model(config=config, params=params)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    """Adam update rule; state is kept per parameter name."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise nm.NumericError(
                    f"non-finite gradient for {name} at step {self.t}")
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(params[name])
                self.m[name] = m
                self.v[name] = np.zeros_like(params[name])
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1 ** self.t)
            vhat = v / (1.0 - self.beta2 ** self.t)
            params[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def _config_from_dict(raw: dict) -> ModelConfig:
    try:
        return ModelConfig(
            embed_dim=raw["embed_dim"],
            num_base_classes=raw["num_base_classes"],
            encoder=EncoderConfig(**raw["encoder"]),
            dmm=RoutingConfig(**raw["dmm"]),
            qim=RoutingConfig(**raw["qim"]),
            share_routing=raw["share_routing"],
        )
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"bad config in checkpoint: {err}") from err


def _manifest(model: Model) -> dict:
    arrays = {}
    for name in sorted(model.params):
        arr = np.asarray(model.params[name], dtype="<f8")
        arrays[name] = {
            "shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    return {
        "format_version": CHECKPOINT_VERSION,
        "config": _config_to_dict(model.config),
        "meta": model.meta,
        "params": arrays,
    }


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(model: Model, path) -> None:
    body = _manifest(model)
    body["checksum"] = hashlib.sha256(
        _canonical({k: body[k] for k in body if k != "checksum"})
        .encode()).hexdigest()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical(body))
        fh.write("\n")


def load_checkpoint(path) -> Model:
    try:
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if not isinstance(body, dict) or "format_version" not in body:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if body["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {body['format_version']} not supported "
            f"(this build reads version {CHECKPOINT_VERSION})")
    recorded = body.get("checksum")
    actual = hashlib.sha256(
        _canonical({k: body[k] for k in body if k != "checksum"})
        .encode()).hexdigest()
    if recorded != actual:
        raise CheckpointError(
            f"{path}: checksum mismatch (file corrupt): recorded "
            f"{str(recorded)[:12]}.., computed {actual[:12]}..")
    config = _config_from_dict(body["config"])
    params = {}
    for name, entry in body["params"].items():
        try:
            raw = base64.b64decode(entry["data"], validate=True)
            shape = tuple(entry["shape"])
        except (KeyError, TypeError, ValueError) as err:
            raise CheckpointError(
                f"{path}: bad array entry {name!r}: {err}") from err
        arr = np.frombuffer(raw, dtype="<f8")
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(
                f"{path}: array {name!r} has {arr.size} values, shape "
                f"{shape} needs {int(np.prod(shape, dtype=np.int64))}")
        params[name] = arr.reshape(shape).astype(np.float64)
    model = Model(config=config, params=params,
                  meta=dict(body.get("meta", {})))
    _check_shapes(model, path)
    return model


def _check_shapes(model: Model, path) -> None:
    cfg = model.config
    expected = {"clf.w_base": (cfg.num_base_classes, cfg.embed_dim),
                "clf.log_tau": ()}
    if cfg.encoder.kind == "feature_hash":
        expected["enc.projection"] = (cfg.embed_dim,
                                      cfg.encoder.vocab_buckets)
    prefixes = [("dmm.", cfg.dmm)]
    if not cfg.share_routing:
        prefixes.append(("qim.", cfg.qim))
    for prefix, rc in prefixes:
        for j in range(rc.capsule_count):
            expected[f"{prefix}w_{j}"] = (rc.capsule_dim, rc.input_dim)
            expected[f"{prefix}b_{j}"] = (rc.capsule_dim,)
    for name, shape in expected.items():
        if name not in model.params:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        got = model.params[name].shape
        if got != shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {got}, config "
                f"requires {shape}")
    extras = set(model.params) - set(expected)
    if extras:
        raise CheckpointError(
            f"{path}: unexpected parameters {sorted(extras)}")
