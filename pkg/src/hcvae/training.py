"""Mini-batch training, warm-start fine-tuning and the checkpoint container.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic  b"HCVAE\\0\\0\\x01"   (last byte = format version)
    u32       metadata length, then UTF-8 JSON (sorted keys)
    u32       tensor count
    per tensor:
        u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
        float32 data (row-major)
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import FeatureMatrix, SpectrogramConfig
from .conditioning import ConditionMode, Taxonomy
from .errors import (
    BadMagicError,
    ConfigurationError,
    CorruptCheckpointError,
    DimensionError,
    ModeMismatchError,
    NonFiniteLossError,
    TruncatedCheckpointError,
    UnknownLabelError,
    VersionMismatchError,
)
from .model import (
    ModelParams,
    VaeConfig,
    elbo_loss_and_grads,
    elbo_terms,
    init_params,
)
from .nn import Activation, AdamState, DenseLayer, adam_step

MAGIC = b"HCVAE\x00\x00\x01"
FORMAT_VERSION = 1

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 512
    epochs: int = 100
    beta: float = 1.0
    seed: int = 0
    mode: ConditionMode = ConditionMode.BOTH
    shuffle: bool = True
    standardize: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "mode", ConditionMode(self.mode))
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}")


@dataclass
class TrainingSet:
    """Feature rows with the (type, id) labels of the clip each row came from."""

    features: np.ndarray
    types: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2 or len(self.types) != n or len(self.ids) != n:
            raise DimensionError("features and label arrays disagree in length")

    @classmethod
    def from_clips(cls, clips) -> "TrainingSet":
        """``clips`` yields ``(FeatureMatrix | ndarray, type_label, id_label)``."""
        feats, types, ids = [], [], []
        for fm, t, i in clips:
            values = fm.values if isinstance(fm, FeatureMatrix) else np.asarray(fm)
            feats.append(values)
            types.extend([t] * len(values))
            ids.extend([i] * len(values))
        if not feats:
            raise ConfigurationError("training set is empty")
        return cls(np.concatenate(feats).astype(np.float32), np.array(types), np.array(ids))

    def __len__(self):
        return self.features.shape[0]

    @property
    def pairs(self) -> set:
        return set(zip(self.types.tolist(), self.ids.tolist()))

    def conditions(self, tax: Taxonomy, mode) -> np.ndarray:
        mode = ConditionMode(mode)
        blocks = []
        for active, labels, values, level in (
            (mode.uses_type, tax.level1_labels, self.types, "machine type"),
            (mode.uses_id, tax.level2_labels, self.ids, "machine id"),
        ):
            if not active:
                continue
            index = {lab: k for k, lab in enumerate(labels)}
            unknown = sorted(set(values.tolist()) - index.keys())
            if unknown:
                raise UnknownLabelError(f"unknown {level} label(s) {unknown}; known: {list(labels)}")
            block = np.zeros((len(values), len(labels)), dtype=np.float32)
            block[np.arange(len(values)), [index[v] for v in values.tolist()]] = 1.0
            blocks.append(block)
        if not blocks:
            return np.zeros((len(self), 0), dtype=np.float32)
        return np.concatenate(blocks, axis=1)


@dataclass
class Checkpoint:
    params: ModelParams
    taxonomy: Taxonomy
    mode: ConditionMode
    spectrogram: SpectrogramConfig | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = ConditionMode(self.mode)
        want = self.taxonomy.cond_dim(self.mode)
        if self.params.config.cond_dim != want:
            raise ConfigurationError(
                f"model cond_dim {self.params.config.cond_dim} != {want} implied by "
                f"taxonomy and mode {self.mode.value}"
            )

    @property
    def config(self) -> VaeConfig:
        return self.params.config

    def require_mode(self, mode) -> None:
        if mode is not None and ConditionMode(mode) is not self.mode:
            raise ModeMismatchError(
                f"checkpoint was trained with mode {self.mode.value}, "
                f"caller expects {ConditionMode(mode).value}"
            )


@dataclass
class EpochLoss:
    epoch: int
    loss: float
    recon: float
    kl: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list  # EpochLoss; entry 0 is the pre-training evaluation loss
    step_losses: list


def evaluate_loss(params: ModelParams, features, conditions, beta=None, batch_size=4096):
    """Deterministic loss (``eps = 0``) over a whole dataset: (loss, recon, kl)."""
    n = len(features)
    zeros = np.zeros((min(batch_size, n), params.config.latent_dim), dtype=params.dtype)
    totals = np.zeros(3)
    for start in range(0, n, batch_size):
        x = features[start : start + batch_size]
        c = conditions[start : start + batch_size]
        terms = elbo_terms(params, x, c, zeros[: len(x)], beta)
        totals += np.array([float(t) for t in terms]) * len(x)
    return tuple(float(v) for v in totals / n)


def _fit_standardizer(params: ModelParams, features: np.ndarray) -> None:
    # one global shift/scale rather than per-dimension statistics, so a model
    # pre-trained on one domain sees another domain on the same scale
    mean = float(features.mean(dtype=np.float64))
    std = float(features.std(dtype=np.float64))
    d = params.config.input_dim
    params.input_shift = np.full(d, mean, dtype=params.dtype)
    params.input_scale = np.full(d, std if std > 1e-6 else 1.0, dtype=params.dtype)


def train(
    data: TrainingSet,
    cfg: TrainConfig,
    init: Checkpoint | None = None,
    vae_config: VaeConfig | None = None,
    taxonomy: Taxonomy | None = None,
    spectrogram: SpectrogramConfig | None = None,
) -> TrainResult:
    """Minimise the batch-mean negative ELBO with Adam.

    Without ``init`` the model is freshly initialised from ``cfg.seed``
    (architecture from ``vae_config``, cond_dim filled in from the taxonomy).
    With ``init`` its weights, taxonomy and standardiser are reused and a fresh
    Adam state is started.
    """
    if len(data) == 0:
        raise ConfigurationError("training set is empty")
    dtype = _DTYPES[cfg.dtype]
    init_seq, shuffle_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(3)

    if init is not None:
        if init.mode is not cfg.mode:
            raise ModeMismatchError(
                f"init checkpoint uses mode {init.mode.value}, config asks for {cfg.mode.value}"
            )
        taxonomy = init.taxonomy
        params = init.params.astype(dtype)
        spectrogram = spectrogram or init.spectrogram
    else:
        taxonomy = taxonomy or Taxonomy.from_pairs(data.pairs)
        base = vae_config or VaeConfig(input_dim=data.features.shape[1])
        arch = replace(base, cond_dim=taxonomy.cond_dim(cfg.mode), beta=cfg.beta)
        params = init_params(arch, np.random.default_rng(init_seq), dtype)
        if cfg.standardize:
            _fit_standardizer(params, data.features)

    if params.config.input_dim != data.features.shape[1]:
        raise ConfigurationError(
            f"model input_dim {params.config.input_dim} != feature dim {data.features.shape[1]}"
        )
    features = data.features.astype(dtype, copy=False)
    conditions = data.conditions(taxonomy, cfg.mode).astype(dtype)

    trace = [EpochLoss(0, *evaluate_loss(params, features, conditions, cfg.beta))]
    step_losses = []
    tensors = params.tensors()
    adam = AdamState.zeros_like(tensors, lr=cfg.lr)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    n = len(features)
    latent = params.config.latent_dim

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            eps = noise_rng.standard_normal((len(idx), latent)).astype(dtype)
            loss, recon, kl, grads = elbo_loss_and_grads(
                params, features[idx], conditions[idx], eps, cfg.beta
            )
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch, b, loss)
            adam_step(tensors, grads, adam)
            step_losses.append(loss)
            sums += np.array([loss, recon, kl]) * len(idx)
        trace.append(EpochLoss(epoch, *(float(v) for v in sums / n)))

    stored = params.astype(np.float32)
    meta = {
        "epochs_run": cfg.epochs,
        "final_loss": trace[-1].loss,
        "seed": cfg.seed,
        "beta": cfg.beta,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
    }
    if init is not None:
        meta["warm_start"] = True
    ckpt = Checkpoint(stored, taxonomy, cfg.mode, spectrogram, meta)
    return TrainResult(ckpt, trace, step_losses)


def finetune(checkpoint: Checkpoint, data: TrainingSet, cfg: TrainConfig) -> TrainResult:
    """Continue training ``checkpoint`` on new data with a fresh optimiser state.

    The new data's labels must already be in the checkpoint's taxonomy, and
    ``cfg.mode`` is taken from the checkpoint.
    """
    if checkpoint.config.input_dim != data.features.shape[1]:
        raise ConfigurationError(
            f"checkpoint expects {checkpoint.config.input_dim}-dim features, "
            f"data has {data.features.shape[1]}"
        )
    try:
        data.conditions(checkpoint.taxonomy, checkpoint.mode)
    except UnknownLabelError as exc:
        raise ConfigurationError(
            f"new domain is not encodable with the checkpoint taxonomy: {exc}"
        ) from None
    cfg = replace(cfg, mode=checkpoint.mode)
    return train(data, cfg, init=checkpoint)


def write_loss_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "recon", "kl"])
        for e in trace:
            w.writerow([e.epoch, repr(e.loss), repr(e.recon), repr(e.kl)])


# --- serialisation -------------------------------------------------------------


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    meta = {
        "format_version": FORMAT_VERSION,
        "vae_config": ckpt.config.to_dict(),
        "taxonomy": ckpt.taxonomy.to_dict(),
        "mode": ckpt.mode.value,
        "spectrogram": ckpt.spectrogram.to_dict() if ckpt.spectrogram else None,
        "training": ckpt.metadata,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    tensors = ckpt.params.named_tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(checkpoint_to_bytes(ckpt))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise TruncatedCheckpointError(
                f"checkpoint truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.blob) - self.pos})"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC):
        raise TruncatedCheckpointError("file too short to hold the checkpoint magic")
    head = blob[: len(MAGIC)]
    if head != MAGIC:
        if head[:7] == MAGIC[:7]:
            raise VersionMismatchError(
                f"checkpoint format version {head[7]} is not supported (expected {FORMAT_VERSION})"
            )
        raise BadMagicError("not an HCVAE checkpoint (bad magic)")
    r = _Reader(blob)
    r.pos = len(MAGIC)
    (meta_len,) = r.unpack("<I", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"metadata block is not valid JSON: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"metadata format_version {meta.get('format_version')!r}")

    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8", errors="replace")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = r.take(4 * size, f"data of {name}")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(blob):
        raise CorruptCheckpointError(f"{len(blob) - r.pos} unexpected trailing bytes")

    try:
        cfg = VaeConfig(**meta["vae_config"])
        taxonomy = Taxonomy.from_dict(meta["taxonomy"])
        mode = ConditionMode(meta["mode"])
        spec = SpectrogramConfig(**meta["spectrogram"]) if meta.get("spectrogram") else None
        params = _params_from_tensors(cfg, tensors)
        return Checkpoint(params, taxonomy, mode, spec, meta.get("training", {}))
    except (KeyError, TypeError, ValueError, DimensionError, ConfigurationError) as exc:
        raise CorruptCheckpointError(f"checkpoint contents are inconsistent: {exc}") from None


def _params_from_tensors(cfg: VaeConfig, tensors: dict) -> ModelParams:
    template = init_params(cfg, np.random.default_rng(0))
    expected = template.named_tensors()
    if [n for n, _ in expected] != list(tensors):
        raise CorruptCheckpointError("tensor table does not match the model layout")
    for name, arr in expected:
        if tensors[name].shape != arr.shape:
            raise CorruptCheckpointError(
                f"tensor {name} has shape {tensors[name].shape}, expected {arr.shape}"
            )

    def layer(prefix, act):
        return DenseLayer(tensors[f"{prefix}.weight"], tensors[f"{prefix}.bias"], act)

    relu, linear = Activation.RELU, Activation.LINEAR
    return ModelParams(
        cfg,
        [layer(f"encoder.{k}", relu) for k in range(cfg.n_hidden_enc)],
        layer("mu_head", linear),
        layer("logvar_head", linear),
        [layer(f"decoder.{k}", relu) for k in range(cfg.n_hidden_dec)],
        layer("output", linear),
        tensors["input.shift"],
        tensors["input.scale"],
    )


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
