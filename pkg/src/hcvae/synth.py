"""Deterministic miniature machine-sound corpus.

Every (type, id) pair hums a harmonic series at ``base_freq + freq_offset``
with the ID's amplitude profile, plus white noise. Anomalies perturb that
signature in one of three ways.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav
from .errors import ConfigurationError, UnknownLabelError

_ANOMALY_SEED_BASE = 1_000_000


class AnomalyKind(str, enum.Enum):
    DETUNED_HARMONIC = "detuned_harmonic"
    ADDED_CLANK = "added_clank"
    BROADBAND_NOISE = "broadband_noise"


@dataclass(frozen=True)
class MachineType:
    name: str
    base_freq: float


@dataclass(frozen=True)
class MachineId:
    name: str
    freq_offset: float = 0.0
    amplitudes: tuple = (0.3,)


@dataclass(frozen=True)
class SynthSpec:
    machine_types: tuple
    ids: tuple
    clip_seconds: float = 10.0
    sample_rate: int = 16000
    noise_level: float = 0.01
    anomaly_kind: AnomalyKind = AnomalyKind.DETUNED_HARMONIC
    anomaly_strength: float = 0.0
    seed: int = 0
    # per-clip variation of normal sounds
    freq_jitter: float = 0.0
    amp_jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "machine_types", tuple(
            t if isinstance(t, MachineType) else MachineType(**t) for t in self.machine_types
        ))
        object.__setattr__(self, "ids", tuple(
            i if isinstance(i, MachineId) else MachineId(i["name"], i.get("freq_offset", 0.0),
                                                        tuple(i.get("amplitudes", (0.3,))))
            for i in self.ids
        ))
        object.__setattr__(self, "anomaly_kind", AnomalyKind(self.anomaly_kind))
        if not self.machine_types or not self.ids:
            raise ConfigurationError("spec needs at least one machine type and one id")
        if self.clip_seconds <= 0:
            raise ConfigurationError("clip_seconds must be > 0")
        if self.noise_level < 0 or self.freq_jitter < 0 or self.amp_jitter < 0:
            raise ConfigurationError("noise_level and jitters must be >= 0")
        nyquist = self.sample_rate / 2
        detune = self.anomaly_strength if self.anomaly_kind is AnomalyKind.DETUNED_HARMONIC else 0.0
        for t in self.machine_types:
            for i in self.ids:
                top = (t.base_freq + i.freq_offset + self.freq_jitter + abs(detune)) * len(i.amplitudes)
                low = t.base_freq + i.freq_offset - self.freq_jitter - abs(detune)
                if top >= nyquist or low <= 0:
                    raise ConfigurationError(
                        f"harmonics of ({t.name}, {i.name}) leave (0, {nyquist}) Hz"
                    )

    @property
    def type_names(self):
        return [t.name for t in self.machine_types]

    @property
    def id_names(self):
        return [i.name for i in self.ids]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anomaly_kind"] = self.anomaly_kind.value
        for i in d["ids"]:
            i["amplitudes"] = list(i["amplitudes"])
        return d

    @classmethod
    def from_dict(cls, d) -> "SynthSpec":
        return cls(**d)


def load_spec(path) -> SynthSpec:
    with open(path) as fh:
        return SynthSpec.from_dict(json.load(fh))


def _lookup(spec, type_label, id_label):
    try:
        ti = spec.type_names.index(type_label)
    except ValueError:
        raise UnknownLabelError(f"unknown machine type {type_label!r}") from None
    try:
        ii = spec.id_names.index(id_label)
    except ValueError:
        raise UnknownLabelError(f"unknown machine id {id_label!r}") from None
    return ti, ii


def generate_clip(spec: SynthSpec, type_label, id_label, anomaly: bool, clip_seed: int) -> Waveform:
    """One clip; the random draws do not depend on ``anomaly``, so strength 0 is a no-op."""
    ti, ii = _lookup(spec, type_label, id_label)
    mtype, mid = spec.machine_types[ti], spec.ids[ii]
    base_seq, anomaly_seq = np.random.SeedSequence([spec.seed, ti, ii, clip_seed]).spawn(2)
    rng = np.random.default_rng(base_seq)
    arng = np.random.default_rng(anomaly_seq)

    n = int(round(spec.clip_seconds * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    k = np.arange(1, len(mid.amplitudes) + 1)
    f0 = mtype.base_freq + mid.freq_offset + spec.freq_jitter * rng.uniform(-1.0, 1.0)
    amps = np.asarray(mid.amplitudes) * (1.0 + spec.amp_jitter * rng.uniform(-1.0, 1.0, len(k)))
    phases = rng.uniform(0.0, 2.0 * np.pi, len(k))
    noise = rng.standard_normal(n)

    # anomaly draws happen unconditionally to keep both streams aligned
    detune_sign = 1.0 if arng.random() < 0.5 else -1.0
    clank_starts = np.sort(arng.uniform(0.0, spec.clip_seconds, max(1, int(4 * spec.clip_seconds))))
    extra_noise = arng.standard_normal(n)

    strength = spec.anomaly_strength if anomaly else 0.0
    if spec.anomaly_kind is AnomalyKind.DETUNED_HARMONIC:
        f0 = f0 + detune_sign * strength

    x = (amps[:, None] * np.sin(2.0 * np.pi * k[:, None] * f0 * t + phases[:, None])).sum(axis=0)
    x = x + spec.noise_level * noise

    if spec.anomaly_kind is AnomalyKind.ADDED_CLANK:
        for s in clank_starts:
            dt = t - s
            on = (dt >= 0) & (dt < 0.05)
            x[on] += strength * np.exp(-dt[on] / 0.005) * np.sin(2.0 * np.pi * 3000.0 * dt[on])
    elif spec.anomaly_kind is AnomalyKind.BROADBAND_NOISE:
        x = x + strength * extra_noise
    return Waveform(x, spec.sample_rate)


def clip_seeds(n_normal_train, n_normal_test, n_anomaly_test):
    """Disjoint seed ranges: train normals, test normals, test anomalies."""
    if n_normal_train + n_normal_test > _ANOMALY_SEED_BASE:
        raise ConfigurationError("too many normal clips for the seed partition")
    train = range(n_normal_train)
    test = range(n_normal_train, n_normal_train + n_normal_test)
    anomalous = range(_ANOMALY_SEED_BASE, _ANOMALY_SEED_BASE + n_anomaly_test)
    return train, test, anomalous


def generate_dataset(spec: SynthSpec, root, n_normal_train, n_normal_test, n_anomaly_test) -> dict:
    """Write ``<root>/{train,test}/<type>/<id>/{normal,abnormal}/*.wav``.

    Returns ``{"train": path, "test": path}``. The spec is saved as
    ``<root>/spec.json``.
    """
    root = Path(root)
    train_root, test_root = root / "train", root / "test"
    train_seeds, test_seeds, anomaly_seeds = clip_seeds(n_normal_train, n_normal_test, n_anomaly_test)
    for t in spec.type_names:
        for i in spec.id_names:
            for s in train_seeds:
                write_wav(train_root / t / i / "normal" / f"normal_{s:06d}.wav",
                          generate_clip(spec, t, i, False, s))
            for s in test_seeds:
                write_wav(test_root / t / i / "normal" / f"normal_{s:06d}.wav",
                          generate_clip(spec, t, i, False, s))
            for s in anomaly_seeds:
                write_wav(test_root / t / i / "abnormal" / f"anomaly_{s:07d}.wav",
                          generate_clip(spec, t, i, True, s))
    root.mkdir(parents=True, exist_ok=True)
    (root / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return {"train": train_root, "test": test_root}
