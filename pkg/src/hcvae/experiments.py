"""Synthetic benchmark and domain-adaptation runs, fully in memory."""

from __future__ import annotations

from dataclasses import dataclass


from .audio import SpectrogramConfig, extract_features, mel_filterbank
from .conditioning import ConditionMode, build_taxonomy
from .corpus import Label
from .evaluation import EvalConfig, EvalReport, group_aucs, score_clip
from .synth import SynthSpec, clip_seeds, generate_clip
from .training import TrainConfig, TrainingSet, TrainResult, finetune, train

MODES = (ConditionMode.NONE, ConditionMode.LEVEL1, ConditionMode.LEVEL2, ConditionMode.BOTH)
BENCHMARK_COUNTS = (60, 20, 20)
BENCHMARK_EPOCHS = 30

_TYPES = ({"name": "fan", "base_freq": 200.0}, {"name": "pump", "base_freq": 310.0})
# Harmonic amplitude profiles, one per ID index.
_PROFILES = (
    (0.25, 0.15, 0.10, 0.06),
    (0.25, 0.12, 0.12, 0.05),
    (0.25, 0.14, 0.08, 0.07),
    (0.25, 0.10, 0.13, 0.04),
    (0.25, 0.13, 0.11, 0.05),
    (0.25, 0.11, 0.09, 0.06),
    (0.25, 0.16, 0.10, 0.04),
)


def _spec(ids, seed) -> SynthSpec:
    return SynthSpec(
        machine_types=_TYPES,
        ids=ids,
        clip_seconds=2.0,
        noise_level=0.01,
        anomaly_kind="detuned_harmonic",
        anomaly_strength=30.0,
        seed=seed,
        freq_jitter=3.0,
        amp_jitter=0.1,
    )


def benchmark_spec(seed: int = 0) -> SynthSpec:
    """2 types x 2 IDs; a 30 Hz detune moves an ID onto its sibling's pitch."""
    return _spec(
        [
            {"name": "id_00", "freq_offset": 0.0, "amplitudes": _PROFILES[0]},
            {"name": "id_02", "freq_offset": 30.0, "amplitudes": _PROFILES[1]},
        ],
        seed,
    )


def domain_specs(seed: int = 0) -> tuple:
    """Domain 1 has even IDs 00..06, domain 2 odd IDs 01..05, interleaved in pitch."""
    def ids(ks):
        return [{"name": f"id_{k:02d}", "freq_offset": 10.0 * k, "amplitudes": _PROFILES[k]} for k in ks]

    return _spec(ids((0, 2, 4, 6)), seed), _spec(ids((1, 3, 5)), seed)


def training_set(spec: SynthSpec, n_clips: int, cfg: SpectrogramConfig | None = None) -> TrainingSet:
    cfg = cfg or SpectrogramConfig(sample_rate=spec.sample_rate)
    fb = mel_filterbank(cfg)
    seeds, _, _ = clip_seeds(n_clips, 0, 0)
    return TrainingSet.from_clips(
        (extract_features(generate_clip(spec, t, i, False, s), cfg, fb), t, i)
        for t in spec.type_names
        for i in spec.id_names
        for s in seeds
    )


def held_out_clips(spec: SynthSpec, n_train: int, n_normal: int, n_anomaly: int, cfg=None) -> list:
    """``(clip_id, FeatureMatrix, type, id, Label)`` for the held-out clips."""
    cfg = cfg or SpectrogramConfig(sample_rate=spec.sample_rate)
    fb = mel_filterbank(cfg)
    _, normal_seeds, anomaly_seeds = clip_seeds(n_train, n_normal, n_anomaly)
    out = []
    for t in spec.type_names:
        for i in spec.id_names:
            for anomalous, seeds in ((False, normal_seeds), (True, anomaly_seeds)):
                label = Label.ANOMALY if anomalous else Label.NORMAL
                for s in seeds:
                    fm = extract_features(generate_clip(spec, t, i, anomalous, s), cfg, fb)
                    out.append((f"{t}/{i}/{label.value}/{s}", fm, t, i, label))
    return out


@dataclass
class BenchmarkRun:
    mode: ConditionMode
    result: TrainResult
    report: EvalReport


def run_benchmark(seed: int = 0, epochs: int = BENCHMARK_EPOCHS, modes=MODES,
                  counts=BENCHMARK_COUNTS, batch_size: int = 512) -> dict:
    """Train every requested variant on the benchmark and score its test split."""
    spec = benchmark_spec(seed)
    n_train, n_normal, n_anomaly = counts
    data = training_set(spec, n_train)
    held_out = held_out_clips(spec, n_train, n_normal, n_anomaly)
    runs = {}
    for mode in map(ConditionMode, modes):
        res = train(data, TrainConfig(epochs=epochs, batch_size=batch_size, seed=seed, mode=mode))
        records = [score_clip(res.checkpoint, fm, t, i, clip_id=cid, label=lab)
                   for cid, fm, t, i, lab in held_out]
        runs[mode] = BenchmarkRun(mode, res, EvalReport(records, group_aucs(records, EvalConfig())))
    return runs


@dataclass
class AdaptationRun:
    scratch: TrainResult
    finetuned: TrainResult

    @property
    def target(self) -> float:
        return self.scratch.trace[-1].loss

    @property
    def epochs_to_target(self) -> int | None:
        """First fine-tuning epoch whose loss is at or below the scratch target."""
        for e in self.finetuned.trace[1:]:
            if e.loss <= self.target:
                return e.epoch
        return None


def run_domain_adaptation(seed: int = 0, mode=ConditionMode.BOTH, pre_epochs: int = 40,
                          scratch_epochs: int = 20, finetune_epochs: int = 10,
                          n_domain1: int = 60, n_domain2: int = 20,
                          batch_size: int = 512) -> AdaptationRun:
    """Pre-train on domain 1, then fine-tune on domain 2 and compare with scratch.

    Both domains are encoded with their union vocabulary so domain-2 IDs have
    reserved slots from the start.
    """
    d1, d2 = domain_specs(seed)
    tax = build_taxonomy(d1, d2)
    data1, data2 = training_set(d1, n_domain1), training_set(d2, n_domain2)

    def cfg(epochs):
        return TrainConfig(epochs=epochs, batch_size=batch_size, seed=seed, mode=mode)

    pre = train(data1, cfg(pre_epochs), taxonomy=tax)
    scratch = train(data2, cfg(scratch_epochs), taxonomy=tax)
    tuned = finetune(pre.checkpoint, data2, cfg(finetune_epochs))
    return AdaptationRun(scratch, tuned)
