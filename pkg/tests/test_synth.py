import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcvae.audio import SpectrogramConfig, read_wav, stft_power
from hcvae.conditioning import build_taxonomy
from hcvae.corpus import Label, scan_dataset
from hcvae.errors import ConfigurationError, UnknownLabelError
from hcvae.experiments import benchmark_spec, domain_specs
from hcvae.synth import SynthSpec, clip_seeds, generate_clip, generate_dataset, load_spec

TONE = SynthSpec(
    machine_types=[{"name": "fan", "base_freq": 1000.0}],
    ids=[{"name": "id_00", "amplitudes": [0.5]}],
    clip_seconds=1.0,
    noise_level=0.0,
)


def mean_power(w):
    return stft_power(w, SpectrogramConfig()).mean(axis=0)


class TestClip:
    def test_pure_tone_peaks_at_bin_64(self):
        power = stft_power(generate_clip(TONE, "fan", "id_00", False, 0))
        assert np.all(np.argmax(power, axis=1) == 64)

    def test_length_and_rate(self):
        w = generate_clip(TONE, "fan", "id_00", False, 0)
        assert len(w.samples) == 16000 and w.sample_rate == 16000

    def test_deterministic(self):
        spec = benchmark_spec(0)
        a = generate_clip(spec, "pump", "id_02", True, 7)
        b = generate_clip(spec, "pump", "id_02", True, 7)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_seeds_matter(self):
        spec = benchmark_spec(0)
        a = generate_clip(spec, "fan", "id_00", False, 1).samples
        assert not np.array_equal(a, generate_clip(spec, "fan", "id_00", False, 2).samples)
        assert not np.array_equal(a, generate_clip(benchmark_spec(1), "fan", "id_00", False, 1).samples)

    @pytest.mark.parametrize("kind", ["detuned_harmonic", "added_clank", "broadband_noise"])
    def test_zero_strength_anomaly_is_normal(self, kind):
        spec = dataclasses.replace(benchmark_spec(0), anomaly_kind=kind, anomaly_strength=0.0)
        a = generate_clip(spec, "fan", "id_02", False, 3)
        b = generate_clip(spec, "fan", "id_02", True, 3)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_pairs_have_distinct_dominant_bins(self):
        for spec in (benchmark_spec(0), *domain_specs(0)):
            peaks = {
                (t, i): int(np.argmax(mean_power(generate_clip(spec, t, i, False, 0))))
                for t in spec.type_names for i in spec.id_names
            }
            # distinct within each type; across types the fundamentals differ too
            assert len(set(peaks.values())) == len(peaks)

    def test_detune_moves_the_fundamental(self):
        spec = benchmark_spec(0)
        normal = np.argmax(mean_power(generate_clip(spec, "fan", "id_00", False, 5)))
        anomalous = np.argmax(mean_power(generate_clip(spec, "fan", "id_00", True, 5)))
        assert abs(int(anomalous) - int(normal)) >= 1

    def test_clank_adds_energy_near_3khz(self):
        spec = dataclasses.replace(benchmark_spec(0), anomaly_kind="added_clank", anomaly_strength=0.5)
        band = slice(180, 205)  # about 2.8 to 3.2 kHz
        n = mean_power(generate_clip(spec, "pump", "id_00", False, 5))[band].sum()
        a = mean_power(generate_clip(spec, "pump", "id_00", True, 5))[band].sum()
        assert a > 10 * n

    def test_broadband_noise_raises_the_floor(self):
        spec = dataclasses.replace(benchmark_spec(0), anomaly_kind="broadband_noise", anomaly_strength=0.1)
        high = slice(300, 513)
        n = mean_power(generate_clip(spec, "pump", "id_00", False, 5))[high].mean()
        a = mean_power(generate_clip(spec, "pump", "id_00", True, 5))[high].mean()
        assert a > 10 * n

    def test_unknown_labels(self):
        with pytest.raises(UnknownLabelError):
            generate_clip(TONE, "pump", "id_00", False, 0)
        with pytest.raises(UnknownLabelError):
            generate_clip(TONE, "fan", "id_01", False, 0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.05, 0.5), st.integers(0, 10**6), st.booleans())
    def test_finite_and_sized(self, seconds, seed, anomaly):
        spec = dataclasses.replace(benchmark_spec(seed % 7), clip_seconds=seconds)
        w = generate_clip(spec, "fan", "id_02", anomaly, seed)
        assert len(w.samples) == round(seconds * 16000)
        assert np.isfinite(w.samples).all()


class TestSpec:
    def test_harmonics_above_nyquist_rejected(self):
        with pytest.raises(ConfigurationError):
            SynthSpec([{"name": "fan", "base_freq": 3000.0}], [{"name": "id_00", "amplitudes": [1, 1, 1]}])

    def test_detune_below_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            SynthSpec([{"name": "fan", "base_freq": 20.0}], [{"name": "id_00"}], anomaly_strength=30.0)

    @pytest.mark.parametrize("kw", [{"noise_level": -0.1}, {"clip_seconds": 0.0}, {"anomaly_kind": "rattle"}])
    def test_invalid_fields(self, kw):
        with pytest.raises((ConfigurationError, ValueError)):
            SynthSpec([{"name": "fan", "base_freq": 200.0}], [{"name": "id_00"}], **kw)

    def test_dict_and_file_roundtrip(self, tmp_path):
        spec = benchmark_spec(3)
        assert SynthSpec.from_dict(spec.to_dict()) == spec
        (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
        assert load_spec(tmp_path / "s.json") == spec

    def test_seed_partition_disjoint(self):
        train, test, anom = clip_seeds(60, 20, 20)
        assert not set(train) & set(test) and not (set(train) | set(test)) & set(anom)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    spec = dataclasses.replace(benchmark_spec(0), clip_seconds=0.25)
    root = tmp_path_factory.mktemp("synth")
    return spec, root, generate_dataset(spec, root, 20, 5, 5)


class TestDataset:
    def test_counts_and_layout(self, small_corpus):
        _, root, paths = small_corpus
        assert len(list(root.rglob("*.wav"))) == 2 * 2 * 30
        assert len(list((root / "train/fan/id_00/normal").glob("*.wav"))) == 20
        assert len(list((root / "test/pump/id_02/normal").glob("*.wav"))) == 5
        assert len(list((root / "test/pump/id_02/abnormal").glob("*.wav"))) == 5
        clips = scan_dataset(paths["test"])
        assert sum(c.label is Label.ANOMALY for c in clips) == 20

    def test_taxonomy_roundtrip(self, small_corpus):
        spec, _, paths = small_corpus
        for sub in ("train", "test"):
            tax = build_taxonomy(paths[sub])
            assert tax.level1_labels == tuple(sorted(spec.type_names))
            assert tax.level2_labels == tuple(sorted(spec.id_names))
        assert build_taxonomy(paths["train"]) == build_taxonomy(spec)

    def test_written_audio_matches_generator(self, small_corpus):
        spec, root, _ = small_corpus
        w = read_wav(root / "test/fan/id_02/abnormal/anomaly_1000003.wav")
        ref = generate_clip(spec, "fan", "id_02", True, 1_000_003)
        assert np.max(np.abs(w.samples - ref.samples)) <= 0.5 / 32768 + 1e-12

    def test_regeneration_bit_identical(self, small_corpus, tmp_path):
        spec, root, _ = small_corpus
        generate_dataset(spec, tmp_path, 20, 5, 5)
        files = sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
        for rel in files:
            assert (root / rel).read_bytes() == (tmp_path / rel).read_bytes()
        assert load_spec(root / "spec.json") == spec
