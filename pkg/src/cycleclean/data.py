"""Corpus manifests, SNR-controlled mixing, and the unpaired crop sampler.

Training inputs are 108-frame crops of compressed spectra.  In unpaired mode
the clean target is always drawn from a different utterance than the noisy
input; paired mode (for parallel-data experiments) uses the aligned clean
counterpart instead.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp

CROP_FRAMES = 108


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    duration: float
    speaker_id: str | None = None


@dataclass(frozen=True)
class CorpusManifest:
    noisy_entries: tuple
    clean_entries: tuple
    seed: int = 0
    root: Path = Path(".")

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        doc = json.loads(path.read_text())
        def entries(items):
            return tuple(ManifestEntry(e["path"], e["duration"], e.get("speaker_id"))
                         for e in items)
        return cls(entries(doc["noisy"]), entries(doc["clean"]),
                   seed=doc.get("seed", 0), root=path.parent)

    def to_file(self, path):
        doc = {
            "noisy": [{"path": e.path, "duration": e.duration,
                       **({"speaker_id": e.speaker_id} if e.speaker_id else {})}
                      for e in self.noisy_entries],
            "clean": [{"path": e.path, "duration": e.duration,
                       **({"speaker_id": e.speaker_id} if e.speaker_id else {})}
                      for e in self.clean_entries],
            "seed": self.seed,
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    def validate(self):
        if not self.noisy_entries or not self.clean_entries:
            raise DataError("manifest needs non-empty noisy and clean lists")
        for e in (*self.noisy_entries, *self.clean_entries):
            if not (self.root / e.path).exists():
                raise DataError(f"manifest references missing file: {e.path}")


def build_manifest(noisy_dir, clean_dir, seed=0) -> CorpusManifest:
    """Scan two directories of WAV files into a manifest (paths kept relative)."""
    noisy_dir, clean_dir = Path(noisy_dir), Path(clean_dir)
    root = Path(".").resolve()

    def scan(d):
        entries = []
        for p in sorted(d.glob("*.wav")):
            w = dsp.read_wav(p)
            entries.append(ManifestEntry(str(p.resolve().relative_to(root)
                                             if p.resolve().is_relative_to(root)
                                             else p.resolve()),
                                         w.duration))
        return tuple(entries)

    return CorpusManifest(scan(noisy_dir), scan(clean_dir), seed=seed, root=root)


def mix_at_snr(clean: dsp.Waveform, noise: dsp.Waveform, snr_db: float,
               rng: np.random.Generator | None = None):
    """clean + g * noise with g chosen from full-utterance RMS powers.

    Returns (mixture, gain).  Noise shorter than the clean signal is tiled
    with a random circular offset.
    """
    if clean.sample_rate != noise.sample_rate:
        raise DataError("sample-rate mismatch between clean and noise")
    p_clean = float(np.mean(clean.samples ** 2))
    p_noise = float(np.mean(noise.samples ** 2))
    if p_clean <= 0 or p_noise <= 0:
        raise DataError("silent clean or noise signal: SNR undefined")
    n = noise.samples
    if len(n) < len(clean.samples):
        rng = rng or np.random.default_rng()
        n = np.roll(n, int(rng.integers(len(n))))
        reps = -(-len(clean.samples) // len(n))
        n = np.tile(n, reps)
    n = n[:len(clean.samples)]
    # gain from full-length powers; the used segment has the same RMS by tiling
    p_seg = float(np.mean(n ** 2))
    gain = float(np.sqrt(p_clean / (p_seg * 10.0 ** (snr_db / 10.0))))
    return dsp.Waveform(clean.samples + gain * n, clean.sample_rate), gain


def measured_snr_db(clean: dsp.Waveform, noise_component: np.ndarray):
    p_clean = float(np.mean(clean.samples ** 2))
    p_noise = float(np.mean(np.asarray(noise_component) ** 2))
    return 10.0 * np.log10(p_clean / p_noise)


@dataclass
class TrainingBatch:
    noisy_mag: np.ndarray     # (B, T, F) compressed
    noisy_phase: np.ndarray
    clean_mag: np.ndarray
    clean_phase: np.ndarray
    noisy_ri: np.ndarray      # (B, 2, T, F) compressed domain
    clean_ri: np.ndarray
    noisy_ids: list
    clean_ids: list


class BatchSampler:
    """Deterministic stream of 108-frame crops from a manifest.

    Single-consumer: the internal RNG advances with each batch.  Utterances
    shorter than the crop are reflect-padded in time.
    """

    def __init__(self, manifest: CorpusManifest, batch_size=4, paired=False,
                 compression=dsp.DEFAULT_COMPRESSION, crop_frames=CROP_FRAMES,
                 seed=None):
        manifest.validate()
        if paired and len(manifest.noisy_entries) != len(manifest.clean_entries):
            raise DataError("paired mode needs aligned noisy/clean lists")
        if not paired and len(manifest.noisy_entries) < 1:
            raise DataError("empty manifest")
        self.manifest = manifest
        self.batch_size = batch_size
        self.paired = paired
        self.compression = compression
        self.crop_frames = crop_frames
        self.rng = np.random.default_rng(manifest.seed if seed is None else seed)
        self._cache = {}

    def _spectra(self, idx, which):
        key = (which, idx)
        if key not in self._cache:
            entry = (self.manifest.noisy_entries if which == "noisy"
                     else self.manifest.clean_entries)[idx]
            w = dsp.read_wav(self.manifest.root / entry.path)
            if w.sample_rate != dsp.SAMPLE_RATE:
                w = dsp.resample(w, dsp.SAMPLE_RATE)
            pair = dsp.compress(dsp.stft(w), self.compression)
            self._cache[key] = pair
        return self._cache[key]

    def _crop(self, pair, offset):
        n = pair.mag.shape[0]
        L = self.crop_frames
        mag, phase = pair.mag, pair.phase
        while mag.shape[0] < L:
            # reflect pad caps at n-1 per pass; repeat for very short utterances
            step = min(L - mag.shape[0], mag.shape[0] - 1) if mag.shape[0] > 1 else 1
            mode = "reflect" if mag.shape[0] > 1 else "edge"
            mag = np.pad(mag, [(0, step), (0, 0)], mode=mode)
            phase = np.pad(phase, [(0, step), (0, 0)], mode=mode)
        return mag[offset:offset + L], phase[offset:offset + L]

    def _offset(self, pair):
        n = pair.mag.shape[0]
        if n <= self.crop_frames:
            return 0
        return int(self.rng.integers(n - self.crop_frames + 1))

    def next_batch(self) -> TrainingBatch:
        n_mag, n_ph, c_mag, c_ph, n_ids, c_ids = [], [], [], [], [], []
        for _ in range(self.batch_size):
            ni = int(self.rng.integers(len(self.manifest.noisy_entries)))
            noisy = self._spectra(ni, "noisy")
            off = self._offset(noisy)
            if self.paired:
                ci = ni
                clean = self._spectra(ci, "clean")
                c_off = off
            else:
                ci = int(self.rng.integers(len(self.manifest.clean_entries)))
                # unpaired contract: never the aligned counterpart
                while len(self.manifest.clean_entries) > 1 and ci == ni:
                    ci = int(self.rng.integers(len(self.manifest.clean_entries)))
                clean = self._spectra(ci, "clean")
                c_off = self._offset(clean)
            m, p = self._crop(noisy, off)
            n_mag.append(m)
            n_ph.append(p)
            m, p = self._crop(clean, c_off)
            c_mag.append(m)
            c_ph.append(p)
            n_ids.append(("noisy", ni, off))
            c_ids.append(("clean", ci, c_off))
        n_mag = np.stack(n_mag)
        n_ph = np.stack(n_ph)
        c_mag = np.stack(c_mag)
        c_ph = np.stack(c_ph)
        return TrainingBatch(
            noisy_mag=n_mag, noisy_phase=n_ph,
            clean_mag=c_mag, clean_phase=c_ph,
            noisy_ri=np.stack([n_mag * np.cos(n_ph), n_mag * np.sin(n_ph)], axis=1),
            clean_ri=np.stack([c_mag * np.cos(c_ph), c_mag * np.sin(c_ph)], axis=1),
            noisy_ids=n_ids, clean_ids=c_ids)
