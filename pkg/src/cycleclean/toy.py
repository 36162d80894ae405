"""Synthetic desk-scale corpus: harmonic tones plus filtered noise.

Used by the toy training preset and the acceptance suite.  Training noisy
and clean sets come from disjoint source signals (genuinely unpaired); the
test set is paired so enhancement can be scored against a reference.
"""

from pathlib import Path

import numpy as np
import scipy.signal

from . import dsp
from .data import CorpusManifest, ManifestEntry, mix_at_snr

SNR_GRID_DB = (0.0, 5.0, 10.0, 15.0)


def harmonic_tone(rng, duration=2.0, rate=dsp.SAMPLE_RATE):
    """Random fundamental with decaying harmonics and a slow envelope.

    All partials stay below 2.5 kHz so the tone band is disjoint from the
    toy noise band, keeping the denoising task learnable in a short run.
    """
    n = int(duration * rate)
    t = np.arange(n) / rate
    f0 = rng.uniform(150.0, 300.0)
    x = np.zeros(n)
    for k in range(1, rng.integers(4, 8)):
        if k * f0 > 2500.0:
            break
        x += rng.uniform(0.5, 1.0) / k * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    x *= env
    return dsp.Waveform(0.3 * x / np.max(np.abs(x)), rate)


def filtered_noise(rng, duration=2.0, rate=dsp.SAMPLE_RATE):
    """Band-limited noise occupying 4-7 kHz, clear of the tone band."""
    n = int(duration * rate)
    x = rng.standard_normal(n)
    sos = scipy.signal.butter(4, [4000.0, 7000.0], btype="bandpass",
                              fs=rate, output="sos")
    x = scipy.signal.sosfilt(sos, x)
    return dsp.Waveform(0.3 * x / np.max(np.abs(x)), rate)


def make_toy_corpus(root, n_train=12, n_test=4, seed=0):
    """Write train/{noisy,clean} (unpaired) and test/{noisy,clean} (paired) WAVs.

    Returns (train_manifest_path, test_pairs).
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    for sub in ("train/noisy", "train/clean", "test/noisy", "test/clean"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    noisy_entries, clean_entries = [], []
    for k in range(n_train):
        # disjoint source tones for the noisy and clean sides
        src = harmonic_tone(rng)
        mix, _ = mix_at_snr(src, filtered_noise(rng),
                            SNR_GRID_DB[k % len(SNR_GRID_DB)], rng)
        p = root / "train" / "noisy" / f"noisy_{k:03d}.wav"
        dsp.write_wav(p, mix)
        noisy_entries.append(ManifestEntry(str(p.relative_to(root)), mix.duration))

        clean = harmonic_tone(rng)
        p = root / "train" / "clean" / f"clean_{k:03d}.wav"
        dsp.write_wav(p, clean)
        clean_entries.append(ManifestEntry(str(p.relative_to(root)), clean.duration))

    test_pairs = []
    for k in range(n_test):
        clean = harmonic_tone(rng)
        mix, _ = mix_at_snr(clean, filtered_noise(rng),
                            SNR_GRID_DB[k % len(SNR_GRID_DB)], rng)
        ref_p = root / "test" / "clean" / f"clean_{k:03d}.wav"
        est_p = root / "test" / "noisy" / f"noisy_{k:03d}.wav"
        dsp.write_wav(ref_p, clean)
        dsp.write_wav(est_p, mix)
        test_pairs.append((ref_p, est_p))

    manifest = CorpusManifest(tuple(noisy_entries), tuple(clean_entries),
                              seed=seed, root=root)
    manifest_path = root / "train_manifest.json"
    manifest.to_file(manifest_path)
    return manifest_path, test_pairs
