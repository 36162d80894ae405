import json

import numpy as np
import pytest

from cycleclean import dsp
from cycleclean.metrics import (MetricError, evaluate_corpus,
                                run_external_scorer, segsnr, stoi,
                                third_octave_band_matrix)
from cycleclean.toy import harmonic_tone


def segsnr_oracle(ref, est):
    """Independent re-derivation: 512-sample segments, hop 256, active
    segments above -40 dB of the peak segment energy, per-segment SNR
    clamped to [-10, 35] dB, mean over active segments."""
    snrs = []
    energies = []
    for lo in range(0, len(ref) - 512 + 1, 256):
        r = ref[lo:lo + 512]
        e = est[lo:lo + 512]
        energies.append(np.sum(r * r))
        snrs.append((np.sum(r * r), np.sum((r - e) ** 2)))
    peak = max(energies)
    out = []
    for p_r, p_e in snrs:
        if p_r <= peak * 10 ** (-4.0):
            continue
        s = 35.0 if p_e == 0 else 10 * np.log10(p_r / p_e)
        out.append(min(max(s, -10.0), 35.0))
    return np.mean(out)


def stoi_oracle(ref, est, rate):
    """Independent per-sample-loop STOI with the same published constants."""
    import scipy.signal
    g = np.gcd(rate, 10000)
    r = scipy.signal.resample_poly(ref, 10000 // g, rate // g)
    e = scipy.signal.resample_poly(est, 10000 // g, rate // g)
    win = np.hanning(258)[1:-1]
    n_fr = 1 + (len(r) - 256) // 128
    rf = np.stack([r[k * 128:k * 128 + 256] * win for k in range(n_fr)])
    ef = np.stack([e[k * 128:k * 128 + 256] * win for k in range(n_fr)])
    edb = 20 * np.log10(np.linalg.norm(rf, axis=1) + 1e-12)
    keep = edb > edb.max() - 40.0
    rf, ef = rf[keep], ef[keep]
    r2 = np.zeros(256 + (len(rf) - 1) * 128)
    e2 = np.zeros_like(r2)
    for k in range(len(rf)):
        r2[k * 128:k * 128 + 256] += rf[k]
        e2[k * 128:k * 128 + 256] += ef[k]

    freqs = np.arange(257) * 10000 / 512
    centers = 150.0 * 2.0 ** (np.arange(15) / 3.0)
    bands = [(c / 2 ** (1 / 6), c * 2 ** (1 / 6)) for c in centers]

    def envelopes(x):
        n = 1 + (len(x) - 256) // 128
        env = np.zeros((n, 15))
        for k in range(n):
            spec = np.fft.rfft(x[k * 128:k * 128 + 256] * win, 512)
            p = np.abs(spec) ** 2
            for j, (lo, hi) in enumerate(bands):
                env[k, j] = np.sqrt(np.sum(p[(freqs >= lo) & (freqs < hi)]))
        return env

    xb, yb = envelopes(r2), envelopes(e2)
    clip = 10 ** (15.0 / 20.0)
    vals = []
    for m in range(30, xb.shape[0] + 1):
        xs, ys = xb[m - 30:m], yb[m - 30:m]
        for j in range(15):
            alpha = np.linalg.norm(xs[:, j]) / (np.linalg.norm(ys[:, j]) + 1e-12)
            yn = np.minimum(ys[:, j] * alpha, xs[:, j] * (1 + clip))
            xc = xs[:, j] - xs[:, j].mean()
            yc = yn - yn.mean()
            vals.append(np.dot(xc, yc) /
                        (np.linalg.norm(xc) * np.linalg.norm(yc) + 1e-12))
    return float(np.mean(vals))


def _wave(x):
    return dsp.Waveform(np.asarray(x, float), 16000)


class TestSegSNR:
    def test_identical_hits_ceiling(self, rng):
        x = rng.standard_normal(8000) * 0.1
        assert segsnr(_wave(x), _wave(x)) == pytest.approx(35.0)

    def test_heavy_noise_hits_floor(self, rng):
        x = rng.standard_normal(8000) * 0.01
        assert segsnr(_wave(x), _wave(x + rng.standard_normal(8000))) == \
            pytest.approx(-10.0)

    def test_matches_independent_oracle(self, rng):
        x = rng.standard_normal(16000) * 0.2
        y = x + rng.standard_normal(16000) * 0.05
        assert segsnr(_wave(x), _wave(y)) == \
            pytest.approx(segsnr_oracle(x, y), abs=1e-9)

    def test_silent_segments_excluded(self, rng):
        # loud head and tail, digital silence in the middle where the estimate
        # carries noise: the silent segments must not drag the score down
        loud = rng.standard_normal(4096) * 0.5
        x = np.concatenate([loud, np.zeros(4096), loud])
        y = x + rng.standard_normal(len(x)) * 1e-4
        got = segsnr(_wave(x), _wave(y))
        assert got == pytest.approx(segsnr_oracle(x, y), abs=1e-9)
        # and the oracle over only the loud parts agrees closely
        assert got > 30.0

    def test_length_mismatch_rejected(self, rng):
        with pytest.raises(MetricError):
            segsnr(_wave(np.ones(2000)), _wave(np.ones(2001)))

    def test_too_short_rejected(self):
        with pytest.raises(MetricError):
            segsnr(_wave(np.ones(100)), _wave(np.ones(100)))


class TestBandMatrix:
    def test_shape_and_disjoint(self):
        obm = third_octave_band_matrix()
        assert obm.shape == (15, 257)
        assert set(np.unique(obm)) <= {0.0, 1.0}
        # one-third octave bands never overlap
        assert np.all(obm.sum(axis=0) <= 1.0)

    def test_every_band_nonempty(self):
        assert np.all(third_octave_band_matrix().sum(axis=1) >= 1)

    def test_band_edges(self):
        obm = third_octave_band_matrix()
        freqs = np.arange(257) * 10000 / 512
        centers = 150.0 * 2.0 ** (np.arange(15) / 3.0)
        for j in range(15):
            sel = obm[j] > 0
            assert np.all(freqs[sel] >= centers[j] / 2 ** (1 / 6))
            assert np.all(freqs[sel] < centers[j] * 2 ** (1 / 6))


class TestStoi:
    def test_self_score_near_one(self, rng):
        x = harmonic_tone(rng, duration=1.0)
        assert stoi(x, x) >= 0.999

    def test_monotone_in_snr(self, rng):
        clean = harmonic_tone(rng, duration=1.0)
        noise = rng.standard_normal(len(clean)) * np.sqrt(np.mean(clean.samples ** 2))
        scores = []
        for snr_db in (-5.0, 5.0, 15.0):
            g = 10 ** (-snr_db / 20.0)
            scores.append(stoi(clean, _wave(clean.samples + g * noise)))
        assert scores[0] < scores[1] < scores[2]

    def test_matches_independent_oracle(self, rng):
        clean = harmonic_tone(rng, duration=1.0)
        noisy = clean.samples + rng.standard_normal(len(clean)) * 0.05
        got = stoi(clean, _wave(noisy))
        want = stoi_oracle(clean.samples, noisy, 16000)
        assert got == pytest.approx(want, abs=0.01)

    def test_too_short_rejected(self, rng):
        x = _wave(rng.standard_normal(1000))
        with pytest.raises(MetricError):
            stoi(x, x)


class TestReports:
    def _pairs(self, tmp_path, rng, n=2):
        pairs = []
        for k in range(n):
            ref = harmonic_tone(rng, duration=1.0)
            est = _wave(ref.samples + rng.standard_normal(len(ref)) * 0.01)
            rp = tmp_path / f"ref{k}.wav"
            ep = tmp_path / f"est{k}.wav"
            dsp.write_wav(rp, ref)
            dsp.write_wav(ep, est)
            pairs.append((rp, ep))
        return pairs

    def test_report_means(self, tmp_path, rng):
        report = evaluate_corpus(self._pairs(tmp_path, rng))
        assert len(report.per_file) == 2 and not report.errors
        assert report.means["segsnr_db"] == pytest.approx(
            np.mean([r["segsnr_db"] for r in report.per_file]))
        assert 0.0 < report.means["stoi"] <= 1.0

    def test_missing_file_recorded_not_fatal(self, tmp_path, rng):
        pairs = self._pairs(tmp_path, rng, n=1)
        pairs.append((tmp_path / "nope.wav", tmp_path / "nope2.wav"))
        report = evaluate_corpus(pairs)
        assert len(report.per_file) == 1
        assert len(report.errors) == 1

    def test_json_and_csv_outputs(self, tmp_path, rng):
        report = evaluate_corpus(self._pairs(tmp_path, rng, n=1))
        report.to_json(tmp_path / "r.json")
        report.to_csv(tmp_path / "r.csv")
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["means"]["segsnr_db"] == pytest.approx(
            report.per_file[0]["segsnr_db"])
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert "segsnr_db" in header and "stoi" in header

    def test_deterministic(self, tmp_path, rng):
        pairs = self._pairs(tmp_path, rng)
        a = evaluate_corpus(pairs)
        b = evaluate_corpus(pairs)
        assert a.per_file == b.per_file

    def test_external_scorer(self, tmp_path, rng):
        pairs = self._pairs(tmp_path, rng, n=1)
        script = tmp_path / "score.py"
        script.write_text("print(0.75)\n")
        report = evaluate_corpus(
            pairs, external_scorers={"fake": f"python3 {script} {{ref}} {{est}}"})
        assert report.per_file[0]["fake"] == pytest.approx(0.75)

    def test_external_scorer_gets_paths(self, tmp_path, rng):
        (ref, est), = self._pairs(tmp_path, rng, n=1)
        script = tmp_path / "size.py"
        script.write_text(
            "import os, sys\nprint(os.path.getsize(sys.argv[1]))\n")
        got = run_external_scorer(f"python3 {script} {{est}} {{ref}}",
                                  str(ref), str(est))
        assert got == est.stat().st_size
