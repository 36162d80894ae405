"""Objective evaluation: segmental SNR, STOI, corpus reports.

PESQ/DNSMOS-style scorers are not implemented natively; an external scorer
can be attached as a command template invoked per file pair.
"""

import csv
import json
import shlex
import subprocess
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from . import dsp

SEGSNR_SEG_LEN = 512       # 32 ms at 16 kHz
SEGSNR_HOP = 256           # 50% overlap
SEGSNR_FLOOR_DB = -10.0
SEGSNR_CEIL_DB = 35.0
SEGSNR_ACTIVE_REL_DB = -40.0

STOI_RATE = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_NFFT = 512
STOI_N_BANDS = 15
STOI_BAND_BASE_HZ = 150.0
STOI_SEG_FRAMES = 30       # 384 ms
STOI_BETA_DB = -15.0
STOI_SILENCE_REL_DB = -40.0


class MetricError(ValueError):
    pass


def segsnr(ref: dsp.Waveform, est: dsp.Waveform) -> float:
    """Mean of per-segment SNRs over active segments, each clamped to [-10, 35] dB."""
    if len(ref) != len(est):
        raise MetricError(f"length mismatch: {len(ref)} vs {len(est)}")
    if ref.sample_rate != est.sample_rate:
        raise MetricError("sample-rate mismatch")
    r, e = ref.samples, est.samples
    energies, snrs = [], []
    for lo in range(0, len(r) - SEGSNR_SEG_LEN + 1, SEGSNR_HOP):
        rs = r[lo:lo + SEGSNR_SEG_LEN]
        es = e[lo:lo + SEGSNR_SEG_LEN]
        p_ref = float(np.sum(rs ** 2))
        p_err = float(np.sum((rs - es) ** 2))
        energies.append(p_ref)
        snrs.append((p_ref, p_err))
    if not energies:
        raise MetricError("signal shorter than one segment")
    peak = max(energies)
    if peak <= 0:
        raise MetricError("silent reference")
    thresh = peak * 10.0 ** (SEGSNR_ACTIVE_REL_DB / 10.0)
    vals = []
    for p_ref, p_err in snrs:
        if p_ref <= thresh:
            continue
        snr = SEGSNR_CEIL_DB if p_err == 0 else 10.0 * np.log10(p_ref / p_err)
        vals.append(float(np.clip(snr, SEGSNR_FLOOR_DB, SEGSNR_CEIL_DB)))
    if not vals:
        raise MetricError("no active segments")
    return float(np.mean(vals))


def _resample_to(x, rate_in, rate_out):
    if rate_in == rate_out:
        return x
    g = np.gcd(rate_in, rate_out)
    return scipy.signal.resample_poly(x, rate_out // g, rate_in // g)


def _frames(x, frame, hop):
    n = 1 + (len(x) - frame) // hop
    idx = np.arange(frame) + hop * np.arange(n)[:, None]
    return x[idx]


def _remove_silent_frames(ref, est):
    win = np.hanning(STOI_FRAME + 2)[1:-1]
    rf = _frames(ref, STOI_FRAME, STOI_HOP) * win
    ef = _frames(est, STOI_FRAME, STOI_HOP) * win
    energy_db = 20 * np.log10(np.linalg.norm(rf, axis=1) + 1e-12)
    keep = energy_db > energy_db.max() + STOI_SILENCE_REL_DB
    rf, ef = rf[keep], ef[keep]
    n_out = STOI_FRAME + (len(rf) - 1) * STOI_HOP
    r_out = np.zeros(n_out)
    e_out = np.zeros(n_out)
    for k in range(len(rf)):
        lo = k * STOI_HOP
        r_out[lo:lo + STOI_FRAME] += rf[k]
        e_out[lo:lo + STOI_FRAME] += ef[k]
    return r_out, e_out


def third_octave_band_matrix():
    """(15, 257) 0/1 matrix grouping FFT bins into one-third octave bands."""
    freqs = np.arange(STOI_NFFT // 2 + 1) * STOI_RATE / STOI_NFFT
    centers = STOI_BAND_BASE_HZ * 2.0 ** (np.arange(STOI_N_BANDS) / 3.0)
    lo = centers / 2.0 ** (1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    obm = np.zeros((STOI_N_BANDS, len(freqs)))
    for j in range(STOI_N_BANDS):
        obm[j, (freqs >= lo[j]) & (freqs < hi[j])] = 1.0
    return obm


def _band_envelopes(x):
    win = np.hanning(STOI_FRAME + 2)[1:-1]
    frames = _frames(x, STOI_FRAME, STOI_HOP) * win
    spec = np.fft.rfft(frames, n=STOI_NFFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ third_octave_band_matrix().T)   # (n_frames, 15)


def stoi(ref: dsp.Waveform, est: dsp.Waveform) -> float:
    """Short-time objective intelligibility of est against the privileged ref."""
    if len(ref) != len(est):
        raise MetricError(f"length mismatch: {len(ref)} vs {len(est)}")
    if ref.sample_rate != est.sample_rate:
        raise MetricError("sample-rate mismatch")
    r = _resample_to(ref.samples, ref.sample_rate, STOI_RATE)
    e = _resample_to(est.samples, est.sample_rate, STOI_RATE)
    if len(r) < STOI_FRAME + (STOI_SEG_FRAMES - 1) * STOI_HOP:
        raise MetricError("signal shorter than one analysis window (384 ms)")
    r, e = _remove_silent_frames(r, e)
    xb = _band_envelopes(r)
    yb = _band_envelopes(e)
    n_frames = xb.shape[0]
    if n_frames < STOI_SEG_FRAMES:
        raise MetricError("too few active frames for analysis")
    clip_gain = 10.0 ** (-STOI_BETA_DB / 20.0)
    scores = []
    for m in range(STOI_SEG_FRAMES, n_frames + 1):
        x_seg = xb[m - STOI_SEG_FRAMES:m]               # (30, 15)
        y_seg = yb[m - STOI_SEG_FRAMES:m]
        alpha = np.linalg.norm(x_seg, axis=0) / (np.linalg.norm(y_seg, axis=0) + 1e-12)
        y_n = np.minimum(y_seg * alpha, x_seg * (1.0 + clip_gain))
        x_c = x_seg - x_seg.mean(axis=0)
        y_c = y_n - y_n.mean(axis=0)
        denom = np.linalg.norm(x_c, axis=0) * np.linalg.norm(y_c, axis=0) + 1e-12
        scores.append((x_c * y_c).sum(axis=0) / denom)
    return float(np.mean(scores))


@dataclass
class EvalReport:
    per_file: list = field(default_factory=list)
    means: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def finalize(self):
        keys = set()
        for row in self.per_file:
            keys.update(k for k, v in row.items()
                        if isinstance(v, (int, float)) and k != "index")
        self.means = {
            k: float(np.mean([row[k] for row in self.per_file if k in row]))
            for k in sorted(keys)}
        return self

    def to_json(self, path):
        doc = {"per_file": self.per_file, "means": self.means,
               "errors": self.errors, "metadata": self.metadata}
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")

    def to_csv(self, path):
        keys = sorted({k for row in self.per_file for k in row})
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.per_file)


def run_external_scorer(command_template, ref_path, est_path):
    """Run `command_template` with {ref}/{est} filled in; expects one number on stdout."""
    cmd = [part.format(ref=ref_path, est=est_path)
           for part in shlex.split(command_template)]
    out = subprocess.run(cmd, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().split()[-1])


def evaluate_corpus(pairs, external_scorers=None, metadata=None) -> EvalReport:
    """Per-file and mean metrics over (ref_path, est_path) pairs.

    external_scorers: optional {name: command_template} mapping.  Unreadable
    files are recorded as errors and the run continues.
    """
    report = EvalReport(metadata=dict(metadata or {}))
    report.metadata.setdefault("segsnr_config", {
        "segment_len": SEGSNR_SEG_LEN, "hop": SEGSNR_HOP,
        "clamp_db": [SEGSNR_FLOOR_DB, SEGSNR_CEIL_DB],
        "active_threshold_rel_db": SEGSNR_ACTIVE_REL_DB})
    for ref_path, est_path in pairs:
        row = {"ref": str(ref_path), "est": str(est_path)}
        try:
            ref = dsp.read_wav(ref_path)
            est = dsp.read_wav(est_path)
            row["segsnr_db"] = segsnr(ref, est)
            row["stoi"] = stoi(ref, est)
            for name, template in (external_scorers or {}).items():
                row[name] = run_external_scorer(template, ref_path, est_path)
        except Exception as exc:
            report.errors.append({"ref": str(ref_path), "est": str(est_path),
                                  "error": str(exc)})
            continue
        report.per_file.append(row)
    return report.finalize()
