"""Waveform <-> time-frequency conversion with power compression.

All spectra use a 512-point Hann analysis with 128-sample hop (75% overlap),
which satisfies the constant-overlap-add condition and gives 257 frequency
bins at 16 kHz.
"""

from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
import scipy.signal

WINDOW_LEN = 512
HOP = 128
N_BINS = WINDOW_LEN // 2 + 1
SAMPLE_RATE = 16000
DEFAULT_COMPRESSION = 0.5


class DspError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DspError(f"waveform must be mono 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise DspError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise DspError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class ComplexSpectrogram:
    """RI-stacked complex spectrum, shape (2, T_frames, 257)."""

    ri: np.ndarray
    frame_hop: int = HOP
    window_len: int = WINDOW_LEN
    num_samples: int | None = None  # original waveform length, for exact inversion

    def __post_init__(self):
        ri = np.asarray(self.ri, dtype=np.float64)
        if ri.ndim != 3 or ri.shape[0] != 2:
            raise DspError(f"expected ri shape (2, T, F), got {ri.shape}")
        if ri.shape[2] != N_BINS:
            raise DspError(f"expected {N_BINS} frequency bins, got {ri.shape[2]}")
        if not np.all(np.isfinite(ri)):
            raise DspError("spectrogram contains non-finite values")
        object.__setattr__(self, "ri", ri)

    @property
    def n_frames(self):
        return self.ri.shape[1]

    def as_complex(self):
        return self.ri[0] + 1j * self.ri[1]


@dataclass(frozen=True)
class MagPhasePair:
    """Decoupled (possibly compressed) magnitude and phase, each (T, 257)."""

    mag: np.ndarray
    phase: np.ndarray
    compression_exp: float = 1.0
    frame_hop: int = HOP
    window_len: int = WINDOW_LEN
    num_samples: int | None = None

    def __post_init__(self):
        mag = np.asarray(self.mag, dtype=np.float64)
        phase = np.asarray(self.phase, dtype=np.float64)
        if mag.shape != phase.shape:
            raise DspError(f"mag/phase shape mismatch: {mag.shape} vs {phase.shape}")
        if np.any(mag < 0):
            raise DspError("magnitude must be non-negative")
        if not (np.all(np.isfinite(mag)) and np.all(np.isfinite(phase))):
            raise DspError("mag/phase contain non-finite values")
        if not 0.0 < self.compression_exp <= 1.0:
            raise DspError(f"compression_exp must be in (0, 1], got {self.compression_exp}")
        object.__setattr__(self, "mag", mag)
        object.__setattr__(self, "phase", phase)


def _hann(n):
    # periodic Hann; COLA at 75% overlap
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft(w: Waveform) -> ComplexSpectrogram:
    """512-point Hann STFT with 128-sample hop; frames centered via reflect padding."""
    if w.sample_rate != SAMPLE_RATE:
        raise DspError(f"expected {SAMPLE_RATE} Hz input, got {w.sample_rate}")
    x = w.samples
    if len(x) == 0:
        raise DspError("empty waveform")
    pad = WINDOW_LEN // 2
    if len(x) < pad:
        # reflect padding needs len > pad; extend by zeros first
        x = np.pad(x, (0, pad - len(x) + 1))
    xp = np.pad(x, (pad, pad), mode="reflect")
    n_frames = (len(xp) - WINDOW_LEN) // HOP + 1
    win = _hann(WINDOW_LEN)
    frames = np.lib.stride_tricks.sliding_window_view(xp, WINDOW_LEN)[::HOP][:n_frames]
    spec = np.fft.rfft(frames * win, axis=-1)
    ri = np.stack([spec.real, spec.imag])
    return ComplexSpectrogram(ri, num_samples=len(w.samples))


def istft(s: ComplexSpectrogram) -> Waveform:
    """Overlap-add inverse with summed-squared-window normalization."""
    spec = s.as_complex()
    win = _hann(s.window_len)
    frames = np.fft.irfft(spec, n=s.window_len, axis=-1) * win
    total = s.window_len + (s.n_frames - 1) * s.frame_hop
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = win * win
    for t in range(s.n_frames):
        lo = t * s.frame_hop
        out[lo:lo + s.window_len] += frames[t]
        norm[lo:lo + s.window_len] += wsq
    valid = norm > 1e-10
    out[valid] /= norm[valid]
    if s.num_samples is not None:
        # remove the centering pad; only possible when frame metadata is carried
        pad = s.window_len // 2
        out = out[pad:pad + s.num_samples]
    return Waveform(out, SAMPLE_RATE)


def compress(s: ComplexSpectrogram, c: float = DEFAULT_COMPRESSION) -> MagPhasePair:
    """Power-compress the magnitude (|s|^c), leaving the phase untouched."""
    if not 0.0 < c <= 1.0:
        raise DspError(f"compression exponent must be in (0, 1], got {c}")
    mag = np.hypot(s.ri[0], s.ri[1])
    phase = np.arctan2(s.ri[1], s.ri[0])  # angle(0) = 0 by construction
    return MagPhasePair(mag ** c, phase, compression_exp=c,
                        frame_hop=s.frame_hop, window_len=s.window_len,
                        num_samples=s.num_samples)


def decompress(p: MagPhasePair) -> ComplexSpectrogram:
    """Undo power compression and recombine magnitude/phase into RI form."""
    mag = p.mag ** (1.0 / p.compression_exp)
    ri = np.stack([mag * np.cos(p.phase), mag * np.sin(p.phase)])
    return ComplexSpectrogram(ri, frame_hop=p.frame_hop, window_len=p.window_len,
                              num_samples=p.num_samples)


def couple(mag, phase, *, compression_exp=DEFAULT_COMPRESSION, frame_hop=HOP,
           window_len=WINDOW_LEN, num_samples=None) -> ComplexSpectrogram:
    """Recombine magnitude and phase without changing the compression domain."""
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if mag.shape != phase.shape:
        raise DspError(f"mag/phase shape mismatch: {mag.shape} vs {phase.shape}")
    ri = np.stack([mag * np.cos(phase), mag * np.sin(phase)])
    return ComplexSpectrogram(ri, frame_hop=frame_hop, window_len=window_len,
                              num_samples=num_samples)


def decouple(s: ComplexSpectrogram):
    """Magnitude and phase of a spectrogram, no compression change."""
    mag = np.hypot(s.ri[0], s.ri[1])
    phase = np.arctan2(s.ri[1], s.ri[0])
    return mag, phase


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling (e.g. 48 kHz corpus -> 16 kHz)."""
    if w.sample_rate == target_rate:
        return w
    g = np.gcd(w.sample_rate, target_rate)
    out = scipy.signal.resample_poly(w.samples, target_rate // g, w.sample_rate // g)
    return Waveform(out, target_rate)


def read_wav(path) -> Waveform:
    """Read a mono RIFF WAV (16-bit PCM or 32/64-bit float)."""
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise DspError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise DspError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(data, int(rate))


def write_wav(path, w: Waveform):
    scipy.io.wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
