"""Energy diagnostics, spectra, pitch estimation and refinement studies."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import signal as sps

from .contact import ContactLaw
from .errors import NoPeriodicity, ZeroInitialEnergy
from .lumped import LumpedParams, LumpedState, Scheme, contact_interval, simulate

log = logging.getLogger(__name__)

DB_FLOOR = -200.0


def energy_error_series(H, H0=None):
    """Relative deviation ``(H - H0) / H0``; ``H0`` defaults to ``H[0]``."""
    H = np.asarray(H, dtype=float)
    H0 = H[0] if H0 is None else float(H0)
    if H0 == 0:
        raise ZeroInitialEnergy("relative energy error is undefined for zero initial energy")
    return (H - H0) / H0


def preservation_metric(H, H0, interval):
    """Mean absolute per-sample energy step over ``interval = (n1, n2)``, relative to ``H0``.

    Sums ``|H[n+1] - H[n]|`` for ``n = n1 .. n2``.
    """
    H = np.asarray(H, dtype=float)
    if interval is None:
        raise ValueError("empty contact interval")
    n1, n2 = int(interval[0]), int(interval[1])
    if n2 < n1 or n1 < 0 or n2 + 1 >= len(H):
        raise ValueError(f"interval {interval} is empty or outside the series")
    if H0 == 0:
        raise ZeroInitialEnergy("relative energy error is undefined for zero initial energy")
    steps = np.abs(np.diff(H[n1:n2 + 2]))
    return float(np.sum(steps) / ((n2 - n1 + 1) * abs(H0)))


def _to_db(mag, floor_db=DB_FLOOR):
    peak = float(np.max(mag)) if mag.size else 0.0
    if peak <= 0:
        return np.full(mag.shape, floor_db)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    return np.maximum(db, floor_db)


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray
    magnitudes: np.ndarray  # dB relative to the peak
    window: str
    n_fft: int
    sample_rate: float

    @property
    def bin_width(self):
        return self.sample_rate / self.n_fft

    def level_at(self, f, tolerance_bins=2):
        """Largest level within ``tolerance_bins`` of frequency ``f``."""
        k = int(round(f / self.bin_width))
        lo, hi = max(k - tolerance_bins, 0), min(k + tolerance_bins + 1, len(self.magnitudes))
        return float(np.max(self.magnitudes[lo:hi]))

    def peak_frequency(self):
        return float(self.frequencies[int(np.argmax(self.magnitudes))])


def magnitude_spectrum(x, sample_rate, window="hann", n_fft=None, floor_db=DB_FLOOR) -> Spectrum:
    """Windowed FFT magnitude in dB relative to its maximum."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("signal needs at least 2 samples")
    n_fft = x.size if n_fft is None else int(n_fft)
    w = sps.get_window(window, x.size, fftbins=True) if window else np.ones(x.size)
    mag = np.abs(np.fft.rfft(x * w, n_fft))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    return Spectrum(freqs, _to_db(mag, floor_db), window or "boxcar", n_fft, float(sample_rate))


@dataclass(frozen=True)
class Spectrogram:
    times: np.ndarray
    frequencies: np.ndarray
    magnitudes: np.ndarray  # dB relative to the global peak, shape (freq, time)
    window_len: int
    hop: int
    sample_rate: float

    def frame(self, t):
        return int(np.argmin(np.abs(self.times - t)))

    def relative_level(self, f, t, tolerance_bins=2):
        """Level near ``f`` in the frame closest to ``t``, in dB below that frame's peak."""
        j = self.frame(t)
        col = self.magnitudes[:, j]
        k = int(round(f * self.window_len / self.sample_rate))
        lo, hi = max(k - tolerance_bins, 0), min(k + tolerance_bins + 1, col.size)
        return float(np.max(col[lo:hi]) - np.max(col))

    def centroid(self, band=(2000.0, 8000.0)):
        """Spectral centroid per frame within ``band`` (power weighted)."""
        sel = (self.frequencies >= band[0]) & (self.frequencies <= band[1])
        p = 10.0 ** (self.magnitudes[sel] / 10.0)
        tot = p.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, (self.frequencies[sel, None] * p).sum(axis=0) / tot, np.nan)


def spectrogram(x, sample_rate, window_len=4096, hop=1024, window="hann",
                floor_db=DB_FLOOR) -> Spectrogram:
    """STFT magnitude in dB; frames are centred at ``times``."""
    x = np.asarray(x, dtype=float)
    if not window_len >= hop >= 1:
        raise ValueError("need window_len >= hop >= 1")
    if x.size < window_len:
        raise ValueError("signal shorter than one window")
    f, t, Z = sps.stft(x, fs=sample_rate, window=window, nperseg=window_len,
                       noverlap=window_len - hop, boundary=None, padded=False)
    return Spectrogram(t, f, _to_db(np.abs(Z), floor_db), window_len, hop, float(sample_rate))


def _zero_crossing_frequency(x, sample_rate):
    x = x - np.mean(x)
    up = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    if up.size < 2:
        raise NoPeriodicity("fewer than two upward zero crossings")
    # linear interpolation of the crossing instants
    frac = -x[up] / (x[up + 1] - x[up])
    tc = (up + frac) / sample_rate
    return (tc.size - 1) / (tc[-1] - tc[0]), tc


def _spectral_fundamental(x, sample_rate, guess, rel_db=-12.0):
    """Lowest prominent spectral peak, refined by parabolic interpolation."""
    n_fft = 1 << int(math.ceil(math.log2(max(4 * x.size, 1 << 16))))
    w = sps.get_window("hann", x.size)
    mag = np.abs(np.fft.rfft((x - x.mean()) * w, n_fft))
    db = _to_db(mag)
    peaks, _ = sps.find_peaks(db, height=rel_db)
    if peaks.size == 0:
        raise NoPeriodicity("no spectral peak")
    df = sample_rate / n_fft
    # ignore peaks well below the plausible range (leakage, drift)
    peaks = peaks[peaks * df > 0.5 * guess] if np.any(peaks * df > 0.5 * guess) else peaks
    k = int(peaks[0])
    if 0 < k < db.size - 1:
        a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        delta = 0.0
    return (k + delta) * df


def _band_limited_crossings(x, sample_rate, f0):
    """Zero-crossing frequency of ``x`` band-passed around ``f0``, edges trimmed."""
    lo, hi = 0.7 * f0, min(1.4 * f0, 0.45 * sample_rate)
    if not 0 < lo < hi:
        raise NoPeriodicity("fundamental outside the usable band")
    sos = sps.butter(4, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
    y = sps.sosfiltfilt(sos, x - x.mean())
    trim = min(int(2 * sample_rate / f0), x.size // 4)
    return _zero_crossing_frequency(y[trim:x.size - trim], sample_rate)[0]


def fundamental_frequency(x, sample_rate, agree=0.01, reject=0.05) -> float:
    """Fundamental frequency from zero crossings, checked against the spectrum.

    The lowest prominent spectral peak locates the fundamental.  If raw
    zero crossings disagree with it (overtones adding crossings), the
    crossings of the signal band-passed around that peak are used.  Returns
    the zero-crossing value when the two agree within ``agree``, the
    spectral one (with a warning) up to ``reject``, and otherwise raises
    :class:`NoPeriodicity`.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 8 or np.ptp(x) == 0:
        raise NoPeriodicity("constant signal")
    f_zc, tc = _zero_crossing_frequency(x, sample_rate)
    if tc.size < 5:
        raise NoPeriodicity("fewer than five periods")
    f_sp = _spectral_fundamental(x, sample_rate, 10.0 * sample_rate / x.size)
    rel = abs(f_zc - f_sp) / f_sp
    if rel > agree:
        f_zc = _band_limited_crossings(x, sample_rate, f_sp)
        rel = abs(f_zc - f_sp) / f_sp
    if rel <= agree:
        return float(f_zc)
    if rel <= reject:
        log.warning("zero-crossing (%.4g Hz) and spectral (%.4g Hz) estimates differ by %.2g%%",
                    f_zc, f_sp, 100 * rel)
        return float(f_sp)
    raise NoPeriodicity(f"estimators disagree: {f_zc:.6g} Hz vs {f_sp:.6g} Hz")


@dataclass(frozen=True)
class ConvergenceStudy:
    dts: np.ndarray
    errors: np.ndarray
    slope: float
    monotone: bool


def convergence_order(run: Callable[[float], np.ndarray], dt_ladder: Sequence[float]) -> ConvergenceStudy:
    """Log-log slope of terminal-state error against the finest rung.

    ``run(dt)`` returns the terminal state vector; ``dt_ladder`` is
    decreasing, each rung halving the previous one.
    """
    dts = np.asarray(dt_ladder, dtype=float)
    if dts.size < 4:
        raise ValueError("need at least 4 rungs")
    if not np.allclose(dts[1:] / dts[:-1], 0.5, rtol=1e-12):
        raise ValueError("rungs must halve the time step")
    finals = [np.atleast_1d(np.asarray(run(dt), dtype=float)) for dt in dts]
    ref = finals[-1]
    errors = np.array([np.max(np.abs(f - ref)) for f in finals[:-1]])
    monotone = bool(np.all(np.diff(errors) < 0)) and bool(np.all(errors > 0))
    if not monotone:
        log.warning("errors are not strictly decreasing along the ladder: %s", errors)
    if np.any(errors <= 0):
        return ConvergenceStudy(dts[:-1], errors, math.nan, False)
    slope = float(np.polyfit(np.log(dts[:-1]), np.log(errors), 1)[0])
    return ConvergenceStudy(dts[:-1], errors, slope, monotone)


@dataclass(frozen=True)
class AliasingRun:
    k: float
    sample_rate: float
    f1: float
    spectrum: Spectrum
    aliased_energy: float
    total_energy: float


@dataclass(frozen=True)
class AliasingTemplate:
    """Mass on a spring falling onto a stiff barrier; ``k`` is swept."""

    m: float = 0.001
    k_c: float = 2e10
    alpha: float = 2.3
    y_c: float = -0.05
    y0: float = 0.1
    p0: float = -0.1
    duration: float = 1.0
    band: float = 20000.0
    harmonic_width: float = 0.02


def fig5_schedule(count=200, base=30000.0, ratio=1.01):
    return base * ratio ** np.arange(1, count + 1)


def _harmonic_mask(freqs, f1, width, df):
    if not f1 > 0:
        return np.zeros(freqs.shape, dtype=bool)
    h = np.round(freqs / f1)
    dist = np.abs(freqs - h * f1)
    return (h >= 1) & (dist <= np.maximum(width * f1, 3 * df))


def aliasing_run(k, sample_rate, template: AliasingTemplate = AliasingTemplate()) -> AliasingRun:
    """One point of the sweep: momentum spectrum and its off-harmonic energy below ``band``."""
    dt = 1.0 / sample_rate
    params = LumpedParams(m=template.m, k=float(k), law=ContactLaw(template.k_c, template.alpha),
                          y_c=template.y_c, g0=0.0, dt=dt)
    init = LumpedState.from_momentum(template.y0, template.p0, params)
    n = int(round(template.duration * sample_rate))
    traj = simulate(Scheme.EC, params, init, n)
    p = traj.p[:n]
    try:
        f1, _ = _zero_crossing_frequency(p, sample_rate)
    except NoPeriodicity:
        f1 = math.nan
    w = sps.get_window("hann", p.size)
    mag2 = np.abs(np.fft.rfft((p - p.mean()) * w)) ** 2
    freqs = np.fft.rfftfreq(p.size, dt)
    spec = Spectrum(freqs, _to_db(np.sqrt(mag2)), "hann", p.size, float(sample_rate))
    band = freqs <= template.band
    harm = _harmonic_mask(freqs, f1, template.harmonic_width, sample_rate / p.size)
    aliased = float(np.sum(mag2[band & ~harm]))
    total = float(np.sum(mag2[band]))
    return AliasingRun(float(k), float(sample_rate), float(f1), spec, aliased, total)


def _aliasing_job(args):
    return aliasing_run(*args)


def aliasing_sweep(k_schedule, sample_rates, template: AliasingTemplate = AliasingTemplate(),
                   workers: int | None = None) -> dict:
    """Run the sweep at each sample rate; returns ``{rate: [AliasingRun, ...]}``."""
    k_schedule = list(k_schedule)
    if not k_schedule:
        raise ValueError("empty k schedule")
    jobs = [(k, fs, template) for fs in sample_rates for k in k_schedule]
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_aliasing_job, jobs))
    else:
        results = [_aliasing_job(j) for j in jobs]
    out = {fs: [] for fs in sample_rates}
    for (_, fs, _), r in zip(jobs, results):
        out[fs].append(r)
    return out


def aliased_band_energy(runs: Sequence[AliasingRun], relative=True) -> float:
    """Sum of off-harmonic audio-band energy over a sweep, optionally relative to total."""
    a = sum(r.aliased_energy for r in runs)
    if not relative:
        return a
    return a / sum(r.total_energy for r in runs)


def aliasing_reduction_db(low: Sequence[AliasingRun], high: Sequence[AliasingRun]) -> float:
    """How far the high-rate aliased energy sits below the low-rate one, in dB."""
    return 10.0 * math.log10(aliased_band_energy(low) / aliased_band_energy(high))


@dataclass(frozen=True)
class PreservationPoint:
    alpha: float
    beta_c: float
    P: float
    interval: tuple
    max_iterations: int


def preservation_point(alpha, beta_c, m=0.1, dt=1.0 / 44100, y0=1e-3, p0=-0.2,
                       max_steps=400_000, chunk=4096) -> PreservationPoint:
    """Single collision of a free mass with a barrier at ``y = 0``; returns ``P``.

    The run is extended in chunks until the mass has left the barrier.
    """
    xi = dt * dt / (2.0 * m)
    params = LumpedParams(m=m, k=0.0, law=ContactLaw(beta_c / xi, alpha), y_c=0.0, g0=0.0, dt=dt)
    state = LumpedState.from_momentum(y0, p0, params)
    n = chunk
    while True:
        traj = simulate(Scheme.EC, params, state, n)
        interval = contact_interval(traj)
        if interval is not None and interval[1] < n - 2:
            break
        if n >= max_steps:
            raise RuntimeError(f"collision did not end within {max_steps} steps")
        n *= 2
    P = preservation_metric(traj.H, traj.H[0], interval)
    return PreservationPoint(float(alpha), float(beta_c), P, interval, int(traj.iterations.max()))


def _preservation_job(args):
    return preservation_point(*args)


def preservation_sweep(alphas=None, betas=None, workers: int | None = None):
    """``P`` over an ``alpha x beta_c`` grid; defaults to 9 x 13 points on [1, 3] x [1e-3, 1e3]."""
    alphas = np.linspace(1.0, 3.0, 9) if alphas is None else np.asarray(alphas, dtype=float)
    betas = np.logspace(-3, 3, 13) if betas is None else np.asarray(betas, dtype=float)
    jobs = [(a, b) for a in alphas for b in betas]
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            pts = list(ex.map(_preservation_job, jobs))
    else:
        pts = [_preservation_job(j) for j in jobs]
    grid = np.array([p.P for p in pts]).reshape(alphas.size, betas.size)
    return alphas, betas, grid, pts
