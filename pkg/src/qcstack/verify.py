"""Golden-model checks: sample comparator, windowed spectral purity, latency assertions."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

DB_FLOOR = -300.0
DEFAULT_SPUR_DBC = -60.0
EXCLUSION_HALFWIDTH = 3


class VerifyError(ValueError):
    pass


def _report_json(report) -> str:
    return json.dumps(asdict(report), indent=2, sort_keys=True)


@dataclass
class ComparisonReport:
    max_abs_error: float
    rms_error: float
    worst_index: int
    tolerance: float
    passed: bool
    errors: list[float] | None = None

    def to_json(self) -> str:
        return _report_json(self)


def compare_traces(expected, actual, tolerance: float, keep_errors: bool = False) -> ComparisonReport:
    """Pointwise comparison; passes iff ``max|actual - expected| <= tolerance``."""
    exp = np.asarray(expected, dtype=np.float64)
    act = np.asarray(actual, dtype=np.float64)
    if exp.shape != act.shape:
        raise VerifyError(f"length mismatch: expected {exp.size} samples, actual {act.size}")
    if tolerance < 0:
        raise VerifyError("tolerance must be >= 0")
    if exp.size == 0:
        return ComparisonReport(0.0, 0.0, 0, tolerance, True, [] if keep_errors else None)
    err = act - exp
    mag = np.abs(err)
    worst = int(np.argmax(mag))
    max_err = float(mag[worst])
    return ComparisonReport(
        max_abs_error=max_err,
        rms_error=float(np.sqrt(np.mean(err * err))),
        worst_index=worst,
        tolerance=float(tolerance),
        passed=bool(max_err <= tolerance),
        errors=err.tolist() if keep_errors else None,
    )


def blackman_window(n: int) -> np.ndarray:
    if n < 2:
        raise VerifyError("Blackman window needs n >= 2")
    k = np.arange(n)
    c = 2 * np.pi * k / (n - 1)
    w = 0.42 - 0.5 * np.cos(c) + 0.08 * np.cos(2 * c)
    return np.clip(w, 0.0, 1.0)


def direct_dft(x) -> np.ndarray:
    """O(N^2) transform straight from the definition; the oracle for ``dft``."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    k = np.arange(n)
    # exact integer reduction of k*m keeps the twiddle angles accurate
    km = np.outer(k, k) % max(n, 1)
    return np.exp(-2j * np.pi * km / n) @ x


def dft(x) -> np.ndarray:
    return np.fft.fft(np.asarray(x, dtype=np.complex128))


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _window(kind, n: int) -> np.ndarray:
    if kind is None or kind == "rect":
        return np.ones(n)
    if kind == "blackman":
        return blackman_window(n) if n >= 2 else np.ones(n)
    w = np.asarray(kind, dtype=np.float64)
    if w.shape != (n,):
        raise VerifyError(f"window length {w.size} != signal length {n}")
    return w


def power_spectrum(samples, window="blackman") -> np.ndarray:
    """Windowed power in dB for bins 0..N/2, N the next power of two.

    The window spans the real samples; zero padding follows it. Values are
    ``10*log10(|X[m]|**2)`` clamped below at -300 dB.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise VerifyError("empty input")
    xw = x * _window(window, x.size)
    n = _next_pow2(x.size)
    padded = np.zeros(n)
    padded[: x.size] = xw
    spec = dft(padded)[: n // 2 + 1]
    power = np.abs(spec) ** 2
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(power)
    return np.maximum(db, DB_FLOOR)


def export_spectrum_csv(path, power_db, fs: float) -> None:
    n = 2 * (len(power_db) - 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "freq_hz", "power_db"])
        for m, p in enumerate(power_db):
            w.writerow([m, repr(m * fs / n), repr(float(p))])


@dataclass
class SpectralReport:
    fft_size: int
    window: str
    dominant_bin: int
    expected_bin: int
    dominant_power_db: float
    worst_spur_bin: int
    worst_spur_dbc: float
    spur_threshold_dbc: float
    exclusion_halfwidth: int
    passed: bool

    def to_json(self) -> str:
        return _report_json(self)


def spectral_check(
    trace,
    f_expected: float,
    fs: float,
    spur_threshold_dbc: float = DEFAULT_SPUR_DBC,
    exclusion_halfwidth: int = EXCLUSION_HALFWIDTH,
) -> SpectralReport:
    """Blackman-windowed tone check: the peak sits at the driven frequency and
    nothing outside the main lobe exceeds ``spur_threshold_dbc``."""
    x = np.asarray(getattr(trace, "real", trace), dtype=np.float64)
    if x.size < 256:
        raise VerifyError(f"trace too short for spectral check ({x.size} < 256)")
    if not 0 <= f_expected < fs / 2:
        raise VerifyError(f"expected frequency {f_expected} Hz outside [0, fs/2)")
    power = power_spectrum(x, "blackman")
    n = 2 * (power.size - 1)
    expected_bin = int(round(f_expected / fs * n))
    dominant = int(np.argmax(power))
    lo, hi = dominant - exclusion_halfwidth, dominant + exclusion_halfwidth
    outside = np.ones(power.size, dtype=bool)
    outside[max(lo, 0): hi + 1] = False
    if outside.any():
        idx = np.flatnonzero(outside)
        spur = int(idx[np.argmax(power[idx])])
        spur_dbc = float(power[spur] - power[dominant])
    else:
        spur, spur_dbc = dominant, DB_FLOOR
    return SpectralReport(
        fft_size=n,
        window="blackman",
        dominant_bin=dominant,
        expected_bin=expected_bin,
        dominant_power_db=float(power[dominant]),
        worst_spur_bin=spur,
        worst_spur_dbc=spur_dbc,
        spur_threshold_dbc=float(spur_threshold_dbc),
        exclusion_halfwidth=exclusion_halfwidth,
        passed=bool(dominant == expected_bin and spur_dbc <= spur_threshold_dbc),
    )


@dataclass
class LatencyReport:
    expected_latency: int
    pairs: list[tuple[int, int]] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)
    passed: bool = True

    def to_json(self) -> str:
        return _report_json(self)


def assert_latency(in_events, out_events, expected_latency: int) -> LatencyReport:
    """Pair the i-th input event with the i-th output event.

    Every pair whose latency differs from ``expected_latency`` and every
    unpaired event is a violation; nothing raises.
    """
    ins = [int(t) for t in in_events]
    outs = [int(t) for t in out_events]
    pairs = list(zip(ins, outs))
    violations = []
    for i, (a, b) in enumerate(pairs):
        if b - a != expected_latency:
            violations.append({"index": i, "latency": b - a, "reason": "latency mismatch"})
    for i in range(len(pairs), len(ins)):
        violations.append({"index": i, "latency": None, "reason": "missing output event"})
    for i in range(len(pairs), len(outs)):
        violations.append({"index": i, "latency": None, "reason": "unexpected output event"})
    return LatencyReport(int(expected_latency), pairs, violations, not violations)
