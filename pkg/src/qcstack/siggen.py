"""Signal generation: real-valued reference model and bit-exact fixed-point NCO.

The fixed-point chain is a 32-bit phase accumulator feeding a 2**12 entry
sine LUT (Q1.15), followed by an amplitude multiply and an envelope multiply.
Every multiply rounds to nearest (ties to even) and saturates.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

ACC_BITS = 32
ACC_MASK = (1 << ACC_BITS) - 1
LUT_BITS = 12
LUT_SIZE = 1 << LUT_BITS
PHASE_BITS = 16
Q15_ONE = 1 << 15
Q15_MAX = Q15_ONE - 1


@dataclass(frozen=True)
class FixedFormat:
    total_bits: int
    fraction_bits: int
    signed: bool = True

    def __post_init__(self):
        if self.total_bits < 1:
            raise ValueError("total_bits must be >= 1")
        if not 0 <= self.fraction_bits <= self.total_bits - int(self.signed):
            raise ValueError(
                f"fraction_bits={self.fraction_bits} does not fit in "
                f"{self.total_bits} {'signed' if self.signed else 'unsigned'} bits"
            )

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def max_code(self) -> int:
        if self.signed:
            return (1 << (self.total_bits - 1)) - 1
        return (1 << self.total_bits) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.fraction_bits

    @property
    def min_value(self) -> float:
        return self.min_code * self.lsb

    @property
    def max_value(self) -> float:
        return self.max_code * self.lsb


Q1_15 = FixedFormat(16, 15, signed=True)
# Envelope gain: unsigned, 15 fraction bits, so 1.0 is exactly representable.
UQ1_15 = FixedFormat(16, 15, signed=False)


def float_to_fixed(x, fmt: FixedFormat = Q1_15):
    """Quantize to ``fmt``: round half to even, saturate at the format limits.

    Accepts a scalar (returns ``int``) or an array (returns ``int64`` array).
    NaN is rejected since it has no ordering to saturate against.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError("cannot quantize NaN")
    scaled = np.ldexp(arr, fmt.fraction_bits)
    codes = np.clip(np.rint(scaled), fmt.min_code, fmt.max_code).astype(np.int64)
    if codes.ndim == 0:
        return int(codes)
    return codes


def fixed_to_float(code, fmt: FixedFormat = Q1_15):
    """Exact conversion ``code * 2**-fraction_bits``."""
    arr = np.asarray(code, dtype=np.int64)
    if ((arr < fmt.min_code) | (arr > fmt.max_code)).any():
        raise ValueError(f"code out of range for {fmt}")
    out = np.ldexp(arr.astype(np.float64), -fmt.fraction_bits)
    if out.ndim == 0:
        return float(out)
    return out


def round_shift(x, shift: int):
    """Integer ``x / 2**shift`` rounded to nearest, ties to even."""
    x = np.asarray(x, dtype=np.int64)
    q = x >> shift
    r = x & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    up = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + up.astype(np.int64)


def saturate(x, fmt: FixedFormat = Q1_15):
    return np.clip(np.asarray(x, dtype=np.int64), fmt.min_code, fmt.max_code)


def ftw_from_freq(f: float, fs: float) -> int:
    """Frequency tuning word ``round(f / fs * 2**32)``, ties rounded up.

    Exact rational arithmetic on the binary values of ``f`` and ``fs``.
    """
    if fs <= 0:
        raise ValueError("sample rate must be positive")
    if not 0 <= f < fs / 2:
        raise ValueError(f"frequency {f} Hz outside [0, fs/2) for fs={fs} Hz")
    exact = Fraction(f) / Fraction(fs) * (1 << ACC_BITS)
    return math.floor(exact + Fraction(1, 2))


def freq_from_ftw(ftw: int, fs: float) -> float:
    return ftw * fs / (1 << ACC_BITS)


def phase_to_word(phase: float) -> int:
    """Radians to 16-bit turns, wrapped."""
    return round(phase / (2 * math.pi) * (1 << PHASE_BITS)) % (1 << PHASE_BITS)


def word_to_phase(word: int) -> float:
    return 2 * math.pi * word / (1 << PHASE_BITS)


# ---------------------------------------------------------------- envelopes

ENVELOPE_KINDS = ("rect", "gaussian", "blackman")


@dataclass(frozen=True)
class EnvelopeSpec:
    kind: str = "rect"
    sigma: float | None = None  # gaussian width override in samples

    def __post_init__(self):
        if self.kind not in ENVELOPE_KINDS:
            raise ValueError(f"unknown envelope kind {self.kind!r}")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")


# envelope_id -> shape used when no program-specific table is supplied
DEFAULT_ENVELOPES: Mapping[int, EnvelopeSpec] = {
    i: EnvelopeSpec(kind) for i, kind in enumerate(ENVELOPE_KINDS)
}


def envelope(kind: str, length: int, i, sigma: float | None = None):
    """Envelope gain in [0, 1] at sample ``i`` of a ``length``-sample pulse.

    gaussian: mean (len-1)/2, std (len-1)/6 unless ``sigma`` is given, so the
    end samples sit at exactly 3 sigma.
    blackman: the classic symmetric three-term window.
    """
    if length < 1:
        raise ValueError("envelope length must be >= 1")
    idx = np.asarray(i)
    if ((idx < 0) | (idx >= length)).any():
        raise IndexError(f"envelope index out of range [0, {length})")
    idx = idx.astype(np.float64)
    if kind == "rect":
        out = np.ones_like(idx)
    elif kind == "gaussian":
        mu = (length - 1) / 2
        s = (length - 1) / 6 if sigma is None else sigma
        if s == 0:  # single-sample pulse
            return np.ones_like(idx) if idx.ndim else 1.0
        out = np.exp(-0.5 * ((idx - mu) / s) ** 2)
    elif kind == "blackman":
        if length == 1:
            out = np.ones_like(idx)
        else:
            c = 2 * np.pi * idx / (length - 1)
            out = 0.42 - 0.5 * np.cos(c) + 0.08 * np.cos(2 * c)
            out = np.clip(out, 0.0, 1.0)  # endpoints evaluate to ~-1e-17
    else:
        raise ValueError(f"unknown envelope kind {kind!r}")
    if out.ndim == 0:
        return float(out)
    return out


def envelope_table(spec: EnvelopeSpec, length: int) -> np.ndarray:
    return envelope(spec.kind, length, np.arange(length), spec.sigma)


def envelope_codes(spec: EnvelopeSpec, length: int) -> np.ndarray:
    return float_to_fixed(envelope_table(spec, length), UQ1_15)


def export_envelope_csv(path, spec: EnvelopeSpec, length: int) -> None:
    values = envelope_table(spec, length)
    codes = float_to_fixed(values, UQ1_15)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "real", "fixed"])
        for i, (v, c) in enumerate(zip(values, codes)):
            w.writerow([i, repr(float(v)), int(c)])


# ---------------------------------------------------------------- channel config


@dataclass(frozen=True)
class ToneParams:
    """Real-valued channel parameters consumed by the reference model."""

    frequency: float
    sample_rate: float
    amplitude: float
    phase: float = 0.0
    envelope: EnvelopeSpec = EnvelopeSpec()
    envelope_len: int = 0  # 0: continuous wave


@dataclass(frozen=True)
class ChannelConfig:
    ftw: int = 0
    phase_offset: int = 0
    amplitude: int = 0  # Q1.15 code
    envelope_id: int = 0
    envelope_len: int = 0  # 0: continuous wave, otherwise pulse length

    def __post_init__(self):
        if not 0 <= self.ftw <= ACC_MASK:
            raise ValueError("ftw must fit in 32 bits")
        if not 0 <= self.phase_offset < (1 << PHASE_BITS):
            raise ValueError("phase_offset must fit in 16 bits")
        if not Q1_15.min_code <= self.amplitude <= Q1_15.max_code:
            raise ValueError("amplitude must be a Q1.15 code")
        if not 0 <= self.envelope_id <= 0xFF:
            raise ValueError("envelope_id must fit in 8 bits")
        if not 0 <= self.envelope_len <= 0xFFFF:
            raise ValueError("envelope_len must fit in 16 bits")

    def as_reals(
        self, sample_rate: float, envelopes: Mapping[int, EnvelopeSpec] = DEFAULT_ENVELOPES
    ) -> ToneParams:
        return ToneParams(
            frequency=freq_from_ftw(self.ftw, sample_rate),
            sample_rate=sample_rate,
            amplitude=fixed_to_float(self.amplitude),
            phase=word_to_phase(self.phase_offset),
            envelope=_lookup_envelope(envelopes, self.envelope_id),
            envelope_len=self.envelope_len,
        )


def _lookup_envelope(envelopes, envelope_id):
    try:
        return envelopes[envelope_id]
    except (KeyError, IndexError):
        raise ValueError(f"envelope_id {envelope_id} is not defined") from None


@dataclass(frozen=True)
class ConfigImage:
    """Three little-endian 32-bit words as written to the channel config RAM."""

    words: tuple[int, int, int]

    def to_bytes(self) -> bytes:
        return struct.pack("<3I", *self.words)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConfigImage":
        if len(data) != 12:
            raise ValueError(f"config image must be 12 bytes, got {len(data)}")
        return cls(struct.unpack("<3I", data))


def pack_config(cfg: ChannelConfig) -> ConfigImage:
    word1 = (cfg.phase_offset << 16) | (cfg.amplitude & 0xFFFF)
    word2 = (cfg.envelope_id << 24) | (cfg.envelope_len << 8)
    return ConfigImage((cfg.ftw, word1, word2))


def unpack_config(image: ConfigImage | Sequence[int]) -> ChannelConfig:
    words = image.words if isinstance(image, ConfigImage) else tuple(image)
    if len(words) != 3:
        raise ValueError("config image has exactly three words")
    if any(not 0 <= w <= ACC_MASK for w in words):
        raise ValueError("config words must be unsigned 32-bit")
    w0, w1, w2 = words
    if w2 & 0xFF:
        raise ValueError(f"reserved byte of word2 is nonzero (0x{w2 & 0xFF:02x})")
    amp = w1 & 0xFFFF
    if amp & 0x8000:
        amp -= 1 << 16
    return ChannelConfig(
        ftw=w0,
        phase_offset=w1 >> 16,
        amplitude=amp,
        envelope_id=w2 >> 24,
        envelope_len=(w2 >> 8) & 0xFFFF,
    )


# ---------------------------------------------------------------- sample generation

SINE_LUT = np.rint(np.sin(2 * np.pi * np.arange(LUT_SIZE) / LUT_SIZE) * Q15_MAX).astype(np.int64)
SINE_LUT.setflags(write=False)


def lut_index(phase_acc, phase_offset: int):
    acc = (np.asarray(phase_acc, dtype=np.uint64) + np.uint64(phase_offset << 16)) & np.uint64(
        ACC_MASK
    )
    return (acc >> np.uint64(ACC_BITS - LUT_BITS)).astype(np.int64)


def nco_samples(phase_acc, phase_offset: int, amplitude: int, env_codes=None) -> np.ndarray:
    """Fixed-point datapath: LUT lookup, amplitude multiply, envelope multiply.

    ``phase_acc`` holds the accumulator value at each output sample.
    ``env_codes`` (UQ1.15) defaults to unity gain.
    """
    raw = SINE_LUT[lut_index(phase_acc, phase_offset)]
    y = saturate(round_shift(raw * amplitude, 15))
    if env_codes is not None:
        y = saturate(round_shift(y * np.asarray(env_codes, dtype=np.int64), 15))
    return y.astype(np.int16)


def phase_ramp(start: int, ftw: int, n: int) -> np.ndarray:
    """Accumulator values ``start + k*ftw (mod 2**32)`` for k in [0, n)."""
    k = np.arange(n, dtype=np.uint64)
    return (np.uint64(start) + k * np.uint64(ftw)) & np.uint64(ACC_MASK)


def render_fixed(
    cfg: ChannelConfig, n: int, envelopes: Mapping[int, EnvelopeSpec] = DEFAULT_ENVELOPES
) -> np.ndarray:
    """``n`` Q1.15 samples (int16). The accumulator starts at zero, so sample
    ``i`` uses phase ``i * ftw``. Samples past a nonzero ``envelope_len`` are 0."""
    if n < 0:
        raise ValueError("n must be >= 0")
    acc = phase_ramp(0, cfg.ftw, n)
    if cfg.envelope_len == 0:
        return nco_samples(acc, cfg.phase_offset, cfg.amplitude)
    spec = _lookup_envelope(envelopes, cfg.envelope_id)
    m = min(n, cfg.envelope_len)
    out = np.zeros(n, dtype=np.int16)
    codes = envelope_codes(spec, cfg.envelope_len)[:m]
    out[:m] = nco_samples(acc[:m], cfg.phase_offset, cfg.amplitude, codes)
    return out


def render_reference(params: ToneParams, n: int) -> np.ndarray:
    """Double-precision ``env(i) * a * sin(2*pi*(f/fs)*i + phase)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    i = np.arange(n, dtype=np.float64)
    y = params.amplitude * np.sin(2 * np.pi * (params.frequency / params.sample_rate) * i + params.phase)
    if params.envelope_len:
        env = np.zeros(n)
        m = min(n, params.envelope_len)
        env[:m] = envelope_table(params.envelope, params.envelope_len)[:m]
        y = y * env
    return y


def to_full_scale(codes) -> np.ndarray:
    """Q1.15 samples to reals in full-scale units."""
    return np.asarray(codes, dtype=np.float64) / Q15_ONE
