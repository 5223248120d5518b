"""Compile a PulseProgram into per-unit instruction streams with absolute fire ticks."""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

from .device import DeviceConfig
from .pulse import (
    Barrier,
    Capture,
    Delay,
    Play,
    PulseProgram,
    Reset,
    SetFrequency,
    ShiftPhase,
)
from .siggen import EnvelopeSpec, float_to_fixed, ftw_from_freq, phase_to_word

TICK_MAX = (1 << 64) - 1


class ScheduleError(Exception):
    pass


class QueueOverflowError(ScheduleError):
    def __init__(self, unit: int, channel: int, tick: int, depth: int):
        self.unit, self.channel, self.tick, self.depth = unit, channel, tick, depth
        super().__init__(
            f"instruction queue overflow on unit {unit} channel {channel} at tick {tick} "
            f"(depth {depth})"
        )


class Opcode(enum.IntEnum):
    NOP = 0
    SET_FTW = 1
    SET_PHASE = 2
    SET_AMP = 3
    PLAY = 4
    CAPTURE = 5


def play_operand(envelope_id: int, length: int) -> int:
    """Same layout as config word2: id in bits 31..24, length in bits 23..8."""
    if not 0 <= envelope_id <= 0xFF:
        raise ValueError("envelope id must fit in 8 bits")
    if not 1 <= length <= 0xFFFF:
        raise ValueError("pulse length must be in [1, 65535]")
    return (envelope_id << 24) | (length << 8)


def capture_operand(window: int, decimation: int) -> int:
    if not 1 <= window < (1 << 24):
        raise ValueError("capture window must be in [1, 2**24)")
    if not 1 <= decimation <= 0xFF:
        raise ValueError("capture decimation must be in [1, 255]")
    return (decimation << 24) | window


@dataclass(frozen=True, order=True)
class InstructionWord:
    fire_tick: int
    channel: int
    opcode: Opcode
    operand: int = 0

    STRUCT = struct.Struct("<QHBxI")

    def __post_init__(self):
        if not 0 <= self.fire_tick <= TICK_MAX:
            raise ValueError("fire_tick must be unsigned 64-bit")
        if not 0 <= self.operand <= 0xFFFFFFFF:
            raise ValueError("operand must be unsigned 32-bit")

    @property
    def duration(self) -> int:
        if self.opcode == Opcode.PLAY:
            return (self.operand >> 8) & 0xFFFF
        if self.opcode == Opcode.CAPTURE:
            return self.operand & 0xFFFFFF
        return 0

    def describe(self) -> str:
        op = self.opcode
        v = self.operand
        if op == Opcode.PLAY:
            arg = f"env={v >> 24} len={(v >> 8) & 0xFFFF}"
        elif op == Opcode.CAPTURE:
            arg = f"window={v & 0xFFFFFF} decim={v >> 24}"
        elif op == Opcode.SET_AMP:
            amp = v - 0x10000 if v & 0x8000 else v
            arg = f"amp={amp}"
        else:
            arg = f"0x{v:08x}"
        return f"{self.fire_tick:>12d}  ch{self.channel:<3d} {op.name:<9s} {arg}"

    def to_bytes(self) -> bytes:
        return self.STRUCT.pack(self.fire_tick, self.channel, int(self.opcode), self.operand)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InstructionWord":
        tick, ch, op, operand = cls.STRUCT.unpack(data)
        return cls(tick, ch, Opcode(op), operand)


@dataclass
class InstructionStream:
    unit: int
    words: list[InstructionWord] = field(default_factory=list)
    envelopes: tuple[EnvelopeSpec, ...] = ()
    total_ticks: int = 0

    def recompute_length(self) -> None:
        self.total_ticks = max((w.fire_tick + w.duration for w in self.words), default=0)

    def channel_words(self, channel: int) -> list[InstructionWord]:
        return [w for w in self.words if w.channel == channel]

    def listing(self) -> str:
        head = f"# unit {self.unit}  words {len(self.words)}  length {self.total_ticks} ticks"
        return "\n".join([head, *(w.describe() for w in self.words)]) + "\n"


# Binary stream file:
#   header   "QCIS" | version u16 | unit u16 | total_ticks u64 | n_env u16 | pad u16 | n_words u64
#   envelope kind u8 | pad u8 | reserved u16 | sigma f64 (0 = default)     x n_env
#   word     fire_tick u64 | channel u16 | opcode u8 | pad u8 | operand u32  x n_words
STREAM_MAGIC = b"QCIS"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sHHQHHQ")
_ENV = struct.Struct("<BBHd")
_KIND_CODES = {"rect": 0, "gaussian": 1, "blackman": 2}


def stream_to_bytes(stream: InstructionStream) -> bytes:
    parts = [
        _HEADER.pack(
            STREAM_MAGIC, STREAM_VERSION, stream.unit, stream.total_ticks,
            len(stream.envelopes), 0, len(stream.words),
        )
    ]
    for env in stream.envelopes:
        parts.append(_ENV.pack(_KIND_CODES[env.kind], 0, 0, env.sigma or 0.0))
    parts.extend(w.to_bytes() for w in stream.words)
    return b"".join(parts)


def stream_from_bytes(data: bytes) -> InstructionStream:
    if len(data) < _HEADER.size:
        raise ValueError("truncated stream header")
    magic, version, unit, total, n_env, _, n_words = _HEADER.unpack_from(data, 0)
    if magic != STREAM_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != STREAM_VERSION:
        raise ValueError(f"unsupported stream version {version}")
    expected = _HEADER.size + n_env * _ENV.size + n_words * InstructionWord.STRUCT.size
    if len(data) != expected:
        raise ValueError(f"stream size {len(data)} != expected {expected}")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    off = _HEADER.size
    envs = []
    for _ in range(n_env):
        code, _, _, sigma = _ENV.unpack_from(data, off)
        envs.append(EnvelopeSpec(kinds[code], sigma or None))
        off += _ENV.size
    size = InstructionWord.STRUCT.size
    words = [InstructionWord.from_bytes(data[off + i * size: off + (i + 1) * size]) for i in range(n_words)]
    return InstructionStream(unit, words, tuple(envs), total)


def queue_high_water(stream: InstructionStream, depth: int | None = None) -> dict[int, int]:
    """Peak per-channel queue occupancy.

    All words of a stream are resident from load until they fire, so the
    occupancy of a channel peaks at its word count. With ``depth`` given,
    the first word that does not fit raises QueueOverflowError naming its tick.
    """
    counts: dict[int, int] = {}
    for w in stream.words:
        counts[w.channel] = counts.get(w.channel, 0) + 1
        if depth is not None and counts[w.channel] > depth:
            raise QueueOverflowError(stream.unit, w.channel, w.fire_tick, depth)
    return counts


def _check_tick(t: int) -> int:
    if t > TICK_MAX:
        raise ScheduleError(f"tick overflow ({t} exceeds 2**64-1)")
    return t


def schedule(program: PulseProgram, device: DeviceConfig) -> list[InstructionStream]:
    """Lower a program to one InstructionStream per execution unit.

    Each frame keeps a cursor in ticks. play/capture fire at the cursor and
    advance it by their length; delay advances it; barrier lifts the named
    cursors to their maximum; frequency/phase/amplitude updates take zero
    ticks and fire at the cursor. Every frame's initial frequency and phase
    are written at tick 0.
    """
    program.validate()
    envelopes = tuple(EnvelopeSpec(w.kind, w.sigma) for w in program.waveforms)
    if len(envelopes) > 256:
        raise ScheduleError("at most 256 waveforms fit the 8-bit envelope id")
    fs = device.sample_rate

    where = {}
    for f in program.frames:
        try:
            where[f.name] = device.locate(f.channel)
        except ValueError as exc:
            raise ScheduleError(f"frame {f.name}: {exc}") from None

    def ftw(freq: float, frame: str) -> int:
        try:
            return ftw_from_freq(freq, fs)
        except ValueError as exc:
            raise ScheduleError(f"frame {frame}: {exc}") from None

    words: dict[int, list[InstructionWord]] = {u: [] for u in range(device.units)}
    cursor = {f.name: 0 for f in program.frames}
    phase = {f.name: f.phase for f in program.frames}
    amp_state: dict[str, int | None] = {f.name: None for f in program.frames}

    def emit(frame: str, op: Opcode, operand: int) -> None:
        unit, ch = where[frame]
        words[unit].append(InstructionWord(cursor[frame], ch, op, operand))

    for f in program.frames:
        emit(f.name, Opcode.SET_FTW, ftw(f.frequency, f.name))
        emit(f.name, Opcode.SET_PHASE, phase_to_word(f.phase))

    for stmt in program.body:
        if isinstance(stmt, Play):
            code = float_to_fixed(1.0 if stmt.amp is None else stmt.amp)
            if code != amp_state[stmt.frame]:
                emit(stmt.frame, Opcode.SET_AMP, code & 0xFFFF)
                amp_state[stmt.frame] = code
            idx = program.waveform_index(stmt.waveform)
            length = program.waveforms[idx].length
            try:
                emit(stmt.frame, Opcode.PLAY, play_operand(idx, length))
            except ValueError as exc:
                raise ScheduleError(str(exc)) from None
            cursor[stmt.frame] = _check_tick(cursor[stmt.frame] + length)
        elif isinstance(stmt, Delay):
            targets = cursor.keys() if stmt.frame is None else [stmt.frame]
            for name in targets:
                cursor[name] = _check_tick(cursor[name] + stmt.duration)
        elif isinstance(stmt, SetFrequency):
            emit(stmt.frame, Opcode.SET_FTW, ftw(stmt.frequency, stmt.frame))
        elif isinstance(stmt, ShiftPhase):
            phase[stmt.frame] += stmt.angle
            emit(stmt.frame, Opcode.SET_PHASE, phase_to_word(phase[stmt.frame]))
        elif isinstance(stmt, Barrier):
            top = max(cursor[n] for n in stmt.frames)
            for n in stmt.frames:
                cursor[n] = top
        elif isinstance(stmt, Capture):
            decim = math.ceil(stmt.length / device.capture_memory)
            try:
                emit(stmt.frame, Opcode.CAPTURE, capture_operand(stmt.length, decim))
            except ValueError as exc:
                raise ScheduleError(str(exc)) from None
            cursor[stmt.frame] = _check_tick(cursor[stmt.frame] + stmt.length)
        elif isinstance(stmt, Reset):
            emit(stmt.frame, Opcode.NOP, 0)
        else:
            raise TypeError(f"unknown statement {stmt!r}")

    streams = []
    for unit in range(device.units):
        # stable sort keeps emission order among words sharing a tick
        ws = sorted(words[unit], key=lambda w: w.fire_tick)
        stream = InstructionStream(unit, ws, envelopes)
        stream.recompute_length()
        queue_high_water(stream, device.queue_depth)
        streams.append(stream)
    return streams
