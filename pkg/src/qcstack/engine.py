"""Cycle-deterministic execution units.

An :class:`Engine` models a device of ``units`` execution units, each driving
``channels_per_unit`` NCO channels. Instruction words wait in per-channel
FIFOs and fire at their exact tick. Everything that fires at tick ``t`` is
applied before sample ``t`` is generated.

Between two consecutive events a channel's state is constant, so samples are
generated segment by segment with vectorized integer arithmetic. The result
is identical to stepping tick by tick.
"""
from __future__ import annotations

import csv
import enum
import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .device import DeviceConfig
from .schedule import (
    InstructionStream,
    InstructionWord,
    Opcode,
    QueueOverflowError,
    queue_high_water,
)
from .siggen import (
    ACC_MASK,
    DEFAULT_ENVELOPES,
    ChannelConfig,
    EnvelopeSpec,
    envelope_codes,
    nco_samples,
    phase_ramp,
    to_full_scale,
)

__all__ = [
    "DeviceConfig",
    "Engine",
    "EngineError",
    "QueueOverflowError",
    "SampleTrace",
    "capture_plan",
    "run_program",
    "sync_start",
]


class EngineError(Exception):
    pass


class State(enum.Enum):
    IDLE = "idle"
    LOADED = "loaded"
    ARMED = "armed"
    RUNNING = "running"


@dataclass
class SampleTrace:
    channel: int
    start_tick: int
    sample_rate: float
    samples: np.ndarray  # int16 Q1.15
    decimation: int = 1

    def __post_init__(self):
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        self.samples = np.asarray(self.samples, dtype=np.int16)

    @property
    def ticks(self) -> np.ndarray:
        return self.start_tick + self.decimation * np.arange(len(self.samples), dtype=np.int64)

    @property
    def real(self) -> np.ndarray:
        return to_full_scale(self.samples)

    def __eq__(self, other):
        if not isinstance(other, SampleTrace):
            return NotImplemented
        return (
            (self.channel, self.start_tick, self.sample_rate, self.decimation)
            == (other.channel, other.start_tick, other.sample_rate, other.decimation)
            and np.array_equal(self.samples, other.samples)
        )


# "QCTR" | version u16 | channel u16 | start_tick u64 | sample_rate f64 | decimation u32 | count u64
TRACE_MAGIC = b"QCTR"
TRACE_VERSION = 1
_TRACE_HEADER = struct.Struct("<4sHHQdIQ")


def trace_to_bytes(trace: SampleTrace) -> bytes:
    head = _TRACE_HEADER.pack(
        TRACE_MAGIC, TRACE_VERSION, trace.channel, trace.start_tick,
        trace.sample_rate, trace.decimation, len(trace.samples),
    )
    return head + trace.samples.astype("<i2").tobytes()


def trace_from_bytes(data: bytes) -> SampleTrace:
    if len(data) < _TRACE_HEADER.size:
        raise ValueError("truncated trace header")
    magic, version, ch, start, fs, decim, count = _TRACE_HEADER.unpack_from(data)
    if magic != TRACE_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != TRACE_VERSION:
        raise ValueError(f"unsupported trace version {version}")
    body = data[_TRACE_HEADER.size:]
    if len(body) != 2 * count:
        raise ValueError(f"trace body has {len(body)} bytes, header says {count} samples")
    samples = np.frombuffer(body, dtype="<i2").astype(np.int16)
    return SampleTrace(ch, start, fs, samples, decim)


def write_trace_csv(fh, traces) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["tick", "channel", "fixed", "real"])
    for tr in traces:
        for t, code, x in zip(tr.ticks.tolist(), tr.samples.tolist(), tr.real.tolist()):
            w.writerow([t, tr.channel, code, repr(x)])


def capture_plan(window_len: int, budget: int) -> tuple[int, int]:
    """(decimation, stored sample count) for a window under a memory budget."""
    if budget < 1:
        raise EngineError("capture budget must be >= 1")
    if window_len < 1:
        raise EngineError("capture window must be >= 1")
    decimation = 1 if window_len <= budget else -(-window_len // budget)
    return decimation, -(-window_len // decimation)


@dataclass
class _Channel:
    cfg: ChannelConfig = field(default_factory=ChannelConfig)
    acc: int = 0  # phase accumulator value for the next sample
    play_start: int | None = None
    play_codes: np.ndarray | None = None
    queue: deque = field(default_factory=deque)

    def play_end(self) -> int | None:
        if self.play_start is None:
            return None
        return self.play_start + len(self.play_codes)


class Engine:
    """Simulated execution units: ``load`` -> ``arm`` -> ``start`` -> ``run``."""

    def __init__(self, device: DeviceConfig | None = None, record: bool = True):
        self.device = device or DeviceConfig()
        self._workers = self.device.worker_count  # fixed for the engine's lifetime
        self.record = record
        self.reset()

    @property
    def worker_count(self) -> int:
        return self._workers

    def reset(self) -> None:
        n = self.device.n_channels
        self.state = State.IDLE
        self.synced = False
        self.current_tick = 0
        self.channels = [_Channel() for _ in range(n)]
        self.envelopes: dict[int, tuple[EnvelopeSpec, ...]] = {}
        self.high_water: dict[int, int] = {}
        self.loaded_count = 0
        self.fired_count = 0
        self._history: list[list[np.ndarray]] = [[] for _ in range(n)]
        self.valid_in: list[list[int]] = [[] for _ in range(n)]
        self.captures: list[SampleTrace] = []
        self._pending_captures: list[tuple[int, int, int, int]] = []

    # ------------------------------------------------------------ lifecycle

    @property
    def armed(self) -> bool:
        return self.state in (State.ARMED, State.RUNNING)

    def load(self, streams: list[InstructionStream]) -> None:
        if self.armed:
            raise EngineError("engine armed; reset before loading")
        if self.state == State.LOADED:
            raise EngineError("already loaded")
        dev = self.device
        staged = []
        high = {}
        for stream in streams:
            if not 0 <= stream.unit < dev.units:
                raise EngineError(f"unit id {stream.unit} out of range (0..{dev.units - 1})")
            if stream.unit in self.envelopes or any(s.unit == stream.unit for s, _ in staged):
                raise EngineError(f"unit {stream.unit} given twice")
            for w in stream.words:
                if not 0 <= w.channel < dev.channels_per_unit:
                    raise EngineError(f"unit {stream.unit}: channel {w.channel} out of range")
            ticks = [w.fire_tick for w in stream.words]
            if any(b < a for a, b in zip(ticks, ticks[1:])):
                raise EngineError(f"unit {stream.unit}: stream not sorted by fire_tick")
            for ch, count in queue_high_water(stream, dev.queue_depth).items():
                high[stream.unit * dev.channels_per_unit + ch] = count
            staged.append((stream, stream.envelopes))
        for stream, envs in staged:
            self.envelopes[stream.unit] = envs
            base = stream.unit * dev.channels_per_unit
            for w in stream.words:
                self.channels[base + w.channel].queue.append(w)
                self.loaded_count += 1
        self.high_water = high
        self.state = State.LOADED

    def arm(self) -> None:
        if self.state != State.LOADED:
            raise EngineError(f"cannot arm from state {self.state.value}")
        self.state = State.ARMED

    def start(self) -> None:
        if self.state != State.ARMED:
            raise EngineError("engine not armed")
        self.state = State.RUNNING

    @property
    def remaining_count(self) -> int:
        return sum(len(c.queue) for c in self.channels)

    # ------------------------------------------------------------ execution

    def run(self, n_ticks: int) -> None:
        """Advance exactly ``n_ticks``. Past the program end channels idle at 0."""
        if not self.armed:
            raise EngineError("engine not armed")
        if n_ticks < 0:
            raise EngineError("n_ticks must be >= 0")
        if n_ticks == 0:
            return
        self.state = State.RUNNING
        t0, t1 = self.current_tick, self.current_tick + n_ticks
        jobs = list(enumerate(self.channels))
        if self._workers > 1:
            with ThreadPoolExecutor(max_workers=self._workers) as pool:
                results = list(pool.map(lambda job: self._advance(*job, t0, t1), jobs))
        else:
            results = [self._advance(i, ch, t0, t1) for i, ch in jobs]
        for i, (samples, fired, starts, captures) in enumerate(results):
            if self.record:
                self._history[i].append(samples)
            self.fired_count += fired
            self.valid_in[i].extend(starts)
            self._pending_captures.extend(captures)
        self.current_tick = t1
        self._finish_captures()

    def _envelope_spec(self, index: int, env_id: int) -> EnvelopeSpec:
        unit = index // self.device.channels_per_unit
        table = self.envelopes.get(unit) or ()
        if env_id < len(table):
            return table[env_id]
        if not table and env_id in DEFAULT_ENVELOPES:
            return DEFAULT_ENVELOPES[env_id]
        raise EngineError(f"channel {index}: envelope id {env_id} not defined")

    def _apply(self, index: int, ch: _Channel, w: InstructionWord, starts, captures) -> None:
        op, v = w.opcode, w.operand
        if op == Opcode.SET_FTW:
            ch.cfg = replace(ch.cfg, ftw=v)
        elif op == Opcode.SET_PHASE:
            ch.cfg = replace(ch.cfg, phase_offset=v & 0xFFFF)
        elif op == Opcode.SET_AMP:
            amp = v & 0xFFFF
            ch.cfg = replace(ch.cfg, amplitude=amp - 0x10000 if amp & 0x8000 else amp)
        elif op == Opcode.PLAY:
            env_id, length = v >> 24, (v >> 8) & 0xFFFF
            spec = self._envelope_spec(index, env_id)
            ch.cfg = replace(ch.cfg, envelope_id=env_id, envelope_len=length)
            ch.play_start = w.fire_tick
            ch.play_codes = envelope_codes(spec, length)
            starts.append(w.fire_tick)
        elif op == Opcode.CAPTURE:
            captures.append((index, w.fire_tick, v & 0xFFFFFF, v >> 24))

    def _advance(self, index: int, ch: _Channel, t0: int, t1: int):
        """Generate samples for ticks [t0, t1) on one channel. Touches only ``ch``."""
        out = np.zeros(t1 - t0, dtype=np.int16) if self.record else None
        fired = 0
        starts: list[int] = []
        captures: list[tuple[int, int, int, int]] = []
        t = t0
        while t < t1:
            while ch.queue and ch.queue[0].fire_tick == t:
                self._apply(index, ch, ch.queue.popleft(), starts, captures)
                fired += 1
            end = ch.play_end()
            if end is not None and end <= t:
                ch.play_start = ch.play_codes = None
                end = None
            nxt = t1
            if ch.queue:
                nxt = min(nxt, ch.queue[0].fire_tick)
            if end is not None:
                nxt = min(nxt, end)
            n = nxt - t
            if out is not None and ch.play_start is not None:
                acc = phase_ramp(ch.acc, ch.cfg.ftw, n)
                off = t - ch.play_start
                out[t - t0: nxt - t0] = nco_samples(
                    acc, ch.cfg.phase_offset, ch.cfg.amplitude, ch.play_codes[off: off + n]
                )
            ch.acc = (ch.acc + n * ch.cfg.ftw) & ACC_MASK
            t = nxt
        return out, fired, starts, captures

    def _finish_captures(self) -> None:
        still = []
        for index, tick, window, decim in self._pending_captures:
            if tick + window <= self.current_tick and self.record:
                full = self.window(index, tick, window)
                self.captures.append(
                    SampleTrace(index, tick, self.device.sample_rate, full[::decim], decim)
                )
            elif tick + window > self.current_tick:
                still.append((index, tick, window, decim))
        self._pending_captures = still

    # ------------------------------------------------------------ observation

    def _check_channel(self, channel: int) -> None:
        if not 0 <= channel < self.device.n_channels:
            raise EngineError(f"channel {channel} out of range (0..{self.device.n_channels - 1})")

    def window(self, channel: int, start: int, length: int) -> np.ndarray:
        self._check_channel(channel)
        if not self.record:
            raise EngineError("engine constructed with record=False")
        if start < 0 or start + length > self.current_tick:
            raise EngineError(
                f"window [{start}, {start + length}) not fully simulated (tick {self.current_tick})"
            )
        hist = self._history[channel]
        if len(hist) != 1:
            self._history[channel] = hist = [np.concatenate(hist) if hist else np.zeros(0, np.int16)]
        return hist[0][start: start + length]

    def trace(self, channel: int) -> SampleTrace:
        """Every sample generated so far on ``channel``."""
        return SampleTrace(
            channel, 0, self.device.sample_rate, self.window(channel, 0, self.current_tick)
        )

    def capture(self, channel: int, window_len: int, budget: int, start_tick: int = 0) -> SampleTrace:
        """Store ``window_len`` ticks from ``start_tick`` within ``budget`` samples.

        If the window fits, every sample is kept; otherwise every
        ``ceil(window_len / budget)``-th sample is kept.
        """
        self._check_channel(channel)
        if budget < 1:
            raise EngineError("capture budget must be >= 1")
        if budget > self.device.capture_memory:
            raise EngineError(
                f"budget {budget} exceeds capture memory {self.device.capture_memory}"
            )
        decim, _ = capture_plan(window_len, budget)
        samples = self.window(channel, start_tick, window_len)[::decim]
        return SampleTrace(channel, start_tick, self.device.sample_rate, samples, decim)

    def valid_out(self, channel: int) -> list[int]:
        """Ticks at which output-valid rises at the channel port."""
        self._check_channel(channel)
        lat = self.device.pipeline_latency
        return [t + lat for t in self.valid_in[channel] if t + lat < self.current_tick]

    def live_config(self, channel: int) -> ChannelConfig:
        self._check_channel(channel)
        return self.channels[channel].cfg


def sync_start(engines: list[Engine]) -> None:
    """Release all engines from a shared logical tick 0."""
    for i, eng in enumerate(engines):
        if eng.state != State.ARMED:
            raise EngineError(f"engine {i} is not loaded and armed (state {eng.state.value})")
        if eng.current_tick != 0:
            raise EngineError(f"engine {i} has already advanced to tick {eng.current_tick}")
    for eng in engines:
        eng.start()
        eng.synced = True


def run_program(streams, device: DeviceConfig, n_ticks: int | None = None) -> Engine:
    """Load, arm, start and run streams for ``n_ticks`` (default: program length)."""
    eng = Engine(device)
    eng.load(streams)
    eng.arm()
    eng.start()
    if n_ticks is None:
        n_ticks = max((s.total_ticks for s in streams), default=0)
    eng.run(n_ticks)
    return eng
