import io
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_program
from qcstack.device import DeviceConfig
from qcstack.engine import (
    Engine,
    EngineError,
    SampleTrace,
    State,
    capture_plan,
    run_program,
    sync_start,
    trace_from_bytes,
    trace_to_bytes,
    write_trace_csv,
)
from qcstack.pulse import parse_program
from qcstack.schedule import (
    InstructionStream,
    InstructionWord,
    Opcode,
    QueueOverflowError,
    schedule,
)
from qcstack.siggen import envelope

DEV = DeviceConfig(units=1, channels_per_unit=2)


def loaded(streams, device=DEV):
    eng = Engine(device)
    eng.load(streams)
    eng.arm()
    return eng


def nop_stream(n, unit=0):
    return InstructionStream(unit, [InstructionWord(t, 0, Opcode.NOP) for t in range(n)])


def scalar_sample(tick, ftw, phase, amp, kind, length, i):
    acc = (tick * ftw + (phase << 16)) % 2**32
    raw = round(math.sin(2 * math.pi * (acc >> 20) / 4096) * 32767)
    y = round(Fraction(raw * amp, 2**15))
    env = round(Fraction(envelope(kind, length, i)) * 2**15)
    return max(-32768, min(32767, round(Fraction(y * env, 2**15))))


# ---- load / lifecycle


def test_high_water_three():
    eng = Engine(DEV)
    eng.load([nop_stream(3)])
    assert eng.high_water == {0: 3}
    assert eng.state == State.LOADED


def test_overflow_on_load():
    with pytest.raises(QueueOverflowError) as info:
        Engine(DEV).load([nop_stream(65)])
    assert info.value.tick == 64


def test_double_load_rejected():
    eng = Engine(DEV)
    eng.load([nop_stream(1)])
    with pytest.raises(EngineError, match="already loaded"):
        eng.load([nop_stream(1)])


def test_bad_unit_and_unsorted():
    with pytest.raises(EngineError, match="unit id 3"):
        Engine(DEV).load([nop_stream(1, unit=3)])
    words = [InstructionWord(5, 0, Opcode.NOP), InstructionWord(2, 0, Opcode.NOP)]
    with pytest.raises(EngineError, match="not sorted"):
        Engine(DEV).load([InstructionStream(0, words)])


def test_run_requires_arm():
    eng = Engine(DEV)
    eng.load([nop_stream(1)])
    with pytest.raises(EngineError, match="not armed"):
        eng.run(10)


def test_run_zero_is_identity():
    eng = loaded([nop_stream(3)])
    eng.run(0)
    assert eng.current_tick == 0 and eng.remaining_count == 3 and eng.fired_count == 0


def test_set_amp_takes_effect_at_its_tick():
    words = [
        InstructionWord(0, 0, Opcode.SET_FTW, 2**28),
        InstructionWord(0, 0, Opcode.PLAY, 100 << 8),
        InstructionWord(10, 0, Opcode.SET_AMP, 0x4000),
    ]
    eng = loaded([InstructionStream(0, words)])
    eng.run(9)
    assert eng.live_config(0).amplitude == 0
    eng.run(1)
    assert eng.live_config(0).amplitude == 0
    eng.run(1)
    assert eng.live_config(0).amplitude == 16384
    eng.run(89)
    out = eng.trace(0).samples
    assert not out[:10].any() and out[10:].any()


def test_samples_match_scalar_oracle():
    src = (
        "frame f ch=1 freq=37e6 phase=0.7; waveform g gaussian len=40; waveform r rect len=9;"
        "delay 5; play f g amp=-0.6; shift_phase f 1.0; play f r amp=0.3;"
    )
    prog = parse_program(src)
    eng = run_program(schedule(prog, DEV), DEV, 60)
    out = eng.trace(1).samples
    cfg = eng.live_config(1)
    ftw = cfg.ftw
    ph0 = round(0.7 / (2 * math.pi) * 2**16) % 2**16
    ph1 = round((0.7 + 1.0) / (2 * math.pi) * 2**16) % 2**16
    a0 = round(-0.6 * 2**15)
    a1 = round(0.3 * 2**15)
    expect = [0] * 60
    for i in range(40):
        expect[5 + i] = scalar_sample(5 + i, ftw, ph0, a0, "gaussian", 40, i)
    for i in range(9):
        expect[45 + i] = scalar_sample(45 + i, ftw, ph1, a1, "rect", 9, i)
    assert out.tolist() == expect


def test_idle_after_program_end():
    src = "frame f ch=0 freq=10e6 phase=0; waveform r rect len=20; play f r;"
    eng = run_program(schedule(parse_program(src), DEV), DEV, 100)
    out = eng.trace(0).samples
    assert out[:20].any() and not out[20:].any()
    assert not eng.trace(1).samples.any()


def test_instruction_conservation():
    dev = DeviceConfig(units=2, channels_per_unit=4)
    prog = random_program(np.random.default_rng(5), dev)
    streams = schedule(prog, dev)
    eng = loaded(streams, dev)
    total = sum(len(s.words) for s in streams)
    for step in (1, 7, 50, 1000):
        eng.run(step)
        assert eng.fired_count + eng.remaining_count == eng.loaded_count == total


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_worker_count_does_not_change_output(seed):
    base = DeviceConfig(units=2, channels_per_unit=4)
    prog = random_program(np.random.default_rng(seed), base)
    streams = schedule(prog, base)
    n = max(s.total_ticks for s in streams) + 16
    outs = []
    for w in (1, 3):
        dev = DeviceConfig(units=2, channels_per_unit=4, worker_count=w)
        eng = run_program(streams, dev, n)
        outs.append([eng.trace(c).samples.tobytes() for c in range(dev.n_channels)])
    assert outs[0] == outs[1]


def test_chunked_run_equals_single_run():
    dev = DeviceConfig(units=2, channels_per_unit=4)
    streams = schedule(random_program(np.random.default_rng(11), dev), dev)
    n = max(s.total_ticks for s in streams) + 10
    whole = run_program(streams, dev, n)
    parts = loaded(streams, dev)
    for k in (3, 1, n - 4):
        parts.run(k)
    for c in range(dev.n_channels):
        assert whole.trace(c) == parts.trace(c)


# ---- synchronization


# carrier held at sin(pi/2) so the output is the bare envelope
PULSE = "frame f ch=0 freq=0 phase=1.5707963267948966; waveform g gaussian len=64; {pre} play f g;"


def test_sync_two_units_identical():
    dev = DeviceConfig(units=1, channels_per_unit=1)
    streams = schedule(parse_program(PULSE.format(pre="")), dev)
    engines = [loaded(streams, dev), loaded(streams, dev)]
    sync_start(engines)
    for e in engines:
        e.run(200)
    assert np.array_equal(engines[0].trace(0).samples, engines[1].trace(0).samples)


def test_sync_delay_gives_correlation_lag():
    dev = DeviceConfig(units=1, channels_per_unit=1)
    a = loaded(schedule(parse_program(PULSE.format(pre="")), dev), dev)
    b = loaded(schedule(parse_program(PULSE.format(pre="delay 5;")), dev), dev)
    sync_start([a, b])
    a.run(200)
    b.run(200)
    x = a.trace(0).samples.astype(np.int64)
    y = b.trace(0).samples.astype(np.int64)
    # brute-force cross-correlation over lags -20..20
    best = max(range(-20, 21), key=lambda k: sum(
        int(x[i]) * int(y[i + k]) for i in range(len(x)) if 0 <= i + k < len(y)
    ))
    assert best == 5


def test_sync_unloaded_engine_rejected():
    ok = loaded([nop_stream(1)])
    with pytest.raises(EngineError, match="not loaded and armed"):
        sync_start([ok, Engine(DEV)])


def test_sync_after_advance_rejected():
    a, b = loaded([nop_stream(1)]), loaded([nop_stream(1)])
    a.start()
    a.run(3)
    a.state = State.ARMED
    with pytest.raises(EngineError, match="already advanced"):
        sync_start([a, b])


# ---- capture


def test_capture_plan_examples():
    assert capture_plan(4096, 1024) == (4, 1024)
    assert capture_plan(1000, 1000) == (1, 1000)
    assert capture_plan(1025, 1024) == (2, 513)
    with pytest.raises(EngineError):
        capture_plan(10, 0)


def test_capture_decimates_and_keeps_ticks():
    src = "frame f ch=0 freq=3e6 phase=0; waveform r rect len=4096; play f r;"
    eng = run_program(schedule(parse_program(src), DEV), DEV)
    cap = eng.capture(0, 4096, 1024)
    assert cap.decimation == 4 and len(cap.samples) == 1024
    full = eng.window(0, 0, 4096)
    assert np.array_equal(cap.samples, full[::4])
    assert cap.ticks[-1] == 4092


def test_capture_budget_over_memory():
    eng = run_program([nop_stream(1)], DEV, 10)
    with pytest.raises(EngineError, match="capture memory"):
        eng.capture(0, 10, DEV.capture_memory + 1)


def test_capture_instruction_produces_trace():
    src = "frame f ch=0 freq=3e6 phase=0; waveform r rect len=50; play f r; capture f len=30;"
    dev = DeviceConfig(units=1, channels_per_unit=1, capture_memory=16)
    eng = run_program(schedule(parse_program(src), dev), dev, 100)
    (cap,) = eng.captures
    assert (cap.start_tick, cap.decimation, len(cap.samples)) == (50, 2, 15)


def test_window_beyond_simulated_range():
    eng = run_program([nop_stream(1)], DEV, 10)
    with pytest.raises(EngineError, match="not fully simulated"):
        eng.window(0, 5, 6)


# ---- latency events


def test_valid_out_latency():
    src = "frame f ch=0 freq=3e6 phase=0; waveform r rect len=10; play f r; delay 5; play f r;"
    eng = run_program(schedule(parse_program(src), DEV), DEV, 40)
    assert eng.valid_in[0] == [0, 15]
    assert eng.valid_out(0) == [4, 19]


# ---- trace I/O


def test_trace_binary_round_trip():
    tr = SampleTrace(3, 17, 1e9, np.array([0, -1, 32767, -32768]), 2)
    data = trace_to_bytes(tr)
    assert data[:4] == b"QCTR"
    assert trace_from_bytes(data) == tr
    with pytest.raises(ValueError):
        trace_from_bytes(data[:-2])
    with pytest.raises(ValueError, match="magic"):
        trace_from_bytes(b"XXXX" + data[4:])


def test_trace_csv():
    tr = SampleTrace(1, 10, 1e9, np.array([16384, -32768]), 3)
    buf = io.StringIO()
    write_trace_csv(buf, [tr])
    rows = buf.getvalue().splitlines()
    assert rows[0] == "tick,channel,fixed,real"
    assert rows[1:] == ["10,1,16384,0.5", "13,1,-32768,-1.0"]
