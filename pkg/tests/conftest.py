import numpy as np
import pytest

from qcstack.device import DeviceConfig
from qcstack.pulse import (
    Barrier,
    Capture,
    Delay,
    FrameDecl,
    Play,
    PulseProgram,
    SetFrequency,
    ShiftPhase,
    WaveformDecl,
)

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def device():
    return DeviceConfig(units=2, channels_per_unit=4)


def random_program(rng: np.random.Generator, device: DeviceConfig, n_stmts=None) -> PulseProgram:
    """Random valid program; keeps per-channel word counts under the queue depth."""
    n_frames = int(rng.integers(1, 5))
    chans = rng.choice(device.n_channels, size=n_frames, replace=False)
    fs = device.sample_rate
    frames = [
        FrameDecl(f"f{i}", int(c), float(rng.uniform(0, 0.45) * fs), float(rng.uniform(-3, 3)))
        for i, c in enumerate(chans)
    ]
    kinds = ("rect", "gaussian", "blackman")
    waves = [
        WaveformDecl(f"w{i}", kinds[int(rng.integers(0, 3))], int(rng.integers(1, 200)))
        for i in range(int(rng.integers(1, 4)))
    ]
    names = [f.name for f in frames]
    body = []
    for _ in range(int(rng.integers(1, 30)) if n_stmts is None else n_stmts):
        r = rng.random()
        fr = names[int(rng.integers(0, len(names)))]
        if r < 0.35:
            amp = None if rng.random() < 0.3 else float(rng.uniform(-1, 1))
            body.append(Play(fr, waves[int(rng.integers(0, len(waves)))].name, amp))
        elif r < 0.5:
            body.append(Delay(int(rng.integers(0, 50)), None if rng.random() < 0.5 else fr))
        elif r < 0.6:
            body.append(SetFrequency(fr, float(rng.uniform(0, 0.45) * fs)))
        elif r < 0.7:
            body.append(ShiftPhase(fr, float(rng.uniform(-3, 3))))
        elif r < 0.9:
            k = int(rng.integers(1, len(names) + 1))
            body.append(Barrier(tuple(rng.choice(names, size=k, replace=False).tolist())))
        else:
            body.append(Capture(fr, int(rng.integers(1, 300))))
    return PulseProgram(frames, waves, body)


def hand_schedule(program: PulseProgram) -> dict[str, list[tuple[int, str]]]:
    """Straight-line cursor walk: per frame, (fire tick, kind) of every
    duration-bearing statement. Independent of the scheduler's word emission."""
    cursor = {f.name: 0 for f in program.frames}
    lengths = {w.name: w.length for w in program.waveforms}
    out = {f.name: [] for f in program.frames}
    for s in program.body:
        if isinstance(s, Play):
            out[s.frame].append((cursor[s.frame], "PLAY"))
            cursor[s.frame] += lengths[s.waveform]
        elif isinstance(s, Capture):
            out[s.frame].append((cursor[s.frame], "CAPTURE"))
            cursor[s.frame] += s.length
        elif isinstance(s, Delay):
            for name in cursor if s.frame is None else [s.frame]:
                cursor[name] += s.duration
        elif isinstance(s, Barrier):
            m = max(cursor[n] for n in s.frames)
            for n in s.frames:
                cursor[n] = m
    return out
