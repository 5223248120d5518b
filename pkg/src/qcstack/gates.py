"""Gate -> pulse lowering and a pulse-level simulation of the lowered fragments.

X  = R_x(pi): one calibrated pi pulse at frame phase 0.
H  = R_y(pi/2) then a pi virtual-Z (frame phase shift).
init0 = reset marker; init1 = init0 followed by X.
"""
from __future__ import annotations

import math

from .pulse import FrameDecl, Play, PulseProgram, Reset, ShiftPhase, Statement, WaveformDecl
from .qubit import CalibrationTable, DriveParams, QubitError, QubitState, evolve
from .siggen import EnvelopeSpec, envelope_table

GATES = ("init0", "init1", "X", "H")


class CalibrationError(KeyError):
    pass


def gate_waveform_name(gate: str) -> str:
    return f"{gate.lower()}_pulse"


def _entry(cal: CalibrationTable, gate: str):
    try:
        return cal.entries[gate]
    except KeyError:
        raise CalibrationError(f"missing calibration entry for {gate}") from None


def _ticks(duration: float, sample_rate: float) -> int:
    n = round(duration * sample_rate)
    if n < 1:
        raise QubitError(f"pulse duration {duration} s is shorter than one tick")
    return n


def gate_waveforms(cal: CalibrationTable, kind: str = "rect") -> list[WaveformDecl]:
    """Waveform declarations referenced by lowered X/H fragments."""
    return [
        WaveformDecl(gate_waveform_name(g), kind, _ticks(e.duration, cal.sample_rate))
        for g, e in sorted(cal.entries.items())
        if g in ("X", "H")
    ]


def lower_gate(gate: str, cal: CalibrationTable, frame: str = "q0") -> list[Statement]:
    if gate not in GATES:
        raise ValueError(f"unknown gate {gate!r} (expected one of {GATES})")
    if gate == "init0":
        return [Reset(frame)]
    if gate == "init1":
        return lower_gate("init0", cal, frame) + lower_gate("X", cal, frame)
    entry = _entry(cal, gate)
    play = Play(frame, gate_waveform_name(gate), entry.amplitude)
    out: list[Statement] = []
    if entry.phase:
        out.append(ShiftPhase(frame, entry.phase))
    out.append(play)
    if entry.phase:
        out.append(ShiftPhase(frame, -entry.phase))
    if gate == "H":
        out.append(ShiftPhase(frame, math.pi))
    return out


def lower_circuit(gates, cal: CalibrationTable, frame: str = "q0", channel: int = 0,
                  frequency: float = 0.0) -> PulseProgram:
    """A complete program (frame + waveforms + body) for a gate sequence."""
    body: list[Statement] = []
    for g in gates:
        body.extend(lower_gate(g, cal, frame))
    return PulseProgram([FrameDecl(frame, channel, frequency, 0.0)], gate_waveforms(cal), body)


def simulate_program(program: PulseProgram, kappa: float, sample_rate: float = 1e9,
                     detuning: float = 0.0, frame: str | None = None) -> QubitState:
    """Drive one qubit with the statements addressed to ``frame``.

    A play rotates by kappa * amp * (mean envelope) for its length in ticks,
    with the drive phase equal to the accumulated frame phase. Shaped
    envelopes use their mean (area) which is exact only on resonance.
    """
    frame = frame or program.frames[0].name
    decl = program.frame(frame)
    phase = decl.phase
    waves = {w.name: w for w in program.waveforms}
    state = QubitState.ground()
    for stmt in program.body:
        if isinstance(stmt, Reset) and stmt.frame == frame:
            state = QubitState.ground()
            phase = decl.phase
        elif isinstance(stmt, ShiftPhase) and stmt.frame == frame:
            phase += stmt.angle
        elif isinstance(stmt, Play) and stmt.frame == frame:
            w = waves[stmt.waveform]
            amp = 1.0 if stmt.amp is None else stmt.amp
            area = float(envelope_table(EnvelopeSpec(w.kind, w.sigma), w.length).mean())
            # negative amplitude is a pi phase flip of the drive
            if amp < 0:
                amp, flip = -amp, math.pi
            else:
                flip = 0.0
            drive = DriveParams(kappa * amp * area, detuning, w.length / sample_rate, phase + flip)
            state = evolve(state, drive)
    return state
