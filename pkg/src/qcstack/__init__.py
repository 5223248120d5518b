"""Software-simulated quantum control stack.

Pulse language and scheduler, cycle-deterministic execution units, a dual
reference / fixed-point NCO chain, a verification harness and a two-level
qubit for Rabi calibration.
"""
from .device import DeviceConfig
from .engine import Engine, SampleTrace, sync_start
from .pulse import PulseProgram, format_program, parse_program
from .schedule import InstructionStream, InstructionWord, Opcode, schedule
from .siggen import ChannelConfig, FixedFormat, Q1_15, render_fixed, render_reference

__version__ = "0.1.0"
