#!/usr/bin/env python3
"""Sweep an injected third-harmonic spur and record where the -60 dBc check trips.

Tones come from the engine (coherent bins, 4096 samples, Blackman window).
Each level is tried on ``--tones`` random tones; output is ``spur_sweep.csv``.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from qcstack.api import harmonic_fault
from qcstack.device import DeviceConfig
from qcstack.engine import run_program
from qcstack.pulse import parse_program
from qcstack.schedule import schedule
from qcstack.siggen import ChannelConfig, float_to_fixed
from qcstack.verify import spectral_check

N = 4096
FS = 1e9


def tone(k: int, amp: float, phase: float) -> np.ndarray:
    src = f"frame f ch=0 freq={k * FS / N!r} phase={phase!r}; waveform r rect len={N}; play f r amp={amp!r};"
    dev = DeviceConfig(units=1, channels_per_unit=1)
    return run_program(schedule(parse_program(src), dev), dev).trace(0).real


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tones", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threshold", type=float, default=-60.0)
    ap.add_argument("--out", type=Path, default=Path("out/spur"))
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    tones = []
    for _ in range(args.tones):
        k = int(rng.integers(8, N // 6 - 8))
        amp = float(rng.uniform(0.1, 0.99))
        tones.append((k, amp, tone(k, amp, float(rng.uniform(-np.pi, np.pi)))))

    rows = []
    for level in range(-90, -29, 5):
        caught = 0
        measured = []
        for k, amp, x in tones:
            cfg = ChannelConfig(ftw=k << 20, amplitude=float_to_fixed(amp))
            r = spectral_check(harmonic_fault(x, cfg, 3, float(level)), k * FS / N, FS, args.threshold)
            caught += not r.passed
            measured.append(r.worst_spur_dbc)
        rows.append((level, caught / len(tones), float(np.median(measured))))
        print(f"injected {level:4d} dBc  detected {100 * rows[-1][1]:5.1f}%  median worst spur {rows[-1][2]:7.1f} dBc")

    with open(args.out / "spur_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["injected_dbc", "detection_rate", "median_worst_spur_dbc"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
