#!/usr/bin/env python3
"""Rabi calibration experiment.

1. Duration scans at several shot counts, repeated over seeds: fit error vs shots.
2. A noiseless amplitude scan calibrates the pi amplitude.
3. The calibrated X and H fragments are lowered and simulated.

Writes ``convergence.csv`` and ``calibration.json`` under ``--out``.
"""
import argparse
import csv
import json
import math
from pathlib import Path

import numpy as np

from qcstack.gates import lower_circuit, simulate_program
from qcstack.qubit import DriveParams, calibrate_pi_pulse, measure, run_rabi_scan


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rabi-mhz", type=float, default=1.0, help="configured Rabi frequency")
    ap.add_argument("--points", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("out/rabi"))
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    omega = 2 * math.pi * args.rabi_mhz * 1e6
    f_true = args.rabi_mhz * 1e6
    xs = [4.0 / f_true * i / args.points for i in range(args.points)]  # four periods

    rows = []
    for shots in (100, 1000, 10_000, None):
        if shots is None:
            r = run_rabi_scan("duration", xs, DriveParams(omega), 100, args.seed, noiseless=True)
            errs = [abs(r.fitted_frequency - f_true) / f_true]
        else:
            errs = [
                abs(run_rabi_scan("duration", xs, DriveParams(omega), shots, args.seed + k)
                    .fitted_frequency - f_true) / f_true
                for k in range(args.repeats)
            ]
        label = "noiseless" if shots is None else str(shots)
        rows.append((label, float(np.mean(errs)), float(np.max(errs))))
        print(f"shots={label:>9}  mean rel error {100 * rows[-1][1]:.3f}%  worst {100 * rows[-1][2]:.3f}%")

    with open(args.out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["shots", "mean_rel_error", "max_rel_error"])
        w.writerows(rows)

    duration = 0.5 / f_true  # pi pulse at unit amplitude when kappa = omega
    amps = [4.0 * i / args.points for i in range(args.points)]
    scan = run_rabi_scan("amplitude", amps, DriveParams(0, 0, duration), 100, args.seed,
                         kappa=omega, noiseless=True)
    cal = calibrate_pi_pulse(scan, duration)
    p_x = simulate_program(lower_circuit(["init0", "X"], cal), omega).p1
    p_h = measure(simulate_program(lower_circuit(["init0", "H"], cal), omega), 10_000, args.seed) / 10_000
    print(f"a_pi = {cal.entries['X'].amplitude:.5f}  P1(X) = {p_x:.6f}  P1(H) @1e4 shots = {p_h:.4f}")

    doc = {"calibration": cal.to_dict(), "p1_x": p_x, "p1_h": p_h}
    (args.out / "calibration.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
