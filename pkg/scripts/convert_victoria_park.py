#!/usr/bin/env python3
"""Convert the Victoria Park dataset release into the toolkit's event format.

Inputs (MATLAB .mat containers from the original release):
  --odometry  aa3_dr.mat         variables: time [ms], speed [m/s], steering [rad]
  --gps       aa3_gpsx.mat       variables: timeGps [ms], Lo_m, La_m (meters)
  --detections <file>            pre-extracted range-bearing tree detections;
                                 either a .txt with lines `t r1 b1 r2 b2 ...`
                                 (t in seconds) or an .npz with arrays
                                 `times` (s) and object array `batches` of
                                 (K_i, 2) range-bearing blocks.

Raw laser scans are NOT processed here; the toolkit consumes pre-extracted
range-bearing detections only.

Output: a time-ordered event text file plus a `.manifest.json` sidecar with
per-kind counts (the loader cross-checks totals against it).

Usage:
  python scripts/convert_victoria_park.py --odometry aa3_dr.mat \
      --gps aa3_gpsx.mat --detections detections.txt --out victoria_park.txt
"""

import argparse
import sys

import numpy as np
from scipy.io import loadmat

sys.path.insert(0, __file__.rsplit("/scripts/", 1)[0] + "/src")

from ngslam.data_eval import (  # noqa: E402
    ControlEvent,
    GroundTruthEvent,
    MeasurementBatchEvent,
    write_events,
)


def _column(mat: dict, *names):
    for name in names:
        if name in mat:
            return np.asarray(mat[name], dtype=float).ravel()
    raise KeyError(f"none of {names} found; available: {sorted(k for k in mat if not k.startswith('__'))}")


def _to_seconds(t: np.ndarray) -> np.ndarray:
    # the release stores milliseconds; tolerate files already in seconds
    return t / 1000.0 if np.nanmedian(np.diff(t)) > 1.0 else t


def load_odometry(path):
    mat = loadmat(path)
    t = _to_seconds(_column(mat, "time", "Time"))
    speed = _column(mat, "speed", "Speed")
    steering = _column(mat, "steering", "Steering")
    order = np.argsort(t, kind="stable")
    events = []
    last = -np.inf
    for i in order:
        if t[i] <= last:  # duplicated encoder stamps occur in the release
            continue
        last = t[i]
        events.append(ControlEvent(float(t[i]), float(speed[i]), float(steering[i])))
    return events


def load_gps(path):
    mat = loadmat(path)
    t = _to_seconds(_column(mat, "timeGps", "timegps", "time"))
    east = _column(mat, "Lo_m", "lo_m", "x")
    north = _column(mat, "La_m", "la_m", "y")
    return [
        GroundTruthEvent(float(ti), float(xi), float(yi))
        for ti, xi, yi in zip(t, east, north)
        if np.isfinite(ti) and np.isfinite(xi) and np.isfinite(yi)
    ]


def load_detections(path):
    events = []
    if path.endswith(".npz"):
        data = np.load(path, allow_pickle=True)
        for ti, batch in zip(data["times"], data["batches"]):
            batch = np.asarray(batch, dtype=float).reshape(-1, 2)
            if batch.size:
                events.append(MeasurementBatchEvent(float(ti), batch))
        return events
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            values = [float(p) for p in parts]
            z = np.array(values[1:], dtype=float).reshape(-1, 2)
            if z.size:
                events.append(MeasurementBatchEvent(values[0], z))
    return events


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--odometry", required=True)
    ap.add_argument("--gps", required=True)
    ap.add_argument("--detections", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)

    events = load_odometry(args.odometry) + load_gps(args.gps) + load_detections(args.detections)
    events.sort(key=lambda e: (e.time, 0 if isinstance(e, MeasurementBatchEvent) else 1))
    counts = write_events(events, args.out)
    print(
        f"wrote {args.out}: {counts['controls']} controls, "
        f"{counts['measurement_batches']} batches ({counts['detections']} detections), "
        f"{counts['gps']} gps fixes"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
