"""Dataset ingestion, synthetic-world simulation, and evaluation metrics.

Event file format (UTF-8 text, space separated, ``#`` comments):

    t CONTROL v_e alpha      # encoder velocity (m/s) and steering (rad)
    t MEAS r1 b1 r2 b2 ...   # range-bearing detections, radians
    t GPS px py              # ground-truth position (never fed to filters)

Events must be time ordered; control timestamps strictly increase.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .gaussian import substream
from .models import ControlInput, VehicleParams, axle_velocity, motion_step, predict_measurement, wrap_angle

RUN_SCHEMA_VERSION = 1

CSV_HEADER = "step,time,est_x,est_y,est_theta,gt_x,gt_y,err,step_ms"


class DataFormatError(ValueError):
    """Malformed or out-of-order event data."""


@dataclass(frozen=True)
class ControlEvent:
    time: float
    encoder_velocity: float
    steering: float


@dataclass(frozen=True)
class MeasurementBatchEvent:
    time: float
    measurements: np.ndarray  # (K, 2) range-bearing rows


@dataclass(frozen=True)
class GroundTruthEvent:
    time: float
    px: float
    py: float


SensorEvent = ControlEvent | MeasurementBatchEvent | GroundTruthEvent


def load_events(path) -> list[SensorEvent]:
    """Parse an event file; raises :class:`DataFormatError` with the line
    number on malformed records or non-monotone timestamps."""
    events: list[SensorEvent] = []
    last_time = -np.inf
    last_control_time = -np.inf
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                t = float(parts[0])
                kind = parts[1]
                values = [float(p) for p in parts[2:]]
            except (IndexError, ValueError) as err:
                raise DataFormatError(f"{path}:{lineno}: malformed record: {raw.strip()!r}") from err
            if t < last_time:
                raise DataFormatError(f"{path}:{lineno}: timestamps must be non-decreasing")
            last_time = t
            if kind == "CONTROL":
                if len(values) != 2:
                    raise DataFormatError(f"{path}:{lineno}: CONTROL needs exactly v_e and alpha")
                if t <= last_control_time:
                    raise DataFormatError(
                        f"{path}:{lineno}: control timestamps must strictly increase"
                    )
                last_control_time = t
                events.append(ControlEvent(t, values[0], values[1]))
            elif kind == "MEAS":
                if len(values) % 2 != 0:
                    raise DataFormatError(f"{path}:{lineno}: MEAS needs range/bearing pairs")
                z = np.array(values, dtype=float).reshape(-1, 2)
                if np.any(z[:, 0] < 0.0):
                    raise DataFormatError(f"{path}:{lineno}: negative range in MEAS record")
                z[:, 1] = wrap_angle(z[:, 1])
                events.append(MeasurementBatchEvent(t, z))
            elif kind == "GPS":
                if len(values) != 2:
                    raise DataFormatError(f"{path}:{lineno}: GPS needs exactly px and py")
                events.append(GroundTruthEvent(t, values[0], values[1]))
            else:
                raise DataFormatError(f"{path}:{lineno}: unknown event kind {kind!r}")
    return events


def write_events(events, path, manifest: bool = True) -> dict:
    """Write events in the text format; optionally drop a ``.manifest.json``
    sidecar with per-kind counts.  Returns the counts."""
    counts = {"controls": 0, "measurement_batches": 0, "detections": 0, "gps": 0}
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            if isinstance(ev, ControlEvent):
                fh.write(f"{ev.time:.17g} CONTROL {ev.encoder_velocity:.17g} {ev.steering:.17g}\n")
                counts["controls"] += 1
            elif isinstance(ev, MeasurementBatchEvent):
                flat = " ".join(f"{v:.17g}" for v in ev.measurements.ravel())
                fh.write(f"{ev.time:.17g} MEAS {flat}\n")
                counts["measurement_batches"] += 1
                counts["detections"] += ev.measurements.shape[0]
            elif isinstance(ev, GroundTruthEvent):
                fh.write(f"{ev.time:.17g} GPS {ev.px:.17g} {ev.py:.17g}\n")
                counts["gps"] += 1
            else:
                raise TypeError(f"unknown event type {type(ev)!r}")
    if manifest:
        with open(str(path) + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(counts, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return counts


@dataclass
class WorldConfig:
    """Synthetic world: landmark layout, scripted controls, sensor limits."""

    controls: np.ndarray  # (T, 2) true (v, alpha) per step
    landmarks: np.ndarray | None = None  # explicit (M, 2), else sampled
    n_landmarks: int = 40
    bounds: tuple[float, float, float, float] = (-50.0, -50.0, 50.0, 50.0)
    sigma_v: float = 2.0
    sigma_g: float = float(np.radians(6.0))
    sigma_r: float = 1.0
    sigma_b: float = float(np.radians(3.0))
    fov: float = float(np.pi)
    max_range: float = 30.0
    seed: int = 0
    vehicle: VehicleParams = field(default_factory=lambda: VehicleParams(dt=0.25))
    initial_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    meas_every: int = 1
    gps_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.fov <= 2.0 * np.pi:
            raise ValueError("field of view must lie in (0, 2*pi]")
        if self.landmarks is None and self.n_landmarks < 0:
            raise ValueError("n_landmarks must be non-negative")


def loop_controls(n_steps: int = 500, speed: float = 3.0, steering: float = 0.1) -> np.ndarray:
    """Constant-speed loop: the vehicle circles with radius wheelbase/tan(steering)."""
    controls = np.empty((n_steps, 2))
    controls[:, 0] = speed
    controls[:, 1] = steering
    return controls


def default_world(n_landmarks: int = 40, n_steps: int = 500, seed: int = 0, **overrides) -> WorldConfig:
    """Benchmark world: a closed loop of radius ~28 m through a landmark field."""
    cfg = WorldConfig(
        controls=loop_controls(n_steps=n_steps, speed=3.0, steering=0.1),
        n_landmarks=n_landmarks,
        bounds=(-15.0, -15.0, 75.0, 75.0),
        initial_pose=(0.0, 0.0, 0.0),
        seed=seed,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


_MIN_EMITTED_RANGE = 0.05  # noisy detections closer than this are dropped


def _world_landmarks(cfg: WorldConfig, rng) -> np.ndarray:
    if cfg.landmarks is not None:
        return np.asarray(cfg.landmarks, dtype=float)
    xmin, ymin, xmax, ymax = cfg.bounds
    pts = rng.random((cfg.n_landmarks, 2))
    pts[:, 0] = xmin + pts[:, 0] * (xmax - xmin)
    pts[:, 1] = ymin + pts[:, 1] * (ymax - ymin)
    return pts


def simulate(cfg: WorldConfig):
    """Generate an event stream and the ground-truth trajectory.

    Ground truth integrates the noise-free controls; emitted control events
    carry encoder velocity and steering with additive Gaussian noise, and
    detections are noisy range-bearing readings of landmarks inside the
    field of view and range limit.  Deterministic for a given seed.

    Returns ``(events, truth)`` with ``truth`` an (T+1, 4) array of
    ``[t, px, py, theta]`` rows.
    """
    rng = substream(cfg.seed, 0, domain=1)
    landmarks = _world_landmarks(cfg, substream(cfg.seed, 1, domain=1))
    vehicle = cfg.vehicle
    dt = vehicle.dt

    pose = np.asarray(cfg.initial_pose, dtype=float).copy()
    truth = [np.array([0.0, *pose])]
    events: list[SensorEvent] = []
    half_fov = 0.5 * cfg.fov

    for k, (v_true, alpha_true) in enumerate(np.asarray(cfg.controls, dtype=float)):
        t = (k + 1) * dt
        pose = motion_step(pose, np.array([v_true, alpha_true]), vehicle)
        truth.append(np.array([t, *pose]))

        encoder_true = v_true * (
            1.0 - vehicle.track * np.tan(alpha_true) / (2.0 * vehicle.wheelbase)
        )
        noisy_v = encoder_true + cfg.sigma_v * rng.standard_normal() if cfg.sigma_v > 0 else encoder_true
        noisy_a = alpha_true + cfg.sigma_g * rng.standard_normal() if cfg.sigma_g > 0 else alpha_true
        events.append(ControlEvent(t, float(noisy_v), float(noisy_a)))

        if landmarks.shape[0] and (k + 1) % cfg.meas_every == 0:
            z_true = predict_measurement(pose, landmarks)
            visible = (z_true[:, 0] <= cfg.max_range) & (np.abs(z_true[:, 1]) <= half_fov)
            detections = []
            for z in z_true[visible]:
                r_noisy = z[0] + (cfg.sigma_r * rng.standard_normal() if cfg.sigma_r > 0 else 0.0)
                b_noisy = wrap_angle(
                    z[1] + (cfg.sigma_b * rng.standard_normal() if cfg.sigma_b > 0 else 0.0)
                )
                if r_noisy > _MIN_EMITTED_RANGE:
                    detections.append((float(r_noisy), float(b_noisy)))
            if detections:
                events.append(MeasurementBatchEvent(t, np.array(detections)))

        if (k + 1) % cfg.gps_every == 0:
            events.append(GroundTruthEvent(t, float(pose[0]), float(pose[1])))

    return events, np.stack(truth)


def rmse(estimates, truth) -> float:
    """Root mean square Euclidean position error over aligned step pairs."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValueError(f"length mismatch: {estimates.shape} vs {truth.shape}")
    if estimates.shape[0] == 0:
        raise ValueError("rmse needs at least one pair")
    return float(np.sqrt(np.mean(np.sum((estimates - truth) ** 2, axis=1))))


def align_ground_truth(est_times, gt_times, tolerance: float = 0.1) -> list[tuple[int, int]]:
    """Order-preserving pairing of ground-truth events with estimates.

    Each ground-truth timestamp is matched to the nearest not-yet-used
    estimate within ``tolerance`` seconds (earlier estimate on ties);
    unmatched entries are skipped.
    """
    pairs: list[tuple[int, int]] = []
    i = 0
    est_times = np.asarray(est_times, dtype=float)
    for j, tg in enumerate(np.asarray(gt_times, dtype=float)):
        while i + 1 < est_times.size and abs(est_times[i + 1] - tg) < abs(est_times[i] - tg):
            i += 1
        if i < est_times.size and abs(est_times[i] - tg) <= tolerance:
            pairs.append((i, j))
            i += 1
        if i >= est_times.size:
            break
    return pairs


@dataclass
class RunRecord:
    """Per-step estimates with optional aligned ground truth and timings."""

    algorithm: str
    seed: int
    n_particles: int
    config: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)  # (step, t, est(3,), gt(2,)|None, step_s)

    def add_step(self, step: int, t: float, est, gt, step_s: float) -> None:
        self.steps.append((step, float(t), np.asarray(est, dtype=float), gt, float(step_s)))

    def estimated_positions(self) -> np.ndarray:
        return np.array([s[2][:2] for s in self.steps if s[3] is not None]).reshape(-1, 2)

    def truth_positions(self) -> np.ndarray:
        return np.array([s[3] for s in self.steps if s[3] is not None]).reshape(-1, 2)

    def rmse(self) -> float:
        est = self.estimated_positions()
        if est.shape[0] == 0:
            return float("nan")
        return rmse(est, self.truth_positions())

    def step_times_ms(self) -> np.ndarray:
        return np.array([1e3 * s[4] for s in self.steps])


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def write_run(record: RunRecord, csv_path, zero_timing: bool = False) -> dict:
    """Emit the run as CSV plus a JSON summary sidecar (same stem, ``.json``).

    ``zero_timing`` replaces wall-clock fields with zeros so that repeated
    runs of a deterministic filter produce byte-identical files.
    """
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for step, t, est, gt, step_s in record.steps:
            ms = 0.0 if zero_timing else 1e3 * step_s
            if gt is None:
                gt_x = gt_y = err = ""
            else:
                gt_x = f"{gt[0]:.17g}"
                gt_y = f"{gt[1]:.17g}"
                err = f"{float(np.hypot(est[0] - gt[0], est[1] - gt[1])):.17g}"
            fh.write(
                f"{step},{t:.17g},{est[0]:.17g},{est[1]:.17g},{est[2]:.17g},"
                f"{gt_x},{gt_y},{err},{ms:.17g}\n"
            )

    times = record.step_times_ms()
    run_rmse = record.rmse()
    summary = {
        "schema_version": RUN_SCHEMA_VERSION,
        "rmse_m": run_rmse if np.isfinite(run_rmse) else None,
        "mean_step_ms": 0.0 if zero_timing else float(np.mean(times)) if times.size else 0.0,
        "max_step_ms": 0.0 if zero_timing else float(np.max(times)) if times.size else 0.0,
        "n_particles": record.n_particles,
        "seed": record.seed,
        "algorithm": record.algorithm,
        "config": record.config,
        "config_hash": config_hash(record.config),
    }
    json_path = _summary_path(csv_path)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _summary_path(csv_path) -> str:
    text = str(csv_path)
    stem = text[: -len(".csv")] if text.endswith(".csv") else text
    return stem + ".json"


def read_run(csv_path) -> list[tuple]:
    """Reload the CSV rows written by :func:`write_run` (tests use this
    for round-trip checks)."""
    rows = []
    with open(csv_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise DataFormatError(f"{csv_path}: unexpected run header {header!r}")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            est = np.array([float(parts[2]), float(parts[3]), float(parts[4])])
            gt = None if parts[5] == "" else np.array([float(parts[5]), float(parts[6])])
            rows.append((int(parts[0]), float(parts[1]), est, gt, float(parts[8])))
    return rows


def replay(filter_obj, events, gt_tolerance: float = 0.1, record: RunRecord | None = None) -> RunRecord:
    """Drive a filter through an event stream.

    A step fires for every control event and consumes all measurement
    batches whose timestamps fall in the interval since the previous
    control (inclusive of the control's own timestamp).  Encoder velocities
    are converted to axle velocities here, at consumption time.  Ground
    truth is aligned to the per-step estimates afterwards and never enters
    the filter.
    """
    if record is None:
        record = RunRecord(algorithm="", seed=0, n_particles=0)
    vehicle = filter_obj.vehicle

    controls: list[ControlEvent] = []
    batches: list[MeasurementBatchEvent] = []
    gts: list[GroundTruthEvent] = []
    for ev in events:
        if isinstance(ev, ControlEvent):
            controls.append(ev)
        elif isinstance(ev, MeasurementBatchEvent):
            batches.append(ev)
        else:
            gts.append(ev)

    est_times = []
    bi = 0
    prev_time: float | None = None
    for step_idx, ctl in enumerate(controls):
        pending = []
        while bi < len(batches) and batches[bi].time <= ctl.time:
            pending.append(batches[bi].measurements)
            bi += 1
        z = np.vstack(pending) if pending else None
        dt = None if prev_time is None else ctl.time - prev_time
        if dt is not None and dt <= 0.0:
            dt = None
        prev_time = ctl.time

        v = axle_velocity(ctl.encoder_velocity, ctl.steering, vehicle)
        result = filter_obj.step(ControlInput(float(v), ctl.steering), z, dt=dt)
        est = result.estimated_pose.as_array()
        record.add_step(step_idx, ctl.time, est, None, result.duration_s)
        est_times.append(ctl.time)

    pairs = align_ground_truth(est_times, [g.time for g in gts], gt_tolerance)
    for i_est, j_gt in pairs:
        step, t, est, _, step_s = record.steps[i_est]
        record.steps[i_est] = (step, t, est, np.array([gts[j_gt].px, gts[j_gt].py]), step_s)
    return record
