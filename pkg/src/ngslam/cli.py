"""Command-line harness: run filters over datasets or synthetic worlds,
compare algorithms, emit synthetic event files, and self-check the oracles.

Exit codes: 0 success, 1 partial comparison/selftest failure, 2 config
error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import data_eval
from .data_eval import DataFormatError, RunRecord, WorldConfig, default_world, load_events, replay, simulate, write_events, write_run
from .ekf_slam import EKFSlamFilter
from .gaussian import Gaussian, NotPositiveDefiniteError
from .models import LinearModel, VehicleParams, jacobian_landmark, jacobian_pose, predict_measurement, wrap_angle
from .proposal import AssociatedBatch, ProposalStrategy, SolverDivergenceError, nano_solve
from .rbpf import FilterConfig, RBPFilter, systematic_resample

ALGORITHMS = ("ekf", "fastslam-prior", "ufastslam", "nano")

_VARIANT_BY_ALGO = {
    "fastslam-prior": "prior",
    "ufastslam": "unscented",
    "nano": "natural_gradient",
}

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


class ConfigError(ValueError):
    pass


def parse_angle(value) -> float:
    """Angles accept explicit ``deg``/``rad`` suffixes; bare numbers are radians."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    try:
        if text.endswith("deg"):
            return float(np.radians(float(text[:-3])))
        if text.endswith("rad"):
            return float(text[:-3])
        return float(text)
    except ValueError as err:
        raise ConfigError(f"cannot parse angle {value!r}") from err


_DEFAULTS = {
    "algo": "nano",
    "dataset": None,
    "synthetic": None,
    "particles": 10,
    "sigma_v": 2.0,
    "sigma_g": "6deg",
    "sigma_r": 1.0,
    "sigma_b": "3deg",
    "gate_match": 5.991,
    "gate_new": 9.210,
    "resample_threshold": 0.5,
    "estimate_rule": "max_weight",
    "weight_form": "product",
    "max_iters": 10,
    "kl_threshold": 1e-6,
    "expectation_mode": "sigma_point",
    "seed": 0,
    "out": None,
    "workers": 1,
    "no_timing": False,
    "wheelbase": 2.83,
    "track": 0.76,
    "offset_a": 0.0,
    "offset_b": 0.0,
    "dt": 0.1,
    "gt_tolerance": 0.1,
}


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; CLI flags override its values")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--dataset", help="event file path")
    p.add_argument("--synthetic", help="'default' or a WorldConfig JSON path")
    p.add_argument("--particles", type=int)
    p.add_argument("--sigma-v", dest="sigma_v", type=float, help="velocity noise std (m/s)")
    p.add_argument("--sigma-g", dest="sigma_g", help="steering noise std (e.g. 6deg)")
    p.add_argument("--sigma-r", dest="sigma_r", type=float, help="range noise std (m)")
    p.add_argument("--sigma-b", dest="sigma_b", help="bearing noise std (e.g. 3deg)")
    p.add_argument("--gate-match", dest="gate_match", type=float)
    p.add_argument("--gate-new", dest="gate_new", type=float)
    p.add_argument("--resample-threshold", dest="resample_threshold", type=float)
    p.add_argument("--estimate-rule", dest="estimate_rule", choices=("max_weight", "weighted_mean"))
    p.add_argument("--weight-form", dest="weight_form", choices=("product", "paper_sum"))
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--kl-threshold", dest="kl_threshold", type=float)
    p.add_argument("--expectation-mode", dest="expectation_mode", choices=("sigma_point", "mean_only"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV path (JSON summary written alongside)")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-timing", dest="no_timing", action="store_const", const=True,
                   help="zero wall-clock fields for byte-reproducible outputs")
    p.add_argument("--wheelbase", type=float)
    p.add_argument("--track", type=float)
    p.add_argument("--offset-a", dest="offset_a", type=float)
    p.add_argument("--offset-b", dest="offset_b", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--gt-tolerance", dest="gt_tolerance", type=float)


def _effective_config(args: argparse.Namespace) -> dict:
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config file {args.config}: {err}") from err
        unknown = set(file_cfg) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cli_cfg = {
        k: v for k, v in vars(args).items() if k in _DEFAULTS and v is not None
    }
    cfg = {**_DEFAULTS, **file_cfg, **cli_cfg}
    cfg["sigma_g"] = parse_angle(cfg["sigma_g"])
    cfg["sigma_b"] = parse_angle(cfg["sigma_b"])
    if (cfg["dataset"] is None) == (cfg["synthetic"] is None):
        raise ConfigError("exactly one of --dataset or --synthetic is required")
    return cfg


def _world_from_spec(spec: str, seed: int) -> WorldConfig:
    if spec == "default":
        return default_world(seed=seed)
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read world file {spec}: {err}") from err
    world = default_world(seed=seed)
    simple = {
        "n_landmarks": int, "sigma_v": float, "sigma_r": float, "max_range": float,
        "seed": int, "meas_every": int, "gps_every": int,
    }
    for key, value in raw.items():
        if key in simple:
            setattr(world, key, simple[key](value))
        elif key in ("sigma_g", "sigma_b", "fov"):
            setattr(world, key, parse_angle(value))
        elif key == "bounds":
            world.bounds = tuple(float(v) for v in value)
        elif key == "landmarks":
            world.landmarks = np.asarray(value, dtype=float)
        elif key == "initial_pose":
            world.initial_pose = tuple(float(v) for v in value)
        elif key == "controls":
            world.controls = np.asarray(value, dtype=float)
        elif key == "loop":
            world.controls = data_eval.loop_controls(
                n_steps=int(value.get("n_steps", 500)),
                speed=float(value.get("speed", 3.0)),
                steering=parse_angle(value.get("steering", 0.1)),
            )
        elif key in ("dt", "wheelbase", "track"):
            pass  # vehicle geometry comes from the run config
        else:
            raise ConfigError(f"unknown world key {key!r}")
    return world


def build_filter(cfg: dict):
    vehicle = VehicleParams(
        wheelbase=cfg["wheelbase"],
        track=cfg["track"],
        sensor_offset_a=cfg["offset_a"],
        sensor_offset_b=cfg["offset_b"],
        dt=cfg["dt"],
    )
    fcfg = FilterConfig(
        n_particles=cfg["particles"],
        proposal=ProposalStrategy(
            variant=_VARIANT_BY_ALGO.get(cfg["algo"], "natural_gradient"),
            max_iters=cfg["max_iters"],
            kl_threshold=cfg["kl_threshold"],
            expectation_mode=cfg["expectation_mode"],
        ),
        sigma_v=cfg["sigma_v"],
        sigma_g=cfg["sigma_g"],
        sigma_r=cfg["sigma_r"],
        sigma_b=cfg["sigma_b"],
        gate_match=cfg["gate_match"],
        gate_new=cfg["gate_new"],
        resample_threshold=cfg["resample_threshold"],
        estimate_rule=cfg["estimate_rule"],
        weight_form=cfg["weight_form"],
    )
    initial = cfg.get("initial_pose", (0.0, 0.0, 0.0))
    if cfg["algo"] == "ekf":
        return EKFSlamFilter(fcfg, vehicle, initial_pose=initial)
    return RBPFilter(fcfg, vehicle, seed=cfg["seed"], initial_pose=initial,
                     workers=cfg["workers"])


def _events_for(cfg: dict):
    if cfg["dataset"] is not None:
        try:
            return load_events(cfg["dataset"]), cfg["dataset"]
        except OSError as err:
            raise DataFormatError(f"cannot read dataset {cfg['dataset']}: {err}") from err
    world = _world_from_spec(cfg["synthetic"], cfg["seed"])
    world.vehicle = VehicleParams(
        wheelbase=cfg["wheelbase"], track=cfg["track"],
        sensor_offset_a=cfg["offset_a"], sensor_offset_b=cfg["offset_b"], dt=cfg["dt"],
    )
    if not np.allclose(world.initial_pose, (0.0, 0.0, 0.0)):
        cfg["initial_pose"] = tuple(world.initial_pose)
    events, _ = simulate(world)
    return events, f"synthetic:{cfg['synthetic']}"


def run_once(cfg: dict) -> tuple[RunRecord, dict | None]:
    events, source = _events_for(cfg)
    filt = build_filter(cfg)
    record = RunRecord(
        algorithm=cfg["algo"],
        seed=cfg["seed"],
        n_particles=cfg["particles"] if cfg["algo"] != "ekf" else 1,
        config={**{k: v for k, v in cfg.items() if k != "out"}, "source": source},
    )
    replay(filt, events, gt_tolerance=cfg["gt_tolerance"], record=record)
    summary = None
    if cfg["out"]:
        summary = write_run(record, cfg["out"], zero_timing=cfg["no_timing"])
    return record, summary


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    if cfg["out"] is None:
        cfg["out"] = f"{cfg['algo']}-run.csv"
    record, summary = run_once(cfg)
    times = record.step_times_ms()
    mean_ms = float(np.mean(times)) if times.size else 0.0
    print(
        f"{cfg['algo']}: steps={len(record.steps)} rmse_m={record.rmse():.4f} "
        f"mean_step_ms={mean_ms:.3f} seed={cfg['seed']} out={cfg['out']}"
    )
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if len(algos) < 2:
        raise ConfigError("compare needs at least two algorithms")
    for a in algos:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    base = _effective_config(args)

    rows = []
    failed = False
    for algo in algos:
        rmses, mean_times = [], []
        error = None
        for rep in range(args.repeats):
            cfg = dict(base)
            cfg["algo"] = algo
            cfg["seed"] = base["seed"] + rep
            cfg["out"] = (
                f"{args.out_prefix}{algo}-rep{rep}.csv" if args.out_prefix else None
            )
            try:
                record, _ = run_once(cfg)
                rmses.append(record.rmse())
                mean_times.append(float(np.mean(record.step_times_ms())))
            except (DataFormatError, ConfigError, NotPositiveDefiniteError,
                    SolverDivergenceError, ValueError, OSError) as err:
                error = f"{type(err).__name__}: {err}"
                break
        rows.append((algo, rmses, mean_times, error))
        failed = failed or error is not None

    print(f"{'Method':<16} {'RMSE [m]':>16} {'Time [ms]':>12}")
    for algo, rmses, mean_times, error in rows:
        if error is not None:
            print(f"{algo:<16} FAILED: {error}")
            continue
        mean_rmse = float(np.mean(rmses))
        std_rmse = float(np.std(rmses)) if len(rmses) > 1 else 0.0
        print(f"{algo:<16} {mean_rmse:>9.3f}+/-{std_rmse:<5.3f} {np.mean(mean_times):>11.3f}")
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    world = _world_from_spec(args.world, args.seed)
    world.seed = args.seed
    events, _ = simulate(world)
    counts = write_events(events, args.out)
    print(
        f"wrote {args.out}: {counts['controls']} controls, "
        f"{counts['measurement_batches']} measurement batches, {counts['gps']} gps"
    )
    return EXIT_OK


def _check_kalman_equivalence() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    h = np.array([[1.0, 0.4, -0.2], [0.3, -1.1, 0.5]])
    model = LinearModel(h, np.eye(2))
    prior = Gaussian(np.array([0.4, -0.2, 0.1]), np.diag([0.3, 0.2, 0.05]))
    lm = np.array([1.0, 2.0])
    z = model.predict(prior.mean, lm) + rng.normal(size=2)
    r = np.diag([0.5, 0.1])
    batch = AssociatedBatch(z[None, :], lm[None, :], np.zeros((1, 2, 2)))
    got = nano_solve(prior, batch, r, ProposalStrategy(max_iters=2, kl_threshold=1e-15), model=model)
    cov = np.linalg.inv(np.linalg.inv(prior.cov) + h.T @ np.linalg.inv(r) @ h)
    mean = prior.mean + cov @ h.T @ np.linalg.inv(r) @ (z - h @ prior.mean - lm)
    ok = (
        np.max(np.abs(got.cov - cov)) < 1e-10
        and np.max(np.abs(got.mean - mean)) < 1e-10
    )
    return ok, "affine-model natural-gradient update equals information-form Kalman"


def _check_jacobians(perturb: float = 0.0) -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    h = 1e-6
    worst = 0.0
    for _ in range(200):
        pose = rng.normal(scale=5.0, size=3)
        lm = pose[:2] + rng.normal(scale=8.0, size=2)
        if np.hypot(*(lm - pose[:2])) < 0.5:
            continue
        analytic = jacobian_pose(pose, lm) + perturb
        fd = np.empty((2, 3))
        for j in range(3):
            dp = np.zeros(3)
            dp[j] = h
            hi = predict_measurement(pose + dp, lm)
            lo = predict_measurement(pose - dp, lm)
            diff = hi - lo
            diff[1] = wrap_angle(diff[1])
            fd[:, j] = diff / (2.0 * h)
        scale = np.maximum(np.abs(fd), 1.0)
        worst = max(worst, float(np.max(np.abs(analytic - fd) / scale)))
        analytic_lm = jacobian_landmark(pose, lm) + perturb
        worst = max(worst, float(np.max(np.abs(analytic_lm + analytic[:, :2]))))
    return worst < 1e-5, f"measurement Jacobians match finite differences (worst {worst:.2e})"


def _check_resampler() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 12))
        w = rng.random(n) + 1e-9
        w /= w.sum()
        u = float(rng.random())
        idx = systematic_resample(w, u)
        counts = np.bincount(idx, minlength=n)
        if np.any(np.abs(counts - n * w) > 1.0 + 1e-9):
            return False, "systematic resampler offspring counts deviate by more than one"
    for u in np.linspace(0.0, 0.999, 25):
        idx = systematic_resample(np.array([0.5, 0.25, 0.25]), u, n_out=4)
        if list(np.bincount(idx, minlength=3)) != [2, 1, 1]:
            return False, "systematic resampler enumeration mismatch"
    return True, "systematic resampler offspring counts within one of expectation"


def cmd_selftest(args: argparse.Namespace) -> int:
    perturb = args.perturb_jacobians
    checks = [
        ("kalman_equivalence", lambda: _check_kalman_equivalence()),
        ("jacobian_finite_difference", lambda: _check_jacobians(perturb)),
        ("resampler_offspring_counts", lambda: _check_resampler()),
    ]
    failures = 0
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as err:  # a broken oracle is itself a failure
            ok, detail = False, f"raised {type(err).__name__}: {err}"
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}: {detail}")
        failures += 0 if ok else 1
    return EXIT_OK if failures == 0 else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ngslam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one filter over a dataset or synthetic world")
    _add_run_options(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several algorithms and print a comparison table")
    _add_run_options(p_cmp)
    p_cmp.add_argument("--algos", default="ekf,ufastslam,nano",
                       help="comma-separated algorithm list")
    p_cmp.add_argument("--repeats", type=int, default=1)
    p_cmp.add_argument("--out-prefix", dest="out_prefix", default="",
                       help="if set, per-run CSVs are written with this prefix")
    p_cmp.set_defaults(func=cmd_compare)

    p_sim = sub.add_parser("simulate", help="write a synthetic event file")
    p_sim.add_argument("--world", default="default", help="'default' or a WorldConfig JSON path")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_self = sub.add_parser("selftest", help="run the built-in oracle checks")
    p_self.add_argument("--perturb-jacobians", dest="perturb_jacobians", type=float, default=0.0,
                        help=argparse.SUPPRESS)  # negative-control hook
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NotPositiveDefiniteError, SolverDivergenceError) as err:
        print(f"numerical divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValueError as err:
        # out-of-model values in otherwise well-formed inputs
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
