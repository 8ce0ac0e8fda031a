"""Command-line front end: simulate, filter, fit, replicate, prop1-check.

Every output file embeds the seed and a hash of the effective
configuration; reruns with identical inputs are byte-identical.
Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, saem, smc
from ._backend import active_name
from .errors import ConfigError, NumericError
from .model import ModelParams, THETA_FIELDS, default_params
from .simulate import read_trajectory, simulate_path, subsample

log = logging.getLogger("mlsaem.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _setup_logging():
    level = os.environ.get("ML_SAEM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def load_model_config(path):
    """Model parameters from a JSON file, merged over the defaults."""
    base = default_params()
    if path is None:
        return base
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ModelParams.from_dict(data, base=base)


def config_hash(payload):
    """Stable short hash of the effective run configuration."""
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _metadata(seed, payload):
    return {"seed": seed, "config_sha256": config_hash(payload)}


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    params = load_model_config(args.config)
    out = _out_dir(args)
    payload = {
        "command": "simulate", "params": params.to_dict(), "v0": args.v0,
        "u0": args.u0, "delta": args.delta, "steps": args.steps,
        "stride": args.stride, "seed": args.seed,
    }
    meta = _metadata(args.seed, payload)
    traj = simulate_path(params, args.v0, args.u0, args.delta, args.steps,
                         seed=args.seed)
    traj.to_csv(out / "trajectory.csv", include_u=True, metadata=meta)
    stride = max(1, min(args.stride, len(traj) - 1))
    obs = subsample(traj, stride) if stride > 1 else traj
    obs.to_csv(out / "observations.csv", include_u=False, metadata=meta)
    print(f"wrote {out / 'trajectory.csv'} ({len(traj)} rows) and "
          f"{out / 'observations.csv'} ({len(obs)} rows)")
    return EXIT_OK


def cmd_filter(args):
    params = load_model_config(args.config)
    obs, _ = read_trajectory(args.data)
    out = _out_dir(args)
    payload = {
        "command": "filter", "params": params.to_dict(), "data": str(args.data),
        "k": args.k, "proposal": args.proposal, "resampler": args.resampler,
        "seed": args.seed,
    }
    meta = _metadata(args.seed, payload)
    result = smc.filter(obs, params, k=args.k, proposal=args.proposal,
                        scheme=args.resampler, seed=args.seed)
    result.to_csv(out / "filter.csv", metadata=meta)
    if args.dump_clouds:
        smc.dump_clouds(result, out / "clouds.bin")
    _write_json(out / "filter_summary.json", {
        "k": args.k, "proposal": args.proposal, "resampler": args.resampler,
        "seed": args.seed, "steps": result.n_steps,
        "log_norm_const": result.log_norm_const,
        "config_sha256": meta["config_sha256"], "backend": active_name(),
    })
    print(f"wrote {out / 'filter.csv'} ({result.n_steps + 1} rows)")
    return EXIT_OK


def _saem_config(args):
    return saem.SaemConfig(
        m_max=args.iterations,
        schedule=saem.StepSchedule(warm_start=args.warm_start, exponent=args.exponent),
        k_max=args.k,
        proposal=args.proposal,
        scheme=args.resampler,
    )


def _resolve_theta0(args, params, seed_seq):
    if args.theta0 is not None:
        return ModelParams.from_json(args.theta0, base=params), "explicit"
    rng = np.random.default_rng(seed_seq)
    return saem.draw_theta0(params, rng), "randomized"


def cmd_fit(args):
    params = load_model_config(args.config)
    obs, _ = read_trajectory(args.data)
    out = _out_dir(args)
    config = _saem_config(args)
    ss = np.random.SeedSequence(args.seed)
    theta0_seed, fit_seed = ss.spawn(2)
    theta0, theta0_mode = _resolve_theta0(args, params, theta0_seed)
    payload = {
        "command": "fit", "params": params.to_dict(), "data": str(args.data),
        "config": saem._config_dict(config), "seed": args.seed,
        "theta0": theta0.to_dict(), "theta0_mode": theta0_mode,
    }
    meta = _metadata(args.seed, payload)
    report = saem.saem_fit(obs, theta0, config, seed=fit_seed)
    report.write_iterations_csv(out / "iterations.csv", metadata=meta)
    body = report.to_json_dict()
    body["seed"] = args.seed
    body["theta0"] = theta0.to_dict()
    body["theta0_mode"] = theta0_mode
    body["config_sha256"] = meta["config_sha256"]
    body["backend"] = active_name()
    _write_json(out / "estimate.json", body)
    theta = report.final_theta()
    print("theta_hat: " + " ".join(f"{k}={theta[k]:.6g}" for k in THETA_FIELDS))
    print(f"wrote {out / 'estimate.json'} and {out / 'iterations.csv'}")
    return EXIT_OK


def cmd_replicate(args):
    if args.replicates < 2:
        raise ConfigError("replicate runs need --replicates >= 2")
    params = load_model_config(args.config)
    out = _out_dir(args)
    config = _saem_config(args)
    sim = saem.SimSettings(v0=args.v0, u0=args.u0, delta=args.delta,
                           steps=args.steps, stride=args.stride)
    payload = {
        "command": "replicate", "params": params.to_dict(),
        "config": saem._config_dict(config), "sim": dataclasses.asdict(sim),
        "replicates": args.replicates, "seed": args.seed,
    }
    meta = _metadata(args.seed, payload)
    result = saem.replicate_study(args.replicates, params, sim=sim, config=config,
                                  seed=args.seed, jobs=args.jobs)

    with open(out / "replicates.csv", "w") as fh:
        pairs = " ".join(f"{k}={v}" for k, v in meta.items())
        fh.write(f"# {pairs}\n")
        fh.write("replicate,estimator,ok," + ",".join(THETA_FIELDS) + "\n")
        for row in result.rows:
            if row["ok"]:
                for estimator in ("complete", "saem"):
                    vals = ",".join(f"{x:.17g}" for x in row[estimator])
                    fh.write(f"{row['replicate']},{estimator},1,{vals}\n")
            else:
                empty = "," * (len(THETA_FIELDS) - 1)
                fh.write(f"{row['replicate']},saem,0,{empty}\n")

    with open(out / "aggregate.csv", "w") as fh:
        pairs = " ".join(f"{k}={v}" for k, v in meta.items())
        fh.write(f"# {pairs}\n")
        fh.write("estimator,statistic," + ",".join(THETA_FIELDS) + "\n")
        true_row = ",".join(f"{x:.17g}" for x in result.true_theta)
        fh.write(f"true,value,{true_row}\n")
        for estimator in ("complete", "saem"):
            mean_row = ",".join(f"{x:.17g}" for x in result.mean[estimator])
            rmse_row = ",".join(f"{x:.17g}" for x in result.rmse[estimator])
            fh.write(f"{estimator},mean,{mean_row}\n")
            fh.write(f"{estimator},rmse,{rmse_row}\n")

    _write_json(out / "replicate_summary.json", {
        "replicates": args.replicates, "failures": result.failures,
        "seed": args.seed, "config_sha256": meta["config_sha256"],
        "mean": {k: v.tolist() for k, v in result.mean.items()},
        "rmse": {k: v.tolist() for k, v in result.rmse.items()},
        "theta_names": list(THETA_FIELDS), "backend": active_name(),
    })
    print(f"wrote {out / 'replicates.csv'} and {out / 'aggregate.csv'} "
          f"({result.failures} failures)")
    return EXIT_OK


def cmd_prop1_check(args):
    params = load_model_config(args.config)
    obs, _ = read_trajectory(args.data)
    out = _out_dir(args)
    k_values = [int(x) for x in args.k_values.split(",")]
    payload = {
        "command": "prop1-check", "params": params.to_dict(), "data": str(args.data),
        "k_values": k_values, "repetitions": args.repetitions, "seed": args.seed,
    }
    meta = _metadata(args.seed, payload)
    rows, slope = smc.variance_decay(obs, params, k_values=k_values,
                                     reps=args.repetitions, seed=args.seed,
                                     proposal=args.proposal, scheme=args.resampler)
    with open(out / "prop1.csv", "w") as fh:
        pairs = " ".join(f"{k}={v}" for k, v in meta.items())
        fh.write(f"# {pairs}\n")
        fh.write("k,sd\n")
        for k, sd in rows:
            fh.write(f"{k},{sd:.17g}\n")
    _write_json(out / "prop1_summary.json", {
        "k_values": k_values, "repetitions": args.repetitions,
        "sd": {str(k): sd for k, sd in rows}, "slope": slope,
        "seed": args.seed, "config_sha256": meta["config_sha256"],
    })
    print(f"variance-decay slope (log sd vs log K): {slope:.3f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mlsaem",
        description="Stochastic Morris-Lecar simulation, gating-path filtering "
                    "and SAEM parameter estimation from voltage recordings.",
    )
    parser.add_argument("--version", action="version", version=f"mlsaem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="JSON model-parameter file (merged over defaults)")
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")

    filt = argparse.ArgumentParser(add_help=False)
    filt.add_argument("--k", type=int, default=100, help="particle count (or cap)")
    filt.add_argument("--proposal", choices=list(smc.PROPOSALS), default="transition")
    filt.add_argument("--resampler", choices=list(smc.RESAMPLING_SCHEMES),
                      default="multinomial")

    simp = argparse.ArgumentParser(add_help=False)
    simp.add_argument("--v0", type=float, default=-26.0)
    simp.add_argument("--u0", type=float, default=0.2)
    simp.add_argument("--delta", type=float, default=0.01,
                      help="fine simulation step (ms)")
    simp.add_argument("--steps", type=int, default=20000)
    simp.add_argument("--stride", type=int, default=10,
                      help="subsampling stride to the observation grid")

    fitp = argparse.ArgumentParser(add_help=False)
    fitp.add_argument("--iterations", type=int, default=200)
    fitp.add_argument("--warm-start", type=int, default=100, dest="warm_start")
    fitp.add_argument("--exponent", type=float, default=0.8)
    fitp.add_argument("--theta0", type=Path, default=None,
                      help="JSON file with explicit starting values")

    p = sub.add_parser("simulate", parents=[common, simp],
                       help="simulate a trajectory and its voltage observations")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", parents=[common, filt],
                       help="filter the hidden gating path from observations")
    p.add_argument("--data", type=Path, required=True, help="observation CSV (t,v)")
    p.add_argument("--dump-clouds", action="store_true")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("fit", parents=[common, filt, fitp],
                       help="estimate parameters by SAEM-SMC")
    p.add_argument("--data", type=Path, required=True, help="observation CSV (t,v)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("replicate", parents=[common, filt, fitp, simp],
                       help="simulate-and-fit replicate study with aggregates")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("prop1-check", parents=[common, filt],
                       help="variance-decay experiment across particle counts")
    p.add_argument("--data", type=Path, required=True, help="observation CSV (t,v)")
    p.add_argument("--k-values", default="25,100,400", dest="k_values")
    p.add_argument("--repetitions", type=int, default=50)
    p.set_defaults(func=cmd_prop1_check)

    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
