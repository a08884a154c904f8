"""Command line front end.

Subcommands cover the classic schemes (sk-bler, modsk-bler), trained
codec evaluation (attention-eval), codec training (train), fixed-point
robustness scans (precision-sweep), and a channel-state estimation demo
(csi-map-demo).  Every subcommand accepts --config pointing at a JSON
file; command line flags override the file.  Exit codes: 0 success,
2 configuration problems, 3 numerical failures or failed sweep points.

Experiment config files share one shape::

    {
      "scheme": "sk",
      "K": 6, "N": 18,
      "eta_db": 0.0, "eta_prime_db": null,
      "trials": 10000, "seed": 0,
      "stop_at_errors": null,
      "scheme_config": {},
      "sweep": {"eta_db": [0.0, 1.0, 2.0], "K": [4, 6]}
    }

with "N" replaceable by a rate "R", optional "sweep" axes drawn from
K / eta_db / eta_prime_db, and "scheme_config" carrying scheme-specific
keys (modulo-sk: safety_factor; attention: checkpoint; repetition:
reps).  The train subcommand instead expects {"codec": {...CodecConfig
fields...}, "train": {...TrainConfig fields...}}, and precision-sweep
expects {"K": [...], "bits": [...], "eta_db": ..., "trials": ...}.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from .channel import ChannelParams, awgn_params, sample_fading, transmit
from .channel import map_estimate_csi
from .codec import CodecConfig
from .errors import ConfigError, NumericalFailure
from .harness import load_config_file, run_resolved
from .precision import precision_sweep
from .serialization import load_checkpoint, save_checkpoint, save_history
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--trials", type=int, help="override the trial count")
    parser.add_argument("--out", help="directory for result files")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for Monte Carlo chunks")


def _merged_config(defaults: dict, args: argparse.Namespace) -> dict:
    resolved = dict(defaults)
    if args.config:
        resolved.update(load_config_file(args.config))
    return resolved


def _run_bler(defaults: dict, scheme: str, args: argparse.Namespace) -> int:
    resolved = _merged_config(defaults, args)
    if resolved.get("scheme") != scheme:
        raise ConfigError(
            f"this subcommand runs scheme {scheme!r}, config says "
            f"{resolved.get('scheme')!r}"
        )
    result = run_resolved(resolved, args.out, threads=args.threads,
                          overrides={"seed": args.seed, "trials": args.trials})
    sys.stdout.write(result.csv_text)
    for failure in result.failures:
        print(f"point failed: {failure}", file=sys.stderr)
    return EXIT_NUMERIC if result.failures else EXIT_OK


def _cmd_sk_bler(args: argparse.Namespace) -> int:
    defaults = {"scheme": "sk", "K": 6, "N": 18, "eta_db": 0.0,
                "eta_prime_db": None, "trials": 10000, "seed": 0}
    return _run_bler(defaults, "sk", args)


def _cmd_modsk_bler(args: argparse.Namespace) -> int:
    defaults = {"scheme": "modulo-sk", "K": 6, "N": 18, "eta_db": 0.0,
                "eta_prime_db": 20.0, "trials": 10000, "seed": 0}
    return _run_bler(defaults, "modulo-sk", args)


def _cmd_attention_eval(args: argparse.Namespace) -> int:
    defaults: dict = {"scheme": "attention", "R": 1.0 / 3.0,
                      "trials": 1000, "seed": 0}
    resolved = _merged_config(defaults, args)
    scheme_config = dict(resolved.get("scheme_config", {}))
    if args.checkpoint:
        scheme_config["checkpoint"] = args.checkpoint
    path = scheme_config.get("checkpoint")
    if not path:
        raise ConfigError("attention-eval needs --checkpoint or a "
                          "scheme_config.checkpoint entry")
    checkpoint = load_checkpoint(path)
    resolved.setdefault("K", checkpoint.config.n_bits)
    resolved.setdefault("eta_db", checkpoint.config.snr_db)
    resolved.setdefault("eta_prime_db", checkpoint.config.snr_fb_db)
    resolved["scheme_config"] = scheme_config
    return _run_bler(resolved, "attention", args)


def _cmd_train(args: argparse.Namespace) -> int:
    if not args.config:
        raise ConfigError("train needs --config with codec and train blocks")
    raw = load_config_file(args.config)
    if "codec" not in raw or "train" not in raw:
        raise ConfigError('train config needs "codec" and "train" objects')
    try:
        codec_config = CodecConfig(**raw["codec"])
    except TypeError as exc:
        raise ConfigError(f"bad codec block: {exc}") from None
    train_kwargs = dict(raw["train"])
    schedule = train_kwargs.get("snr_schedule")
    if not isinstance(schedule, (list, tuple)) or not schedule:
        raise ConfigError("train.snr_schedule must be a nonempty list of "
                          "[snr_db, updates] pairs")
    train_kwargs["snr_schedule"] = tuple(
        (float(snr), int(updates)) for snr, updates in schedule
    )
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    try:
        train_config = TrainConfig(**train_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad train block: {exc}") from None

    result = train(codec_config, train_config)
    out_dir = args.out or "train-out"
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), codec_config,
                    result.model, result.calibration)
    save_history(os.path.join(out_dir, "history.csv"), result.history)
    for label, model, calibration in result.stage_checkpoints:
        save_checkpoint(os.path.join(out_dir, f"checkpoint-{label}.bin"),
                        codec_config, model, calibration)
    final_loss = result.history[-1][3] if result.history else math.nan
    print(f"updates={len(result.history)} final_loss={final_loss!r} "
          f"halted={result.halted} out={out_dir}")
    return EXIT_NUMERIC if result.halted else EXIT_OK


def _cmd_precision_sweep(args: argparse.Namespace) -> int:
    defaults = {"K": [6], "bits": [8, 12, 16], "eta_db": 0.0,
                "eta_prime_db": None, "trials": 500, "seed": 0,
                "int_bits": 4, "n_rounds_factor": 3}
    resolved = _merged_config(defaults, args)
    if args.trials is not None:
        resolved["trials"] = args.trials
    if args.seed is not None:
        resolved["seed"] = args.seed
    params = awgn_params(float(resolved["eta_db"]),
                         resolved.get("eta_prime_db"))
    points = precision_sweep(
        resolved["K"], resolved["bits"], params,
        trials=int(resolved["trials"]), seed=int(resolved["seed"]),
        n_rounds_factor=int(resolved["n_rounds_factor"]),
        int_bits=int(resolved["int_bits"]),
        feedback_noisy=resolved.get("eta_prime_db") is not None,
    )
    lines = ["k_bits,total_bits,frac_bits,trials,block_errors,bler"]
    lines += [
        f"{p.k_bits},{p.total_bits},{p.frac_bits},{p.trials},"
        f"{p.block_errors},{p.bler!r}"
        for p in points
    ]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "precision.csv"), "w",
                  encoding="ascii", newline="") as fh:
            fh.write(text)
    return EXIT_OK


def _cmd_csi_map_demo(args: argparse.Namespace) -> int:
    defaults = {"eta_db": 10.0, "pilot_lengths": [2, 4, 8, 16],
                "trials": 25, "seed": 0, "rho_f": 0.5, "rho_b": 0.5}
    resolved = _merged_config(defaults, args)
    if args.trials is not None:
        resolved["trials"] = args.trials
    if args.seed is not None:
        resolved["seed"] = args.seed
    base = awgn_params(float(resolved["eta_db"]), float(resolved["eta_db"]))
    params = dataclasses.replace(base, rho_f=float(resolved["rho_f"]),
                                 rho_b=float(resolved["rho_b"]))
    rng = np.random.default_rng(int(resolved["seed"]))
    trials = int(resolved["trials"])
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    print("pilot_len,rmse_product,mean_objective,converged_fraction")
    rows = []
    for length in resolved["pilot_lengths"]:
        length = int(length)
        sq_err = 0.0
        objective = 0.0
        converged = 0
        for _ in range(trials):
            csi = sample_fading(params, rng)
            x = math.sqrt(params.power_a) * np.ones(length, dtype=complex)
            y = transmit(x, csi.h, params.sigma2_f, rng)
            y_prime = transmit(y, csi.h_prime, params.sigma2_b, rng)
            est = map_estimate_csi(y_prime, x, params)
            sq_err += abs(est.product - csi.h * csi.h_prime) ** 2
            objective += est.objective
            converged += est.converged
        rmse = math.sqrt(sq_err / trials)
        row = (length, rmse, objective / trials, converged / trials)
        rows.append(row)
        print(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        payload = [dict(zip(("pilot_len", "rmse_product", "mean_objective",
                             "converged_fraction"), row)) for row in rows]
        with open(os.path.join(args.out, "csi-map-demo.json"), "w",
                  encoding="ascii") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


_COMMANDS = {
    "sk-bler": _cmd_sk_bler,
    "modsk-bler": _cmd_modsk_bler,
    "attention-eval": _cmd_attention_eval,
    "train": _cmd_train,
    "precision-sweep": _cmd_precision_sweep,
    "csi-map-demo": _cmd_csi_map_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbcomm",
        description="Feedback-coded communication workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("sk-bler", "Monte Carlo block error rate of the linear scheme"),
        ("modsk-bler", "block error rate of the modulo-arithmetic variant"),
        ("attention-eval", "evaluate a trained codec checkpoint"),
        ("train", "train the attention codec"),
        ("precision-sweep", "fixed-point register-width robustness scan"),
        ("csi-map-demo", "posterior channel-state estimation demo"),
    ):
        command = sub.add_parser(name, help=help_text)
        _add_common(command)
        if name == "attention-eval":
            command.add_argument("--checkpoint", help="codec checkpoint file")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
