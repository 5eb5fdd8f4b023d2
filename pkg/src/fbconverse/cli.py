"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 domain error, 3 a statistical check
failed.  Machine output goes to ``--output`` (or stdout when absent).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from fbconverse import awgn_bounds, feedback_sim, hypothesis, parallel
from fbconverse.errors import DomainError

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_STAT = 0, 1, 2, 3
SEED_ENV = "FBX_SEED"

BOUND_KINDS = {
    "finite": awgn_bounds.finite_n_converse,
    "kappa": awgn_bounds.theorem1_kappa_form,
    "normal": awgn_bounds.normal_approximation,
}
ENCODERS = ("constant", "spherical", "adaptive", "power-violating")
CHECKS = ("identity", "mgf", "berry-esseen", "metaconverse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text):
    return [int(v) for v in _float_list(text)]


def _n_grid(text):
    """``start:stop:points`` to log-spaced integer blocklengths."""
    try:
        start, stop, points = text.split(":")
        start, stop, points = float(start), float(stop), int(points)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:points, got {text!r}")
    if points < 1 or start < 1 or stop < start:
        raise argparse.ArgumentTypeError(f"empty grid {text!r}")
    return [int(round(v)) for v in np.geomspace(start, stop, points)]


def _resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}")


def _emit(text, output):
    if output:
        with open(output, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fbconverse", description="Converse bounds and simulations for AWGN channels with feedback.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bound", help="evaluate one bound")
    b.add_argument("--channel", choices=("awgn", "parallel"), default="awgn")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--eps", type=float, required=True)
    b.add_argument("--snr", type=float, help="power P of the unit-noise AWGN channel")
    b.add_argument("--sigmas", type=_float_list, help="noise variances of the parallel channels")
    b.add_argument("--power", type=float, help="total power of the parallel channels")
    b.add_argument("--kind", choices=tuple(BOUND_KINDS), default="finite")
    b.add_argument("--min-blocklength", type=int, default=None)
    b.add_argument("--output")

    s = sub.add_parser("sweep", help="all scalar curves over a grid of blocklengths, as CSV")
    s.add_argument("--n-grid", type=_n_grid, required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--snr", type=float, required=True)
    s.add_argument("--output")

    w = sub.add_parser("waterfill", help="water-filling allocation")
    w.add_argument("--sigmas", type=_float_list, required=True)
    w.add_argument("--power", type=float, required=True)
    w.add_argument("--output")

    for name in ("simulate", "verify"):
        q = sub.add_parser(name, help="run a simulation" if name == "simulate" else "run statistical checks")
        q.add_argument("--encoder", choices=ENCODERS, default="constant")
        q.add_argument("--n", type=int, default=64)
        q.add_argument("--snr", type=float, default=1.0)
        q.add_argument("--trials", type=int, default=100_000)
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--messages", type=int, default=4)
        q.add_argument("--gain", type=float, default=0.5)
        q.add_argument("--codebook-seed", type=int, default=0)
        q.add_argument("--workers", type=int, default=1)
        q.add_argument("--output")
        if name == "verify":
            q.add_argument("--check", choices=CHECKS, action="append")
            q.add_argument("--alpha", type=float, default=0.01)
            q.add_argument("--t-grid", type=_float_list, default=[-0.1, -0.02, 0.05])
            q.add_argument("--z-max", type=float, default=3.0)
            q.add_argument("--n-list", type=_int_list, default=[16, 64, 256])
    return p


def _encoder(args):
    params = {"gain": args.gain, "codebook_seed": args.codebook_seed}
    return feedback_sim.EncoderSpec(args.encoder, args.messages, params)


def cmd_bound(args):
    if args.channel == "awgn":
        if args.snr is None:
            raise UsageError("--snr is required for --channel awgn")
        fn = BOUND_KINDS[args.kind]
        if args.kind == "kappa":
            report = fn(args.snr, args.n, args.eps, args.min_blocklength)
        else:
            report = fn(args.snr, args.n, args.eps)
    else:
        if args.sigmas is None or args.power is None:
            raise UsageError("--sigmas and --power are required for --channel parallel")
        report = parallel.theorem2_bound(parallel.ParallelSpec(tuple(args.sigmas), args.power), args.n, args.eps)
    _emit(_dump(report.to_dict()), args.output)
    if args.output:
        print(f"{report.kind}: log2 M <= {report.log_m_bound:.6f} bits")
    return EXIT_OK


def cmd_sweep(args):
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["n", "normal", "kappa", "finite"])
    for n in args.n_grid:
        row = [n]
        for kind in ("normal", "kappa", "finite"):
            try:
                row.append(repr(BOUND_KINDS[kind](args.snr, n, args.eps).log_m_bound))
            except DomainError:
                row.append("")
        out.writerow(row)
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_waterfill(args):
    spec = parallel.ParallelSpec(tuple(args.sigmas), args.power)
    alloc = parallel.waterfill(spec)
    _emit(_dump({
        "water_level": alloc.water_level,
        "powers": list(alloc.powers),
        "C_L": parallel.capacity_parallel(spec),
        "V_L": parallel.dispersion_parallel(spec),
    }), args.output)
    return EXIT_OK


def cmd_simulate(args):
    seed = _resolve_seed(args.seed)
    batch = feedback_sim.run_batch(_encoder(args), args.n, args.snr, args.trials, seed, args.workers)
    _emit(batch.to_csv(), args.output)
    return EXIT_OK


def cmd_verify(args):
    seed = _resolve_seed(args.seed)
    checks = args.check or ["identity"]
    results = {}
    passed = True
    batch = None
    if {"identity", "mgf"} & set(checks):
        batch = feedback_sim.run_batch(_encoder(args), args.n, args.snr, args.trials, seed, args.workers)
    for check in checks:
        if check == "identity":
            rep = feedback_sim.verify_distribution_identity(batch, args.alpha)
            results[check] = rep.to_dict()
            ok = rep.passed
        elif check == "mgf":
            rows = feedback_sim.verify_mgf(batch, args.t_grid)
            ok = all(abs(r.z_score) <= args.z_max for r in rows)
            results[check] = {"rows": [r.to_dict() for r in rows], "z_max": args.z_max, "pass": ok}
        elif check == "berry-esseen":
            rows = feedback_sim.berry_esseen_check(args.snr, args.n_list, args.trials, seed, args.workers, args.alpha)
            ok = all(r.passed for r in rows)
            results[check] = {"rows": [r.to_dict() for r in rows], "pass": ok}
        else:
            if args.encoder == "spherical":
                code = hypothesis.spherical_code(args.messages, args.n, args.snr, args.codebook_seed)
            elif args.messages == 1:
                code = hypothesis.single_message_code(args.n, args.snr)
            elif args.messages == 2:
                code = hypothesis.antipodal_code(args.n, args.snr)
            else:
                raise UsageError("metaconverse needs --encoder spherical or --messages 1 or 2")
            rep = hypothesis.metaconverse_check(code, args.trials, seed, args.workers)
            results[check] = rep.to_dict()
            ok = rep.passed
        passed = passed and ok
        print(f"{check}: {'pass' if ok else 'FAIL'}")
    report = {"encoder": args.encoder, "n": args.n, "seed": seed, "checks": results, "pass": passed}
    if args.output:
        _emit(_dump(report), args.output)
    return EXIT_OK if passed else EXIT_STAT


COMMANDS = {
    "bound": cmd_bound,
    "sweep": cmd_sweep,
    "waterfill": cmd_waterfill,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fbconverse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"fbconverse: domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
