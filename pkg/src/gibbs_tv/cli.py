"""Command-line entry point: ``gibbs-tv <command> [options]``.

Options may come from a JSON config file (``--config``); flags given on the
command line take precedence.  The default seed can be set through the
``GIBBS_TV_SEED`` environment variable.  Exit status is 0 when every
verdict passes, 1 on a failed verdict and 2 on errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .bounds import BoundError
from .imageio import PgmError, read_observation, read_pgm, write_observation, write_pgm
from .oracle import write_tv_series_csv

log = logging.getLogger("gibbs_tv")

COMMON = {
    "seed": int,
    "epsilon": float,
    "replicas": int,
    "workers": int,
    "chunk_size": int,
    "gamma": float,
    "sigma": float,
    "width": int,
    "height": int,
    "scheme": str,
    "y_value": float,
    "model": str,
    "graph": str,
    "out": str,
}
EXTRA = {
    "contraction": {"steps": int, "record_every": int, "init": str, "rate_tolerance": float},
    "certificate": {"init": str},
    "restore": {"max_steps": int, "sweeps": int},
    "degrade": {},
    "bound": {},
    "collector": {"collector_replicas": int},
    "verify": {"iterations": int, "coupling_trials": int},
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbs-tv", description="Gibbs image-restoration sampler and its mixing bounds")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, extra in EXTRA.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        for opt, typ in {**COMMON, **extra}.items():
            sp.add_argument("--" + opt.replace("_", "-"), dest=opt, type=typ, default=None)
        if name in ("degrade", "restore"):
            sp.add_argument("--image", help="input PGM (restore: degrade it first)")
        if name == "restore":
            sp.add_argument("--observed", help="observation file written by `degrade`")
        if name == "bound":
            sp.add_argument("--json", action="store_true", help="print JSON instead of text")
    return p


def _config(args) -> ex.ExperimentConfig:
    opts = {k: getattr(args, k) for k in {**COMMON, **EXTRA[args.command]} if getattr(args, k, None) is not None}
    if args.config:
        return ex.ExperimentConfig.load(args.config, **opts)
    return ex.ExperimentConfig(**opts)


def _verdict_code(verdict: str) -> int:
    return 1 if verdict == "fail" else 0


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = _config(args)
    cmd = args.command

    if cmd == "bound":
        rep = ex.run_bound(cfg)
        print(json.dumps(rep.to_json(), indent=2, sort_keys=True) if args.json else rep.render())
        return 0

    if cmd == "contraction":
        rep = ex.run_contraction_experiment(cfg)
        fit = rep["fit"]
        rate = f"{fit['rate']:.6f} +- {fit['rate_se']:.6f}" if fit and not fit["degenerate"] else "n/a"
        print(f"fitted rate {rate}  theoretical {rep['theoretical_rate']:.6f}  verdict {rep['verdict']}")
        return _verdict_code(rep["verdict"])

    if cmd == "certificate":
        rep = ex.run_certificate_experiment(cfg)
        print(cfg.path("certificate.txt").read_text(), end="")
        return _verdict_code(rep["verdict"])

    if cmd == "degrade":
        if not args.image:
            raise ValueError("degrade needs --image")
        img = read_pgm(args.image)
        y = ex.degrade_image(cfg, img)
        path = cfg.path("observed.y")
        write_observation(y, path, img.width, img.height, sigma=cfg.sigma)
        print(f"wrote {path}")
        return 0

    if cmd == "restore":
        if args.observed:
            header, y = read_observation(args.observed)
            restored, diag = ex.restore_observation(cfg, y, header["width"], header["height"])
            write_pgm(restored, cfg.path("restored.pgm"))
            ex.dump_json(diag, cfg.path("restore.json"))
        elif args.image:
            _, _, diag = ex.degrade_and_restore(cfg, read_pgm(args.image))
        else:
            raise ValueError("restore needs --observed or --image")
        print(f"ran {diag['steps_run']} steps (recommended {diag['steps_recommended']}); wrote {cfg.path('restored.pgm')}")
        return 0

    if cmd == "collector":
        rep = ex.run_collector_experiment(cfg)
        for r in rep["rows"]:
            print(
                f"N={r['N']:<4} eps={r['epsilon']:<5} M={r['M']:<5} exact={r['exact_tail']:.6f} "
                f"sim={r['simulated_tail']:.6f} bound_ok={r['bound_holds']} sim_ok={r['simulation_agrees']}"
            )
        return _verdict_code(rep["verdict"])

    if cmd == "verify":
        rep = ex.verify_suite(cfg)
        ex.dump_json(rep, cfg.path("verify.json"))
        for s in rep["suites"]:
            if s["name"] == "oracle_crosscheck":
                write_tv_series_csv(s["tv"], cfg.path("oracle_tv.csv"))
        for s in rep["suites"]:
            print(f"{s['status']:>7}  {s['name']:<32} {s['passed']}/{s['total']}")
        print(f"overall: {rep['status']}")
        return _verdict_code(rep["status"])

    raise SystemExit(f"unknown command {cmd}")


def main(argv=None) -> int:
    try:
        return run(argv)
    except (BoundError, PgmError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
