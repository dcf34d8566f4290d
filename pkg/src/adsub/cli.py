"""Command-line entry point: ``adsub <command> --config FILE``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from adsub.config import ConfigError, ExperimentConfig, load_config, validate

logger = logging.getLogger("adsub")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adsub", description="Active subsampling with diffusion posterior particles.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
        p.add_argument("--out", help=out_help)
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="override the worker count")
        return p

    common(sub.add_parser("fit-prior", help="fit the mixture prior and save it as JSON"),
           "output JSON path (default: <output_dir>/prior.json)")
    common(sub.add_parser("run", help="compare policies on the test split"), "output directory")
    sw = common(sub.add_parser("sweep", help="repeat the comparison along one axis"), "output directory")
    sw.add_argument("--axis", required=True, help="n_particles | sampling_rate | sigma_y")
    sw.add_argument("--values", required=True, type=_values, help="comma-separated axis values")
    bench = common(sub.add_parser("bench", help="time the policy phase against acquisition count"),
                   "output directory")
    bench.add_argument("--repeats", type=int, default=3)
    am = sub.add_parser("analyze-masks", help="mask-distribution entropy over saved traces")
    am.add_argument("--traces", required=True, help="traces directory written by `run`")
    am.add_argument("--out", help="output directory (default: <traces>/analysis)")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    validate(cfg)
    return cfg


def _dispatch(args) -> None:
    from adsub import experiment

    if args.command == "analyze-masks":
        report = experiment.analyze_masks(args.traces, args.out)
        for e in report:
            print(f"{e['policy']}\tbudget={e['budget']}\tentropy_bits={e['mean_entropy_bits']:.4f}")
        return
    cfg = _load(args)
    if args.command == "fit-prior":
        train, _ = experiment.load_dataset(cfg)
        prior = experiment.fit_prior(cfg, train)
        path = Path(args.out or Path(cfg.output_dir) / "prior.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        prior.save(path)
        print(json.dumps({"path": str(path), **experiment._prior_info(prior)}))
    elif args.command == "run":
        summary = experiment.run_experiment(cfg, args.out)
        for r in summary["results"]:
            print(f"{r['policy']}\tbudget={r['budget']}\tmae={r['mae']['mean']:.5f}"
                  f"+-{r['mae']['stderr']:.5f}\tpsnr={r['psnr']['mean']:.2f}\tssim={r['ssim']['mean']:.4f}")
    elif args.command == "sweep":
        for r in experiment.run_sweep(cfg, args.axis, args.values, args.out):
            print(f"{r['axis']}={r['value']}\t{r['policy']}\tbudget={r['budget']}\tmae={r['mae_mean']:.5f}")
    elif args.command == "bench":
        rep = experiment.run_bench(cfg, args.out, repeats=args.repeats)
        fit = rep["policy_fit"]
        print(f"slope={fit['slope_s']:.3e}s\tr2={fit['r2']:.4f}\t"
              f"doubled_particles_ratio={rep['doubled_particles_policy_ratio']:.2f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported, then mapped to an exit code
        logger.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
