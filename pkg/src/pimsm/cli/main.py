"""Command-line entry point: ``pimsm <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..analysis import approximation_rate_study, drift_report
from ..errors import DataError, PimsmError
from ..msssm.backbone import BackboneParams
from ..scalemap import MODES, assign_scales
from ..signalgen import DEFAULT_BACKGROUND, PiecewiseSpec, gen_colored_noise, gen_two_timescale_task
from ..spectral import PiecewiseFit, Spectrum, init_fit, periodogram_array
from ..train import evaluate
from .config import ExperimentConfig
from .data import load_csv_dataset
from .experiments import format_table, run_experiment

log = logging.getLogger("pimsm")

CATEGORY = {2: "config", 3: "data", 4: "numeric", 5: "contract"}


def _out(args, default: str) -> Path:
    path = Path(args.out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _experiment_config(args, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    kw = dict(overrides)
    if args.seed is not None:
        kw["seeds"] = [args.seed]
    if args.preset:
        kw["preset"] = args.preset
    if args.out:
        kw["out_dir"] = args.out
    return replace(cfg, **kw) if kw else cfg


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    log.info("wrote %s", path)


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> None:
    seed = args.seed or 0
    if args.kind == "two-timescale":
        ds = gen_two_timescale_task(args.n, args.T, args.d, seed=seed, amplitude=args.amplitude)
    else:
        spec = PiecewiseSpec(**json.loads(Path(args.spec).read_text())) if args.spec else DEFAULT_BACKGROUND
        ds = gen_colored_noise(spec, args.T, args.d, seed=seed, n=args.n)
    path = ds.to_csv_dir(_out(args, "synth"))
    print(f"wrote {ds.n} sequences to {path}")


def _mean_spectrum(data_dir: str) -> Spectrum:
    ds = load_csv_dataset(data_dir)
    f_min = 1.0 / ds.T
    freqs, power = periodogram_array(np.swapaxes(ds.sequences, 1, 2), f_min, 0.5)
    return Spectrum(freqs, power.mean(axis=(0, 1)), f_min, 0.5)


def cmd_fit_spectrum(args) -> None:
    fit = init_fit(_mean_spectrum(args.data), args.K)
    _write_json(fit.to_dict(), _out(args, ".") / "fit.json")
    print(fit.to_json())


def cmd_map_delta(args) -> None:
    try:
        fit = PiecewiseFit.from_dict(json.loads(Path(args.fit).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read fit {args.fit}: {exc}") from None
    sa = assign_scales(fit, args.w, args.mode, args.delta_min, args.delta_max, args.step)
    _write_json(sa.to_dict(), _out(args, ".") / "scale_assignment.json")
    print(sa.to_json())


def cmd_experiment(args, **overrides) -> None:
    cfg = _experiment_config(args, **overrides)
    bundle = run_experiment(cfg)
    print(format_table(bundle["summary"]))
    failed = [r for r in bundle["rows"] if r.get("status") != "ok"]
    if failed:
        log.warning("%d run(s) failed; see %s/results.csv", len(failed), cfg.out_dir)


def cmd_evaluate(args) -> None:
    params = BackboneParams.load(args.checkpoint)
    ds = load_csv_dataset(args.data)
    view_len = args.view_len
    ev = evaluate(params, ds, view_len)
    out = {k: v for k, v in ev.items() if k not in ("z", "pred")}
    _write_json(out, _out(args, ".") / "evaluation.json")
    print(json.dumps(out))


def cmd_drift(args) -> None:
    params = BackboneParams.load(args.checkpoint)
    params_b = BackboneParams.load(args.checkpoint_b) if args.checkpoint_b else None
    ds = load_csv_dataset(args.data)
    view_len = max(1, int(np.ceil(args.view_frac * ds.T)))
    rep = drift_report(params, ds.sequences, ds.sequences[:, :view_len],
                       ds.labels if ds.is_classification else None, params_b=params_b, x_spec=ds.sequences)
    _write_json(rep, _out(args, ".") / "drift.json")
    print(json.dumps(rep))


def cmd_kernel_study(args) -> None:
    Ks = list(range(1, args.K_max + 1))
    study = approximation_rate_study(args.alpha, Ks, restarts=args.restarts, seed=args.seed or 0)
    out = _out(args, "kernel_study")
    _write_json({k: v for k, v in study.items()}, out / "kernel_study.json")
    with (out / "kernel_study.csv").open("w") as fh:
        fh.write("K,error,relative_error\n")
        for r in study["rows"]:
            fh.write(f"{r['K']},{r['error']!r},{r['relative_error']!r}\n")
    for r in study["rows"]:
        print(f"K={r['K']}  L1 error={r['error']:.6g}")
    print(f"log-log slope={study['slope']:.3f}")


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="single seed (overrides the config's list)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--preset", choices=["pimsm", "single-scale", "learnable-delta", "random-delta"])
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pimsm", description="Spectrum-guided multi-scale SSM experiments")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset as CSV")
    s.add_argument("--kind", choices=["two-timescale", "colored"], default="two-timescale")
    s.add_argument("--n", type=int, default=32, help="per class (two-timescale) or series count (colored)")
    s.add_argument("--T", type=int, default=64)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--amplitude", type=float, default=1.0)
    s.add_argument("--spec", help="PiecewiseSpec JSON for colored noise")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit-spectrum", parents=[common], help="piecewise power-law fit of a dataset's spectrum")
    s.add_argument("--data", required=True, help="CSV dataset directory")
    s.add_argument("--K", type=int, default=3)
    s.set_defaults(func=cmd_fit_spectrum)

    s = sub.add_parser("map-delta", parents=[common], help="map a fit to ordered discretization steps")
    s.add_argument("--fit", required=True, help="fit JSON from fit-spectrum")
    s.add_argument("--w", type=float, default=0.3)
    s.add_argument("--mode", choices=MODES, default="per-band")
    s.add_argument("--delta-min", type=float)
    s.add_argument("--delta-max", type=float)
    s.add_argument("--step", type=float, default=1.0, help="acquisition step")
    s.set_defaults(func=cmd_map_delta)

    s = sub.add_parser("train", parents=[common], help="train and evaluate per the config's task and axis")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("pretrain", parents=[common], help="masked-reconstruction pretraining")
    s.set_defaults(func=lambda a: cmd_experiment(a, task="pretrain"))

    s = sub.add_parser("evaluate", parents=[common], help="evaluate a saved checkpoint on a CSV dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--view-len", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("drift", parents=[common], help="full vs truncated representation drift")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--checkpoint-b", help="separate model for the truncated view")
    s.add_argument("--data", required=True)
    s.add_argument("--view-frac", type=float, default=0.125)
    s.set_defaults(func=cmd_drift)

    s = sub.add_parser("kernel-study", parents=[common], help="exponential-mixture approximation of power-law kernels")
    s.add_argument("--alpha", type=float, default=2.0)
    s.add_argument("--K-max", type=int, default=5)
    s.add_argument("--restarts", type=int, default=32)
    s.set_defaults(func=cmd_kernel_study)

    s = sub.add_parser("ablate", parents=[common], help="sweep the mixing weight and normalization mode")
    s.set_defaults(func=lambda a: cmd_experiment(a, task="ablation"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except PimsmError as exc:
        print(f"error [{CATEGORY.get(exc.exit_code, 'runtime')}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 6
    return 0


if __name__ == "__main__":
    sys.exit(main())
