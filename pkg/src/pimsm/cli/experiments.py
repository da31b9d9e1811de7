"""Experiment runner: datasets, per-seed training, the evaluation axes, and result bundles."""

from __future__ import annotations

import csv
import json
import math
import subprocess
from pathlib import Path

import numpy as np

from .. import __version__
from ..analysis import approximation_rate_study, drift_report
from ..errors import ConfigError, NumericError, ParameterError
from ..msssm.backbone import BackboneConfig, BackboneParams, backbone_forward
from ..scalemap import assign_scales
from ..signalgen import (
    DEFAULT_BACKGROUND,
    LabeledSequenceSet,
    PiecewiseSpec,
    gen_colored_noise,
    gen_two_timescale_task,
    make_forecast_set,
)
from ..spectral import Spectrum, init_fit, periodogram_array
from ..train import MaskSpec, TrainConfig, evaluate, pretrain_loop, train_loop
from .config import ExperimentConfig
from .data import load_csv_dataset, split_indices

# resting -> task analog: the test split's shared background has a different spectral shape
SHIFTED_BACKGROUND = PiecewiseSpec(knees=(0.02, 0.12), exponents=(1.8, 0.6, 2.2), f_min=1e-3, f_max=0.5)


def version_string() -> str:
    """Package version, with the short commit id appended when run from a git checkout."""
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# -- datasets ----------------------------------------------------------------

def _spec_from(d: dict | None, default: PiecewiseSpec) -> PiecewiseSpec:
    return default if d is None else PiecewiseSpec(**d)


def build_datasets(cfg: ExperimentConfig) -> tuple[LabeledSequenceSet, LabeledSequenceSet, LabeledSequenceSet]:
    """Train, validation and test splits for the configured data source."""
    data = dict(cfg.data)
    if "csv_dir" in data:
        ds = load_csv_dataset(data["csv_dir"])
        if "test_csv_dir" in data:
            test = load_csv_dataset(data["test_csv_dir"])
            tr, va, _ = split_indices(ds.n, (0.85, 0.15, 0.0), seed=data.get("seed", 0))
            return ds.subset(tr), ds.subset(va), test
        tr, va, te = split_indices(ds.n, seed=data.get("seed", 0))
        return ds.subset(tr), ds.subset(va), ds.subset(te)
    gen = data.pop("generator")
    base = int(data.pop("seed", 0))
    n_val = data.pop("n_val_per_class", None)
    n_test = data.pop("n_test_per_class", None)
    if gen == "two_timescale":
        background = _spec_from(data.pop("background", None), DEFAULT_BACKGROUND)
        shifted = _spec_from(data.pop("shift_background", None), SHIFTED_BACKGROUND)
        n = data.pop("n_per_class")
        T, d = data.pop("T"), data.pop("d")
        try:
            train = gen_two_timescale_task(n, T, d, seed=base, background=background, **data)
            val = gen_two_timescale_task(n_val or max(n // 4, 4), T, d, seed=base + 1, background=background, **data)
            test_bg = shifted if cfg.axis == "state-shift" else background
            test = gen_two_timescale_task(n_test or n, T, d, seed=base + 2, background=test_bg, **data)
        except TypeError as exc:
            raise ConfigError(f"bad data section: {exc}") from None
        return train, val, test
    if gen == "colored_noise":
        spec = _spec_from(data.pop("spec", None), DEFAULT_BACKGROUND)
        window, n, T, d = data.pop("window", 64), data.pop("n", 16), data.pop("T", 512), data.pop("d", 1)
        sets = [make_forecast_set(gen_colored_noise(spec, T, d, seed=base + i, n=n), window, cfg.horizon,
                                  stride=data.get("stride")) for i in range(3)]
        return tuple(sets)
    raise ConfigError(f"unknown generator {gen!r}")


def dataset_fit(ds: LabeledSequenceSet, K: int, f_max: float = 0.5):
    """Offline piecewise fit of the mean periodogram over sequences and channels."""
    f_min = 1.0 / ds.T
    freqs, power = periodogram_array(np.swapaxes(ds.sequences, 1, 2), f_min, f_max)
    return init_fit(Spectrum(freqs, power.mean(axis=(0, 1)), f_min, f_max), K)


# -- models --------------------------------------------------------------------

def model_config(cfg: ExperimentConfig, ds: LabeledSequenceSet, seed: int, preset: str | None = None,
                 **scale_overrides) -> BackboneConfig:
    task = "classify" if ds.is_classification else "forecast"
    kw = dict(cfg.dims)
    kw.update(cfg.scale)
    kw.update(scale_overrides)
    if task == "classify":
        kw.setdefault("n_classes", max(ds.n_classes, 2))
    else:
        kw["horizon"] = ds.labels.shape[1]
    return BackboneConfig.from_preset(preset or cfg.preset, cfg.size, d_in=ds.d, seq_len=ds.T, task=task,
                                      acquisition_step=ds.acquisition_step, seed=seed, **kw)


def train_config(cfg: ExperimentConfig, seed: int, **kw) -> TrainConfig:
    d = dict(cfg.train)
    d.update(kw)
    preset = d.pop("preset", "desk")
    try:
        return TrainConfig.from_preset(preset, seed=seed, weights=cfg.loss_weights, **d)
    except (TypeError, ParameterError) as exc:
        raise ConfigError(f"bad train section: {exc}") from None


def mean_deltas(params: BackboneParams, ds: LabeledSequenceSet) -> list[float]:
    x = ds.sequences[:256]
    _, _, aux = backbone_forward(x, params, x_spec=x)
    return aux["deltas"].data.mean(axis=0).tolist()


def _provenance(cfg: ExperimentConfig, train: LabeledSequenceSet, params: BackboneParams, seed: int) -> dict:
    c = params.config
    fit = dataset_fit(train, c.K)
    sa = assign_scales(fit, c.w, c.map_mode, c.delta_min, c.delta_max, c.acquisition_step)
    return {"seed": seed, "fit": fit.to_dict(), "scale_assignment": sa.to_dict(),
            "model_deltas": mean_deltas(params, train)}


# -- axes ------------------------------------------------------------------------

def _fit_model(cfg, train, val, seed, view_len=None, preset=None, **scale):
    params = BackboneParams.init(model_config(cfg, train, seed, preset, **scale))
    train_loop(params, train, val, train_config(cfg, seed, view_len=view_len))
    return params


def run_standard(cfg, train, val, test, seed, **scale) -> tuple[list[dict], BackboneParams]:
    params = _fit_model(cfg, train, val, seed, **scale)
    ev = evaluate(params, test)
    row = {"metric": ev["metric"]}
    if "mae" in ev:
        row["mae"] = ev["mae"]
    return [row], params


def run_truncation(cfg, train, val, test, seed, **scale) -> tuple[list[dict], BackboneParams]:
    """Separate full-context and early-window models; drift between their test embeddings."""
    view_len = math.ceil(cfg.view_frac * train.T)
    full = _fit_model(cfg, train, val, seed, **scale)
    trunc = _fit_model(cfg, train, val, seed, view_len=view_len, **scale)
    rep = drift_report(full, test.sequences, test.sequences[:, :view_len], test.labels, params_b=trunc,
                       x_spec=test.sequences)
    acc_full = evaluate(full, test)["metric"]
    acc_trunc = evaluate(trunc, test, view_len)["metric"]
    return [{"full_metric": acc_full, "trunc_metric": acc_trunc, "gap": acc_full - acc_trunc, "cka": rep["cka"],
             "dcor": rep["dcor"], "l2_drift": rep["l2_drift"], "view_len": view_len}], full


def run_low_resource(cfg, train, val, test, seed, **scale) -> tuple[list[dict], BackboneParams]:
    """Subsample only the training split; validation and test stay fixed."""
    rows, params = [], None
    rng = np.random.default_rng(seed)
    for ratio in cfg.ratios:
        n = max(int(round(ratio * train.n)), 2)
        idx = np.sort(rng.permutation(train.n)[:n])
        params = _fit_model(cfg, train.subset(idx), val, seed, **scale)
        rows.append({"ratio": ratio, "n_train": n, "metric": evaluate(params, test)["metric"]})
    return rows, params


def run_state_shift(cfg, train, val, test, seed, **scale) -> tuple[list[dict], BackboneParams]:
    """Train and validate on one background state, test on the shifted state."""
    params = _fit_model(cfg, train, val, seed, **scale)
    return [{"id_metric": evaluate(params, val)["metric"], "shift_metric": evaluate(params, test)["metric"]}], params


AXIS_RUNNERS = {"standard": run_standard, "truncation": run_truncation, "low-resource": run_low_resource,
                "state-shift": run_state_shift}


# -- aggregation and output ------------------------------------------------------

GROUP_KEYS = ("preset", "ratio", "w", "mode")


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and sample std over seeds for every numeric column, per group."""
    ok = [r for r in rows if r.get("status") == "ok"]
    groups: dict[tuple, list[dict]] = {}
    for r in ok:
        groups.setdefault(tuple(r.get(k) for k in GROUP_KEYS), []).append(r)
    out = []
    for key, members in groups.items():
        row = {k: v for k, v in zip(GROUP_KEYS, key) if v is not None}
        row["n_seeds"] = len(members)
        cols = [c for c in members[0] if c not in GROUP_KEYS and c not in ("seed", "status")
                and isinstance(members[0][c], (int, float))]
        for c in cols:
            vals = np.array([m[c] for m in members], dtype=float)
            row[f"{c}_mean"] = float(vals.mean())
            row[f"{c}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return out


def _write_csv(rows: list[dict], path: Path) -> None:
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_bundle(bundle: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(bundle["rows"], out / "results.csv")
    _write_csv(bundle["summary"], out / "summary.csv")
    (out / "bundle.json").write_text(json.dumps(bundle, indent=2, sort_keys=True, default=float))
    return out


def format_table(summary: list[dict]) -> str:
    """Plain-text ``mean ± std`` table."""
    lines = []
    for row in summary:
        parts = [f"{k}={row[k]}" for k in GROUP_KEYS if k in row]
        for k in row:
            if k.endswith("_mean"):
                base = k[:-5]
                parts.append(f"{base}={row[k]:.4f}±{row[base + '_std']:.4f}")
        lines.append("  ".join(parts))
    return "\n".join(lines)


def _run_seeds(cfg: ExperimentConfig, datasets, extra: dict, scale: dict, provenance: list) -> list[dict]:
    runner = AXIS_RUNNERS[cfg.axis]
    rows = []
    for seed in cfg.seeds:
        try:
            seed_rows, params = runner(cfg, *datasets, seed, **scale)
        except NumericError as exc:
            rows.append({"seed": seed, **extra, "status": f"failed: {exc}"})
            continue
        provenance.append({**extra, **_provenance(cfg, datasets[0], params, seed)})
        rows += [{"seed": seed, **extra, **r, "status": "ok"} for r in seed_rows]
    return rows


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Run every seed of the configured task/axis; returns (and optionally writes) the result bundle."""
    provenance: list[dict] = []
    if cfg.task == "kernel-study":
        k = cfg.kernel
        rows = []
        for seed in cfg.seeds:
            study = approximation_rate_study(k.get("alpha", 2.0), k.get("K", [1, 2, 3, 4, 5]),
                                             restarts=k.get("restarts", 32), seed=seed)
            rows += [{"seed": seed, **r, "slope": study["slope"], "status": "ok"} for r in study["rows"]]
            provenance.append({"seed": seed, "fits": study["fits"]})
        summary = summarize([{**r, "ratio": r["K"]} for r in rows])
    else:
        datasets = build_datasets(cfg)
        if cfg.task == "pretrain":
            rows = []
            for seed in cfg.seeds:
                params = BackboneParams.init(model_config(cfg, datasets[0], seed, reconstruction_head=True))
                tr = dict(cfg.train)
                losses = pretrain_loop(params, datasets[0], epochs=tr.get("epochs", 5),
                                       batch_size=tr.get("batch_size", 32), lr=tr.get("lr", 1e-3),
                                       spec=MaskSpec(seed=seed), seed=seed)
                rows.append({"seed": seed, "preset": cfg.preset, "final_loss": losses[-1],
                             "first_loss": losses[0], "status": "ok"})
                provenance.append(_provenance(cfg, datasets[0], params, seed))
                if write:
                    params.save(Path(cfg.out_dir) / f"pretrained_seed{seed}")
        elif cfg.task == "ablation":
            rows = []
            for w in cfg.ablation.get("w", [0.0, 0.3, 0.5, 1.0]):
                for mode in cfg.ablation.get("mode", ["per-band", "global"]):
                    extra = {"preset": cfg.preset, "w": w, "mode": mode}
                    rows += _run_seeds(cfg, datasets, extra, {"w": w, "map_mode": mode}, provenance)
        else:
            rows = _run_seeds(cfg, datasets, {"preset": cfg.preset}, {}, provenance)
        summary = summarize(rows)
    bundle = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "version": version_string(),
              "rows": rows, "summary": summary, "provenance": provenance}
    if write:
        write_bundle(bundle, cfg.out_dir)
    return bundle
