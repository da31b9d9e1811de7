"""Stacked multi-scale backbone, its step providers, and checkpoint I/O."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..engine import F, Parameter, Tensor
from ..errors import ConfigError, ParameterError
from ..scalemap import DEFAULT_W, default_delta_bounds, deltas_from_fit_t, enforce_order_t
from ..spectral.hypernet import HyperNetParams, hypernet_raw, log_binned_features, soft_segment_model
from ..spectral.spectrum import periodogram_array
from .blocks import BlockParams, block_forward, rms_norm
from .heads import a_scale_loss, group_table

CHECKPOINT_SCHEMA = 1
DELTA_MODES = ("spectral", "learnable", "random", "single")
PRESET_DELTA_MODE = {"pimsm": "spectral", "learnable-delta": "learnable", "random-delta": "random",
                     "single-scale": "single"}
DIM_PRESETS = {
    "desk": {"d_model": 32, "d_inter": 64, "n_blocks": 2},
    "large": {"d_model": 320, "d_inter": 1024, "n_blocks": 9},
}


@dataclass
class BackboneConfig:
    d_in: int
    seq_len: int  # length of the spectral context; fixes the lowest analysed frequency
    d_model: int = 32
    d_inter: int = 64
    n_blocks: int = 2
    H: int = 6
    K: int = 3
    state_dim: int = 8
    head_dim: int | None = None
    task: str = "classify"  # classify | forecast
    n_classes: int = 2
    horizon: int = 1
    delta_mode: str = "spectral"
    w: float = DEFAULT_W
    map_mode: str = "per-band"
    acquisition_step: float = 1.0
    delta_min: float | None = None
    delta_max: float | None = None
    spectral_pooling: str = "sequence"  # sequence | batch
    f_max: float = 0.5
    scan: str = "quadratic"
    reconstruction_head: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.head_dim is None:
            self.head_dim = self.d_model
        dmin, dmax = default_delta_bounds(self.acquisition_step)
        self.delta_min = dmin if self.delta_min is None else self.delta_min
        self.delta_max = dmax if self.delta_max is None else self.delta_max
        self.validate()

    @property
    def f_min(self) -> float:
        return 1.0 / self.seq_len

    def validate(self) -> None:
        if self.H % self.K:
            raise ConfigError(f"H={self.H} must be divisible by K={self.K}")
        if self.delta_mode not in DELTA_MODES:
            raise ConfigError(f"delta_mode must be one of {DELTA_MODES}, got {self.delta_mode!r}")
        if self.task not in ("classify", "forecast"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.spectral_pooling not in ("sequence", "batch"):
            raise ConfigError("spectral_pooling must be 'sequence' or 'batch'")
        if self.seq_len < 8:
            raise ConfigError("seq_len must be at least 8 for the spectral branch")
        if not 0 < self.delta_min < self.delta_max:
            raise ConfigError("need 0 < delta_min < delta_max")
        if not 0 <= self.w <= 1:
            raise ConfigError("w must be in [0, 1]")
        if min(self.d_in, self.d_model, self.d_inter, self.n_blocks, self.state_dim) < 1:
            raise ConfigError("all dimensions must be positive")

    @classmethod
    def from_preset(cls, preset: str = "pimsm", dims: str = "desk", **kw) -> "BackboneConfig":
        if preset not in PRESET_DELTA_MODE:
            raise ConfigError(f"unknown model preset {preset!r}; expected one of {sorted(PRESET_DELTA_MODE)}")
        if dims not in DIM_PRESETS:
            raise ConfigError(f"unknown size preset {dims!r}")
        base = dict(DIM_PRESETS[dims], delta_mode=PRESET_DELTA_MODE[preset])
        base.update(kw)
        return cls(**base)


@dataclass
class LatentStates:
    hidden: list[np.ndarray]  # per layer (batch, T, d_model), layer 0 is the embedding
    z: Tensor  # pooled (batch, d_model)
    scale_states: list[np.ndarray]  # per block (batch, K, T, head_dim)


@dataclass
class BackboneParams:
    config: BackboneConfig
    W_embed: Tensor
    b_embed: Tensor
    blocks: list[BlockParams]
    norm_f: Tensor
    W_out: Tensor
    b_out: Tensor
    hyper: HyperNetParams | None = None
    log_delta: Tensor | None = None  # learnable / single modes
    fixed_deltas: np.ndarray | None = None  # random mode
    W_rec: Tensor | None = None
    b_rec: Tensor | None = None
    a_0: float = 1.0
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: BackboneConfig) -> "BackboneParams":
        c = config
        rng = np.random.default_rng(c.seed)
        blocks = [BlockParams.init(c.d_model, c.d_inter, c.H, c.K, c.state_dim, c.head_dim,
                                   c.acquisition_step, rng, f"blocks.{i}") for i in range(c.n_blocks)]
        out_dim = c.n_classes if c.task == "classify" else c.horizon * c.d_in
        p = cls(
            c,
            Parameter(rng.normal(scale=1 / np.sqrt(c.d_in), size=(c.d_in, c.d_model)), "embed.W"),
            Parameter(np.zeros(c.d_model), "embed.b"),
            blocks,
            Parameter(np.ones(c.d_model), "norm_f"),
            Parameter(rng.normal(scale=1 / np.sqrt(c.d_model), size=(c.d_model, out_dim)), "head.W"),
            Parameter(np.zeros(out_dim), "head.b"),
        )
        if c.reconstruction_head:
            p.W_rec = Parameter(rng.normal(scale=1 / np.sqrt(c.d_model), size=(c.d_model, c.d_in)), "rec.W")
            p.b_rec = Parameter(np.zeros(c.d_in), "rec.b")
        if c.delta_mode == "spectral":
            p.hyper = HyperNetParams.init(c.K, c.f_min, c.f_max, seed=c.seed + 7919)
        elif c.delta_mode == "learnable":
            m = 1.0 - (np.arange(c.K) + 0.5) / c.K
            p.log_delta = Parameter(np.log(c.delta_min + (c.delta_max - c.delta_min) * m), "delta.log")
        elif c.delta_mode == "single":
            p.log_delta = Parameter(np.array([np.log(c.acquisition_step)]), "delta.log")
        else:
            draws = np.exp(rng.uniform(np.log(c.delta_min), np.log(c.delta_max), size=c.K))
            p.fixed_deltas = np.sort(draws)[::-1].copy()
        p.a_0 = float(np.mean(np.exp(np.concatenate([b.A_log.data for b in blocks]))))
        return p

    # -- parameter bookkeeping -------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        tensors = [self.W_embed, self.b_embed, self.norm_f, self.W_out, self.b_out]
        for b in self.blocks:
            tensors += b.parameters()
        if self.hyper is not None:
            tensors += self.hyper.parameters()
        for t in (self.log_delta, self.W_rec, self.b_rec):
            if t is not None:
                tensors.append(t)
        for t in tensors:
            out[t.name] = t
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def no_decay_names(self) -> set[str]:
        """Decays, biases, norm gains and step parameters are exempt from weight decay."""
        names = set()
        for n, t in self.named_parameters().items():
            if t.ndim <= 1 or n.endswith(("A_log", "norm1", "norm_s", "norm2", "norm_f")) or n.startswith("delta"):
                names.add(n)
        return names

    def A_logs(self) -> list[Tensor]:
        return [b.A_log for b in self.blocks]

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.parameters()))

    # -- checkpoints -----------------------------------------------------------

    def save(self, path) -> tuple[Path, Path]:
        """Write ``<path>.json`` (schema, config, names/shapes) and ``<path>.npz`` (tensors)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tensors = {n: t.data for n, t in self.named_parameters().items()}
        if self.fixed_deltas is not None:
            tensors["delta.fixed"] = self.fixed_deltas
        header = {
            "schema_version": CHECKPOINT_SCHEMA,
            "package_version": __version__,
            "config": asdict(self.config),
            "groups": group_table(self.config.H, self.config.K).tolist(),
            "a_0": self.a_0,
            "tensors": {n: list(np.shape(v)) for n, v in tensors.items()},
            "meta": self.meta,
        }
        jpath, npath = path.with_suffix(".json"), path.with_suffix(".npz")
        jpath.write_text(json.dumps(header, indent=2, default=float))
        np.savez(npath, **tensors)
        return jpath, npath

    @classmethod
    def load(cls, path) -> "BackboneParams":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        if header.get("schema_version") != CHECKPOINT_SCHEMA:
            raise ConfigError(f"unsupported checkpoint schema {header.get('schema_version')}")
        p = cls.init(BackboneConfig(**header["config"]))
        with np.load(path.with_suffix(".npz")) as data:
            named = p.named_parameters()
            for n in header["tensors"]:
                if n == "delta.fixed":
                    p.fixed_deltas = data[n].copy()
                elif n in named:
                    named[n].data[...] = data[n]
                else:
                    raise ConfigError(f"checkpoint tensor {n!r} has no slot in this model")
        p.a_0 = header["a_0"]
        p.meta = header.get("meta", {})
        return p

    def copy(self) -> "BackboneParams":
        q = BackboneParams.init(replace(self.config))
        for n, t in q.named_parameters().items():
            t.data[...] = self.named_parameters()[n].data
        if self.fixed_deltas is not None:
            q.fixed_deltas = self.fixed_deltas.copy()
        q.a_0 = self.a_0
        return q


# -- step providers ------------------------------------------------------------

@dataclass
class SpectralBranch:
    """Everything the composite loss needs from the spectral side of one batch."""

    freqs: np.ndarray
    log_power: np.ndarray  # (batch, d, bins)
    log_knees: Tensor  # per channel (batch, d, K-1)
    betas: Tensor  # per channel (batch, d, K)
    model: Tensor  # soft piecewise log model (batch, d, bins)
    intercepts: Tensor
    consensus_log_knees: Tensor  # (batch, K-1)
    consensus_betas: Tensor  # (batch, K)
    centroids: Tensor


def spectral_inputs(x_spec: np.ndarray, f_min: float, f_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel periodograms ``(batch, d, bins)`` of ``(batch, T, d)`` context, floored for logs."""
    freqs, power = periodogram_array(np.swapaxes(np.asarray(x_spec, float), -1, -2), f_min, f_max)
    floor = 1e-12 * np.maximum(power.mean(axis=-1, keepdims=True), 1e-300)
    return freqs, np.maximum(power, floor)


def compute_deltas(params: BackboneParams, x_spec: np.ndarray, batch: int | None = None):
    """Per-sequence scale steps ``(batch, K)`` and (spectral mode) the branch internals."""
    c = params.config
    if c.delta_mode == "spectral":
        freqs, power = spectral_inputs(x_spec, c.f_min, c.f_max)
        logp = np.log(power)
        feats = log_binned_features(freqs, power, c.f_min, c.f_max)
        lk, betas = hypernet_raw(params.hyper, feats)
        model, icpt = soft_segment_model(lk, betas, np.log(freqs), logp)
        lk_c, b_c = F.mean(lk, axis=-2), F.mean(betas, axis=-2)
        if c.spectral_pooling == "batch":
            n = lk_c.shape[0]
            lk_c = F.broadcast_to(F.mean(lk_c, axis=0, keepdims=True), (n, c.K - 1))
            b_c = F.broadcast_to(F.mean(b_c, axis=0, keepdims=True), (n, c.K))
        deltas, info = deltas_from_fit_t(lk_c, b_c, c.f_min, c.f_max, c.w, c.map_mode, c.delta_min, c.delta_max)
        branch = SpectralBranch(freqs, logp, lk, betas, model, icpt, lk_c, b_c, info["centroids"])
        return deltas, branch
    n = np.shape(x_spec)[0] if batch is None else batch
    if c.delta_mode == "random":
        return Tensor(np.broadcast_to(params.fixed_deltas, (n, c.K)).copy()), None
    d = F.exp(params.log_delta)
    if c.delta_mode == "single":
        d = F.broadcast_to(d, (c.K,))
    ordered, _ = enforce_order_t(d, c.delta_min, c.delta_max)
    return F.broadcast_to(F.expand_dims(ordered, 0), (n, c.K)), None


def backbone_forward(x, params: BackboneParams, x_spec=None, deltas: Tensor | None = None,
                     keep_hidden: bool = False):
    """``x (batch, T, d)`` -> ``(LatentStates, prediction, aux)``.

    ``x_spec`` is the spectral context (defaults to ``x``). ``aux`` holds the
    per-scale steps and, in spectral mode, the :class:`SpectralBranch`.
    """
    c = params.config
    x = np.asarray(x, dtype=float) if not isinstance(x, Tensor) else x
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] == 0:
        raise ParameterError("empty sequence (T=0)")
    if x.shape[-1] != c.d_in:
        raise ParameterError(f"expected {c.d_in} channels, got {x.shape[-1]}")
    branch = None
    if deltas is None:
        deltas, branch = compute_deltas(params, x if x_spec is None else x_spec, batch=x.shape[0])
    h = F.as_tensor(x) @ params.W_embed + params.b_embed
    hidden = [h.data] if keep_hidden else []
    scale_states = []
    for bp in params.blocks:
        h, scales = block_forward(h, deltas, bp, c.scan, return_scales=True)
        if keep_hidden:
            hidden.append(h.data)
            scale_states.append(scales.data)
    h = rms_norm(h, params.norm_f)
    z = F.mean(h, axis=1)
    out = z @ params.W_out + params.b_out
    if c.task == "forecast":
        out = F.reshape(out, (out.shape[0], c.horizon, c.d_in))
    aux = {"deltas": deltas, "spectral": branch, "final_hidden": h}
    return LatentStates(hidden, z, scale_states), out, aux


def reconstruct(params: BackboneParams, final_hidden: Tensor) -> Tensor:
    """Per-timestep linear decoder used for masked pretraining."""
    if params.W_rec is None:
        raise ConfigError("model was built without a reconstruction head")
    return final_hidden @ params.W_rec + params.b_rec


def model_a_scale_loss(params: BackboneParams, weight: float = 0.1) -> Tensor:
    return a_scale_loss(params.A_logs(), params.a_0, weight)
