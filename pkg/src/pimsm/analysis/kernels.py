"""Temporal-kernel checks: impulse responses, L1 mismatch bounds, and exponential-mixture fits."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.signal import fftconvolve

from ..errors import ParameterError
from ..msssm.heads import HeadParams, ssm_scan
from ..signalgen import KernelProfile, exp_mixture_kernel, powerlaw_horizon, powerlaw_kernel


def extract_kernel(head: HeadParams, delta: float, L: int, B=1.0, C=1.0) -> KernelProfile:
    """Impulse response ``g[l] = C^T exp(delta A)^l delta B`` of one head over ``L`` lags.

    ``B`` and ``C`` are the frozen input/output vectors (length ``state_dim``,
    or scalars broadcast to it). The response is produced by the same
    recurrence the backbone uses, so it matches :func:`ssm_scan` exactly.
    """
    if L < 1:
        raise ParameterError("L must be at least 1")
    N = head.state_dim
    Bv = np.broadcast_to(np.asarray(B, dtype=float), (N,))
    Cv = np.broadcast_to(np.asarray(C, dtype=float), (N,))
    impulse = np.zeros((L, 1))
    impulse[0] = 1.0
    y = ssm_scan(head, impulse, delta, B=np.tile(Bv, (L, 1)), C=np.tile(Cv, (L, 1)))
    return KernelProfile(y.data[:, 0], 1.0)


def _on_common_grid(g: KernelProfile, g_t: KernelProfile, resample: bool) -> tuple[np.ndarray, np.ndarray, float]:
    a, b = g.values, g_t.values
    if not np.isclose(g.dt, g_t.dt, rtol=1e-12, atol=0.0):
        if not resample:
            raise ParameterError(f"grid steps differ ({g.dt} vs {g_t.dt}); enable resampling")
        b = np.interp(g.lags, g_t.lags, g_t.values, right=0.0)
    n = max(len(a), len(b))
    # kernels vanish beyond their sampled support
    return np.pad(a, (0, n - len(a))), np.pad(b, (0, n - len(b))), g.dt


def l1_mismatch(g: KernelProfile, g_tilde: KernelProfile, resample: bool = False) -> float:
    """``sum |g - g~| dt`` on a shared grid (linear resampling of ``g~`` when allowed)."""
    a, b, dt = _on_common_grid(g, g_tilde, resample)
    return float(np.sum(np.abs(a - b)) * dt)


def causal_response(g: KernelProfile, x: np.ndarray) -> np.ndarray:
    """Discrete convolution ``h[t] = sum_{l<=t} g[l] x[t-l] dt`` along the last axis."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    T = x.shape[-1]
    return fftconvolve(x, g.values[None, :], axes=-1)[..., :T] * g.dt


@dataclass
class Lemma1Report:
    max_ratio: float
    bound: float
    max_gap: float
    witness_gap: float
    witness_ratio: float
    n_signals: int
    holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def verify_lemma1(g: KernelProfile, g_tilde: KernelProfile, n_signals: int = 1000, M: float = 1.0,
                  T: int | None = None, seed: int = 0, rtol: float = 1e-9) -> Lemma1Report:
    """Check ``sup_t |h - h~| <= M ||g - g~||_1`` for random signals with ``|x| <= M``.

    Also evaluates the worst-case witness ``x[t] = M sign(g - g~)[T-1-t]``,
    which attains the bound at ``t = T-1`` (it reduces to ``x == M`` when
    ``g >= g~``).
    """
    a, b, dt = _on_common_grid(g, g_tilde, resample=True)
    diff = KernelProfile(a - b, dt)
    L = len(a)
    T = L if T is None else T
    if T < 1 or M <= 0:
        raise ParameterError("T and M must be positive")
    bound = M * diff.l1()
    rng = np.random.default_rng(seed)
    x = rng.uniform(-M, M, size=(n_signals, T))
    # a third of the draws are extreme +-M sequences, which stress the bound hardest
    k = n_signals // 3
    x[:k] = M * rng.choice([-1.0, 1.0], size=(k, T))
    gaps = np.max(np.abs(causal_response(diff, x)), axis=-1)
    if T >= L:
        w = np.zeros(T)
        w[T - L:] = M * np.sign(diff.values[::-1])
        w[w == 0] = M
        witness_gap = float(np.abs(causal_response(diff, w)[0, -1]))
    else:
        witness_gap = float(np.max(np.abs(causal_response(diff, M * np.sign(diff.values[:T][::-1])))))
    if bound == 0:
        ratios, witness_ratio = np.zeros(n_signals), 1.0 if witness_gap == 0 else np.inf
    else:
        ratios, witness_ratio = gaps / bound, witness_gap / bound
    max_ratio = float(np.max(ratios)) if n_signals else 0.0
    return Lemma1Report(max_ratio, float(bound), float(np.max(gaps)) if n_signals else 0.0, witness_gap,
                        float(witness_ratio), n_signals, bool(max_ratio <= 1.0 + rtol))


# -- exponential-mixture approximation ---------------------------------------

@dataclass
class MixtureFit:
    """``sum_k a_k exp(-lambda_k t)`` with ``a`` on the simplex and its achieved L1 error."""

    K: int
    weights: np.ndarray
    rates: np.ndarray
    error: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if self.K < 1 or self.weights.shape != (self.K,) or self.rates.shape != (self.K,):
            raise ParameterError("weights and rates must both have length K >= 1")
        if np.any(self.weights < -1e-12) or abs(self.weights.sum() - 1.0) > 1e-8:
            raise ParameterError("weights must lie on the simplex")
        if np.any(self.rates <= 0):
            raise ParameterError("rates must be positive")

    def kernel(self, L: int, dt: float) -> KernelProfile:
        w = np.clip(self.weights, 0.0, None)
        return exp_mixture_kernel(w / w.sum(), self.rates, L, dt)

    def to_dict(self) -> dict:
        return {"K": self.K, "weights": self.weights.tolist(), "rates": self.rates.tolist(), "error": self.error}


def _l1_error(target: KernelProfile, weights: np.ndarray, rates: np.ndarray) -> float:
    basis = np.exp(-np.outer(target.lags, rates))
    return float(np.sum(np.abs(target.values - basis @ weights)) * target.dt)


def _smoothed_objective(theta: np.ndarray, t: np.ndarray, g: np.ndarray, dt: float, eps: float):
    K = len(theta) // 2
    logits, log_rates = theta[:K], theta[K:]
    e = np.exp(logits - logits.max())
    a = e / e.sum()
    lam = np.exp(log_rates)
    basis = np.exp(-np.outer(t, lam))  # (n, K)
    r = basis @ a - g
    s = np.sqrt(r * r + eps * eps)
    f = np.sum(s - eps) * dt
    dr = (r / s) * dt  # d f / d r
    da = basis.T @ dr
    dlogits = a * (da - a @ da)
    dlog_rates = a * lam * (-(t * dr) @ basis)
    return f, np.concatenate([dlogits, dlog_rates])


def _polish_weights(target: KernelProfile, rates: np.ndarray) -> np.ndarray | None:
    """Exact L1-optimal simplex weights for fixed rates (a linear program)."""
    n, K = len(target.values), len(rates)
    basis = np.exp(-np.outer(target.lags, rates))
    # variables: a (K), s (n); minimize sum s subject to |g - basis a| <= s
    c = np.concatenate([np.zeros(K), np.full(n, target.dt)])
    eye = np.eye(n)
    A_ub = np.block([[basis, -eye], [-basis, -eye]])
    b_ub = np.concatenate([target.values, -target.values])
    A_eq = np.concatenate([np.ones(K), np.zeros(n)])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (K + n), method="highs")
    if not res.success:
        return None
    a = np.clip(res.x[:K], 0.0, None)
    return a / a.sum()


def _local_fit(target: KernelProfile, a0: np.ndarray, lam0: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
    theta = np.concatenate([np.log(np.maximum(a0, 1e-12)), np.log(lam0)])
    bounds = [(-30.0, 30.0)] * len(a0) + [(-12.0, 8.0)] * len(lam0)
    for eps in (1e-3 * scale, 1e-7 * scale):
        res = minimize(_smoothed_objective, theta, args=(target.lags, target.values, target.dt, eps), jac=True,
                       method="L-BFGS-B", bounds=bounds, options={"maxiter": 500})
        theta = res.x
    K = len(a0)
    e = np.exp(theta[:K] - theta[:K].max())
    return e / e.sum(), np.exp(theta[K:])


def fit_exp_mixture(target: KernelProfile, K: int, restarts: int = 32, seed: int = 0,
                    warm_start: MixtureFit | None = None, polish: bool = True) -> MixtureFit:
    """Best-of-restarts minimization of the discrete L1 error over ``K``-exponential mixtures.

    Restarts draw log-spaced rates with jitter over the grid's resolvable
    range ``[1/horizon, 1/dt]``. A ``warm_start`` with ``K-1`` components is
    extended by a zero-weight component and also kept as a candidate, so the
    returned error never exceeds the warm start's.
    """
    if K < 1:
        raise ParameterError("K must be at least 1")
    if restarts < 1:
        raise ParameterError("restarts must be at least 1")
    rng = np.random.default_rng(seed)
    horizon = max(target.lags[-1], target.dt)
    lo, hi = np.log(1.0 / horizon), np.log(1.0 / target.dt)
    scale = max(float(np.max(np.abs(target.values))), 1e-300)
    starts = []
    if warm_start is not None:
        if warm_start.K != K - 1:
            raise ParameterError(f"warm start must have K-1={K - 1} components, got {warm_start.K}")
        extra = np.exp(rng.uniform(lo, hi))
        starts.append((np.append(warm_start.weights * (1 - 1e-3), 1e-3), np.append(warm_start.rates, extra)))
    for r in range(restarts):
        grid = np.linspace(lo, hi, K + 2)[1:-1] if K > 1 else np.array([0.5 * (lo + hi)])
        jitter = 0.0 if r == 0 else rng.normal(scale=(hi - lo) / (2 * K), size=K)
        starts.append((np.full(K, 1.0 / K), np.exp(np.clip(grid + jitter, lo - 2, hi + 2))))
    candidates = []
    if warm_start is not None:
        candidates.append((np.append(warm_start.weights, 0.0), np.append(warm_start.rates, np.exp(hi))))
    for a0, lam0 in starts:
        if K == 1:
            # the simplex pins the single weight; only the rate is free
            res = minimize(lambda v: _l1_error(target, np.ones(1), np.exp(v)), np.log(lam0), method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-14})
            candidates.append((np.ones(1), np.exp(res.x)))
        else:
            candidates.append(_local_fit(target, a0, lam0, scale))
    scored = sorted(((_l1_error(target, a, lam), a, lam) for a, lam in candidates), key=lambda c: c[0])
    best_err, best_a, best_lam = scored[0]
    if polish and K > 1:
        for _, a, lam in scored[:3]:
            a_lp = _polish_weights(target, lam)
            if a_lp is not None:
                err = _l1_error(target, a_lp, lam)
                if err < best_err:
                    best_err, best_a, best_lam = err, a_lp, lam
    order = np.argsort(best_lam)
    return MixtureFit(K, best_a[order], best_lam[order], best_err)


def approximation_rate_study(alpha: float, K_list=(1, 2, 3, 4, 5), dt: float = 0.05, tail_fraction: float = 0.01,
                             restarts: int = 32, seed: int = 0) -> dict:
    """L1 error of the best ``K``-exponential mixture to ``(1+t)^-alpha`` and its log-log slope in ``K``.

    Each ``K`` is warm-started from the ``K-1`` solution when ``K-1`` is also
    studied, so errors are nonincreasing along consecutive ``K``.
    """
    if not alpha > 1:
        raise ParameterError("alpha must exceed 1")
    K_list = sorted(int(k) for k in K_list)
    horizon = powerlaw_horizon(alpha, tail_fraction)
    target = powerlaw_kernel(alpha, int(np.ceil(horizon / dt)) + 1, dt)
    mass = target.l1()
    rows, fits, prev = [], {}, None
    for K in K_list:
        warm = prev if prev is not None and prev.K == K - 1 else None
        fit = fit_exp_mixture(target, K, restarts=restarts, seed=seed + K, warm_start=warm)
        fits[K] = fit
        rows.append({"K": K, "error": fit.error, "relative_error": fit.error / mass})
        prev = fit
    Ks = np.array([r["K"] for r in rows], dtype=float)
    errs = np.array([r["error"] for r in rows])
    slope = float(np.polyfit(np.log(Ks), np.log(errs), 1)[0]) if len(rows) > 1 else float("nan")
    return {"alpha": alpha, "dt": dt, "horizon": target.lags[-1], "target_mass": mass, "rows": rows,
            "slope": slope, "fits": {K: f.to_dict() for K, f in fits.items()}}
