"""Hyperparameter search: exhaustive grid over transformer size and
Gaussian-process Bayesian optimization with expected improvement over
continuous training hyperparameters.

The surrogate is a Matérn-5/2 GP on inputs normalized to the unit cube
(log-scaled dimensions are log-transformed first), with length scale,
signal variance, and noise variance fitted by multi-start quasi-Newton
ascent of the log marginal likelihood. Objectives are minimized (dev MSE
in the model-training use case).
"""

from __future__ import annotations

import itertools
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import ConfigError, ValidationError
from .rng import stream

SQRT5 = math.sqrt(5.0)


# ---------------------------------------------------------------------------
# search space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str                     # "continuous" | "categorical"
    lo: float = 0.0
    hi: float = 1.0
    log: bool = False
    values: tuple = ()

    def __post_init__(self):
        if self.kind == "continuous":
            if not self.lo < self.hi:
                raise ConfigError(f"{self.name}: lo must be < hi")
            if self.log and self.lo <= 0:
                raise ConfigError(f"{self.name}: log scale needs positive bounds")
        elif self.kind == "categorical":
            if not self.values:
                raise ConfigError(f"{self.name}: categorical needs values")
        else:
            raise ConfigError(f"{self.name}: unknown dimension kind {self.kind!r}")


def continuous(name: str, lo: float, hi: float, log: bool = False) -> Dimension:
    return Dimension(name=name, kind="continuous", lo=lo, hi=hi, log=log)


def categorical(name: str, values: Sequence) -> Dimension:
    return Dimension(name=name, kind="categorical", values=tuple(values))


@dataclass
class SearchSpace:
    dims: list[Dimension]

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    def from_unit(self, u: np.ndarray) -> dict:
        """Map a unit-cube point to a configuration dict."""
        cfg = {}
        for x, dim in zip(u, self.dims):
            x = min(max(float(x), 0.0), 1.0)
            if dim.kind == "categorical":
                k = min(int(x * len(dim.values)), len(dim.values) - 1)
                cfg[dim.name] = dim.values[k]
            elif dim.log:
                cfg[dim.name] = math.exp(
                    math.log(dim.lo) + x * (math.log(dim.hi) - math.log(dim.lo))
                )
            else:
                cfg[dim.name] = dim.lo + x * (dim.hi - dim.lo)
        return cfg

    def to_unit(self, cfg: dict) -> np.ndarray:
        u = np.zeros(self.n_dims)
        for i, dim in enumerate(self.dims):
            v = cfg[dim.name]
            if dim.kind == "categorical":
                u[i] = (dim.values.index(v) + 0.5) / len(dim.values)
            elif dim.log:
                u[i] = (math.log(v) - math.log(dim.lo)) / (math.log(dim.hi) - math.log(dim.lo))
            else:
                u[i] = (v - dim.lo) / (dim.hi - dim.lo)
        return u


# ---------------------------------------------------------------------------
# Gaussian-process surrogate
# ---------------------------------------------------------------------------

JITTER = 1e-6


def _matern52(sqdist: np.ndarray, length_scale: float, signal_var: float) -> np.ndarray:
    r = np.sqrt(np.maximum(sqdist, 0.0)) / length_scale
    return signal_var * (1.0 + SQRT5 * r + 5.0 * sqdist / (3.0 * length_scale ** 2)) * np.exp(-SQRT5 * r)


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)


class GpSurrogate:
    """GP regression on unit-cube inputs with a Matérn-5/2 kernel."""

    def __init__(self, X, y, length_scale: float = 0.3, signal_var: float = 1.0,
                 noise_var: float = 1e-6):
        self.X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.X.ndim != 2 or len(self.X) != len(y):
            raise ValidationError("surrogate needs matching 2-D inputs and 1-D objectives")
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        self.y = (y - self.y_mean) / self.y_std
        self.length_scale = length_scale
        self.signal_var = signal_var
        self.noise_var = noise_var
        self._refresh()

    def _refresh(self):
        K = _matern52(_sqdist(self.X, self.X), self.length_scale, self.signal_var)
        K[np.diag_indices_from(K)] += self.noise_var + JITTER
        self.L = np.linalg.cholesky(K)
        self.alpha = np.linalg.solve(self.L.T, np.linalg.solve(self.L, self.y))

    def log_marginal_likelihood(self) -> float:
        n = len(self.y)
        return float(
            -0.5 * self.y @ self.alpha
            - np.log(np.diag(self.L)).sum()
            - 0.5 * n * math.log(2 * math.pi)
        )

    def posterior(self, Xstar) -> tuple[np.ndarray, np.ndarray]:
        """Latent posterior mean and variance at query points (original scale)."""
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=np.float64))
        Ks = _matern52(_sqdist(Xstar, self.X), self.length_scale, self.signal_var)
        mu = Ks @ self.alpha
        v = np.linalg.solve(self.L, Ks.T)
        var = self.signal_var - (v ** 2).sum(axis=0)
        var = np.maximum(var, 0.0)
        return mu * self.y_std + self.y_mean, var * self.y_std ** 2


def _neg_lml_and_grad(theta, sqd, y):
    """Negative log marginal likelihood and its gradient in the
    log-parameters (log length scale, log signal var, log noise var)."""
    ls, sv, nv = np.exp(theta)
    n = len(y)
    r = np.sqrt(np.maximum(sqd, 0.0)) / ls
    decay = np.exp(-SQRT5 * r)
    K0 = sv * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * decay  # noiseless kernel
    K = K0 + (nv + JITTER) * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e10, np.zeros(3)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    Kinv = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(n)))
    W = np.outer(alpha, alpha) - Kinv
    dK_dlls = sv * decay * (5.0 * r * r / 3.0) * (1.0 + SQRT5 * r)
    grads = np.array([
        0.5 * np.sum(W * dK_dlls),
        0.5 * np.sum(W * K0),
        0.5 * np.sum(W * (nv * np.eye(n))),
    ])
    return -lml, -grads


def gp_fit(points, values, restarts: int = 5, seed: int = 0) -> GpSurrogate:
    """Fit kernel hyperparameters by multi-start ascent of the marginal
    likelihood (L-BFGS on the log-parameters, analytic gradients)."""
    X = np.asarray(points, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if len(X) < 2:
        raise ValidationError("gp_fit needs at least 2 observations")
    y_mean = y.mean()
    y_std = y.std() or 1.0
    ys = (y - y_mean) / y_std
    sqd = _sqdist(X, X)

    bounds = [(math.log(1e-2), math.log(10.0)),
              (math.log(1e-4), math.log(1e3)),
              (math.log(1e-8), math.log(1.0))]
    rng = stream(seed, 1001)
    starts = [np.array([math.log(0.3), 0.0, math.log(1e-4)])]
    for _ in range(restarts - 1):
        starts.append(np.array([rng.uniform(lo, hi) for lo, hi in bounds]))
    best_theta, best_val = starts[0], math.inf
    for x0 in starts:
        res = optimize.minimize(_neg_lml_and_grad, x0, args=(sqd, ys), jac=True,
                                method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 50})
        if res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    ls, sv, nv = np.exp(best_theta)
    return GpSurrogate(X, y, length_scale=ls, signal_var=sv, noise_var=nv)


def expected_improvement(surrogate: GpSurrogate, candidate, best_so_far: float) -> float:
    """EI for minimization; 0 at zero-variance points that are not better."""
    mu, var = surrogate.posterior(np.atleast_2d(candidate))
    return float(_ei_vec(mu, var, best_so_far)[0])


def _ei_vec(mu: np.ndarray, var: np.ndarray, best: float) -> np.ndarray:
    sigma = np.sqrt(var)
    improve = best - mu
    out = np.maximum(improve, 0.0)
    ok = sigma > 1e-12
    z = np.zeros_like(mu)
    z[ok] = improve[ok] / sigma[ok]
    pdf = np.exp(-0.5 * z ** 2) / math.sqrt(2 * math.pi)
    out[ok] = improve[ok] * ndtr(z[ok]) + sigma[ok] * pdf[ok]
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

@dataclass
class Trial:
    config: dict
    objective: Optional[float]
    status: str                   # "ok" | "failed"
    seed: int
    duration: float = 0.0

    def to_json_dict(self):
        return {"config": self.config, "objective": self.objective,
                "status": self.status, "seed": self.seed, "duration": self.duration}


def _append_history(path, trial: Trial) -> None:
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(trial.to_json_dict(), sort_keys=True) + "\n")


def load_history(path) -> list[Trial]:
    trials = []
    if path is None or not os.path.exists(path):
        return trials
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            trials.append(Trial(config=d["config"], objective=d["objective"],
                                status=d["status"], seed=d["seed"],
                                duration=d.get("duration", 0.0)))
    return trials


def _run_trial(trainer: Callable, config: dict, trial_seed: int) -> Trial:
    t0 = time.time()
    try:
        objective = float(trainer(config, trial_seed))
        if not math.isfinite(objective):
            raise ValidationError(f"objective is not finite: {objective}")
        return Trial(config, objective, "ok", trial_seed, time.time() - t0)
    except Exception:  # a failed trial consumes budget but is excluded
        return Trial(config, None, "failed", trial_seed, time.time() - t0)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

def grid_search(
    dims: dict[str, Sequence],
    trainer: Callable[[dict, int], float],
    seed: int = 0,
    tie_order: Optional[Sequence[str]] = None,
) -> tuple[dict, list[Trial]]:
    """Evaluate every grid point; ties go to the smaller model.

    With the standard {heads, layers} grid the tie order prefers fewer
    layers, then fewer heads.
    """
    if not dims:
        raise ConfigError("grid_search needs at least one dimension")
    if tie_order is None:
        preferred = [n for n in ("layers", "heads") if n in dims]
        tie_order = preferred + sorted(set(dims) - set(preferred))
    names = sorted(dims)
    trials = []
    for combo in itertools.product(*(dims[n] for n in names)):
        config = dict(zip(names, combo))
        trials.append(_run_trial(trainer, config, seed))
    ok = [t for t in trials if t.status == "ok"]
    if not ok:
        raise ValidationError("every grid trial failed")
    best = min(ok, key=lambda t: (t.objective, tuple(t.config[n] for n in tie_order)))
    return best.config, trials


# ---------------------------------------------------------------------------
# Bayesian optimization
# ---------------------------------------------------------------------------

def default_n_init(n_points: int) -> int:
    return max(1, min(5, n_points // 3))


def bho_run(
    space: SearchSpace,
    trainer: Callable[[dict, int], float],
    n_points: int,
    n_init: Optional[int] = None,
    seed: int = 0,
    n_candidates: int = 1024,
    history_path=None,
) -> tuple[Trial, list[Trial]]:
    """Sequential BO: scrambled low-discrepancy initialization, then
    proposals maximizing expected improvement over random candidates.

    The JSON-lines history file is append-only and resumable: existing
    trials count against the budget and re-seed the surrogate.
    """
    if n_init is None:
        n_init = default_n_init(n_points)
    if n_init > n_points:
        # n_init == n_points degenerates to pure quasi-random search
        raise ConfigError("n_init cannot exceed n_points")
    history = load_history(history_path)
    sampler = qmc.Halton(d=space.n_dims, scramble=True, seed=int(stream(seed, 7).integers(2 ** 31)))
    init_points = sampler.random(n_init)
    cand_rng = stream(seed, 8)

    while len(history) < n_points:
        k = len(history)
        if k < n_init:
            u = init_points[k]
        else:
            done = [t for t in history if t.status == "ok"]
            if len(done) < 2:
                u = cand_rng.uniform(size=space.n_dims)
            else:
                X = np.stack([space.to_unit(t.config) for t in done])
                y = np.array([t.objective for t in done])
                surrogate = gp_fit(X, y, seed=seed + k)
                best = float(y.min())
                cands = cand_rng.uniform(size=(n_candidates, space.n_dims))
                mu, var = surrogate.posterior(cands)
                ei = _ei_vec(mu, var, best)
                u = cands[int(np.argmax(ei))]
        trial = _run_trial(trainer, space.from_unit(u), int(stream(seed, 9, k).integers(2 ** 31)))
        history.append(trial)
        _append_history(history_path, trial)

    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise ValidationError("every trial failed")
    best = min(ok, key=lambda t: t.objective)
    return best, history


def best_so_far_curve(history: Sequence[Trial]) -> list[float]:
    """Running minimum of completed objectives (for monotonicity checks)."""
    out = []
    cur = math.inf
    for t in history:
        if t.status == "ok":
            cur = min(cur, t.objective)
        out.append(cur)
    return out
