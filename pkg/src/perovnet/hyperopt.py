"""Gaussian-process Bayesian optimization of training hyperparameters.

The surrogate is a zero-mean GP on standardized objectives with an ARD
squared-exponential kernel over the unit cube (log dimensions are warped
before scaling).  Kernel hyperparameters maximize the log marginal
likelihood from several seeded starts.  New points maximize expected
improvement for minimization.

``tune`` is resumable: every finished trial is appended to a CSV log and
proposal ``k`` depends only on ``(seed, k, trials[:k])``, so restarting from
the log reproduces the proposals of an uninterrupted run.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm

from .sampling import sample_unit

OK, DIVERGED, TIMEOUT, ERROR = "ok", "diverged", "timeout", "error"


class HyperoptError(RuntimeError):
    pass


class TrialTimeout(Exception):
    """Raised by an evaluator that ran past its time budget."""


# ---------------------------------------------------------------- space


@dataclass(frozen=True)
class HyperDim:
    name: str
    lower: float
    upper: float
    scale: str = "linear"
    integer: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"{self.name}: scale must be linear or log")
        if self.scale == "log" and self.lower <= 0:
            raise ValueError(f"{self.name}: log-scaled bounds must be > 0")

    def to_unit(self, x):
        x = np.asarray(x, dtype=float)
        if self.scale == "log":
            return (np.log(x) - math.log(self.lower)) / (math.log(self.upper) - math.log(self.lower))
        return (x - self.lower) / (self.upper - self.lower)

    def from_unit(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        if self.scale == "log":
            x = np.exp(math.log(self.lower) + u * (math.log(self.upper) - math.log(self.lower)))
        else:
            x = self.lower + u * (self.upper - self.lower)
        x = np.clip(x, self.lower, self.upper)
        if self.integer:
            x = np.clip(np.round(x), math.ceil(self.lower), math.floor(self.upper))
        return x


@dataclass(frozen=True)
class HyperSpace:
    """Box of hyperparameters; ``frozen`` pins some of them to fixed values."""

    dims: tuple
    frozen: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("hyperparameter names must be unique")
        unknown = set(self.frozen) - set(names)
        if unknown:
            raise ValueError(f"cannot freeze unknown hyperparameters {sorted(unknown)}")
        if len(self.frozen) == len(names):
            raise ValueError("at least one hyperparameter must remain free")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def free(self) -> list[HyperDim]:
        return [d for d in self.dims if d.name not in self.frozen]

    def from_unit(self, u) -> dict:
        """Free-dimension unit vector -> full natural parameter dict (rounded)."""
        out, it = {}, iter(np.asarray(u, dtype=float))
        for d in self.dims:
            if d.name in self.frozen:
                out[d.name] = float(self.frozen[d.name])
            else:
                out[d.name] = float(d.from_unit(next(it)))
        return out

    def to_unit(self, params: dict) -> np.ndarray:
        return np.array([float(d.to_unit(params[d.name])) for d in self.free])

    def snap(self, u) -> np.ndarray:
        """Round-trip through natural units so integer dims land on grid points."""
        return self.to_unit(self.from_unit(u))

    def with_frozen(self, **values) -> "HyperSpace":
        return replace(self, frozen={**self.frozen, **values})


def default_space() -> HyperSpace:
    """Bounds for the seven tuned training hyperparameters."""
    return HyperSpace(
        (
            HyperDim("section_depth", 1, 7, integer=True),
            HyperDim("initial_learning_rate", 1e-4, 1e-1, scale="log"),
            HyperDim("momentum", 0.5, 0.99),
            HyperDim("mini_batch_size", 8, 128, integer=True),
            HyperDim("lr_drop_factor", 0.1, 1.0),
            HyperDim("lr_drop_period", 5, 50, integer=True),
            HyperDim("l2_coefficient", 1e-6, 1e-2, scale="log"),
        )
    )


# ---------------------------------------------------------------- trials


@dataclass
class Trial:
    index: int
    params: dict
    objective: float = math.nan
    status: str = OK
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OK and math.isfinite(self.objective)


def append_trial(path, space: HyperSpace, trial: Trial) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["trial", *space.names, "objective", "status", "seconds"])
        w.writerow(
            [trial.index]
            + [repr(float(trial.params[n])) for n in space.names]
            + [repr(float(trial.objective)), trial.status, f"{trial.seconds:.3f}"]
        )


def read_trials(path, space: HyperSpace) -> list[Trial]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return []
    header = rows[0]
    expected = ["trial", *space.names, "objective", "status", "seconds"]
    if header != expected:
        raise HyperoptError(f"{path}: trial log header {header} does not match the search space")
    trials = []
    for r in rows[1:]:
        params = {n: float(v) for n, v in zip(space.names, r[1:-3])}
        trials.append(Trial(int(r[0]), params, float(r[-3]), r[-2], float(r[-1])))
    for i, t in enumerate(trials):
        if t.index != i:
            raise HyperoptError(f"{path}: trial indices are not contiguous from 0")
    return trials


# ---------------------------------------------------------------- surrogate


def _se_kernel(A, B, sf2, ell):
    d = (A[:, None, :] - B[None, :, :]) / ell
    return sf2 * np.exp(-0.5 * np.sum(d * d, axis=-1))


@dataclass
class GPSurrogate:
    """Fitted GP; inputs in the unit cube, objectives standardized internally."""

    X: np.ndarray
    y: np.ndarray  # standardized
    y_mean: float
    y_std: float
    signal_var: float
    length_scales: np.ndarray
    noise_var: float
    jitter: float = 0.0
    _chol: tuple = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        K = _se_kernel(self.X, self.X, self.signal_var, self.length_scales)
        n = len(self.X)
        jitter = self.jitter
        while True:
            try:
                self._chol = cho_factor(K + (self.noise_var + jitter) * np.eye(n), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10, 1e-12)
                if jitter > 1e-2:
                    raise HyperoptError("kernel matrix is not positive definite even with jitter")
        self.jitter = jitter
        self._alpha = cho_solve(self._chol, self.y)

    def predict(self, Xq, standardized: bool = False):
        """Posterior mean and variance at ``Xq`` (objective units by default)."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = _se_kernel(Xq, self.X, self.signal_var, self.length_scales)
        mu = Ks @ self._alpha
        v = solve_triangular(self._chol[0], Ks.T, lower=True)
        var = self.signal_var - np.sum(v * v, axis=0)
        # below this the difference is cancellation noise, not uncertainty
        var = np.where(var > 1e-8 * self.signal_var, var, 0.0)
        if standardized:
            return mu, var
        return self.y_mean + self.y_std * mu, var * self.y_std**2

    def expected_improvement(self, Xq, best):
        mu, var = self.predict(Xq)
        return expected_improvement(mu, np.sqrt(var), best)


def _neg_log_marginal(theta, X, y, fixed_noise):
    """Negative log marginal likelihood and its gradient in log-parameters."""
    n, dim = X.shape
    sf2 = math.exp(theta[0])
    ell = np.exp(theta[1 : 1 + dim])
    noise = fixed_noise if fixed_noise is not None else math.exp(theta[1 + dim])
    diff = (X[:, None, :] - X[None, :, :]) / ell
    sq = diff * diff
    Kf = sf2 * np.exp(-0.5 * sq.sum(-1))
    K = Kf + (noise + 1e-10) * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), y)
    nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * math.log(2 * math.pi)
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty_like(theta)
    grad[0] = -0.5 * np.sum(W * Kf)
    for d in range(dim):
        grad[1 + d] = -0.5 * np.sum(W * Kf * sq[:, :, d])
    if fixed_noise is None:
        grad[1 + dim] = -0.5 * noise * np.trace(W)
    return float(nll), grad


def fit_surrogate(trials, space: HyperSpace | None = None, seed: int = 0, noise_var=None,
                  restarts: int = 5) -> GPSurrogate:
    """Fit the GP to a trial history.

    ``trials`` is a list of :class:`Trial` (needs ``space`` to warp) or of
    ``(unit_vector, objective)`` pairs.  Non-ok trials are imputed at the
    worst ok objective.  ``noise_var`` fixes the noise variance (in
    standardized units); by default it is fitted too.
    """
    X, y, failed = [], [], []
    for t in trials:
        if isinstance(t, Trial):
            X.append(space.to_unit(t.params))
            y.append(t.objective if t.ok else math.nan)
        else:
            X.append(np.asarray(t[0], dtype=float))
            y.append(float(t[1]))
    X = np.array(X, dtype=float)
    y = np.array(y, dtype=float)
    ok = np.isfinite(y)
    if ok.sum() == 0:
        raise HyperoptError("cannot fit surrogate: all trials failed")
    if ok.sum() < 2:
        raise HyperoptError("cannot fit surrogate: need at least 2 successful trials")
    y[~ok] = y[ok].max()
    if np.all(np.ptp(X, axis=0) == 0):
        raise HyperoptError("cannot fit surrogate: all trial inputs are identical")
    y_mean = float(y.mean())
    y_std = float(y.std()) or 1.0
    ys = (y - y_mean) / y_std

    dim = X.shape[1]
    bounds = [(math.log(1e-2), math.log(20.0))] + [(math.log(0.03), math.log(10.0))] * dim
    if noise_var is None:
        bounds.append((math.log(1e-8), math.log(1.0)))
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(X), 7]))
    starts = [np.array([0.0] + [math.log(0.3)] * dim + ([math.log(1e-3)] if noise_var is None else []))]
    for _ in range(restarts - 1):
        starts.append(np.array([rng.uniform(lo, hi) for lo, hi in bounds]))
    best = None
    for th0 in starts:
        res = minimize(_neg_log_marginal, th0, args=(X, ys, noise_var), jac=True,
                       method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    th = best.x
    return GPSurrogate(
        X=X,
        y=ys,
        y_mean=y_mean,
        y_std=y_std,
        signal_var=math.exp(th[0]),
        length_scales=np.exp(th[1 : 1 + dim]),
        noise_var=noise_var if noise_var is not None else math.exp(th[1 + dim]),
    )


def expected_improvement(mu, sigma, best):
    """EI for minimization; reduces to ``max(best - mu, 0)`` where sigma == 0."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = best - mu
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, imp / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0, imp * norm.cdf(z) + sigma * norm.pdf(z), np.maximum(imp, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def propose(surrogate: GPSurrogate, space: HyperSpace, rng, best=None, exclude=(),
            n_candidates: int = 1000, n_refine: int = 10) -> dict:
    """Next parameter dict maximizing EI over the snapped unit cube.

    Candidates equal (after integer snapping) to a row of ``exclude`` are
    skipped; if every candidate has zero EI a random point is returned.
    """
    dim = len(space.free)
    if best is None:
        best = float(surrogate.y_mean + surrogate.y_std * surrogate.y.min())
    excl = {tuple(np.round(space.snap(u), 12)) for u in exclude}

    cand = rng.random((n_candidates, dim))
    ei = surrogate.expected_improvement(cand, best)
    top = cand[np.argsort(-ei, kind="stable")[:n_refine]]
    refined = []
    for u0 in top:
        res = minimize(lambda u: -surrogate.expected_improvement(u[None], best)[0], u0,
                       method="L-BFGS-B", bounds=[(0.0, 1.0)] * dim)
        refined.append(np.clip(res.x, 0, 1))
    pool = np.vstack([np.array(refined), cand])
    snapped = np.array([space.snap(u) for u in pool])
    scores = surrogate.expected_improvement(snapped, best)
    for i in np.argsort(-scores, kind="stable"):
        if scores[i] <= 0:
            break
        if tuple(np.round(snapped[i], 12)) not in excl:
            return space.from_unit(snapped[i])
    return space.from_unit(rng.random(dim))


# ---------------------------------------------------------------- loop


@dataclass
class TuneResult:
    best: Trial
    history: list

    @property
    def best_so_far(self) -> list[float]:
        out, cur = [], math.inf
        for t in self.history:
            if t.ok:
                cur = min(cur, t.objective)
            out.append(cur)
        return out


def _classify(exc) -> str:
    from .nn.layers import NumericalError

    if isinstance(exc, TrialTimeout):
        return TIMEOUT
    if isinstance(exc, (NumericalError, FloatingPointError, OverflowError)):
        return DIVERGED
    return ERROR


def tune(
    space: HyperSpace,
    budget: int,
    evaluator: Callable,
    seed: int = 0,
    log_path=None,
    warmup: int = 3,
    on_trial: Callable | None = None,
    noise_var=None,
) -> TuneResult:
    """Minimize ``evaluator(params) -> objective`` over ``space``.

    The evaluator may also return ``(objective, extra)``; ``extra`` is
    handed to ``on_trial(trial, extra)`` together with the finished trial.
    Exceptions raised by the evaluator are recorded as failed trials.
    """
    if budget < warmup or budget < 3:
        raise ValueError(f"budget must be >= {max(warmup, 3)}")
    history = read_trials(log_path, space) if log_path else []
    if len(history) > budget:
        history = history[:budget]
    dim = len(space.free)
    warm_u = sample_unit("sobol", dim, warmup, seed)

    for k in range(len(history), budget):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        if k < warmup:
            params = space.from_unit(warm_u[k])
        else:
            done = [space.to_unit(t.params) for t in history]
            try:
                sur = fit_surrogate(history, space, seed=seed, noise_var=noise_var)
                ok_obj = [t.objective for t in history if t.ok]
                params = propose(sur, space, rng, best=min(ok_obj), exclude=done)
            except HyperoptError:
                params = space.from_unit(rng.random(dim))
        t0 = time.perf_counter()
        extra = None
        try:
            res = evaluator(dict(params))
            if isinstance(res, tuple):
                res, extra = res
            obj = float(res)
            status = OK if math.isfinite(obj) else DIVERGED
        except Exception as exc:  # evaluator failures become failed trials
            obj, status = math.nan, _classify(exc)
        if status != OK:
            obj = math.nan
        trial = Trial(k, params, obj, status, time.perf_counter() - t0)
        history.append(trial)
        if log_path:
            append_trial(log_path, space, trial)
        if on_trial is not None:
            on_trial(trial, extra)

    ok = [t for t in history if t.ok]
    if not ok:
        raise HyperoptError("every trial failed")
    best = min(ok, key=lambda t: (t.objective, t.index))
    return TuneResult(best, history)
