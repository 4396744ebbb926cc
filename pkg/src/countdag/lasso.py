"""l1-regularized Poisson regression with a log link.

The objective for response y and design X (intercept unpenalized) is

    f(b0, b) = (1/n) sum_i [ exp(b0 + <b, x_i>) - y_i (b0 + <b, x_i>) ]
               + lam * sum_k |b_k|

minimized by a proximal Newton outer loop (an exact weighted quadratic
model at the current point) whose subproblems are solved by cyclic
coordinate descent over a working set: the currently active coefficients
plus any zero coefficient whose gradient violates the subgradient bound.
Warm starts make a descending lambda path cheap.

Convergence is certified by the true KKT residual, not just by iterate
movement: a fit is returned only when the residual falls below the
configured tolerance (or below the looser acceptance bound when the
objective has stalled at float precision). The intercept is re-centred
exactly every iteration, so the fitted-mean identity

    mean(exp(eta_hat)) == mean(y)

holds to float round-off on every returned fit. The linear predictor is
clamped to +-clamp inside exp() during iterations; a fit that would
terminate while the clamp is active is reported divergent instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .simulate import make_rng

__all__ = [
    "ConvergenceError",
    "DivergenceError",
    "DegenerateFoldError",
    "SolverOptions",
    "LassoProblem",
    "LassoFit",
    "LambdaPath",
    "CvResult",
    "soft_threshold",
    "fit_poisson_lasso",
    "lambda_max",
    "lambda_path",
    "cv_select",
]


class ConvergenceError(RuntimeError):
    """Solver hit the outer iteration cap before certifying optimality."""

    def __init__(self, msg, intercept=None, coef=None, kkt_residual=None):
        super().__init__(msg)
        self.intercept = intercept
        self.coef = coef
        self.kkt_residual = kkt_residual


class DivergenceError(RuntimeError):
    """Linear predictor escaped the clamp: the fit is meaningless."""


class DegenerateFoldError(RuntimeError):
    """A CV training fold had no response variation even after reshuffling."""


def soft_threshold(z, gamma):
    """Proximal map of gamma * |.|; works on scalars and arrays."""
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and caps for the solver.

    inner_tol scales the quadratic-subproblem residual target, which is
    otherwise forced adaptively from the current KKT residual. kkt_accept
    is the largest residual tolerated when the objective has stopped
    moving; above it the solver raises instead of returning a bad fit.
    """

    max_outer: int = 200
    outer_tol: float = 1e-9
    inner_tol: float = 1e-7
    kkt_tol: float = 1e-8
    kkt_accept: float = 1e-6
    clamp: float = 30.0
    max_sweeps: int = 1000


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class LassoProblem:
    """Design matrix, count response, and per-column penalty flags.

    The design is stored column-major since the solver walks columns.
    Columns are not standardized.
    """

    design: np.ndarray
    response: np.ndarray
    penalized: np.ndarray | None = None

    def __post_init__(self):
        x = np.asfortranarray(np.asarray(self.design, dtype=np.float64))
        if x.ndim != 2:
            raise ValueError("design must be 2-d")
        y = np.ascontiguousarray(np.asarray(self.response, dtype=np.float64)).ravel()
        if y.shape[0] != x.shape[0]:
            raise ValueError(
                f"design has {x.shape[0]} rows but response has {y.shape[0]}"
            )
        if x.shape[0] < 1:
            raise ValueError("need at least one observation")
        if not np.all(np.isfinite(x)):
            raise ValueError("design contains nonfinite entries")
        if not np.all(np.isfinite(y)) or (y.size and y.min() < 0):
            raise ValueError("response must be finite and nonnegative")
        pen = self.penalized
        if pen is None:
            pen = np.ones(x.shape[1], dtype=bool)
        else:
            pen = np.asarray(pen, dtype=bool).ravel()
            if pen.shape[0] != x.shape[1]:
                raise ValueError("one penalty flag per column required")
        x.flags.writeable = False
        y.flags.writeable = False
        pen.flags.writeable = False
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "penalized", pen)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def q(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True)
class LassoFit:
    """A converged fit at one penalty level."""

    intercept: float
    coef: np.ndarray
    lam: float
    iterations: int
    kkt_residual: float
    objective: float
    objective_trace: tuple = ()

    def __post_init__(self):
        c = np.array(self.coef, dtype=np.float64)
        c.flags.writeable = False
        object.__setattr__(self, "coef", c)

    def predict_mean(self, design, clamp: float = DEFAULT_OPTIONS.clamp):
        eta = self.intercept + np.asarray(design, dtype=np.float64) @ self.coef
        return np.exp(np.clip(eta, -clamp, clamp))


@dataclass(frozen=True)
class LambdaPath:
    """Warm-started fits on a descending penalty grid."""

    lambdas: np.ndarray
    fits: tuple

    def fit_at(self, lam: float) -> LassoFit:
        idx = int(np.argmin(np.abs(self.lambdas - lam)))
        near = self.lambdas[idx]
        if abs(near - lam) > 1e-9 * max(1.0, abs(lam)):
            raise KeyError(f"lambda {lam} is not on the path grid")
        return self.fits[idx]


@dataclass(frozen=True)
class CvResult:
    """Cross-validation curve and the three selected penalty levels.

    lambda_band_lo <= lambda_min <= lambda_band_hi always holds;
    the band contains every grid value whose mean loss is within
    se_factor standard errors of the minimum.
    """

    lambdas: np.ndarray
    mean_loss: np.ndarray
    se_loss: np.ndarray
    lambda_min: float
    lambda_band_lo: float
    lambda_band_hi: float
    loss: str
    path: LambdaPath


def _objective(eta, mu, y, coef, lam, pen_mask):
    fit_term = float(np.mean(mu - y * eta))
    if lam > 0.0:
        return fit_term + lam * float(np.abs(coef[pen_mask]).sum())
    return fit_term


def _raise_clamped(eta, clamp):
    # one-sided: only positive eta can overflow exp(); negative saturation
    # is a representable rate-zero boundary with a finite penalized optimum
    worst = float(eta.max())
    if worst > clamp:
        raise DivergenceError(
            f"linear predictor reached {worst:.3g}, beyond the clamp "
            f"{clamp}; fit is divergent"
        )


def _kkt_residual(g, g0, coef, lam, pen_mask):
    r = abs(g0)
    if coef.size:
        active = coef != 0.0
        pen_active = active & pen_mask
        if pen_active.any():
            r = max(r, float(np.max(np.abs(g[pen_active] + lam * np.sign(coef[pen_active])))))
        pen_inactive = (~active) & pen_mask
        if pen_inactive.any():
            r = max(r, max(0.0, float(np.max(np.abs(g[pen_inactive]))) - lam))
        if (~pen_mask).any():
            r = max(r, float(np.max(np.abs(g[~pen_mask]))))
    return r


def _fit_core(x, y, lam, pen_mask, opts, theta0, coef):
    """Solve one penalty level in place; returns the fit tuple.

    x must be column-major float64; theta0/coef are the warm start and are
    not mutated.
    """
    n, q = x.shape
    ybar = float(y.mean())
    if ybar <= 0.0:
        raise ValueError("response is identically zero; no model can be fit")
    lam = float(lam)
    coef = coef.copy()
    clamp = opts.clamp

    # float noise floor for the absolute KKT residual on this data scale
    col_scale = float(np.max(np.mean(np.abs(x), axis=0))) if q else 1.0
    floor = 1e-13 * (1.0 + ybar) * max(1.0, col_scale)
    kkt_tol = max(opts.kkt_tol, floor)
    kkt_accept = max(opts.kkt_accept, 10.0 * floor)

    eta = theta0 + x @ coef if q else np.full(n, theta0)
    mu = np.exp(np.clip(eta, -clamp, clamp))
    obj = _objective(eta, mu, y, coef, lam, pen_mask)
    trace = [obj]
    kkt = math.inf
    stalled = 0
    iterations = 0
    x2 = None

    for _ in range(opts.max_outer):
        g = (mu - y) @ x / n if q else np.empty(0)
        g0 = float(mu.mean()) - ybar
        kkt = _kkt_residual(g, g0, coef, lam, pen_mask)
        if kkt <= kkt_tol:
            break
        if stalled >= 2 and kkt <= kkt_accept:
            break
        if stalled >= 2 and q:
            # on extreme column scales float64 cannot certify a raw-unit
            # residual, but the same residual over the per-column curvature
            # is the coefficient slack it stands for; accept when that slack
            # could not move any coefficient by more than float dust
            if x2 is None:
                x2 = x * x
            curv = mu @ x2 / n
            r = np.where(
                coef != 0.0,
                np.abs(g + lam * np.sign(coef)),
                np.maximum(np.abs(g) - lam, 0.0),
            )
            r = np.where(pen_mask, r, np.abs(g))
            slack = float(np.max(r / np.maximum(curv, 1e-12)))
            slack = max(slack, abs(g0) / max(float(mu.mean()), 1e-12))
            if slack <= 1e-9:
                break
        if stalled >= 5:
            _raise_clamped(eta, clamp)
            raise ConvergenceError(
                f"objective stalled with KKT residual {kkt:.3g} > {kkt_accept:.3g}",
                intercept=theta0,
                coef=coef,
                kkt_residual=kkt,
            )

        active = coef != 0.0
        working = np.flatnonzero(active | (pen_mask & (np.abs(g) > lam)) | ~pen_mask)

        theta0_prev = theta0
        coef_prev = coef.copy()
        eta_prev = eta

        # quadratic model at (theta0, coef): weighted least squares on the
        # working response z with weights mu. Only w*z is needed and
        # w*z = mu*eta + y - mu, so no division by mu appears.
        wbar = float(mu.mean())
        w = working.size
        if w:
            xw = x if w == q else x[:, working]
            wz = mu * (eta - 1.0) + y
            c0 = float(wz.mean())
            m = mu @ xw / n
            # profile the intercept out of the quadratic model by weighted
            # centering; the Gram downdate removes the rank-one component
            # shared by all nonnegative columns, which is what makes plain
            # Gauss-Seidel crawl on count designs
            c = wz @ xw / n - m * (c0 / wbar)
            gram = (xw * mu[:, None]).T @ xw / n - np.outer(m, m / wbar)
            diag = gram.diagonal().copy()
            amax = float(diag.max())
            # inexact-Newton forcing: the subproblem only needs to be solved
            # well under the current outer residual to keep superlinear steps
            quad_tol = max(
                0.01 * kkt, 0.02 * kkt_tol, 0.01 * opts.inner_tol,
                1e-13 * (1.0 + amax),
            )
            th = coef[working].copy()
            s = gram @ th
            pen_w = pen_mask[working]
            movable = diag > 0.0
            all_movable = bool(movable.all())

            def _quad_residual():
                # KKT residual of the quadratic subproblem; s == gram @ th
                if all_movable:
                    return _kkt_residual(s - c, 0.0, th, lam, pen_w)
                keep = movable
                return _kkt_residual(
                    (s - c)[keep], 0.0, th[keep], lam, pen_w[keep]
                )

            def _direct_solve():
                # Gauss-Seidel creeps on nearly collinear working columns;
                # with the current signs frozen the penalized quadratic is a
                # linear system on the active block, so solve it outright
                act = np.flatnonzero(th != 0.0)
                if act.size == 0:
                    return False
                signs = np.where(pen_w[act], np.sign(th[act]), 0.0)
                try:
                    sol = np.linalg.solve(
                        gram[np.ix_(act, act)], c[act] - lam * signs
                    )
                except np.linalg.LinAlgError:
                    return False
                if not np.all(np.isfinite(sol)):
                    return False
                if np.any(np.sign(sol) * np.sign(th[act]) <= 0.0):
                    return False
                th[act] = sol
                s[:] = gram[:, act] @ sol
                return True

            for _sweep in range(opts.max_sweeps):
                delta_max = 0.0
                for i in range(w):
                    aii = diag[i]
                    if aii <= 0.0:
                        continue
                    old = th[i]
                    rho = c[i] - (s[i] - aii * old)
                    if pen_w[i]:
                        new = math.copysign(max(abs(rho) - lam, 0.0), rho) / aii
                    else:
                        new = rho / aii
                    d = new - old
                    if d != 0.0:
                        th[i] = new
                        s += gram[:, i] * d
                        if abs(d) > delta_max:
                            delta_max = abs(d)
                if _quad_residual() <= quad_tol:
                    break
                if (_sweep & 3) == 1 or delta_max == 0.0:
                    if _direct_solve():
                        if _quad_residual() <= quad_tol:
                            break
                    elif delta_max == 0.0:
                        # nothing can move and the direct step was rejected
                        break
            coef[working] = th
            theta0 = (c0 - float(m @ th)) / wbar
            deta = (theta0 - theta0_prev) + xw @ (th - coef_prev[working])
        else:
            # intercept-only model has the closed-form optimum
            theta0 = theta0 + (ybar - wbar) / wbar
            deta = np.full(n, theta0 - theta0_prev)

        iterations += 1
        step = 1.0
        for _half in range(60):
            if step == 1.0:
                eta_new = eta_prev + deta
                coef_new = coef
                theta0_new = theta0
            else:
                eta_new = eta_prev + step * deta
                coef_new = coef_prev + step * (coef - coef_prev)
                theta0_new = theta0_prev + step * (theta0 - theta0_prev)
            mu_new = np.exp(np.clip(eta_new, -clamp, clamp))
            obj_new = _objective(eta_new, mu_new, y, coef_new, lam, pen_mask)
            if obj_new <= obj + 1e-12 * (1.0 + abs(obj)):
                break
            step *= 0.5
        coef = coef_new if step != 1.0 else coef
        theta0 = theta0_new if step != 1.0 else theta0
        eta = eta_new
        mu = mu_new

        # exact intercept recentre: makes mean(mu) == mean(y) hold exactly
        mu_bar = float(mu.mean())
        eta_max = float(eta.max())
        eta_amax = max(eta_max, -float(eta.min()))
        if mu_bar > 0.0 and mu_bar != ybar:
            shift = math.log(ybar / mu_bar)
            theta0 += shift
            eta = eta + shift
            if eta_amax + abs(shift) <= clamp:
                # no clamping anywhere, so exp shifts multiplicatively and
                # the objective moves by scalars only
                mu = mu * math.exp(shift)
                obj_new = obj_new - mu_bar + ybar - ybar * shift
            else:
                mu = np.exp(np.clip(eta, -clamp, clamp))
                obj_new = _objective(eta, mu, y, coef, lam, pen_mask)
            eta_max += shift

        rel = (obj - obj_new) / max(1.0, abs(obj))
        stalled = stalled + 1 if rel < opts.outer_tol else 0
        obj = obj_new
        trace.append(obj)
        if eta_max > clamp + 20.0:
            # transient positive clamping is fine, but this far past it
            # nothing convergent is left to find
            _raise_clamped(eta, clamp)
    else:
        g = (mu - y) @ x / n if q else np.empty(0)
        g0 = float(mu.mean()) - ybar
        kkt = _kkt_residual(g, g0, coef, lam, pen_mask)
        if kkt > kkt_accept:
            _raise_clamped(eta, clamp)
            raise ConvergenceError(
                f"no convergence in {opts.max_outer} outer iterations "
                f"(KKT residual {kkt:.3g})",
                intercept=theta0,
                coef=coef,
                kkt_residual=kkt,
            )

    _raise_clamped(eta, clamp)
    return theta0, coef, iterations, kkt, obj, tuple(trace)


def fit_poisson_lasso(
    problem: LassoProblem,
    lam: float,
    options: SolverOptions = DEFAULT_OPTIONS,
    warm: LassoFit | None = None,
) -> LassoFit:
    """Fit at a single penalty level.

    Parameters
    ----------
    problem : LassoProblem
    lam : float
        Penalty level, >= 0.
    options : SolverOptions
    warm : LassoFit, optional
        Starting point; defaults to the intercept-only model.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be finite and >= 0, got {lam}")
    ybar = float(problem.response.mean())
    if ybar <= 0.0:
        raise ValueError("response is identically zero; no model can be fit")
    if warm is not None:
        theta0, coef = float(warm.intercept), np.array(warm.coef, dtype=np.float64)
        if coef.shape[0] != problem.q:
            raise ValueError("warm start has the wrong number of coefficients")
    else:
        theta0, coef = math.log(ybar), np.zeros(problem.q)
    theta0, coef, iters, kkt, obj, trace = _fit_core(
        problem.design, problem.response, lam, problem.penalized, options, theta0, coef
    )
    return LassoFit(theta0, coef, float(lam), iters, kkt, obj, trace)


def lambda_max(problem: LassoProblem) -> float:
    """Smallest penalty that zeroes every penalized coefficient.

    Equals max_k |(1/n) sum_i x_ik (y_i - mean(y))| over penalized columns;
    0.0 for a constant response or an empty design.
    """
    y = problem.response
    centred = y - y.mean()
    if problem.q == 0 or not problem.penalized.any():
        return 0.0
    g = centred @ problem.design[:, problem.penalized] / problem.n
    return float(np.max(np.abs(g))) if g.size else 0.0


def _make_grid(lmax: float, grid_size: int, ratio: float) -> np.ndarray:
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    if not (0 < ratio <= 1):
        raise ValueError("ratio must be in (0, 1]")
    if lmax <= 0.0:
        return np.zeros(grid_size)
    if grid_size == 1:
        return np.array([lmax])
    return np.exp(np.linspace(math.log(lmax), math.log(lmax * ratio), grid_size))


def _path_core(x, y, grid, pen_mask, opts):
    """Warm-started fits along a descending grid; returns raw arrays."""
    q = x.shape[1]
    ybar = float(y.mean())
    theta0 = math.log(ybar) if ybar > 0 else 0.0
    coef = np.zeros(q)
    out = []
    for lam in grid:
        theta0, coef, iters, kkt, obj, trace = _fit_core(
            x, y, float(lam), pen_mask, opts, theta0, coef
        )
        out.append((theta0, coef.copy(), iters, kkt, obj, trace))
    return out


def lambda_path(
    problem: LassoProblem,
    grid_size: int = 50,
    ratio: float = 1e-3,
    options: SolverOptions = DEFAULT_OPTIONS,
) -> LambdaPath:
    """Fits along the standard log-spaced grid from lambda_max down to
    lambda_max * ratio, warm-starting each level at the previous solution."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    grid = _make_grid(lambda_max(problem), grid_size, ratio)
    raw = _path_core(
        problem.design, problem.response, grid, problem.penalized, options
    )
    fits = tuple(
        LassoFit(t0, c, float(lam), it, kkt, obj, trace)
        for lam, (t0, c, it, kkt, obj, trace) in zip(grid, raw)
    )
    return LambdaPath(grid, fits)


def _pointwise_loss(y, mu, loss: str):
    if loss == "deviance":
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
        return 2.0 * (term - (y - mu))
    if loss == "squared_error":
        return (y - mu) ** 2
    raise ValueError(f"unknown loss {loss!r}")


def _fold_assignment(n, folds, seed):
    perm = make_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % folds
    return fold_of


def cv_select(
    problem: LassoProblem,
    folds: int = 5,
    grid_size: int = 50,
    ratio: float = 1e-3,
    seed: int = 0,
    se_factor: float = 2.0,
    loss: str = "deviance",
    options: SolverOptions = DEFAULT_OPTIONS,
) -> CvResult:
    """K-fold selection of penalty levels on a shared grid.

    The grid comes from the full data. Per grid value the held-out loss
    (mean Poisson deviance per observation by default, squared error on
    request) is averaged over folds with its standard error; lambda_min
    minimizes the curve, and the band holds every lambda within
    se_factor standard errors of that minimum. lambda_band_lo and
    lambda_band_hi are the band's smallest and largest members.

    Fold assignment is a seeded permutation dealt round-robin. A training
    fold with an identically zero response triggers one reshuffle, then an
    error.

    Fold fits run at relaxed tolerances: only their held-out loss is
    consumed, and a 1e-4 KKT residual perturbs the loss curve by far less
    than one fold standard error. The returned path is fit on the full
    data at the caller's tolerances.
    """
    n = problem.n
    if not (2 <= folds <= n):
        raise ValueError(f"folds must be in [2, n={n}], got {folds}")
    if se_factor < 0:
        raise ValueError("se_factor must be >= 0")
    grid = _make_grid(lambda_max(problem), grid_size, ratio)

    fold_of = None
    for attempt in (0, 1):
        candidate = _fold_assignment(n, folds, seed + attempt)
        ok = all(
            problem.response[candidate != f].sum() > 0 for f in range(folds)
        )
        if ok:
            fold_of = candidate
            break
    if fold_of is None:
        raise DegenerateFoldError(
            "some training fold has an identically zero response, "
            "even after one reshuffle"
        )

    fold_options = replace(
        options,
        kkt_tol=max(options.kkt_tol, 1e-4),
        kkt_accept=max(options.kkt_accept, 1e-3),
        inner_tol=max(options.inner_tol, 1e-5),
        outer_tol=max(options.outer_tol, 1e-7),
    )
    losses = np.empty((folds, grid.size))
    x, y = problem.design, problem.response
    for f in range(folds):
        test = fold_of == f
        xtr = np.asfortranarray(x[~test])
        ytr = y[~test]
        raw = _path_core(xtr, ytr, grid, problem.penalized, fold_options)
        xte, yte = x[test], y[test]
        for gi, (t0, coef, *_rest) in enumerate(raw):
            eta = t0 + xte @ coef
            mu = np.exp(np.clip(eta, -options.clamp, options.clamp))
            losses[f, gi] = float(np.mean(_pointwise_loss(yte, mu, loss)))

    mean_loss = losses.mean(axis=0)
    se_loss = losses.std(axis=0, ddof=1) / math.sqrt(folds)
    i_min = int(np.argmin(mean_loss))
    band = mean_loss <= mean_loss[i_min] + se_factor * se_loss[i_min]
    in_band = np.flatnonzero(band)
    lam_hi = float(grid[in_band.min()])  # grid is descending
    lam_lo = float(grid[in_band.max()])
    path = (
        lambda_path(problem, grid_size, ratio, options)
        if grid_size >= 2
        else LambdaPath(
            grid,
            (fit_poisson_lasso(problem, float(grid[0]), options),),
        )
    )
    return CvResult(
        lambdas=grid,
        mean_loss=mean_loss,
        se_loss=se_loss,
        lambda_min=float(grid[i_min]),
        lambda_band_lo=lam_lo,
        lambda_band_hi=lam_hi,
        loss=loss,
        path=path,
    )
