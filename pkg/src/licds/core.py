"""Local model selection, partition search, and model scoring."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .integrate import BlowUpError, Trajectory, integrate, rk4_states, step_count
from .localmodel import (
    COMPLEXITY_MODES,
    LocalModel,
    MonomialBasis,
    TaylorFitError,
    basis_size,
    taylor_coefficients,
)
from .systems import DynamicsFn

LAMBDA_FLOOR = 1e-12
LAMBDA_RULES = ("auto", "balance")


class LicdsError(RuntimeError):
    pass


def _threads():
    try:
        return max(1, int(os.environ.get("LICDS_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Map preserving input order; at most ``LICDS_THREADS`` workers."""
    items = list(items)
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class LicdsParams:
    """Search settings.

    ``lam`` is a nonnegative weight, ``"auto"`` (constant-model error over
    the horizon divided by ``k_max``) or ``"balance"`` (complexity and error
    terms of the optimal code made equal). ``complexity`` selects what ``k``
    counts, see :func:`licds.localmodel.basis_size`.
    """

    T_global: float
    dt: float
    lam: Union[float, str] = "auto"
    k_max: int = 8
    m_max: int = 5
    complexity: str = "order"

    def __post_init__(self):
        if self.k_max < 1 or self.m_max < 1:
            raise ValueError("k_max and m_max must be >= 1")
        if self.complexity not in COMPLEXITY_MODES:
            raise ValueError(f"complexity must be one of {COMPLEXITY_MODES}")
        n = step_count(self.T_global, self.dt)
        if n < self.m_max:
            raise ValueError("T_global/dt must be at least m_max")
        if self.lam not in LAMBDA_RULES:
            lam = float(self.lam)
            if not (lam >= 0 and math.isfinite(lam)):
                raise ValueError("lambda must be a nonnegative real, 'auto' or 'balance'")

    @property
    def n_steps(self):
        return step_count(self.T_global, self.dt)

    def with_lambda(self, lam):
        return LicdsParams(self.T_global, self.dt, lam, self.k_max, self.m_max, self.complexity)

    def to_dict(self):
        return {"T_global": self.T_global, "dt": self.dt, "lambda": self.lam,
                "k_max": self.k_max, "m_max": self.m_max, "complexity": self.complexity}


@dataclass(eq=False)
class PartitionResult:
    index: int
    k_star: int
    L_star: float
    model: LocalModel
    restart_state: np.ndarray
    local_states: Trajectory
    start: int  # first truth sample of the window
    stop: int  # last truth sample of the window (inclusive)
    errors: List[float] = field(default_factory=list)  # integral error for k = 1..k_max

    def to_dict(self):
        return {
            "index": self.index,
            "k_star": self.k_star,
            "L_star": self.L_star,
            "restart_state": self.restart_state.tolist(),
            "model": self.model.to_dict(),
            "start": self.start,
            "stop": self.stop,
            "errors": [_finite_or_none(e) for e in self.errors],
        }


@dataclass(eq=False)
class LicdsResult:
    m_star: int
    L_total_star: float
    k_total_star: int
    partitions: List[PartitionResult]
    cost_curve: Dict[int, float]
    k_curve: Dict[int, int]
    approx_states: Trajectory
    lam: float
    complexity: str = "order"
    partitions_by_m: Dict[int, List[PartitionResult]] = field(default_factory=dict, repr=False)

    @property
    def k_vector(self):
        return [p.k_star for p in self.partitions]

    @property
    def dim(self):
        return self.approx_states.dim

    def to_dict(self):
        return {
            "m_star": self.m_star,
            "L_total_star": self.L_total_star,
            "k_total_star": self.k_total_star,
            "lambda": self.lam,
            "complexity": self.complexity,
            "cost_curve": {str(m): _finite_or_none(v) for m, v in self.cost_curve.items()},
            "k_curve": {str(m): v for m, v in self.k_curve.items()},
            "partitions": [p.to_dict() for p in self.partitions],
        }

    def cost_curve_csv(self):
        lines = ["m,L_total,k_total"]
        for m in sorted(self.cost_curve):
            lines.append(f"{m},{self.cost_curve[m]:.17g},{self.k_curve[m]}")
        return "\n".join(lines) + "\n"


def _finite_or_none(v):
    return v if math.isfinite(v) else None


def window_bounds(n_steps, m):
    """Sample indices delimiting ``m`` (nearly) equal windows of ``n_steps`` steps."""
    # round-half-up of j * n_steps / m keeps windows aligned to the grid
    return [(2 * j * n_steps + m) // (2 * m) for j in range(m + 1)]


def trapezoid(values, dt):
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return 0.0
    return float(dt * (values.sum() - 0.5 * (values[0] + values[-1])))


def integral_error(approx, truth, dt):
    """Trapezoid integral over time of the Euclidean state error."""
    with np.errstate(over="ignore", invalid="ignore"):
        return trapezoid(np.linalg.norm(np.asarray(approx) - np.asarray(truth), axis=1), dt)


def _rollout_error(model, truth_win, dt):
    try:
        states = rk4_states(model, truth_win[0], truth_win.shape[0] - 1, dt)
    except BlowUpError:
        return math.inf, None
    err = integral_error(states, truth_win, dt)
    if not math.isfinite(err):
        return math.inf, None
    return err, states


@dataclass(eq=False)
class _Window:
    start: int
    stop: int
    errors: List[float]
    models: list
    rollouts: list


def _batched_rollouts(models, win, dt):
    """RK4 rollouts of several local models sharing one working point, in lockstep.

    Returns ``(errors, states)`` per model; diverging rollouts give
    ``(inf, None)``.
    """
    live = [i for i, m in enumerate(models) if m is not None]
    errors = [math.inf] * len(models)
    states = [None] * len(models)
    if not live:
        return errors, states
    dim = win.shape[1]
    biggest = max((models[i] for i in live), key=lambda m: m.k)
    E = np.array(biggest.basis.exponents)
    C = np.zeros((len(live), dim, biggest.k))
    for row, i in enumerate(live):
        C[row, :, :models[i].k] = models[i].coeffs
    x_star = biggest.working_point
    powers = np.arange(E.max() + 1)
    axes = np.arange(dim)

    def field(X):
        pw = (X - x_star)[:, :, None] ** powers  # (K, n, degree + 1)
        mono = np.prod(pw[:, axes, E], axis=2)  # (K, S)
        return np.einsum("kns,ks->kn", C, mono)

    n_steps = win.shape[0] - 1
    out = np.empty((n_steps + 1, len(live), dim))
    X = np.broadcast_to(win[0], (len(live), dim)).copy()
    out[0] = X
    half = 0.5 * dt
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            k1 = field(X)
            k2 = field(X + half * k1)
            k3 = field(X + half * k2)
            k4 = field(X + dt * k3)
            X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[i + 1] = X
    for row, i in enumerate(live):
        traj = out[:, row, :]
        if not np.all(np.isfinite(traj)):
            continue
        err = integral_error(traj, win, dt)
        if math.isfinite(err):
            errors[i], states[i] = err, traj.copy()
    return errors, states


def _fit_window(f, truth, i0, i1, k_max, complexity):
    """Integral error, model and rollout for every complexity 1..k_max on one window."""
    win = truth.states[i0:i1 + 1]
    x0 = win[0]
    sizes = [basis_size(f.dim, k, complexity) for k in range(1, k_max + 1)]
    try:
        all_coeffs = taylor_coefficients(f, x0, sizes[-1])
    except TaylorFitError:
        # per-k fits so that low orders survive a bad high-order term
        all_coeffs = None
    models = []
    for size in sizes:
        if all_coeffs is None:
            try:
                coeffs = taylor_coefficients(f, x0, size)
            except TaylorFitError:
                models.append(None)
                continue
        else:
            coeffs = all_coeffs[:, :size]
        models.append(LocalModel(x0, MonomialBasis(f.dim, size), coeffs))
    errors, rollouts = _batched_rollouts(models, win, truth.dt)
    return _Window(i0, i1, errors, models, rollouts)


def _best_k(errors, lam):
    """1-based argmin of ``lam*k + errors[k-1]``; smallest k on ties; None if all inf."""
    best, best_cost = None, math.inf
    for k, e in enumerate(errors, start=1):
        cost = lam * k + e
        if cost < best_cost:
            best, best_cost = k, cost
    return best, best_cost


def _partition(w, truth, lam, index):
    k, cost = _best_k(w.errors, lam)
    if k is None:
        raise LicdsError(f"every candidate model diverged on window {index}")
    return PartitionResult(
        index=index,
        k_star=k,
        L_star=cost,
        model=w.models[k - 1],
        restart_state=truth.states[w.start].copy(),
        local_states=Trajectory(w.rollouts[k - 1], truth.dt, truth.t0 + w.start * truth.dt),
        start=w.start,
        stop=w.stop,
        errors=list(w.errors),
    )


def _time_index(truth, t):
    r = (t - truth.t0) / truth.dt
    i = round(r)
    if abs(r - i) > 1e-6 or not 0 <= i < len(truth):
        raise ValueError(f"time {t} is not on the truth grid")
    return i


def _check_x0(x0, truth, i0):
    if x0 is not None and not np.array_equal(np.asarray(x0, dtype=float).reshape(-1),
                                             truth.states[i0]):
        raise ValueError("x0 must equal the truth sample at the window start")


def local_cost(f: DynamicsFn, truth: Trajectory, window: Tuple[float, float], x0=None,
               k: int = 1, lam: float = 0.0, complexity: str = "order"):
    """Cost ``lam*k + int ||x_local - x|| dt`` of the complexity-k local model.

    The model is expanded around the truth sample at the window start.
    Returns ``(L, model, rollout)``; a diverging rollout yields ``L = inf``
    and ``rollout = None``.
    """
    i0, i1 = _time_index(truth, window[0]), _time_index(truth, window[1])
    _check_x0(x0, truth, i0)
    win = truth.states[i0:i1 + 1]
    size = basis_size(f.dim, k, complexity)
    model = LocalModel(win[0], MonomialBasis(f.dim, size), taylor_coefficients(f, win[0], size))
    err, states = _rollout_error(model, win, truth.dt)
    rollout = None if states is None else Trajectory(states, truth.dt, truth.t0 + i0 * truth.dt)
    return lam * k + err, model, rollout


def lms(f: DynamicsFn, truth: Trajectory, window_index: int, T_local: float, lam: float,
        x0=None, k_max: int = 8, complexity: str = "order") -> PartitionResult:
    """Best local complexity on window ``[i*T_local, (i+1)*T_local]`` (0-based ``i``)."""
    t_start = truth.t0 + window_index * T_local
    i0 = _time_index(truth, t_start)
    i1 = _time_index(truth, t_start + T_local)
    _check_x0(x0, truth, i0)
    w = _fit_window(f, truth, i0, i1, k_max, complexity)
    return _partition(w, truth, lam, window_index)


def _check_truth(truth, params):
    if not math.isclose(truth.dt, params.dt, rel_tol=1e-9):
        raise ValueError("truth sampling interval differs from params.dt")
    if len(truth) < params.n_steps + 1:
        raise ValueError("truth does not cover [0, T_global]")


def _error_tables(f, truth, params):
    n = params.n_steps

    def run(m):
        b = window_bounds(n, m)
        return [_fit_window(f, truth, b[j], b[j + 1], params.k_max, params.complexity)
                for j in range(m)]

    return dict(zip(range(1, params.m_max + 1), parallel_map(run, range(1, params.m_max + 1))))


def _curve(tables, lam):
    """Optimal per-m cost and complexity for a given lambda from the error tables."""
    curve = {}
    for m, windows in tables.items():
        costs, ks = [], 0
        for w in windows:
            k, c = _best_k(w.errors, lam)
            if k is None:
                costs, ks = None, 0
                break
            costs.append(c)
            ks += k
        curve[m] = (math.inf, 0) if costs is None else (math.fsum(costs), ks)
    return curve


def _argmin_m(curve):
    finite = [m for m, (c, _) in curve.items() if math.isfinite(c)]
    if not finite:
        return None
    return min(finite, key=lambda m: (curve[m][0], m))


def _ratio_lambda(tables, k_max):
    e1 = tables[1][0].errors[0]
    if not math.isfinite(e1):
        raise LicdsError("constant-model error is not finite; cannot calibrate lambda")
    return max(e1 / k_max, LAMBDA_FLOOR)


def _balance_lambda(tables, k_max, iters=80):
    """Lambda at which complexity and error terms of the optimal code are equal."""
    e1 = _ratio_lambda(tables, 1)

    def gap(lam):
        curve = _curve(tables, lam)
        m = _argmin_m(curve)
        if m is None:
            raise LicdsError("no partition count produced a finite cost")
        cost, k = curve[m]
        return lam * k - (cost - lam * k)

    lo, hi = math.log(max(e1 * 1e-9, LAMBDA_FLOOR)), math.log(max(e1, LAMBDA_FLOOR))
    if gap(math.exp(lo)) >= 0:
        return math.exp(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if gap(math.exp(mid)) >= 0:
            hi = mid
        else:
            lo = mid
    return max(math.exp(hi), LAMBDA_FLOOR)


def _resolve(tables, params):
    if params.lam == "auto":
        return _ratio_lambda(tables, params.k_max)
    if params.lam == "balance":
        return _balance_lambda(tables, params.k_max)
    return float(params.lam)


def calibrate_lambda(f: DynamicsFn, truth: Trajectory, params: LicdsParams) -> float:
    """Resolve ``params.lam`` when it is a rule name.

    ``"auto"``: E1 / k_max, with E1 the integral error of the constant model
    over the whole horizon. ``"balance"``: the lambda for which the
    complexity term of the optimal code equals its error term. Both are
    floored at 1e-12.
    """
    _check_truth(truth, params)
    if params.lam == "balance":
        return _balance_lambda(_error_tables(f, truth, params), params.k_max)
    win = truth.states[: params.n_steps + 1]
    model = LocalModel(win[0], MonomialBasis(f.dim, 1), taylor_coefficients(f, win[0], 1))
    e1, _ = _rollout_error(model, win, truth.dt)
    if not math.isfinite(e1):
        raise LicdsError("constant-model error is not finite; cannot calibrate lambda")
    return max(e1 / params.k_max, LAMBDA_FLOOR)


def licds(f: DynamicsFn, truth: Trajectory, params: LicdsParams) -> LicdsResult:
    """Search m = 1..m_max equal partitions; each window restarts from the truth."""
    _check_truth(truth, params)
    tables = _error_tables(f, truth, params)
    lam = _resolve(tables, params)
    curve = _curve(tables, lam)
    m_star = _argmin_m(curve)
    if m_star is None:
        raise LicdsError("no partition count produced a finite cost")
    by_m = {}
    for m, windows in tables.items():
        if math.isfinite(curve[m][0]):
            by_m[m] = [_partition(w, truth, lam, j) for j, w in enumerate(windows)]
    parts = by_m[m_star]
    return LicdsResult(
        m_star=m_star,
        L_total_star=curve[m_star][0],
        k_total_star=curve[m_star][1],
        partitions=parts,
        cost_curve={m: c for m, (c, _) in curve.items()},
        k_curve={m: k for m, (_, k) in curve.items()},
        approx_states=_concat(parts, truth),
        lam=lam,
        complexity=params.complexity,
        partitions_by_m=by_m,
    )


def _concat(parts, truth):
    # each window keeps its restart sample; the shared boundary sample comes
    # from the following window
    rows = [p.local_states.states[:-1] for p in parts[:-1]]
    rows.append(parts[-1].local_states.states)
    return Trajectory(np.concatenate(rows), truth.dt, truth.t0)


def check_l2_bound(f: DynamicsFn, f_hat: DynamicsFn, x0, T: float, dt: float):
    """Numerical instance of ||x - x_hat||^2 <= T^2 ||f(x) - f_hat(x)||^2 (L2 in time)."""
    x = integrate(f, x0, 0.0, T, dt).states
    xh = integrate(f_hat, x0, 0.0, T, dt).states
    lhs = trapezoid(np.sum((x - xh) ** 2, axis=1), dt)
    gap = np.array([f.eval(s) - f_hat.eval(s) for s in x])
    rhs = T * T * trapezoid(np.sum(gap ** 2, axis=1), dt)
    holds = lhs <= rhs * (1 + 1e-6) + 1e-12
    return lhs, rhs, bool(holds)


def check_l2_bound_two_path(f: DynamicsFn, f_hat: DynamicsFn, x0, T: float, dt: float):
    """Same lhs against ``T^2 ||f(x) - f_hat(x_hat)||^2``, the derivative of ``x - x_hat``.

    This is the form the integral inequality guarantees for any pair of
    fields; evaluating ``f_hat`` on the true path instead (``check_l2_bound``)
    can fail when ``f_hat`` is expansive.
    """
    x = integrate(f, x0, 0.0, T, dt).states
    xh = integrate(f_hat, x0, 0.0, T, dt).states
    lhs = trapezoid(np.sum((x - xh) ** 2, axis=1), dt)
    gap = np.array([f.eval(a) - f_hat.eval(b) for a, b in zip(x, xh)])
    rhs = T * T * trapezoid(np.sum(gap ** 2, axis=1), dt)
    return lhs, rhs, bool(lhs <= rhs * (1 + 1e-6) + 1e-12)


def check_l1_distances(f: DynamicsFn, f_hat: DynamicsFn, x0, T: float, dt: float):
    """L1-in-time distances ``(||f(x) - f_hat(x)||, ||x - x_hat||)`` along the true path."""
    x = integrate(f, x0, 0.0, T, dt).states
    xh = integrate(f_hat, x0, 0.0, T, dt).states
    gap = np.array([f.eval(s) - f_hat.eval(s) for s in x])
    dyn_l1 = trapezoid(np.linalg.norm(gap, axis=1), dt)
    state_l1 = trapezoid(np.linalg.norm(x - xh, axis=1), dt)
    return dyn_l1, state_l1


def score_model(f_hat: DynamicsFn, init_points: Sequence, params: LicdsParams):
    """Mean optimal cost over initial points, each scored on ``f_hat``'s own rollout.

    Points whose rollout or search fails are skipped and reported as ``None``
    in the per-point list.
    """
    pts = [np.asarray(p, dtype=float).reshape(-1) for p in init_points]
    if not pts:
        raise ValueError("init_points must be non-empty")

    def one(x0):
        try:
            truth = integrate(f_hat, x0, 0.0, params.T_global, params.dt)
            return licds(f_hat, truth, params)
        except (BlowUpError, LicdsError, TaylorFitError):
            return None

    per_point = parallel_map(one, pts)
    ok = [r.L_total_star for r in per_point if r is not None]
    if not ok:
        raise LicdsError(f"scoring failed at every initial point for {f_hat.name!r}")
    return math.fsum(ok) / len(ok), per_point


def resolve_lambda(candidates, init_points, params: LicdsParams) -> float:
    """One lambda shared by all candidates: the mean of their calibrated values
    at the first initial point."""
    if params.lam not in LAMBDA_RULES:
        return float(params.lam)
    x0 = np.asarray(init_points[0], dtype=float)
    vals = []
    for _, f in candidates:
        try:
            truth = integrate(f, x0, 0.0, params.T_global, params.dt)
            vals.append(calibrate_lambda(f, truth, params))
        except (BlowUpError, LicdsError, TaylorFitError):
            continue
    if not vals:
        raise LicdsError("could not calibrate lambda on any candidate")
    return max(math.fsum(vals) / len(vals), LAMBDA_FLOOR)


def rank_models(candidates: Sequence[Tuple[str, DynamicsFn]], init_points,
                params: LicdsParams) -> List[Tuple[str, float]]:
    """Candidates ordered by ascending mean score, ties broken by name."""
    if len(candidates) < 2:
        raise ValueError("need at least two candidates")
    shared = params.with_lambda(resolve_lambda(candidates, init_points, params))
    scores = [(name, score_model(f, init_points, shared)[0]) for name, f in candidates]
    return sorted(scores, key=lambda s: (s[1], s[0]))
