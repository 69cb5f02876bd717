"""Adaptive explicit Euler integration of the coefficient-tensor ODE.

One step advances ``Y`` by ``tau * (L Y + P NL(Y))``, retracts the result
back to the rank budget and re-compresses degrees and ranks.  The step size
is the minimum of four bounds: a hard cap, a stiffness bound from a power
iteration on the locally linearized operator, a bound keeping the relative
degree-projection error below ``delta_proj``, and a bound keeping the
relative rank-retraction error below ``delta_rank``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import PolySpace
from .operators import (apply_lin, apply_nonlin, apply_stiffness,
                        extract_quadratic, project_degree)
from .tt import (TensorTrain, tt_add_scaled, tt_inner, tt_norm, tt_random,
                 tt_round, tt_scale)

# Below this magnitude the power-iteration estimate is treated as an exactly
# stationary sector (the stiffness bound then does not constrain the step).
STATIONARY_EPS = 1e-14


class RankBudgetError(RuntimeError):
    """No step size within the search range satisfies the retraction bound."""


class StepUnderflowError(RuntimeError):
    """The accepted step size collapsed below 1e-12 * T."""


@dataclass
class SolverConfig:
    """Parameters of the adaptive Euler solve.

    ``rho`` is either a single reduction factor in (0, 1) or a piecewise
    constant schedule given as ``[(t_start, value), ...]``; the value of the
    last breakpoint at or before ``t`` applies.  ``power_perturb`` blends a
    seeded random direction into the power-iteration start so the iteration
    sees every eigensector of the linearized operator (the solution itself
    can be exactly orthogonal to the dominant one).
    ``power_stability_window`` is the number of consecutive agreeing
    significant-digit comparisons required before the eigenvalue estimate is
    accepted (1 = two consecutive iterations agree).
    """

    T: float
    tau_max: float
    rho: object = 0.2
    delta_proj: float = 0.01
    delta_rank: float = 0.01
    delta_contr: float = 1e-8
    p_digits: int = 3
    power_max_iters: int = 200
    power_perturb: float = 0.25
    power_stability_window: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.T <= 0 or self.tau_max <= 0:
            raise ValueError("T and tau_max must be positive")
        if min(self.delta_proj, self.delta_rank, self.delta_contr) <= 0:
            raise ValueError("tolerances must be positive")
        if self.p_digits < 1:
            raise ValueError("p_digits must be >= 1")
        sched = self.rho
        if np.isscalar(sched):
            sched = [(0.0, float(sched))]
        sched = sorted((float(t), float(r)) for t, r in sched)
        if not sched or sched[0][0] > 0.0:
            raise ValueError("rho schedule must start at t = 0")
        if any(not 0.0 < r < 1.0 for _, r in sched):
            raise ValueError("rho values must lie in (0, 1)")
        self.rho = tuple(sched)

    def rho_at(self, t: float) -> float:
        value = self.rho[0][1]
        for start, r in self.rho:
            if t >= start:
                value = r
            else:
                break
        return value


@dataclass
class SolutionSnapshot:
    """Coefficient tensor of the solution at one time point."""

    t: float
    coeffs: TensorTrain

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(m - 1 for m in self.coeffs.mode_sizes)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.coeffs.ranks


@dataclass
class Trajectory:
    """Time-ordered snapshots plus per-step diagnostics records."""

    snapshots: list[SolutionSnapshot] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    error: str | None = None

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.snapshots]

    def is_complete(self, T: float) -> bool:
        return self.error is None and self.snapshots and self.snapshots[-1].t == T


# ----------------------------------------------------------------------
# Criterion 1: stiffness bound by power iteration
# ----------------------------------------------------------------------

def _significant_key(value: float, digits: int) -> str:
    return np.format_float_scientific(value, precision=digits - 1, unique=False)


def _aitken(hist) -> float:
    """Geometric-tail extrapolation of the eigenvalue sequence.

    The raw estimates converge like a geometric series with ratio near 1
    when the spectral gap is small; the delta-squared correction removes
    that tail.  Falls back to the last raw value when the ratio is not in
    a trustworthy range.
    """
    if len(hist) < 3:
        return hist[-1]
    l0, l1, l2 = hist[-3], hist[-2], hist[-1]
    d1, d2 = l1 - l0, l2 - l1
    if abs(d1) < 1e-14 * max(1.0, abs(l2)):
        return l2
    ratio = d2 / d1
    if not 1e-3 < abs(ratio) < 0.999:
        return l2
    correction = d2 * ratio / (1.0 - ratio)
    if abs(correction) > 0.25 * abs(l2):
        return l2  # transient, not a settled geometric tail
    return l2 + correction


def power_iteration_bound(y: SolutionSnapshot, space: PolySpace,
                          cfg: SolverConfig) -> tuple[float, int]:
    """Upper bound on the dominant absolute real eigenvalue of the locally
    linearized right-hand side at ``y``.

    Iterates ``X <- retract(H_Y X / |X|)`` with the retraction capped at the
    ranks of ``y`` and stops once the (tail-extrapolated) estimate is stable
    to ``p_digits`` significant digits over ``power_stability_window``
    consecutive comparisons.  The returned bound is ``|lambda| + 10^-(P + p)``
    with ``P = ceil(-log10 |lambda|)``.  Returns 0.0 (flagged stationary)
    when the estimate vanishes.
    """
    Y = y.coeffs
    norm_y = tt_norm(Y)
    if norm_y == 0.0:
        return 0.0, 0
    caps = list(Y.interior_ranks) if Y.d > 1 else None
    x = tt_scale(Y, 1.0 / norm_y)
    if cfg.power_perturb > 0.0:
        rng = np.random.Generator(np.random.Philox(
            key=np.array([cfg.seed & 0xFFFFFFFFFFFFFFFF, 0x706F776572], dtype=np.uint64)))
        g = tt_random(Y.mode_sizes, Y.ranks, rng)
        g = tt_scale(g, cfg.power_perturb / tt_norm(g))
        x = tt_round(tt_add_scaled(x, g, 1.0), max_ranks=caps)
    hist: list[float] = []
    est = 0.0
    prev_key = None
    stable = 0
    iters = 0
    for _ in range(cfg.power_max_iters):
        nx = tt_norm(x)
        if nx == 0.0:
            return 0.0, iters
        xhat = tt_scale(x, 1.0 / nx)
        xnext = tt_round(apply_stiffness(Y, xhat, space), max_ranks=caps)
        lam = tt_inner(xhat, xnext)
        iters += 1
        if abs(lam) < STATIONARY_EPS:
            return 0.0, iters
        hist.append(abs(lam))
        est = _aitken(hist)
        key = _significant_key(abs(est), cfg.p_digits)
        if key == prev_key:
            stable += 1
            if stable >= cfg.power_stability_window:
                break
        else:
            stable = 0
        prev_key = key
        x = xnext
    mag = abs(est)
    first_digit_pos = math.ceil(-math.log10(mag))
    eps_p = 10.0 ** (-(first_digit_pos + cfg.p_digits))
    return mag + eps_p, iters


def stepsize_stiffness(lambda_bar: float, rho: float) -> float:
    """Maximal stable explicit step ``2 rho / |lambda|`` (inf if flagged 0)."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if lambda_bar == 0.0:
        return math.inf
    return 2.0 * rho / abs(lambda_bar)


# ----------------------------------------------------------------------
# Criteria 2 and 3: projection and retraction bounds
# ----------------------------------------------------------------------

@dataclass
class _StepQuantities:
    rhs: TensorTrain
    nl_norm: float
    rel_proj: float


def _step_quantities(y: SolutionSnapshot, space: PolySpace) -> _StepQuantities:
    """Right-hand side at ``y`` plus the relative degree-projection error
    of its nonlinear part (computed via the Parseval identity)."""
    degrees = [m - 1 for m in y.coeffs.mode_sizes]
    nl, _ = apply_nonlin(y.coeffs, space)
    pnl = project_degree(nl, degrees)
    nl_norm = tt_norm(nl)
    if nl_norm == 0.0:
        rel = 0.0
    else:
        pnl_norm = tt_norm(pnl)
        gap = max(nl_norm ** 2 - pnl_norm ** 2, 0.0)
        rel = math.sqrt(gap) / nl_norm
    rhs = tt_add_scaled(apply_lin(y.coeffs, space), pnl, 1.0)
    return _StepQuantities(rhs=rhs, nl_norm=nl_norm, rel_proj=rel)


def stepsize_projection(y: SolutionSnapshot, space: PolySpace,
                        cfg: SolverConfig) -> tuple[float, float]:
    """Step bound keeping the relative projection error below delta_proj."""
    q = _step_quantities(y, space)
    if q.rel_proj == 0.0:
        return cfg.tau_max, 0.0
    return cfg.delta_proj / q.rel_proj, q.rel_proj


def _retraction_rel_err(y: TensorTrain, rhs: TensorTrain, tau: float,
                        target_ranks) -> float:
    ybar = tt_add_scaled(y, rhs, tau)
    nb = tt_norm(ybar)
    if nb == 0.0:
        return 0.0
    retracted = tt_round(ybar, max_ranks=target_ranks)
    return tt_norm(tt_add_scaled(ybar, retracted, -1.0)) / nb


def stepsize_retraction(y: SolutionSnapshot, rhs: TensorTrain, target_ranks,
                        tau_init: float, cfg: SolverConfig,
                        tau_cap: float | None = None) -> float:
    """Largest step in (0, tau_cap] whose rank retraction stays below
    delta_rank in relative Frobenius norm.

    ``tau_init`` seeds the search (the previously accepted step in the solve
    loop); ``tau_cap`` defaults to it.  From the seed the search halves until
    satisfied (or doubles up to the cap while satisfied), then bisects
    between the best satisfying step and the nearest failing one to relative
    width 1e-2 (at most 20 bisections) and returns the best satisfying value.
    """
    if tau_init <= 0:
        raise ValueError("tau_init must be positive")
    if tau_cap is None:
        tau_cap = tau_init
    tau_init = min(tau_init, tau_cap)
    target_ranks = list(target_ranks) if y.coeffs.d > 1 else None

    def ok(tau):
        return _retraction_rel_err(y.coeffs, rhs, tau, target_ranks) <= cfg.delta_rank

    if ok(tau_cap):
        return tau_cap
    if ok(tau_init):
        lo = tau_init
        hi = min(2.0 * lo, tau_cap)
        while hi < tau_cap and ok(hi):
            lo, hi = hi, min(2.0 * hi, tau_cap)
        if ok(hi):
            lo = hi  # hi == tau_cap failing is impossible here, but be safe
    else:
        lo = tau_init
        for _ in range(40):
            lo *= 0.5
            if ok(lo):
                break
        else:
            raise RankBudgetError(
                "retraction error exceeds delta_rank even at tau_init * 2^-40; "
                "the rank budget is too small for this state")
        hi = 2.0 * lo
    best = lo
    for _ in range(20):
        if (hi - lo) / lo <= 1e-2:
            break
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
            best = mid
        else:
            hi = mid
    return best


# ----------------------------------------------------------------------
# One Euler step and the re-compression stages
# ----------------------------------------------------------------------

def _euler_from_rhs(y: SolutionSnapshot, rhs: TensorTrain, tau: float,
                    target_ranks, delta_contr: float) -> SolutionSnapshot:
    ybar = tt_add_scaled(y.coeffs, rhs, tau)
    caps = list(target_ranks) if ybar.d > 1 else None
    rounded = tt_round(ybar, tol=delta_contr, max_ranks=caps)
    return SolutionSnapshot(t=y.t + tau, coeffs=rounded)


def euler_step(y: SolutionSnapshot, tau: float, target_ranks,
               space: PolySpace, delta_contr: float = 0.0) -> SolutionSnapshot:
    """Single explicit Euler step with retraction.

    The intermediate tensor has interior ranks at most ``3r + 2r^2``; it is
    retracted to ``target_ranks`` and rounded at relative ``delta_contr``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    q = _step_quantities(y, space)
    return _euler_from_rhs(y, q.rhs, tau, target_ranks, delta_contr)


def _slice_norm(a: TensorTrain, dim: int, index: int) -> float:
    """Frobenius norm of the coefficient slice fixing mode ``dim`` at
    ``index`` (computed in TT form, no dense tensor)."""
    cores = [c.copy() for c in a.cores]
    cores[dim] = cores[dim][:, index:index + 1, :]
    return tt_norm(TensorTrain(cores))


def degree_truncate(y: SolutionSnapshot, delta_contr: float,
                    space: PolySpace) -> SolutionSnapshot:
    """Drop top polynomial degrees whose coefficient slices carry at most
    ``delta_contr`` in (absolute) Frobenius norm.

    Repeats until no slice qualifies.  Degrees never drop below 2: the
    stationary standard-normal potential is quadratic.
    """
    cores = [c.copy() for c in y.coeffs.cores]
    changed = True
    while changed:
        changed = False
        current = TensorTrain(cores)
        for k in range(current.d):
            msize = cores[k].shape[1]
            if msize <= 3:
                continue
            if _slice_norm(current, k, msize - 1) <= delta_contr:
                cores[k] = cores[k][:, :msize - 1, :]
                changed = True
                break
    return SolutionSnapshot(t=y.t, coeffs=TensorTrain(cores))


def rank_adapt(y: SolutionSnapshot, r0, delta_contr: float) -> SolutionSnapshot:
    """Retract to ``max(current, 2)`` capped by ``max(initial, 2)`` and round
    at relative ``delta_contr`` in a single pass."""
    if y.coeffs.d == 1:
        return SolutionSnapshot(t=y.t, coeffs=tt_round(y.coeffs, tol=delta_contr))
    current = np.asarray(y.coeffs.interior_ranks)
    cap = np.minimum(np.maximum(current, 2), np.maximum(np.asarray(r0), 2))
    rounded = tt_round(y.coeffs, tol=delta_contr, max_ranks=cap.tolist())
    return SolutionSnapshot(t=y.t, coeffs=rounded)


# ----------------------------------------------------------------------
# The solve loop
# ----------------------------------------------------------------------

def _diag_record(step, snap, tau, tau_lambda, tau_proj, tau_rank, lambda_bar,
                 space, wall_ms):
    _, _, quad = extract_quadratic(snap.coeffs, space)
    d = snap.coeffs.d
    cov_err = float(np.linalg.norm(quad - 0.5 * np.eye(d))
                    / np.linalg.norm(0.5 * np.eye(d)))
    return {
        "step": step,
        "t": snap.t,
        "tau": tau,
        "tau_lambda": tau_lambda,
        "tau_proj": tau_proj,
        "tau_rank": tau_rank,
        "lambda_bar": lambda_bar,
        "ranks": list(snap.ranks),
        "degrees": list(snap.degrees),
        "cov_err": cov_err,
        "wall_ms": wall_ms,
    }


def solve_hjb(phi: TensorTrain, space: PolySpace, cfg: SolverConfig) -> Trajectory:
    """Integrate the coefficient ODE from the potential to time ``T``.

    Every accepted step satisfies all three step-size criteria; after each
    step the degrees and ranks are re-compressed.  On failure (non-finite
    state, step underflow, rank budget) the partial trajectory is returned
    with ``error`` set.
    """
    snap = SolutionSnapshot(t=0.0, coeffs=phi)
    r0 = phi.interior_ranks
    traj = Trajectory(snapshots=[snap])
    tau_prev = None
    step = 0
    t = 0.0
    while t < cfg.T:
        started = time.perf_counter()
        try:
            lambda_bar, _ = power_iteration_bound(snap, space, cfg)
            tau_lambda = stepsize_stiffness(lambda_bar, cfg.rho_at(t))
            q = _step_quantities(snap, space)
            if q.rel_proj == 0.0:
                tau_proj = cfg.tau_max
            else:
                tau_proj = cfg.delta_proj / q.rel_proj
            if snap.coeffs.d > 1:
                target = np.minimum(np.maximum(np.asarray(snap.coeffs.interior_ranks), 2),
                                    np.maximum(np.asarray(r0), 2)).tolist()
            else:
                target = []
            remaining = cfg.T - t
            tau_cap = min(cfg.tau_max, tau_lambda, tau_proj, remaining)
            tau_init = min(tau_prev if tau_prev is not None else cfg.tau_max,
                           tau_cap)
            tau_rank = stepsize_retraction(snap, q.rhs, target, tau_init, cfg,
                                           tau_cap=tau_cap)
            tau = min(cfg.tau_max, tau_lambda, tau_proj, tau_rank, remaining)
            # a criterion-forced collapse aborts; a float-dust sliver left
            # over from reaching the horizon does not
            if tau < 1e-12 * cfg.T and tau < remaining:
                raise StepUnderflowError(f"step size underflow at t={t}: tau={tau}")
            new = _euler_from_rhs(snap, q.rhs, tau, target, cfg.delta_contr)
            new = degree_truncate(new, cfg.delta_contr, space)
            new = rank_adapt(new, r0, cfg.delta_contr)
            if tau == remaining:
                new = SolutionSnapshot(t=cfg.T, coeffs=new.coeffs)
        except (RankBudgetError, StepUnderflowError, ValueError) as exc:
            traj.error = f"{type(exc).__name__}: {exc}"
            return traj
        wall_ms = (time.perf_counter() - started) * 1e3
        step += 1
        snap = new
        t = snap.t
        traj.snapshots.append(snap)
        traj.diagnostics.append(_diag_record(
            step, snap, tau, tau_lambda, tau_proj, tau_rank, lambda_bar,
            space, wall_ms))
        tau_prev = tau
    return traj


def evaluate_at_time(traj: Trajectory, t_star: float, space: PolySpace,
                     cfg: SolverConfig) -> SolutionSnapshot:
    """Snapshot at an arbitrary time: the stored one if ``t_star`` is on the
    grid, otherwise one Euler step from the nearest stored time below."""
    times = traj.times
    if not times or not times[0] <= t_star <= times[-1]:
        raise ValueError(f"t={t_star} outside the stored range")
    idx = int(np.searchsorted(np.asarray(times), t_star, side="right")) - 1
    base = traj.snapshots[idx]
    if base.t == t_star:
        return base
    if base.coeffs.d > 1:
        target = np.maximum(np.asarray(base.coeffs.interior_ranks), 2).tolist()
    else:
        target = []
    return euler_step(base, t_star - base.t, target, space, cfg.delta_contr)
