"""Score evaluation from TT snapshots and reverse-time sampling.

The learned coefficient tensors approximate the negative log-density of the
noising process, so the score is the *negative* gradient of the represented
polynomial.  Particles start from a standard normal draw and follow the
discretized reverse-time process

    z <- z + [z - (2 - lambda) grad_v(z)] tau + sqrt(2 (1 - lambda) tau) xi,

optionally followed by unadjusted Langevin steps targeting the same
intermediate density.  ``lambda = 1`` is the deterministic flow; its noise
is never drawn, so that path is bit-reproducible.

Randomness comes from counter-based Philox streams keyed by (seed, stream
index); every draw is an (I, d) block whose rows are the particles, so the
result is independent of how particles are scheduled or chunked.
"""

from __future__ import annotations

import inspect
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from threading import Lock

import numpy as np
from scipy.special import ndtri

from .basis import PolySpace
from .integrate import SolverConfig, SolutionSnapshot, Trajectory, evaluate_at_time
from .operators import extract_quadratic

NORMAL_TRANSFORM = "inverse_cdf"  # recorded in run metadata


@dataclass
class SamplerConfig:
    """Reverse-process parameters.

    ``lam`` is the interpolation between the reverse SDE (0) and the
    probability-flow ODE (1); ``langevin_steps``/``langevin_tau`` control the
    unadjusted Langevin post-processing after every reverse step.
    """

    lam: float = 0.0
    n_particles: int = 1000
    langevin_steps: int = 0
    langevin_tau: float = 0.005
    seed: int = 0
    clamp_to_domain: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.n_particles < 0:
            raise ValueError("n_particles must be >= 0")
        if self.langevin_steps < 0:
            raise ValueError("langevin_steps must be >= 0")
        if self.langevin_steps > 0 and self.langevin_tau <= 0:
            raise ValueError("langevin_tau must be positive when steps > 0")


@dataclass
class SampleBatch:
    """Final particle positions plus per-particle bookkeeping."""

    d: int
    samples: np.ndarray            # (I, d)
    oob_counts: np.ndarray         # out-of-domain coordinate evaluations
    aborted: np.ndarray            # particles frozen after non-finite values
    metadata: dict = field(default_factory=dict)


def _normals(seed: int, stream: int, shape) -> np.ndarray:
    """Standard normals from a Philox stream via the inverse CDF."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    u = gen.random(shape)
    # random() samples [0, 1); clip the left tail so ndtri stays finite
    return ndtri(np.maximum(u, 2.0 ** -54))


# ----------------------------------------------------------------------
# Evaluation of the low-rank model
# ----------------------------------------------------------------------

def eval_v(snap: SolutionSnapshot, space: PolySpace, x) -> float:
    """Value of the represented polynomial at one point."""
    return float(eval_v_batch(snap, space, np.atleast_2d(np.asarray(x, float)))[0])


def eval_v_batch(snap: SolutionSnapshot, space: PolySpace, xs: np.ndarray) -> np.ndarray:
    """Values at an ``(m, d)`` batch: per-mode basis contraction followed by
    a left-to-right chain of small matrix products."""
    tt = snap.coeffs
    env = np.ones((xs.shape[0], 1))
    for i, core in enumerate(tt.cores):
        vals = space.basis(i, core.shape[1]).evaluate(xs[:, i])   # (m, n+1)
        mat = np.tensordot(vals, core, axes=(1, 1))               # (m, r0, r1)
        env = np.matmul(env[:, None, :], mat)[:, 0, :]
    return env[:, 0]


def grad_v(snap: SolutionSnapshot, space: PolySpace, x) -> np.ndarray:
    """Gradient of the represented polynomial at one point."""
    return grad_v_batch(snap, space, np.atleast_2d(np.asarray(x, float)))[0]


def grad_v_batch(snap: SolutionSnapshot, space: PolySpace,
                 xs: np.ndarray) -> np.ndarray:
    """Gradients at an ``(m, d)`` batch.

    Two sweeps of cached partial contractions make the total cost
    ``O(m d n r^2)`` instead of d independent full contractions.
    """
    tt = snap.coeffs
    m, d = xs.shape
    contracted = []       # core contracted with basis values, (m, r0, r1)
    dcontracted = []      # core contracted with basis derivatives
    for i, core in enumerate(tt.cores):
        basis = space.basis(i, core.shape[1])
        vals, dvals = basis.evaluate_with_derivative(xs[:, i])
        contracted.append(np.tensordot(vals, core, axes=(1, 1)))
        dcontracted.append(np.tensordot(dvals, core, axes=(1, 1)))
    right = [None] * (d + 1)
    right[d] = np.ones((m, 1))
    for i in range(d - 1, -1, -1):
        right[i] = np.matmul(contracted[i], right[i + 1][:, :, None])[:, :, 0]
    out = np.empty((m, d))
    left = np.ones((m, 1))
    for i in range(d):
        mid = np.matmul(left[:, None, :], dcontracted[i])[:, 0, :]
        out[:, i] = np.sum(mid * right[i + 1], axis=1)
        left = np.matmul(left[:, None, :], contracted[i])[:, 0, :]
    return out


def count_out_of_domain(space: PolySpace, xs: np.ndarray) -> np.ndarray:
    """Number of coordinates of each row lying outside the hypercube."""
    lo = np.array([a for a, _ in space.intervals])
    hi = np.array([b for _, b in space.intervals])
    return np.sum((xs < lo) | (xs > hi), axis=1).astype(np.int64)


def covariance_error(snap: SolutionSnapshot, space: PolySpace) -> float:
    """Relative Frobenius distance of the quadratic coefficient matrix from
    the standard normal's coefficient ``I/2``."""
    _, _, quad = extract_quadratic(snap.coeffs, space)
    d = snap.coeffs.d
    target = 0.5 * np.eye(d)
    return float(np.linalg.norm(quad - target) / np.linalg.norm(target))


# ----------------------------------------------------------------------
# Reverse-time sampling
# ----------------------------------------------------------------------

def _chunk_ranges(total: int, workers: int):
    size = -(-total // workers)
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def reverse_sample_scored(grad_fn, times, d: int, scfg: SamplerConfig,
                          threads: int | None = None) -> SampleBatch:
    """Run the reverse process against an arbitrary score surrogate.

    ``grad_fn(s, z)`` must return the gradient of the surrogate negative
    log-density at diffusion time ``s`` for an ``(m, d)`` batch ``z``;
    ``times`` is the increasing sampling grid from 0 to the horizon.  A
    callable accepting a third argument also receives the particle indices
    of the batch (used for per-particle bookkeeping under chunking).
    """
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing with >= 2 entries")
    horizon = times[-1]
    total = scfg.n_particles
    if total == 0:
        return SampleBatch(d=d, samples=np.zeros((0, d)),
                           oob_counts=np.zeros(0, dtype=np.int64),
                           aborted=np.zeros(0, dtype=bool))
    if threads is None:
        threads = max(1, int(os.environ.get("TTHJB_THREADS", "1")))
    try:
        takes_rows = len(inspect.signature(grad_fn).parameters) >= 3
    except (TypeError, ValueError):
        takes_rows = False

    lam = scfg.lam
    n_steps = times.size - 1
    L = scfg.langevin_steps

    def run_chunk(lo: int, hi: int):
        rows = np.arange(lo, hi)
        z = _normals(scfg.seed, 0, (total, d))[lo:hi]
        aborted = np.zeros(hi - lo, dtype=bool)

        def grad(s, batch):
            return grad_fn(s, batch, rows) if takes_rows else grad_fn(s, batch)

        def apply(update):
            nonlocal z
            nxt = np.where(aborted[:, None], z, update)
            bad = ~np.all(np.isfinite(nxt), axis=1) & ~aborted
            nxt[bad] = z[bad]
            aborted[bad] = True
            z = nxt

        stream = 1
        for n in range(n_steps):
            tau = times[n + 1] - times[n]
            s = horizon - times[n]
            g = grad(s, z)
            drift = z + (z - (2.0 - lam) * g) * tau
            if lam != 1.0:
                xi = _normals(scfg.seed, stream, (total, d))[lo:hi]
                stream += 1
                drift = drift + np.sqrt(2.0 * (1.0 - lam) * tau) * xi
            apply(drift)
            for _ in range(L):
                g = grad(s, z)
                xi = _normals(scfg.seed, stream, (total, d))[lo:hi]
                stream += 1
                apply(z - scfg.langevin_tau * g
                      + np.sqrt(2.0 * scfg.langevin_tau) * xi)
        return z, aborted

    if threads <= 1 or total < 2 * threads:
        parts = [run_chunk(0, total)]
    else:
        ranges = _chunk_ranges(total, threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda r: run_chunk(*r), ranges))
    samples = np.concatenate([p[0] for p in parts], axis=0)
    aborted = np.concatenate([p[1] for p in parts], axis=0)
    if np.mean(aborted) > 0.10:
        raise RuntimeError(
            f"{int(aborted.sum())} of {total} particles diverged (> 10%)")
    return SampleBatch(d=d, samples=samples,
                       oob_counts=np.zeros(total, dtype=np.int64),
                       aborted=aborted,
                       metadata={"normal_transform": NORMAL_TRANSFORM,
                                 "lambda": lam, "langevin_steps": L,
                                 "langevin_tau": scfg.langevin_tau,
                                 "seed": scfg.seed,
                                 "times": times.tolist()})


def reverse_sample(traj: Trajectory, space: PolySpace, scfg: SamplerConfig,
                   cfg: SolverConfig, times=None,
                   threads: int | None = None) -> SampleBatch:
    """Sample the target density from a completed solve.

    Defaults to the solver grid reversed (``t_n = T - t_{N-n}``, shared by
    all particles); a custom increasing grid on ``[0, T]`` may be supplied,
    off-grid times are bridged with single Euler steps.  Out-of-domain
    basis evaluations are counted per particle; when ``clamp_to_domain`` is
    set, score evaluations use the coordinates projected onto the hypercube
    instead (the particle state is untouched).
    """
    if not traj.is_complete(cfg.T):
        raise ValueError("trajectory did not reach the horizon")
    solver_times = traj.times
    horizon = solver_times[-1]
    if times is None:
        times = [horizon - t for t in reversed(solver_times)]
    times = np.asarray(times, dtype=np.float64)
    d = traj.snapshots[0].coeffs.d

    cache: dict[float, SolutionSnapshot] = {s.t: s for s in traj.snapshots}
    cache_lock = Lock()
    lo = np.array([a for a, _ in space.intervals])
    hi = np.array([b for _, b in space.intervals])
    oob_total = np.zeros(scfg.n_particles, dtype=np.int64)

    def grad_fn(s, z, rows):
        snap = cache.get(s)
        if snap is None:
            with cache_lock:
                snap = cache.get(s)
                if snap is None:
                    snap = evaluate_at_time(traj, s, space, cfg)
                    cache[s] = snap
        if scfg.clamp_to_domain:
            z = np.clip(z, lo, hi)
        else:
            finite = np.all(np.isfinite(z), axis=1)
            counts = np.zeros(z.shape[0], dtype=np.int64)
            counts[finite] = np.sum((z[finite] < lo) | (z[finite] > hi), axis=1)
            oob_total[rows] += counts  # chunks own disjoint row ranges
        return grad_v_batch(snap, space, z)

    batch = reverse_sample_scored(grad_fn, times, d, scfg, threads=threads)
    batch.oob_counts = oob_total
    batch.metadata["clamp_to_domain"] = scfg.clamp_to_domain
    return batch
