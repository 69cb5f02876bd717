"""Tensor Train container and rank-aware algebra.

A tensor ``A`` with mode sizes ``(m_1, ..., m_d)`` is stored as a chain of
order-3 cores ``G_i`` of shape ``(r_{i-1}, m_i, r_i)`` with ``r_0 = r_d = 1``,
so that ``A[a_1, ..., a_d] = G_1[:, a_1, :] @ ... @ G_d[:, a_d, :]``.

All operations are pure: they never mutate their inputs and return fresh
cores, so values are safe to share read-only across threads.  Dense tensors
are plain float64 ndarrays (row-major) and are only meant for small
cross-checking work (d <= 5).
"""

from __future__ import annotations

import struct

import numpy as np

# Refuse dense materialisation beyond this many entries.
DENSE_GUARD = 10**7

_TTCK_MAGIC = b"TTCK"
_TTCK_VERSION = 1


def mode_apply(mat: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Contract a matrix with the mode index of an order-3 core:
    ``out[a, n, b] = sum_m mat[n, m] core[a, m, b]``."""
    return np.matmul(mat[None, :, :], core)


class TensorTrain:
    """Immutable-by-convention TT container.

    Parameters
    ----------
    cores : sequence of ndarray
        Order-3 cores, core ``i`` shaped ``(ranks[i], mode_sizes[i],
        ranks[i+1])`` with boundary ranks 1.  Cores are converted to
        float64 and validated on construction.
    ortho : tuple or None
        Optional orthogonality marker: ``("left", k)`` marks cores
        ``0..k-1`` as having orthonormal column unfoldings, ``("right", k)``
        marks cores ``k..d-1`` as having orthonormal row unfoldings.
        Purely informational; set by the orthogonalization sweeps.
    """

    __slots__ = ("cores", "ortho")

    def __init__(self, cores, ortho=None):
        cores = [np.ascontiguousarray(c, dtype=np.float64) for c in cores]
        if not cores:
            raise ValueError("a TensorTrain needs at least one core")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for i, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {i} is not order 3")
            if i > 0 and cores[i - 1].shape[2] != c.shape[0]:
                raise ValueError(f"rank mismatch between cores {i - 1} and {i}")
            if not np.all(np.isfinite(c)):
                raise ValueError(f"core {i} contains non-finite entries")
        self.cores = cores
        self.ortho = ortho

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def interior_ranks(self) -> tuple[int, ...]:
        return self.ranks[1:-1]

    def copy(self) -> "TensorTrain":
        return TensorTrain([c.copy() for c in self.cores])

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"TensorTrain(modes={self.mode_sizes}, ranks={self.ranks})"


def tt_zero(mode_sizes) -> TensorTrain:
    """Canonical zero tensor: all ranks 1, zero cores."""
    return TensorTrain([np.zeros((1, m, 1)) for m in mode_sizes])


def tt_rank_one(vectors) -> TensorTrain:
    """TT of the outer product of the given per-mode vectors."""
    return TensorTrain([np.asarray(v, dtype=np.float64).reshape(1, -1, 1)
                        for v in vectors])


def tt_random(mode_sizes, ranks, rng) -> TensorTrain:
    """Random TT with standard-normal core entries and the given ranks."""
    mode_sizes = tuple(int(m) for m in mode_sizes)
    ranks = tuple(int(r) for r in ranks)
    d = len(mode_sizes)
    if len(ranks) != d + 1 or ranks[0] != 1 or ranks[-1] != 1:
        raise ValueError("ranks must have length d+1 with boundary ranks 1")
    return TensorTrain([rng.standard_normal((ranks[i], mode_sizes[i], ranks[i + 1]))
                        for i in range(d)])


def _check_same_shape(a: TensorTrain, b: TensorTrain):
    if a.mode_sizes != b.mode_sizes:
        raise ValueError(f"mode-size mismatch: {a.mode_sizes} vs {b.mode_sizes}")


def _guard_dense(mode_sizes):
    total = 1
    for m in mode_sizes:
        total *= int(m)
        if total > DENSE_GUARD:
            raise ValueError(
                f"dense tensor with {tuple(mode_sizes)} modes exceeds the "
                f"{DENSE_GUARD} entry guard")
    return total


def tt_to_dense(a: TensorTrain) -> np.ndarray:
    """Materialise the represented tensor (guarded to <= 1e7 entries)."""
    _guard_dense(a.mode_sizes)
    out = a.cores[0]  # (1, m_1, r_1)
    for core in a.cores[1:]:
        out = np.tensordot(out, core, axes=([out.ndim - 1], [0]))
    return np.ascontiguousarray(out.reshape(a.mode_sizes))


def tt_from_dense(t: np.ndarray, tol: float = 0.0) -> TensorTrain:
    """Sequential-SVD construction of a TT from a dense tensor.

    The result reconstructs ``t`` within relative Frobenius error ``tol``;
    the per-bond truncation budget is ``tol * ||t||_F / sqrt(d - 1)``.
    """
    t = np.asarray(t, dtype=np.float64)
    if tol < 0:
        raise ValueError("tol must be non-negative")
    _guard_dense(t.shape)
    d = t.ndim
    norm = np.linalg.norm(t)
    if norm == 0.0:
        return tt_zero(t.shape)
    if d == 1:
        return TensorTrain([t.reshape(1, -1, 1)])
    thresh = tol * norm / np.sqrt(d - 1)
    cores = []
    r_left = 1
    rest = t.reshape(r_left * t.shape[0], -1)
    for i in range(d - 1):
        u, s, vt = np.linalg.svd(rest, full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        k = _truncation_rank(s, thresh, s.size)
        cores.append(u[:, :k].reshape(r_left, t.shape[i], k))
        rest = (s[:k, None] * vt[:k])
        r_left = k
        if i < d - 2:
            rest = rest.reshape(r_left * t.shape[i + 1], -1)
    cores.append(rest.reshape(r_left, t.shape[-1], 1))
    return TensorTrain(cores)


def tt_add_scaled(a: TensorTrain, b: TensorTrain, c: float = 1.0) -> TensorTrain:
    """Exact representation of ``a + c * b`` by block-core concatenation.

    Interior ranks are the sums of the input interior ranks; no rounding
    is performed.
    """
    _check_same_shape(a, b)
    d = a.d
    if d == 1:
        return TensorTrain([a.cores[0] + c * b.cores[0]])
    cores = []
    for i in range(d):
        ca, cb = a.cores[i], b.cores[i]
        if i == 0:
            cores.append(np.concatenate([ca, c * cb], axis=2))
        elif i == d - 1:
            cores.append(np.concatenate([ca, cb], axis=0))
        else:
            ra0, m, ra1 = ca.shape
            rb0, _, rb1 = cb.shape
            blk = np.zeros((ra0 + rb0, m, ra1 + rb1))
            blk[:ra0, :, :ra1] = ca
            blk[ra0:, :, ra1:] = cb
            cores.append(blk)
    return TensorTrain(cores)


def tt_scale(a: TensorTrain, c: float) -> TensorTrain:
    """Scalar multiple ``c * a`` (folded into the first core)."""
    cores = [a.cores[0] * c] + [g.copy() for g in a.cores[1:]]
    return TensorTrain(cores)


def tt_inner(a: TensorTrain, b: TensorTrain) -> float:
    """Frobenius inner product of the represented tensors."""
    _check_same_shape(a, b)
    env = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        # env[p, q] carries the contraction of all previous modes.
        p, m, r = ca.shape
        q, _, s = cb.shape
        t = (env.T @ ca.reshape(p, m * r)).reshape(q * m, r)
        env = t.T @ cb.reshape(q * m, s)
    return float(env[0, 0])


def right_orthogonalize(a: TensorTrain) -> TensorTrain:
    """Sweep right-to-left so cores 2..d have orthonormal rows.

    Afterwards the Frobenius norm of the tensor equals the Frobenius norm
    of the first core.
    """
    cores = [c.copy() for c in a.cores]
    for i in range(len(cores) - 1, 0, -1):
        r0, m, r1 = cores[i].shape
        mat = cores[i].reshape(r0, m * r1)
        q, r = np.linalg.qr(mat.T)  # mat = r.T @ q.T with q.T row-orthonormal
        k = q.shape[1]
        cores[i] = q.T.reshape(k, m, r1)
        cores[i - 1] = np.matmul(cores[i - 1], r.T)
    return TensorTrain(cores, ortho=("right", 1))


def tt_norm(a: TensorTrain) -> float:
    """Frobenius norm, computed via full right-orthogonalization."""
    return float(np.linalg.norm(right_orthogonalize(a).cores[0]))


def _fix_svd_signs(u, vt):
    """Deterministic sign convention: first nonzero entry of each left
    singular vector is positive."""
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
            vt[j, :] = -vt[j, :]
    return u, vt


def _truncation_rank(s, thresh, cap):
    """Smallest rank whose discarded singular-value tail is <= thresh."""
    cap = max(1, min(int(min(cap, s.size)), s.size))
    if thresh <= 0.0:
        k = int(np.count_nonzero(s))
        return max(1, min(k, cap))
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tail[k] = ||s[k:]||
    k = s.size
    while k > 1 and tail[k - 1] <= thresh:
        k -= 1
    return min(k, cap)


def tt_round(a: TensorTrain, tol: float = 0.0, max_ranks=None) -> TensorTrain:
    """SVD-based recompression (retraction onto lower-rank manifolds).

    Right-to-left orthogonalization followed by a left-to-right SVD
    truncation sweep.  In ``tol`` mode each bond discards a singular-value
    tail of at most ``tol * ||a||_F / sqrt(d - 1)``, which bounds the total
    relative error by ``tol``.  ``max_ranks`` caps the d-1 interior ranks
    componentwise.  Ranks never increase; a zero tensor is returned in the
    canonical all-rank-1 form.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    d = a.d
    if d == 1:
        return a.copy()
    if max_ranks is None:
        caps = [np.inf] * (d - 1)
    else:
        caps = [int(r) for r in max_ranks]
        if len(caps) != d - 1:
            raise ValueError("max_ranks must list the d-1 interior ranks")
        if any(r < 1 for r in caps):
            raise ValueError("max_ranks must be >= 1")
    ortho = right_orthogonalize(a)
    norm = float(np.linalg.norm(ortho.cores[0]))
    if norm == 0.0:
        return tt_zero(a.mode_sizes)
    thresh = tol * norm / np.sqrt(d - 1)
    cores = list(ortho.cores)
    for i in range(d - 1):
        r0, m, r1 = cores[i].shape
        u, s, vt = np.linalg.svd(cores[i].reshape(r0 * m, r1), full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        k = _truncation_rank(s, thresh, caps[i])
        cores[i] = u[:, :k].reshape(r0, m, k)
        carry = s[:k, None] * vt[:k]
        nxt = cores[i + 1]
        cores[i + 1] = (carry @ nxt.reshape(nxt.shape[0], -1)).reshape(
            k, nxt.shape[1], nxt.shape[2])
    return TensorTrain(cores, ortho=("left", d - 1))


def tt_contract_mode_vectors(a: TensorTrain, vs) -> float:
    """Full contraction ``sum_alpha A[alpha] * prod_i vs[i][alpha_i]``.

    Left-to-right chain of matrix-vector products; cost
    ``O(sum_i r_{i-1} m_i r_i)``.
    """
    if len(vs) != a.d:
        raise ValueError("need one vector per mode")
    env = np.ones(1)
    for core, v in zip(a.cores, vs):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (core.shape[1],):
            raise ValueError("vector length does not match mode size")
        env = env @ np.tensordot(v, core, axes=(0, 1))
    return float(env[0])


def tt_apply_mode_matrix(a: TensorTrain, i: int, m: np.ndarray) -> TensorTrain:
    """Apply a matrix to mode ``i`` (may change that mode size)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != a.mode_sizes[i]:
        raise ValueError("matrix columns must match mode size")
    cores = [c.copy() for c in a.cores]
    cores[i] = mode_apply(m, cores[i])
    return TensorTrain(cores)


def laplace_like_sum(base_cores, replaced_cores) -> TensorTrain:
    """TT of ``sum_i (base_1, ..., replaced_i, ..., base_d)``.

    Block construction: first core ``[R_1 | B_1]``, middle cores
    ``[[B_i, 0], [R_i, B_i]]``, last core ``[B_d ; R_d]``.  Interior ranks
    are exactly doubled relative to the inputs (which must share shapes
    bond by bond).
    """
    d = len(base_cores)
    if d == 1:
        return TensorTrain([replaced_cores[0].copy()])
    cores = []
    for i in range(d):
        b, r = base_cores[i], replaced_cores[i]
        if b.shape != r.shape:
            raise ValueError("base and replacement cores must share shapes")
        r0, m, r1 = b.shape
        if i == 0:
            cores.append(np.concatenate([r, b], axis=2))
        elif i == d - 1:
            cores.append(np.concatenate([b, r], axis=0))
        else:
            blk = np.zeros((2 * r0, m, 2 * r1))
            blk[:r0, :, :r1] = b
            blk[r0:, :, :r1] = r
            blk[r0:, :, r1:] = b
            cores.append(blk)
    return TensorTrain(cores)


def tt_laplace_like_apply(a: TensorTrain, ms) -> TensorTrain:
    """Apply ``sum_i (I x ... x ms[i] x ... x I)`` to ``a``.

    Interior output ranks are exactly ``2 * a.ranks`` (no rounding here).
    """
    if len(ms) != a.d:
        raise ValueError("need one matrix per mode")
    replaced = []
    for i, m in enumerate(ms):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (a.mode_sizes[i],) * 2:
            raise ValueError(f"matrix {i} must be square of the mode size")
        replaced.append(mode_apply(m, a.cores[i]))
    return laplace_like_sum(a.cores, replaced)


# ----------------------------------------------------------------------
# Binary checkpoint format ("TTCK"): magic, uint32 version, uint32 d,
# d uint32 mode sizes, d+1 uint32 ranks, row-major float64 cores, and a
# trailing float64 snapshot time.  All fields little-endian.
# ----------------------------------------------------------------------

def write_checkpoint(path, a: TensorTrain, t: float):
    d = a.d
    ranks = a.ranks
    with open(path, "wb") as fh:
        fh.write(_TTCK_MAGIC)
        fh.write(struct.pack("<I", _TTCK_VERSION))
        fh.write(struct.pack("<I", d))
        fh.write(struct.pack(f"<{d}I", *a.mode_sizes))
        fh.write(struct.pack(f"<{d + 1}I", *ranks))
        for core in a.cores:
            fh.write(core.astype("<f8").tobytes(order="C"))
        fh.write(struct.pack("<d", float(t)))


def read_checkpoint(path) -> tuple[TensorTrain, float]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _TTCK_MAGIC:
        raise ValueError("not a TTCK checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _TTCK_VERSION:
        raise ValueError(f"unsupported TTCK version {version}")
    (d,) = struct.unpack_from("<I", raw, 8)
    off = 12
    mode_sizes = struct.unpack_from(f"<{d}I", raw, off)
    off += 4 * d
    ranks = struct.unpack_from(f"<{d + 1}I", raw, off)
    off += 4 * (d + 1)
    cores = []
    for i in range(d):
        n = ranks[i] * mode_sizes[i] * ranks[i + 1]
        core = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
        off += 8 * n
        cores.append(core.reshape(ranks[i], mode_sizes[i], ranks[i + 1]).copy())
    (t,) = struct.unpack_from("<d", raw, off)
    return TensorTrain(cores), t
