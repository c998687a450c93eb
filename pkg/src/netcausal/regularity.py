"""Block-constant approximation of dense coupling matrices in spectral norm.

The approximation is built greedily: certify the residual, split one block
along the sign pattern of the residual's top eigenvector, refit the block
averages, repeat.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import as_array
from .rng import make_rng


class SpectralNormWarning(RuntimeWarning):
    """Power iteration hit its iteration cap before meeting the tolerance."""


def _top_eigpair(M: np.ndarray, tol: float, max_iter: int, seed: int, block: int = 8):
    """Largest-magnitude eigenpair of symmetric ``M`` by block power iteration.

    Returns ``(|λ|, v, converged)``. Ritz values from a small orthonormal
    block converge at rate ``|λ_{b+1} / λ_1|``.
    """
    n = M.shape[0]
    if n == 0:
        return 0.0, np.zeros(0), True
    b = min(block, n)
    rng = make_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((n, b)))
    prev = -1.0
    val, vec = 0.0, V[:, 0]
    for _ in range(max_iter):
        W = M @ V
        H = V.T @ W
        H = 0.5 * (H + H.T)
        evals, evecs = np.linalg.eigh(H)
        j = int(np.argmax(np.abs(evals)))
        val = float(abs(evals[j]))
        vec = V @ evecs[:, j]
        resid = float(np.linalg.norm(M @ vec - evals[j] * vec))
        scale = max(val, 1e-300)
        if val == 0.0 and float(np.linalg.norm(W)) == 0.0:
            return 0.0, vec, True
        if abs(val - prev) <= tol * scale and resid <= np.sqrt(tol) * scale:
            return val, vec, True
        prev = val
        # iterate on M² so eigenvalues of opposite sign and equal size do not stall the block
        V, _ = np.linalg.qr(M @ W)
    return val, vec, False


def spectral_norm(M, tol: float = 1e-10, max_iter: int = 5000, seed: int = 0,
                  return_info: bool = False):
    """Operator 2-norm of a symmetric matrix.

    On non-convergence a :class:`SpectralNormWarning` is emitted and the best
    estimate is returned (with ``converged=False`` when ``return_info``).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("spectral_norm needs a square matrix")
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError("spectral_norm needs a symmetric matrix")
    val, _, ok = _top_eigpair(M, tol, max_iter, seed)
    if not ok:
        warnings.warn("spectral norm did not converge", SpectralNormWarning, stacklevel=2)
    return (val, ok) if return_info else val


@dataclass
class BlockApproximation:
    """Partition labels (0 = leftover set, 1..K blocks) and block coefficients."""

    labels: np.ndarray
    coefficients: np.ndarray
    residual_norm: float
    rounds_used: int = 0
    target_met: bool = True
    include_diagonal: bool = True
    history: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def K(self) -> int:
        return self.coefficients.shape[0]

    @property
    def blocks(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(1, self.K + 1)]

    @property
    def leftover(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)

    def dense(self) -> np.ndarray:
        """Materialize ``Σ c_kl 1_{U_k} 1_{U_l}ᵀ``."""
        C = np.zeros((self.K + 1, self.K + 1))
        C[1:, 1:] = self.coefficients
        return C[self.labels][:, self.labels]

    def residual(self, A) -> np.ndarray:
        """``A − Ã`` under the fit's diagonal convention."""
        R = as_array(A) - self.dense()
        if not self.include_diagonal:
            np.fill_diagonal(R, 0.0)
        return R

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"n {self.n} K {self.K}\n")
        buf.write(" ".join(str(int(v)) for v in self.labels) + "\n")
        for row in self.coefficients:
            buf.write(" ".join(repr(float(v)) for v in row) + "\n")
        buf.write(f"residual {self.residual_norm!r}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "BlockApproximation":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        head = lines[0].split()
        if head[0] != "n" or head[2] != "K":
            raise ValueError("malformed block approximation header")
        n, K = int(head[1]), int(head[3])
        labels = np.array([int(v) for v in lines[1].split()], dtype=np.int64)
        if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) > K:
            raise ValueError("partition labels must be n integers in [0, K]")
        coef = np.array([[float(v) for v in ln.split()] for ln in lines[2:2 + K]]).reshape(K, K)
        resid = float(lines[2 + K].split()[1])
        return cls(labels, coef, resid)


def _fit(A: np.ndarray, labels: np.ndarray, K: int, include_diagonal: bool):
    """Least-squares block averages and the residual matrix."""
    onehot = np.zeros((A.shape[0], K + 1))
    onehot[np.arange(A.shape[0]), labels] = 1.0
    sums = onehot.T @ A @ onehot
    sizes = onehot.sum(axis=0)
    counts = np.outer(sizes, sizes)
    if not include_diagonal:
        diag = onehot.T @ np.diag(A)
        sums = sums - np.diag(diag)
        counts = counts - np.diag(sizes)
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), 0.0)
    C[0, :] = 0.0
    C[:, 0] = 0.0
    C = 0.5 * (C + C.T)
    R = A - C[labels][:, labels]
    if not include_diagonal:
        np.fill_diagonal(R, 0.0)
    return C[1:, 1:], R


def _rounding_vector(R: np.ndarray) -> np.ndarray:
    """Top-|λ| eigenvector of ``R``, quantized so round-off cannot split equal entries."""
    n = R.shape[0]
    if n <= 400:
        evals, evecs = np.linalg.eigh(R)
        v = evecs[:, int(np.argmax(np.abs(evals)))]
    else:
        from scipy.sparse.linalg import eigsh

        _, vecs = eigsh(R, k=1, which="LM", tol=1e-13, v0=np.ones(n))
        v = vecs[:, 0]
    quantum = 1e-9 * max(float(np.max(np.abs(v))), 1e-300)
    return np.round(v / quantum) * quantum


def _split_candidates(v: np.ndarray, members: np.ndarray, min_size: int):
    """Subsets of ``members`` obtained by thresholding ``v``: sign first, then large gaps."""
    vals = v[members]
    out = []
    seen = set()

    def add(mask):
        k = int(mask.sum())
        if min_size <= k <= members.size - min_size:
            key = mask.tobytes()
            if key not in seen and (~mask).tobytes() not in seen:
                seen.add(key)
                out.append(members[mask])

    add(vals >= 0)
    order = np.sort(vals)
    if order.size >= 2:
        gaps = np.diff(order)
        floor = 1e-8 * max(float(np.max(np.abs(v))), 1e-300)
        for j in np.argsort(gaps)[::-1][:3]:
            if gaps[j] > floor:
                add(vals > 0.5 * (order[j] + order[j + 1]))
        add(vals > np.median(vals))
    return out


def block_approximation(A, eps: float, max_blocks: int = 8, seed: int = 0,
                        min_block_size: int = 1, include_diagonal: bool = True,
                        tol: float = 1e-10) -> BlockApproximation:
    """Greedy spectral cut decomposition with residual certification.

    Each round splits one existing block by thresholding the top residual
    eigenvector (sign rounding, with gap and median thresholds as fallbacks),
    keeping the split with the smallest certified residual. Returns the best
    partition seen; ``target_met`` is False when ``max_blocks`` ran out
    before the residual reached ``eps``.

    With ``include_diagonal=False`` the fit and residual ignore diagonal
    entries, so zero-diagonal block-constant inputs are recovered exactly.
    Units in blocks smaller than ``min_block_size`` are moved to the leftover
    set (label 0).
    """
    A = as_array(A)
    n = A.shape[0]
    if eps <= 0:
        raise ValueError("eps must be positive")
    if max_blocks < 1:
        raise ValueError("max_blocks must be at least 1")
    labels = np.ones(n, dtype=np.int64)
    K = 1
    C, R = _fit(A, labels, K, include_diagonal)
    norm = spectral_norm(R, tol=tol, seed=seed)
    best = (norm, labels.copy(), C, K)
    history = [norm]
    rounds = 0
    while best[0] > eps and K < max_blocks:
        v = _rounding_vector(R)
        candidates = []
        for k in range(1, K + 1):
            members = np.flatnonzero(labels == k)
            for part in _split_candidates(v, members, 1):
                trial = labels.copy()
                trial[part] = K + 1
                tc, tr = _fit(A, trial, K + 1, include_diagonal)
                candidates.append((spectral_norm(tr, tol=tol, seed=seed), trial, tc, tr))
        if not candidates:
            break
        norm, labels, C, R = min(candidates, key=lambda c: c[0])
        K += 1
        rounds += 1
        if norm < best[0]:
            best = (norm, labels.copy(), C, K)
        history.append(best[0])
    norm, labels, C, K = best
    labels, C = _drop_small(labels, C, min_block_size)
    if min_block_size > 1:
        C_fit, R = _fit(A, labels, C.shape[0], include_diagonal)
        C = C_fit
        norm = spectral_norm(R, tol=tol, seed=seed)
    return BlockApproximation(labels, C, float(norm), rounds, bool(norm <= eps),
                              include_diagonal, history)


def _drop_small(labels: np.ndarray, C: np.ndarray, min_size: int):
    """Relabel blocks 1..K in order of first appearance, moving small ones to 0."""
    K = C.shape[0]
    keep = [k for k in range(1, K + 1) if np.sum(labels == k) >= min_size]
    keep.sort(key=lambda k: int(np.flatnonzero(labels == k)[0]))
    remap = np.zeros(K + 1, dtype=np.int64)
    for new, old in enumerate(keep, start=1):
        remap[old] = new
    idx = np.array(keep, dtype=np.int64) - 1
    return remap[labels], C[np.ix_(idx, idx)]


def apply_block_matrix(B: BlockApproximation, v) -> np.ndarray:
    """``Ãv`` via per-block partial sums."""
    v = np.asarray(v, dtype=float)
    if v.shape != (B.n,):
        raise ValueError(f"vector has shape {v.shape}, expected ({B.n},)")
    sums = np.bincount(B.labels, weights=v, minlength=B.K + 1)[1:]
    per_block = np.concatenate([[0.0], B.coefficients @ sums])
    return per_block[B.labels]
