"""Support selection: entropic optimal transport, top-K hardening, exact oracle."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConfigError, FeasibilityError, NumericError, SizeError

BRUTE_FORCE_LIMIT = 12


@dataclass
class SoftAssignment:
    A_tilde: np.ndarray
    epsilon: float
    iterations_used: int
    marginal_violation: float


@dataclass
class HardAssignment:
    support_indices: np.ndarray  # (N, K) queue positions
    A: np.ndarray  # (N, N*K) binary, block structure

    @property
    def K(self) -> int:
        return self.support_indices.shape[1]


def sinkhorn(
    S,
    epsilon: float = 0.05,
    max_iters: int = 100,
    tol: float = 1e-6,
    *,
    marginals: str = "balanced",
    K: int | None = None,
    kernel=None,
) -> SoftAssignment:
    """Entropy-regularized transport plan between N rows and M columns of ``S``.

    With ``marginals="balanced"`` every row carries mass 1/N and every column
    1/M. ``marginals="partial"`` instead gives each row K/M and routes the
    leftover column mass to a zero-similarity dummy row, which is the exact
    relaxation of "K per row, at most one per column"; the dummy row is dropped
    from the returned plan.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 1 or S.shape[1] < 1:
        raise ConfigError(f"similarity matrix must be a non-empty 2-D array, got shape {S.shape}")
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    if max_iters < 1:
        raise ConfigError(f"max_iters must be >= 1, got {max_iters}")
    if not np.all(np.isfinite(S)):
        raise NumericError("similarity matrix has non-finite entries")
    n, m = S.shape
    if marginals == "balanced":
        L = S / epsilon
        log_r = np.full(n, -np.log(n))
        log_c = np.full(m, -np.log(m))
    elif marginals == "partial":
        if K is None or K < 1 or n * K > m:
            raise ConfigError(f"partial marginals need 1 <= K and N*K <= M (N={n}, M={m}, K={K})")
        log_r = np.full(n, np.log(K / m))
        L = S / epsilon
        if n * K < m:
            L = np.vstack([L, np.zeros((1, m))])
            log_r = np.append(log_r, np.log((m - n * K) / m))
        log_c = np.full(m, -np.log(m))
    else:
        raise ConfigError(f"unknown marginals {marginals!r}")
    kernel = _backend.sinkhorn_log if kernel is None else kernel
    P, _, _, used, viol = kernel(np.ascontiguousarray(L), log_r, log_c, int(max_iters), float(tol))
    return SoftAssignment(P[:n], float(epsilon), int(used), float(viol))


def _hard_from_indices(idx: np.ndarray) -> HardAssignment:
    n, k = idx.shape
    A = np.zeros((n, n * k), dtype=np.int8)
    for i in range(n):
        A[i, i * k:(i + 1) * k] = 1
    return HardAssignment(idx, A)


def select_top_k(soft, K: int) -> HardAssignment:
    """Per row, the K columns with the largest mass in descending order.

    Ties go to the lowest column index. Rows may share columns.
    """
    A_tilde = soft.A_tilde if isinstance(soft, SoftAssignment) else np.asarray(soft, dtype=np.float64)
    m = A_tilde.shape[1]
    if K < 1 or K > m:
        raise ConfigError(f"K must be in [1, M={m}], got {K}")
    # stable sort of the negated row keeps the lowest index first among equals
    idx = np.argsort(-A_tilde, axis=1, kind="stable")[:, :K]
    return _hard_from_indices(idx.astype(np.int64))


def assignment_objective(S, hard: HardAssignment) -> float:
    """Total similarity sum_i sum_k S[i, support_indices[i, k]]."""
    S = np.asarray(S, dtype=np.float64)
    rows = np.arange(S.shape[0])[:, None]
    return float(S[rows, hard.support_indices].sum())


def brute_force_assignment(S, K: int) -> HardAssignment:
    """Exact maximiser of the disjoint K-per-row assignment by enumeration.

    Test oracle only. Among optimal solutions the lexicographically smallest
    flattened index tuple wins; indices within a row are ascending.
    """
    S = np.asarray(S, dtype=np.float64)
    n, m = S.shape
    if n * K > m:
        raise FeasibilityError(f"cannot pick {K} disjoint columns for {n} rows out of {m}")
    if n * K > BRUTE_FORCE_LIMIT:
        raise SizeError(f"N*K={n * K} exceeds the exhaustive-search bound {BRUTE_FORCE_LIMIT}")

    best_score = -np.inf
    best = None

    def search(row, used, chosen, score):
        nonlocal best_score, best
        if row == n:
            # enumeration is in lexicographic order, so strict > keeps the first optimum
            if score > best_score:
                best_score, best = score, list(chosen)
            return
        free = [j for j in range(m) if j not in used]
        for combo in itertools.combinations(free, K):
            chosen.append(combo)
            search(row + 1, used | set(combo), chosen, score + S[row, list(combo)].sum())
            chosen.pop()

    search(0, frozenset(), [], 0.0)
    return _hard_from_indices(np.array(best, dtype=np.int64).reshape(n, K))
