"""Dense backends for the representation subproblems.

Every routine here solves a strictly convex quadratic exactly (up to the
stated residual) and is deterministic: identical inputs give bit-identical
outputs. Shapes follow the d-by-n data convention, so coefficient matrices
are n-by-n.
"""

from __future__ import annotations

import numpy as np

from .errors import SolverError

SYMMETRY_RTOL = 1e-10


def _as_float_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise SolverError(f"{name} must be 2-D, got shape {M.shape}")
    return M


def _require_positive(w, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0 or not np.isfinite(w).all() or (w <= 0).any():
        raise SolverError(f"{name} must be strictly positive and finite")
    return w


def _check_symmetric(M, name: str) -> np.ndarray:
    M = _as_float_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise SolverError(f"{name} must be square, got shape {M.shape}")
    scale = np.abs(M).max()
    if scale > 0 and np.abs(M - M.T).max() > SYMMETRY_RTOL * scale:
        raise SolverError(f"{name} is not symmetric within tolerance")
    return 0.5 * (M + M.T)


def lsr_closed_form(X, lam: float) -> np.ndarray:
    """Ridge self-representation: Z = (X'X + lam*I)^-1 X'X.

    One symmetric factorization serves all n right-hand sides. lam > 0
    guarantees invertibility.
    """
    X = _as_float_matrix(X, "X")
    if lam <= 0:
        raise SolverError("lam must be positive")
    G = X.T @ X
    G = 0.5 * (G + G.T)
    n = G.shape[0]
    try:
        return np.linalg.solve(G + lam * np.eye(n), G)
    except np.linalg.LinAlgError as exc:  # defensive: cannot occur for lam > 0
        raise SolverError(f"ridge system singular: {exc}") from exc


def weighted_ridge_column(X, weights, target, lam: float) -> np.ndarray:
    """Per-column weighted ridge.

    Minimizes ``|| Diag(sqrt(weights)) (target - X z) ||_2^2 + lam ||z||_2^2``
    via its normal equations
    ``(X' Diag(weights) X + lam I) z = X' Diag(weights) target``.

    Parameters
    ----------
    X : ndarray (d, n)
    weights : ndarray (d,)
        Strictly positive per-feature weights.
    target : ndarray (d,)
    lam : float, positive
    """
    X = _as_float_matrix(X, "X")
    w = _require_positive(weights, "weights")
    if lam <= 0:
        raise SolverError("lam must be positive")
    t = np.asarray(target, dtype=np.float64).ravel()
    if w.shape[0] != X.shape[0] or t.shape[0] != X.shape[0]:
        raise SolverError("weights and target must have length d")
    Xw = X * w[:, None]
    G = X.T @ Xw
    G = 0.5 * (G + G.T)
    rhs = Xw.T @ t
    try:
        return np.linalg.solve(G + lam * np.eye(G.shape[0]), rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"weighted ridge system singular: {exc}") from exc


def weighted_ridge_row(X, weights, lam: float) -> np.ndarray:
    """Row-weighted ridge with a single shared factorization for all columns.

    Solves ``min_Z Tr((X - XZ)' Diag(weights) (X - XZ)) + lam ||Z||_F^2``,
    i.e. ``Z = (X' Diag(weights) X + lam I)^-1 X' Diag(weights) X``.
    """
    X = _as_float_matrix(X, "X")
    w = _require_positive(weights, "weights")
    if lam <= 0:
        raise SolverError("lam must be positive")
    if w.shape[0] != X.shape[0]:
        raise SolverError("weights must have length d")
    G = X.T @ (X * w[:, None])
    G = 0.5 * (G + G.T)
    try:
        return np.linalg.solve(G + lam * np.eye(G.shape[0]), G)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"row-weighted ridge system singular: {exc}") from exc


def diag_reg_ridge_column(X, loss_weights, reg_weights, target, lam: float) -> np.ndarray:
    """Weighted ridge with a diagonally reweighted penalty (IRLS inner step).

    Solves ``(X' D_L X + lam Diag(reg_weights)) z = X' D_L target`` with
    ``D_L = Diag(loss_weights)``; all weights strictly positive.
    """
    X = _as_float_matrix(X, "X")
    lw = _require_positive(loss_weights, "loss_weights")
    rw = _require_positive(reg_weights, "reg_weights")
    if lam <= 0:
        raise SolverError("lam must be positive")
    t = np.asarray(target, dtype=np.float64).ravel()
    if lw.shape[0] != X.shape[0] or t.shape[0] != X.shape[0]:
        raise SolverError("loss_weights and target must have length d")
    if rw.shape[0] != X.shape[1]:
        raise SolverError("reg_weights must have length n")
    Xw = X * lw[:, None]
    G = X.T @ Xw
    G = 0.5 * (G + G.T)
    M = G + lam * np.diag(rw)
    try:
        return np.linalg.solve(M, Xw.T @ t)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"diagonally regularized system singular: {exc}") from exc


def nuclear_coupled_solve(A, W, B, lam: float) -> np.ndarray:
    """Solve the two-sided coupling equation ``A Z + lam Z W = B``.

    A and W must be symmetric; A positive definite together with W positive
    semidefinite (or the other way around) guarantees every eigenvalue sum
    ``alpha_p + lam * omega_q`` is positive, which is what the solve needs.
    Implemented by eigendecomposition of A and W and elementwise division in
    the joint eigenbasis.
    """
    if lam <= 0:
        raise SolverError("lam must be positive")
    A = _check_symmetric(A, "A")
    W = _check_symmetric(W, "W")
    B = _as_float_matrix(B, "B")
    if A.shape != W.shape or B.shape != A.shape:
        raise SolverError("A, W, B must share the same square shape")
    alpha, U = np.linalg.eigh(A)
    omega, V = np.linalg.eigh(W)
    denom = alpha[:, None] + lam * omega[None, :]
    scale = max(np.abs(alpha).max(), lam * np.abs(omega).max(), 1.0)
    if denom.min() <= 1e-14 * scale:
        raise SolverError(
            "coupled system is singular: some alpha_p + lam*omega_q <= 0"
        )
    return U @ ((U.T @ B @ V) / denom) @ V.T


def composite_cg_solve(
    X,
    loss_weights,
    reg_entry_weights,
    reg_coupling,
    gamma: float,
    lam: float,
    tol: float = 1e-10,
    z0: np.ndarray | None = None,
    zero_diagonal: bool = False,
    max_iter: int | None = None,
) -> np.ndarray:
    """Conjugate-gradient solve of the fully coupled quadratic.

    The stationarity condition is::

        loss_term(Z) + lam * (reg_entry_weights * Z) + lam*gamma * (Z @ reg_coupling) = B

    where the loss term and right-hand side B depend on which weights the
    ``loss_weights`` state carries:

    * entry weights S (d, n):  ``X' (S * (X Z))``,  B = ``X' (S * X)``
    * column weights c (n,):   ``(X'X) Z Diag(c)``, B = ``(X'X) Diag(c)``
    * row weights w (d,):      ``(X' Diag(w) X) Z``, B = ``X' Diag(w) X``

    Parameters
    ----------
    loss_weights : object
        Anything exposing ``entry_weights`` / ``col_weights`` / ``row_weights``
        attributes with exactly one of them set (a WeightState works).
    reg_entry_weights : ndarray (n, n)
        Strictly positive entrywise penalty weights.
    reg_coupling : ndarray (n, n)
        Symmetric positive semidefinite coupling matrix.
    tol : float
        Return when the residual (gradient) norm is <= tol * (1 + ||B||_F).

    Raises
    ------
    SolverError
        If CG does not reach the tolerance within the iteration cap
        (default 10 n^2); the message reports the achieved residual.
    """
    X = _as_float_matrix(X, "X")
    n = X.shape[1]
    T = _as_float_matrix(reg_entry_weights, "reg_entry_weights")
    if T.shape != (n, n):
        raise SolverError(f"reg_entry_weights must be ({n}, {n})")
    _require_positive(T, "reg_entry_weights")
    Wc = _check_symmetric(reg_coupling, "reg_coupling")
    if Wc.shape != (n, n):
        raise SolverError(f"reg_coupling must be ({n}, {n})")
    if lam <= 0 or gamma < 0 or tol <= 0:
        raise SolverError("need lam > 0, gamma >= 0, tol > 0")
    apply_loss, B = _loss_operator(X, loss_weights)
    Z, converged, resnorm, target = _cg_quadratic(
        apply_loss, B, T, Wc, gamma, lam,
        z0=z0, tol=tol, zero_diagonal=zero_diagonal, max_iter=max_iter,
    )
    if not converged:
        raise SolverError(
            f"CG did not converge: residual {resnorm:.3e} > target {target:.3e}"
        )
    return Z


def _loss_operator(X, loss_weights):
    """Build (apply, rhs) for the loss part of the coupled quadratic."""
    entry = getattr(loss_weights, "entry_weights", None)
    col = getattr(loss_weights, "col_weights", None)
    row = getattr(loss_weights, "row_weights", None)
    supplied = [w is not None for w in (entry, col, row)]
    if sum(supplied) != 1:
        raise SolverError("loss_weights must carry exactly one weight structure")
    if entry is not None:
        S = _require_positive(entry, "entry_weights").reshape(X.shape)

        def apply(Z):
            return X.T @ (S * (X @ Z))

        return apply, X.T @ (S * X)
    if col is not None:
        c = _require_positive(col, "col_weights").ravel()
        if c.shape[0] != X.shape[1]:
            raise SolverError("col_weights must have length n")
        G = X.T @ X
        G = 0.5 * (G + G.T)

        def apply(Z):
            return (G @ Z) * c[None, :]

        return apply, G * c[None, :]
    w = _require_positive(row, "row_weights").ravel()
    if w.shape[0] != X.shape[0]:
        raise SolverError("row_weights must have length d")
    Gw = X.T @ (X * w[:, None])
    Gw = 0.5 * (Gw + Gw.T)

    def apply(Z):
        return Gw @ Z

    return apply, Gw


def _cg_quadratic(
    apply_loss,
    B,
    T,
    Wc,
    gamma: float,
    lam: float,
    z0: np.ndarray | None,
    tol: float,
    zero_diagonal: bool,
    max_iter: int | None,
):
    """CG on the symmetric positive definite normal operator.

    Allows T entries of zero (internal callers), warm starts, and an optional
    zero-diagonal subspace projection. Returns (Z, converged, residual,
    target); never raises on non-convergence.
    """
    n = B.shape[0]
    couple = gamma > 0 and np.abs(Wc).max() > 0

    def operator(Z):
        out = apply_loss(Z) + lam * (T * Z)
        if couple:
            out = out + (lam * gamma) * (Z @ Wc)
        if zero_diagonal:
            np.fill_diagonal(out, 0.0)
        return out

    B = B.copy()
    if zero_diagonal:
        np.fill_diagonal(B, 0.0)
    Z = np.zeros_like(B) if z0 is None else np.array(z0, dtype=np.float64)
    if zero_diagonal:
        np.fill_diagonal(Z, 0.0)
    target = tol * (1.0 + np.linalg.norm(B))
    R = B - operator(Z)
    resnorm = np.linalg.norm(R)
    if resnorm <= target:
        return Z, True, resnorm, target
    P = R.copy()
    rs_old = float((R * R).sum())
    cap = max_iter if max_iter is not None else 10 * n * n
    for _ in range(cap):
        AP = operator(P)
        denom = float((P * AP).sum())
        if denom <= 0:
            break  # numerically lost positive definiteness
        step = rs_old / denom
        Z = Z + step * P
        R = R - step * AP
        rs_new = float((R * R).sum())
        resnorm = np.sqrt(rs_new)
        if resnorm <= target:
            return Z, True, resnorm, target
        P = R + (rs_new / rs_old) * P
        rs_old = rs_new
    return Z, resnorm <= target, resnorm, target
