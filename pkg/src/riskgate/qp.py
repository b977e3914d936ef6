"""Dense convex QP solver.

Solves
    min_x  0.5 x'Hx + f'x
    s.t.   A x <= b,   lb <= x <= ub

with H symmetric positive semidefinite, using the Goldfarb-Idnani dual
active-set method: start from the unconstrained minimizer and add violated
constraints one at a time, maintaining a Cholesky/QR factorization of the
active set.  Singular H is handled by a tiny internal Tikhonov shift followed
by a KKT polish step against the original H.

Infeasibility is detected affirmatively: the method terminates with an
infeasible status exactly when a violated constraint's normal is a
nonnegative combination of active normals (a Farkas certificate), never by
iteration exhaustion alone.  All operations are deterministic; identical
inputs give bitwise-identical outputs.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

_ROW_GEN, _ROW_LB, _ROW_UB = 0, 1, 2


@dataclass
class QpProblem:
    """Dense QP data; A/b/lb/ub may be None when absent."""

    H: np.ndarray
    f: np.ndarray
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    objective: float
    kkt_residual: float
    iterations: int
    lam: np.ndarray
    mu_lb: np.ndarray
    mu_ub: np.ndarray


def _validate(prob: QpProblem):
    H = np.asarray(prob.H, dtype=float)
    f = np.asarray(prob.f, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"H must be square, got shape {H.shape}")
    n = H.shape[0]
    if f.shape != (n,):
        raise ValueError(f"f must have shape ({n},), got {f.shape}")
    if not np.all(np.isfinite(H)) or not np.all(np.isfinite(f)):
        raise ValueError("H and f must be finite")
    scale = max(1.0, float(np.abs(H).max()))
    if np.abs(H - H.T).max() > 1e-10 * scale:
        raise ValueError("H must be symmetric")
    if prob.A is None:
        A = np.zeros((0, n))
        b = np.zeros(0)
    else:
        A = np.asarray(prob.A, dtype=float)
        b = np.asarray(prob.b, dtype=float)
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(f"A must have shape (m, {n}), got {A.shape}")
        if b.shape != (A.shape[0],):
            raise ValueError(f"b must have shape ({A.shape[0]},), got {b.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("A must be finite")
        if np.any(np.isnan(b)):
            raise ValueError("b must not contain NaN")
    lb = np.full(n, -np.inf) if prob.lb is None else np.asarray(prob.lb, dtype=float)
    ub = np.full(n, np.inf) if prob.ub is None else np.asarray(prob.ub, dtype=float)
    if lb.shape != (n,) or ub.shape != (n,):
        raise ValueError("lb and ub must have shape (n,)")
    if np.any(np.isnan(lb)) or np.any(np.isnan(ub)):
        raise ValueError("bounds must not contain NaN")
    return H, f, A, b, lb, ub


def _factor(H: np.ndarray):
    """Cholesky of H, regularizing PSD-singular H; rejects indefinite H."""
    n = H.shape[0]
    try:
        return np.linalg.cholesky(H), 0.0
    except np.linalg.LinAlgError:
        pass
    eig_min = float(np.linalg.eigvalsh(H)[0])
    if eig_min < -1e-8:
        raise ValueError(f"H is not positive semidefinite (min eigenvalue {eig_min:.3e})")
    scale = max(1.0, float(np.abs(H).max()))
    sigma = max(1e-10 * scale, -4.0 * eig_min)
    for _ in range(4):
        try:
            return np.linalg.cholesky(H + sigma * np.eye(n)), sigma
        except np.linalg.LinAlgError:
            sigma *= 100.0
    raise ValueError("H could not be factorized even after regularization")


def _kkt_residual(H, f, A, b, lb, ub, x, lam, mu_lb, mu_ub) -> float:
    stat = float(np.abs(H @ x + f + A.T @ lam + mu_ub - mu_lb).max()) if x.size else 0.0
    primal = 0.0
    if A.shape[0]:
        primal = max(primal, float((A @ x - b).max(initial=-np.inf)), 0.0)
    fin_lb = np.isfinite(lb)
    fin_ub = np.isfinite(ub)
    if fin_lb.any():
        primal = max(primal, float((lb[fin_lb] - x[fin_lb]).max()), 0.0)
    if fin_ub.any():
        primal = max(primal, float((x[fin_ub] - ub[fin_ub]).max()), 0.0)
    dual = max(0.0, float(-min(lam.min(initial=0.0), mu_lb.min(initial=0.0), mu_ub.min(initial=0.0))))
    comp = 0.0
    if A.shape[0]:
        comp = max(comp, float(np.abs(lam * (A @ x - b)).max()))
    if fin_lb.any():
        comp = max(comp, float(np.abs(mu_lb[fin_lb] * (lb[fin_lb] - x[fin_lb])).max()))
    if fin_ub.any():
        comp = max(comp, float(np.abs(mu_ub[fin_ub] * (x[fin_ub] - ub[fin_ub])).max()))
    return max(stat, primal, dual, comp)


def solve(prob: QpProblem, tol: float = 1e-8, max_iter: int = 500) -> QpSolution:
    """Solve the QP; status is one of 'optimal', 'infeasible', 'max_iter'."""
    H, f, A, b, lb, ub = _validate(prob)
    n = H.shape[0]
    m = A.shape[0]

    def result(x, status, iters, lam=None, mulb=None, muub=None):
        lam = np.zeros(m) if lam is None else lam
        mulb = np.zeros(n) if mulb is None else mulb
        muub = np.zeros(n) if muub is None else muub
        obj = float(0.5 * x @ H @ x + f @ x)
        kkt = (
            _kkt_residual(H, f, A, b, lb, ub, x, lam, mulb, muub)
            if status == OPTIMAL
            else np.inf
        )
        return QpSolution(x, status, obj, kkt, iters, lam, mulb, muub)

    # An empty box is provably infeasible without any iteration.
    if np.any(lb > ub):
        return result(np.zeros(n), INFEASIBLE, 0)
    if np.any(b == -np.inf):
        return result(np.zeros(n), INFEASIBLE, 0)

    # Assemble all constraints as normalized rows c'x >= d.
    keep = np.isfinite(b)
    blocks_c = [-A[keep]]
    blocks_d = [-b[keep]]
    blocks_kind = [np.full(int(keep.sum()), _ROW_GEN)]
    blocks_ref = [np.nonzero(keep)[0]]
    eye = np.eye(n)
    fin_lb = np.isfinite(lb)
    if fin_lb.any():
        blocks_c.append(eye[fin_lb])
        blocks_d.append(lb[fin_lb])
        blocks_kind.append(np.full(int(fin_lb.sum()), _ROW_LB))
        blocks_ref.append(np.nonzero(fin_lb)[0])
    fin_ub = np.isfinite(ub)
    if fin_ub.any():
        blocks_c.append(-eye[fin_ub])
        blocks_d.append(-ub[fin_ub])
        blocks_kind.append(np.full(int(fin_ub.sum()), _ROW_UB))
        blocks_ref.append(np.nonzero(fin_ub)[0])
    C = np.concatenate(blocks_c, axis=0)
    d = np.concatenate(blocks_d)
    kind = np.concatenate(blocks_kind)
    ref = np.concatenate(blocks_ref)

    norms = np.linalg.norm(C, axis=1)
    zero_rows = norms < 1e-14
    if zero_rows.any():
        if np.any(d[zero_rows] > tol):
            return result(np.zeros(n), INFEASIBLE, 0)
        keep_rows = ~zero_rows
        C, d, kind, ref, norms = C[keep_rows], d[keep_rows], kind[keep_rows], ref[keep_rows], norms[keep_rows]
    C = C / norms[:, None]
    d = d / norms
    n_rows = C.shape[0]

    L, sigma = _factor(H)
    J = solve_triangular(L, np.eye(n), lower=True, trans=1)  # L^{-T}
    x = solve_triangular(L, solve_triangular(L, -f, lower=True), lower=True, trans=1)

    if n_rows == 0:
        return result(x, OPTIMAL, 0)

    active: list[int] = []
    u = np.zeros(0)
    R = np.zeros((n, n))
    q = 0
    iters = 0

    def drop(idx: int):
        nonlocal q, R, J
        del active[idx]
        if idx < q - 1:
            R[:, idx : q - 1] = R[:, idx + 1 : q]
        q -= 1
        for j in range(idx, q):
            a, bb = R[j, j], R[j + 1, j]
            rho = np.hypot(a, bb)
            if rho < 1e-300:
                continue
            gc, gs = a / rho, bb / rho
            rj = gc * R[j, j:q] + gs * R[j + 1, j:q]
            rj1 = -gs * R[j, j:q] + gc * R[j + 1, j:q]
            R[j, j:q], R[j + 1, j:q] = rj, rj1
            cj = gc * J[:, j] + gs * J[:, j + 1]
            cj1 = -gs * J[:, j] + gc * J[:, j + 1]
            J[:, j], J[:, j + 1] = cj, cj1

    while True:
        viol = C @ x - d
        if q:
            viol[np.asarray(active)] = np.inf
        p = int(np.argmin(viol))
        if viol[p] >= -tol:
            break  # optimal
        np_row = C[p]
        u_plus = np.append(u, 0.0)
        while True:
            iters += 1
            if iters > max_iter:
                lam, mulb, muub = _extract_duals(active, u_plus[:q], kind, ref, norms, m, n)
                return result(x, MAX_ITER, iters, lam, mulb, muub)
            d_vec = J.T @ np_row
            d2 = d_vec[q:]
            denom = float(d2 @ d2)
            r = (
                solve_triangular(R[:q, :q], d_vec[:q], lower=False)
                if q
                else np.zeros(0)
            )
            t1 = np.inf
            k_block = -1
            if q:
                pos = r > 1e-12
                if pos.any():
                    ratios = np.where(pos, u_plus[:q] / np.where(pos, r, 1.0), np.inf)
                    k_block = int(np.argmin(ratios))
                    t1 = float(ratios[k_block])
            s_p = float(np_row @ x - d[p])
            t2 = -s_p / denom if denom > 1e-14 else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                # Farkas certificate: np_row is a nonnegative combination of
                # active normals yet the constraint is violated.
                lam, mulb, muub = _extract_duals(active, u_plus[:q], kind, ref, norms, m, n)
                return result(x, INFEASIBLE, iters, lam, mulb, muub)
            if t2 == np.inf:
                u_plus[:q] -= t * r
                u_plus[q] += t
                u_plus = np.delete(u_plus, k_block)
                drop(k_block)
                continue
            z = J[:, q:] @ d2
            x = x + t * z
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t2 <= t1:
                # Full step: add constraint p via a Householder reflection
                # mapping d2 onto the first free column.
                w = d2
                alpha = float(np.linalg.norm(w))
                if alpha < 1e-300:
                    lam, mulb, muub = _extract_duals(active, u_plus[:q], kind, ref, norms, m, n)
                    return result(x, MAX_ITER, iters, lam, mulb, muub)
                if w[0] < 0:
                    alpha = -alpha
                v = w.copy()
                v[0] -= alpha
                vnorm2 = float(v @ v)
                if vnorm2 > 1e-300:
                    Jq = J[:, q:]
                    J[:, q:] = Jq - (2.0 / vnorm2) * np.outer(Jq @ v, v)
                R[:q, q] = d_vec[:q]
                R[q, q] = alpha
                active.append(p)
                u = u_plus
                q += 1
                break
            u_plus = np.delete(u_plus, k_block)
            drop(k_block)

    lam, mulb, muub = _extract_duals(active, u, kind, ref, norms, m, n)

    if sigma > 0.0:
        polished = _polish(H, f, C, d, active, norms, x)
        if polished is not None:
            x_p, u_p = polished
            lam_p, mulb_p, muub_p = _extract_duals(active, u_p, kind, ref, norms, m, n)
            res_p = _kkt_residual(H, f, A, b, lb, ub, x_p, lam_p, mulb_p, muub_p)
            res_0 = _kkt_residual(H, f, A, b, lb, ub, x, lam, mulb, muub)
            if res_p < res_0:
                x, lam, mulb, muub = x_p, lam_p, mulb_p, muub_p

    return result(x, OPTIMAL, iters, lam, mulb, muub)


def _extract_duals(active, u, kind, ref, norms, m, n):
    lam = np.zeros(m)
    mu_lb = np.zeros(n)
    mu_ub = np.zeros(n)
    for pos, row in enumerate(active):
        val = max(float(u[pos]), 0.0) / norms[row]
        if kind[row] == _ROW_GEN:
            lam[ref[row]] = val
        elif kind[row] == _ROW_LB:
            mu_lb[ref[row]] = val
        else:
            mu_ub[ref[row]] = val
    return lam, mu_lb, mu_ub


def _polish(H, f, C, d, active, norms, x_fallback):
    """Re-solve the equality-constrained KKT system with the original H."""
    n = H.shape[0]
    q = len(active)
    C_act = C[active]
    kkt = np.zeros((n + q, n + q))
    kkt[:n, :n] = H
    kkt[:n, n:] = -C_act.T
    kkt[n:, :n] = C_act
    rhs = np.concatenate([-f, d[np.asarray(active, dtype=int)]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        # Singular KKT system (H has null directions the active set leaves
        # free): take the minimum-norm stationary point instead.
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    x_p, u_p = sol[:n], sol[n:]
    if not np.all(np.isfinite(x_p)):
        return None
    if q and np.any(u_p < -1e-9 * (1.0 + np.abs(u_p).max())):
        return None
    if np.any(C @ x_p - d < -1e-7):
        return None
    return x_p, u_p
