"""Small dense linear algebra: eigenvalues, linear solves, definiteness, reachability.

Matrices here are at most a few dozen rows (Jacobians and comparison
matrices of 2N x 2N with N <= 32), so everything is written for clarity
over blocking. General eigenvalues use Householder reduction to upper
Hessenberg form followed by Francis double-shift QR; symmetric matrices
use cyclic Jacobi rotations.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

MAX_DIM = 256


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SingularMatrixError(NumericError):
    def __init__(self, message, pivot_index):
        super().__init__(message)
        self.pivot_index = pivot_index


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray  # complex, length n
    abscissa: float

    def __len__(self):
        return len(self.eigenvalues)


def as_square(m, name="matrix") -> np.ndarray:
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} has non-finite entries")
    return a


def inf_norm(a: np.ndarray) -> float:
    if a.ndim == 1:
        return float(np.max(np.abs(a))) if a.size else 0.0
    return float(np.max(np.sum(np.abs(a), axis=1))) if a.size else 0.0


# ---------------------------------------------------------------------------
# general eigenvalues


def hessenberg(a: np.ndarray) -> np.ndarray:
    """Reduce ``a`` to upper Hessenberg form by Householder similarity transforms."""
    h = np.array(a, dtype=float)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x
        v[0] -= alpha
        vnorm2 = float(v @ v)
        if vnorm2 == 0.0:
            continue
        # H <- (I - 2vv^T/v^Tv) H (I - 2vv^T/v^Tv) on the trailing block
        h[k + 1:, k:] -= np.outer(v, (2.0 / vnorm2) * (v @ h[k + 1:, k:]))
        h[:, k + 1:] -= np.outer(h[:, k + 1:] @ v, (2.0 / vnorm2) * v)
        h[k + 2:, k] = 0.0
    return h


def _hqr(h: list, max_sweeps: int):
    """Francis double-shift QR on an upper Hessenberg matrix (list of rows).

    Returns (real parts, imaginary parts). Follows the classic EISPACK
    ``hqr`` deflation scheme with exceptional shifts at sweeps 10 and 20
    of each eigenvalue.
    """
    n = len(h)
    wr = [0.0] * n
    wi = [0.0] * n
    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += abs(h[i][j])
    nn = n - 1
    t = 0.0
    sweeps = 0
    while nn >= 0:
        its = 0
        while True:
            # look for a single small subdiagonal element
            l = nn
            while l >= 1:
                s = abs(h[l - 1][l - 1]) + abs(h[l][l])
                if s == 0.0:
                    s = anorm
                if abs(h[l][l - 1]) + s == s:
                    h[l][l - 1] = 0.0
                    break
                l -= 1
            x = h[nn][nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = h[nn - 1][nn - 1]
            w = h[nn][nn - 1] * h[nn - 1][nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if sweeps >= max_sweeps:
                partial = (np.array(wr[nn + 1:]), np.array(wi[nn + 1:]))
                raise NumericError(
                    f"QR iteration did not converge after {sweeps} sweeps", partial=partial
                )
            if its == 10 or its == 20:
                t += x
                for i in range(nn + 1):
                    h[i][i] -= x
                s = abs(h[nn][nn - 1]) + abs(h[nn - 1][nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            sweeps += 1
            # form shift and look for two consecutive small subdiagonals
            m = nn - 2
            while m >= l:
                z = h[m][m]
                r = x - z
                s = y - z
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1]
                q = h[m + 1][m + 1] - z - r - s
                r = h[m + 2][m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(h[m][m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(h[m - 1][m - 1]) + abs(z) + abs(h[m + 1][m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                h[i][i - 2] = 0.0
                if i != m + 2:
                    h[i][i - 3] = 0.0
            # double QR step on rows l..nn and columns m..nn
            k = m
            while k <= nn - 1:
                if k != m:
                    p = h[k][k - 1]
                    q = h[k + 1][k - 1]
                    r = h[k + 2][k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s != 0.0:
                    if k == m:
                        if l != m:
                            h[k][k - 1] = -h[k][k - 1]
                    else:
                        h[k][k - 1] = -s * x
                    p += s
                    x = p / s
                    y = q / s
                    z = r / s
                    q /= p
                    r /= p
                    for j in range(k, nn + 1):
                        p = h[k][j] + q * h[k + 1][j]
                        if k != nn - 1:
                            p += r * h[k + 2][j]
                            h[k + 2][j] -= p * z
                        h[k + 1][j] -= p * y
                        h[k][j] -= p * x
                    mmin = nn if nn < k + 3 else k + 3
                    for i in range(l, mmin + 1):
                        p = x * h[i][k] + y * h[i][k + 1]
                        if k != nn - 1:
                            p += z * h[i][k + 2]
                            h[i][k + 2] -= p * r
                        h[i][k + 1] -= p * q
                        h[i][k] -= p
                k += 1
    return wr, wi


def _dense_eigenvalues(a: np.ndarray) -> np.ndarray:
    # unit scaling keeps the deflation tests away from the subnormal range
    scale = inf_norm(a)
    if scale == 0.0:
        return np.zeros(a.shape[0], dtype=complex)
    wr, wi = _hqr(hessenberg(a / scale).tolist(), max_sweeps=100 * a.shape[0])
    return (np.array(wr) + 1j * np.array(wi)) * scale


def eigenvalues(m) -> Spectrum:
    """All eigenvalues of a square real matrix, with the spectral abscissa."""
    a = as_square(m)
    n = a.shape[0]
    if n > MAX_DIM:
        raise DimensionError(f"dimension {n} exceeds {MAX_DIM}")
    if n == 0:
        return Spectrum(np.zeros(0, dtype=complex), -math.inf)
    # The spectrum is the union of the spectra of the diagonal blocks of the
    # support graph's strong components; singleton blocks are exact.
    # Entries below 1e-30 |A| are dropped first: a backward perturbation far
    # under working precision that lets underflowing couplings split off.
    a = np.where(np.abs(a) < 1e-30 * inf_norm(a), 0.0, a)
    parts = []
    for comp in components(a):
        block = a[np.ix_(comp, comp)]
        parts.append(block[0, 0] + 0j if len(comp) == 1 else _dense_eigenvalues(block))
    ev = np.hstack(parts)
    order = np.lexsort((ev.imag, -ev.real))
    ev = ev[order]
    return Spectrum(ev, float(np.max(ev.real)))


def spectral_abscissa(m) -> float:
    return eigenvalues(m).abscissa


def is_metzler(m, tol=0.0) -> bool:
    a = np.asarray(m, dtype=float)
    off = a - np.diag(np.diag(a))
    return bool(np.all(off >= -tol))


def perron_root(m, max_iter=200_000, tol=1e-14):
    """Spectral abscissa and right Perron vector of a Metzler matrix by power iteration.

    Iterates on the nonnegative shift ``m + c I`` with ``c = 1 + max|m_ii|``.
    Convergence is geometric in the ratio of the two largest moduli of the
    shifted matrix, so this is meant for small, irreducible inputs.
    """
    a = as_square(m)
    if not is_metzler(a):
        raise ContractError("power iteration needs a Metzler matrix")
    n = a.shape[0]
    c = 1.0 + float(np.max(np.abs(np.diag(a))))
    s = a + c * np.eye(n)
    v = np.full(n, 1.0 / n)
    lam = 0.0
    for _ in range(max_iter):
        w = s @ v
        lam_new = float(w.sum())  # v sums to one
        w /= lam_new
        if np.max(np.abs(w - v)) < tol and abs(lam_new - lam) < tol * max(1.0, abs(lam_new)):
            v = w
            lam = lam_new
            break
        v = w
        lam = lam_new
    return lam - c, v


# ---------------------------------------------------------------------------
# linear systems


def lu_factor(m):
    """LU with partial pivoting. Returns (lu, perm, sign); raises on a tiny pivot."""
    a = as_square(m).copy()
    n = a.shape[0]
    scale = inf_norm(a)
    cutoff = 1e-13 * scale
    perm = np.arange(n)
    sign = 1.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= cutoff or a[p, k] == 0.0:
            raise SingularMatrixError(f"matrix is singular to working precision at pivot {k}", k)
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
            sign = -sign
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return a, perm, sign


def lu_solve(lu, perm, rhs):
    b = np.asarray(rhs, dtype=float)[perm].copy()
    n = lu.shape[0]
    for i in range(1, n):
        b[i] -= lu[i, :i] @ b[:i]
    for i in range(n - 1, -1, -1):
        b[i] = (b[i] - lu[i, i + 1:] @ b[i + 1:]) / lu[i, i]
    return b


def solve_linear(m, rhs) -> np.ndarray:
    a = as_square(m)
    b = np.asarray(rhs, dtype=float)
    if b.shape != (a.shape[0],):
        raise DimensionError(f"rhs of shape {b.shape} does not match {a.shape}")
    lu, perm, _ = lu_factor(a)
    return lu_solve(lu, perm, b)


def determinant(m) -> float:
    try:
        lu, _, sign = lu_factor(m)
    except SingularMatrixError:
        return 0.0
    return float(sign * np.prod(np.diag(lu)))


# ---------------------------------------------------------------------------
# symmetric matrices


def symmetric_eigenvalues(m, rtol=1e-10) -> np.ndarray:
    a = as_square(m)
    scale = inf_norm(a)
    if inf_norm(a - a.T) > rtol * scale:
        raise ContractError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if n == 1:
        return a[0].copy()
    for sweep in range(100):
        off = float(np.sum(np.abs(np.triu(a, 1))))
        if off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                g = 100.0 * abs(apq)
                if sweep > 3 and abs(a[p, p]) + g == abs(a[p, p]) and abs(a[q, q]) + g == abs(a[q, q]):
                    a[p, q] = a[q, p] = 0.0
                    continue
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) + g == abs(diff):
                    t = apq / diff
                else:
                    theta = 0.5 * diff / apq
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
    else:
        raise NumericError("Jacobi sweeps did not converge", partial=np.sort(np.diag(a)))
    return np.sort(np.diag(a))


def symmetric_max_eig(m) -> float:
    return float(symmetric_eigenvalues(m)[-1])


# ---------------------------------------------------------------------------
# support-graph reachability


def _support(a: np.ndarray, threshold: float) -> np.ndarray:
    s = np.abs(a) > threshold
    np.fill_diagonal(s, False)
    return s


def _reach(succ: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(succ.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(succ[i] & ~seen):
            seen[j] = True
            queue.append(j)
    return seen


def strongly_connected(adjacency, support_threshold: float = 0.0) -> bool:
    a = as_square(adjacency, "adjacency")
    if support_threshold < 0:
        raise ContractError("support_threshold must be nonnegative")
    n = a.shape[0]
    if n <= 1:
        return True
    s = _support(a, support_threshold)
    return bool(_reach(s, 0).all() and _reach(s.T, 0).all())


def components(adjacency) -> list:
    """Strong components of the support graph, each as a sorted index array."""
    a = np.asarray(adjacency, dtype=float)
    s = _support(a, 0.0)
    st = s.T.copy()
    done = np.zeros(a.shape[0], dtype=bool)
    out = []
    for i in range(a.shape[0]):
        if done[i]:
            continue
        comp = _reach(s, i) & _reach(st, i)
        done |= comp
        out.append(np.flatnonzero(comp))
    return out


def reachable_rows(adjacency, targets: Iterable[int], support_threshold: float = 0.0) -> set:
    """Rows with a directed walk (via nonzero entries a_ij, i -> j) into ``targets``.

    Target rows themselves are included.
    """
    a = as_square(adjacency, "adjacency")
    s = _support(a, support_threshold)
    seen = np.zeros(a.shape[0], dtype=bool)
    queue = deque()
    for t in targets:
        if not seen[t]:
            seen[t] = True
            queue.append(t)
    # walk predecessors: i reaches j if s[i, j]
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(s[:, j] & ~seen):
            seen[i] = True
            queue.append(i)
    return set(int(i) for i in np.flatnonzero(seen))
