"""Small dense symmetric-matrix primitives: eigendecomposition, pseudoinverse,
least-squares Gram solves and cosine similarity.

Everything is float64. Eigendecompositions go through LAPACK by default; a
compiled cyclic Jacobi solver is kept as an independent second method
(``method="jacobi"``) and is what the test-suite cross-checks against.
"""

import numpy as np

from . import _accel
from .errors import NumericError, ShapeError

DEFAULT_REL_TOL = 1e-10
_NORM_FLOOR = 1e-12


@_accel.njit
def _jacobi_eigh_kernel(a_in, max_sweeps):
    n = a_in.shape[0]
    # padded row stride: power-of-two strides thrash the cache on column walks
    ld = n + 8
    a_buf = np.zeros((n, ld))
    a = a_buf[:, :n]
    vt = np.zeros((n, n))
    for i in range(n):
        vt[i, i] = 1.0
        for j in range(n):
            a[i, j] = a_in[i, j]
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    if scale == 0.0:
        return np.zeros(n), vt
    # stop once a full sweep finds nothing worth rotating: every |a_pq| is
    # below eps * sqrt(|a_pp a_qq|), so small eigenpairs are resolved too
    for _ in range(max_sweeps):
        rotations = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                app = a[p, p]
                aqq = a[q, q]
                # below eps * geometric mean of the pivots a rotation cannot
                # change either eigenvalue in floating point
                if abs(apq) <= 2.220446049250313e-16 * np.sqrt(abs(app * aqq)):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                rotations += 1
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # off-diagonal entries of rows p, q only see the row rotation;
                # columns are refreshed from the rows by symmetry
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        a[k, p] = a[p, k]
                        a[k, q] = a[q, k]
                # eigenvectors stored as rows of vt
                for k in range(n):
                    vpk = vt[p, k]
                    vqk = vt[q, k]
                    vt[p, k] = c * vpk - s * vqk
                    vt[q, k] = s * vpk + c * vqk
        if rotations == 0:
            break
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, vt.T.copy()


def jacobi_eigh(m, max_sweeps=60):
    """Eigen-decompose a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, v)`` with ascending eigenvalues and orthonormal columns,
    matching ``numpy.linalg.eigh``'s layout.
    """
    m = np.ascontiguousarray(m, dtype=np.float64)
    w, v = _jacobi_eigh_kernel(m, max_sweeps)
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sym_eigh(m, method="lapack"):
    """Eigendecomposition of a symmetric matrix.

    ``method="lapack"`` (the default on both backends) calls LAPACK's
    divide-and-conquer solver; ``"jacobi"`` uses the compiled cyclic Jacobi
    solver above, which reaches the same accuracy but runs 10-40x slower at
    minibatch sizes (see benchmarks/bench_kernels.py).
    """
    if method == "lapack":
        return np.linalg.eigh(m)
    if method == "jacobi":
        return jacobi_eigh(m)
    raise ValueError(f"method must be 'lapack' or 'jacobi', got {method!r}")


def _check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} has non-finite entries")


def _check_symmetric(m):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    _check_finite(m, "matrix")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if scale > 0 and np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise ShapeError("matrix is not symmetric to within 1e-10 relative")


def _pinv_spectrum(m, rel_tol, method="lapack"):
    w, v = sym_eigh(0.5 * (m + m.T), method)
    top = np.max(np.abs(w)) if w.size else 0.0
    keep = w > rel_tol * top if top > 0 else np.zeros_like(w, dtype=bool)
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return inv, v


def sym_pinv(m, rel_tol=DEFAULT_REL_TOL, method="lapack"):
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix.

    Eigenvalues at or below ``rel_tol * max|eigenvalue|`` (negative round-off
    included) are treated as zero.
    """
    m = np.asarray(m, dtype=np.float64)
    _check_symmetric(m)
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    inv, v = _pinv_spectrum(m, rel_tol, method)
    p = (v * inv) @ v.T
    return 0.5 * (p + p.T)


class PsdPinv:
    """Factored pseudoinverse of a symmetric PSD matrix, reusable across right-hand sides."""

    def __init__(self, g, rel_tol=DEFAULT_REL_TOL, method="lapack"):
        g = np.asarray(g, dtype=np.float64)
        _check_symmetric(g)
        if not 0.0 < rel_tol < 1.0:
            raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
        self.n = g.shape[0]
        self.inv, self.v = _pinv_spectrum(g, rel_tol, method)

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.ndim != 1 or b.shape[0] != self.n:
            raise ShapeError(f"rhs of length {b.shape} does not match matrix side {self.n}")
        _check_finite(b, "rhs")
        return self.v @ (self.inv * (self.v.T @ b))


def lstsq_psd(g, b, rel_tol=DEFAULT_REL_TOL, method="lapack"):
    """Minimum-norm least-squares solution of ``g @ z = b`` for PSD ``g``."""
    return PsdPinv(g, rel_tol, method).solve(b)


def gram_min_norm(phi, b, rel_tol=DEFAULT_REL_TOL, side="columns"):
    """Minimum-norm solution ``s`` of ``phi.T @ s = b`` in the least-squares sense.

    ``side="columns"`` works through ``phi.T phi`` (``s = phi pinv(phi^T phi) b``),
    ``side="rows"`` through ``phi phi^T`` (``s = pinv(phi phi^T) phi b``). Both
    are the same vector in exact arithmetic. One step of refinement on the
    residual ``b - phi.T s`` recovers most of the accuracy lost to squaring the
    condition number when the Gram matrix used is nonsingular.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {phi.shape}")
    _check_finite(phi, "phi")
    if side == "columns":
        gram = phi.T @ phi
        fac = PsdPinv(0.5 * (gram + gram.T), rel_tol)
        z = fac.solve(b)
        z = z + fac.solve(b - phi.T @ (phi @ z))
        return phi @ z, z
    if side == "rows":
        gram = phi @ phi.T
        fac = PsdPinv(0.5 * (gram + gram.T), rel_tol)
        s = fac.solve(phi @ b)
        s = s + fac.solve(phi @ (b - phi.T @ s))
        return s, None
    raise ValueError(f"side must be 'columns' or 'rows', got {side!r}")


def cosine(u, v):
    """Cosine similarity with total conventions for degenerate inputs.

    Both norms below 1e-12 gives 1 (nothing to align); exactly one gives 0.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    small_u = nu < _NORM_FLOOR
    small_v = nv < _NORM_FLOOR
    if small_u and small_v:
        return 1.0
    if small_u or small_v:
        return 0.0
    c = float(u @ v) / (nu * nv)
    return min(1.0, max(-1.0, c))


def dual_pinv_identity_check(phi, tol, rel_tol=DEFAULT_REL_TOL, method="lapack"):
    """Check ``pinv(phi phi^T) phi == phi pinv(phi^T phi)`` in max-abs norm."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {phi.shape}")
    _check_finite(phi, "phi")
    left = sym_pinv(phi @ phi.T, rel_tol, method) @ phi
    right = phi @ sym_pinv(phi.T @ phi, rel_tol, method)
    return bool(np.max(np.abs(left - right), initial=0.0) <= tol)
