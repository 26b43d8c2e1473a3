"""Numba kernels. Arrays are flat, row-major; per-dimension metadata is passed explicitly.

``lf_step`` writes the next iterate into ``out`` and returns the max absolute change
over ``trusted`` nodes, or NaN if any new value is not finite.
"""
import numpy as np

from ._accel import optional_njit


@optional_njit(cache=True, nogil=True)
def lf_step(V, L, shape, strides, periodic, dx, alpha,
            A, Bu, u_mid, u_half, Bp, p_mid, p_half, Bd, d_mid, d_half,
            dt, trusted, out):
    n_dim = shape.shape[0]
    n_nodes = V.shape[0]
    change = 0.0
    finite = True
    n_u = Bu.shape[1]
    n_p = Bp.shape[1]
    n_d = Bd.shape[1]
    var_a = A.shape[1] > 1
    var_u = Bu.shape[2] > 1
    var_p = Bp.shape[2] > 1
    var_d = Bd.shape[2] > 1
    var_alpha = alpha.shape[1] > 1
    costate = np.empty(n_dim)
    idx = np.zeros(n_dim, dtype=np.int64)
    for i in range(n_nodes):
        vi = V[i]
        diss = 0.0
        ial = i if var_alpha else 0
        for k in range(n_dim):
            nk = shape[k]
            sk = strides[k]
            ik = idx[k]
            dk = dx[k]
            if ik > 0:
                left = V[i - sk]
            elif periodic[k]:
                left = V[i + (nk - 1) * sk]
            else:
                left = np.nan
            if ik < nk - 1:
                right = V[i + sk]
            elif periodic[k]:
                right = V[i - (nk - 1) * sk]
            else:
                right = np.nan
            if left != left:
                dp = (right - vi) / dk
                dm = dp
            elif right != right:
                dm = (vi - left) / dk
                dp = dm
            else:
                dm = (vi - left) / dk
                dp = (right - vi) / dk
            costate[k] = 0.5 * (dm + dp)
            diss += alpha[k, ial] * 0.5 * (dp - dm)

        ia = i if var_a else 0
        ham = 0.0
        for k in range(n_dim):
            ham += costate[k] * A[k, ia]

        iu = i if var_u else 0
        for j in range(n_u):
            c = 0.0
            for k in range(n_dim):
                c += costate[k] * Bu[k, j, iu]
            ham += c * u_mid[j] - abs(c) * u_half[j]

        ip = i if var_p else 0
        for j in range(n_p):
            c = 0.0
            for k in range(n_dim):
                c += costate[k] * Bp[k, j, ip]
            ham += c * p_mid[j] + abs(c) * p_half[j]

        idd = i if var_d else 0
        for j in range(n_d):
            c = 0.0
            for k in range(n_dim):
                c += costate[k] * Bd[k, j, idd]
            ham += c * d_mid[j] + abs(c) * d_half[j]

        v_new = vi + dt * (ham + diss)
        if v_new < L[i]:
            v_new = L[i]
        out[i] = v_new
        if not np.isfinite(v_new):
            finite = False
        elif trusted[i]:
            delta = abs(v_new - vi)
            if delta > change:
                change = delta

        # advance the row-major multi-index
        k = n_dim - 1
        while k >= 0:
            idx[k] += 1
            if idx[k] < shape[k]:
                break
            idx[k] = 0
            k -= 1
    if not finite:
        return np.nan
    return change


@optional_njit(cache=True, nogil=True)
def interp_points(fields, shape, strides, periodic, lo, dx, X, out):
    n_dim = shape.shape[0]
    n_fields = fields.shape[0]
    n_corner = 1 << n_dim
    base = np.empty(n_dim, dtype=np.int64)
    nxt = np.empty(n_dim, dtype=np.int64)
    w = np.empty(n_dim)
    for p in range(X.shape[0]):
        for k in range(n_dim):
            s = (X[p, k] - lo[k]) / dx[k]
            nk = shape[k]
            if periodic[k]:
                s = s % nk
                b = int(np.floor(s))
                if b >= nk:
                    b = nk - 1
                base[k] = b
                nxt[k] = (b + 1) % nk
            else:
                b = int(np.floor(s))
                if b < 0:
                    b = 0
                if b > nk - 2:
                    b = nk - 2
                base[k] = b
                nxt[k] = b + 1
            w[k] = s - b
        for f in range(n_fields):
            out[p, f] = 0.0
        for c in range(n_corner):
            weight = 1.0
            off = 0
            for k in range(n_dim):
                if (c >> k) & 1:
                    weight *= w[k]
                    off += nxt[k] * strides[k]
                else:
                    weight *= 1.0 - w[k]
                    off += base[k] * strides[k]
            if weight != 0.0:
                for f in range(n_fields):
                    out[p, f] += weight * fields[f, off]


@optional_njit(cache=True, nogil=True)
def godunov_step(V, L, shape, strides, periodic, dx, a, s, dt, trusted, out):
    """Exact upwind update for ``H(p) = sum_k a_k p_k + s_k |p_k|``."""
    n_dim = shape.shape[0]
    n_nodes = V.shape[0]
    var = a.shape[1] > 1
    change = 0.0
    finite = True
    idx = np.zeros(n_dim, dtype=np.int64)
    for i in range(n_nodes):
        vi = V[i]
        ia = i if var else 0
        ham = 0.0
        for k in range(n_dim):
            nk = shape[k]
            sk = strides[k]
            ik = idx[k]
            dk = dx[k]
            if ik > 0:
                left = V[i - sk]
            elif periodic[k]:
                left = V[i + (nk - 1) * sk]
            else:
                left = np.nan
            if ik < nk - 1:
                right = V[i + sk]
            elif periodic[k]:
                right = V[i - (nk - 1) * sk]
            else:
                right = np.nan
            if left != left:
                dp = (right - vi) / dk
                dm = dp
            elif right != right:
                dm = (vi - left) / dk
                dp = dm
            else:
                dm = (vi - left) / dk
                dp = (right - vi) / dk
            ak = a[k, ia]
            sk_ = s[k, ia]
            hm = ak * dm + sk_ * abs(dm)
            hp = ak * dp + sk_ * abs(dp)
            if dm <= dp:
                h = hm if hm > hp else hp
                if dm < 0.0 < dp and h < 0.0:
                    h = 0.0
            else:
                h = hm if hm < hp else hp
                if dp < 0.0 < dm and h > 0.0:
                    h = 0.0
            ham += h
        v_new = vi + dt * ham
        if v_new < L[i]:
            v_new = L[i]
        out[i] = v_new
        if not np.isfinite(v_new):
            finite = False
        elif trusted[i]:
            delta = abs(v_new - vi)
            if delta > change:
                change = delta
        k = n_dim - 1
        while k >= 0:
            idx[k] += 1
            if idx[k] < shape[k]:
                break
            idx[k] = 0
            k -= 1
    if not finite:
        return np.nan
    return change
