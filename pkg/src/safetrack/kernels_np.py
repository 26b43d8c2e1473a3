"""Pure-numpy counterparts of :mod:`kernels_nb`, same signatures and results."""
import numpy as np


def _one_sided(V, axis, dx, periodic):
    if periodic:
        dm = (V - np.roll(V, 1, axis=axis)) / dx
        dp = (np.roll(V, -1, axis=axis) - V) / dx
        return dm, dp
    diff = np.diff(V, axis=axis) / dx
    n = V.shape[axis]
    dm = np.empty_like(V)
    dp = np.empty_like(V)
    sl = [slice(None)] * V.ndim

    def at(s):
        sl[axis] = s
        return tuple(sl)

    dm[at(slice(1, n))] = diff
    dp[at(slice(0, n - 1))] = diff
    # outward one-sided differences copy the adjacent interior difference
    dm[at(slice(0, 1))] = diff[at(slice(0, 1))]
    dp[at(slice(n - 1, n))] = diff[at(slice(n - 2, n - 1))]
    return dm, dp


def _field(arr, shape):
    # (..., K) with K in {1, N}
    if arr.shape[-1] == 1:
        return float(arr[..., 0])
    return arr.reshape(shape)


def lf_step(V, L, shape, strides, periodic, dx, alpha,
            A, Bu, u_mid, u_half, Bp, p_mid, p_half, Bd, d_mid, d_half,
            dt, trusted, out):
    shape = tuple(int(s) for s in shape)
    Vg = V.reshape(shape)
    n_dim = len(shape)
    costate = []
    diss = np.zeros(shape)
    for k in range(n_dim):
        dm, dp = _one_sided(Vg, k, dx[k], bool(periodic[k]))
        costate.append(0.5 * (dm + dp))
        a = _field(alpha[k], shape)
        if not (np.isscalar(a) and a == 0.0):
            diss += a * 0.5 * (dp - dm)

    ham = np.zeros(shape)
    for k in range(n_dim):
        a = _field(A[k], shape)
        if not (np.isscalar(a) and a == 0.0):
            ham += costate[k] * a

    for B, mid, half, sign in ((Bu, u_mid, u_half, -1.0), (Bp, p_mid, p_half, 1.0),
                               (Bd, d_mid, d_half, 1.0)):
        for j in range(B.shape[1]):
            c = None
            for k in range(n_dim):
                b = _field(B[k, j], shape)
                if np.isscalar(b) and b == 0.0:
                    continue
                term = costate[k] * b
                c = term if c is None else c + term
            if c is None:
                continue
            ham += c * mid[j] + sign * np.abs(c) * half[j]

    out[:] = np.maximum(Vg + dt * (ham + diss), L.reshape(shape)).ravel()
    if not np.all(np.isfinite(out)):
        return np.nan
    delta = np.abs(out - V)
    delta[~trusted] = 0.0
    return float(delta.max())


def interp_points(fields, shape, strides, periodic, lo, dx, X, out):
    n_dim = len(shape)
    s = (X - lo) / dx
    base = np.floor(s).astype(np.int64)
    nxt = base + 1
    for k in range(n_dim):
        nk = int(shape[k])
        if periodic[k]:
            s[:, k] = np.mod(s[:, k], nk)
            base[:, k] = np.minimum(np.floor(s[:, k]).astype(np.int64), nk - 1)
            nxt[:, k] = (base[:, k] + 1) % nk
        else:
            base[:, k] = np.clip(base[:, k], 0, nk - 2)
            nxt[:, k] = base[:, k] + 1
    w = s - base
    out[:] = 0.0
    for c in range(1 << n_dim):
        weight = np.ones(X.shape[0])
        off = np.zeros(X.shape[0], dtype=np.int64)
        for k in range(n_dim):
            if (c >> k) & 1:
                weight = weight * w[:, k]
                off += nxt[:, k] * strides[k]
            else:
                weight = weight * (1.0 - w[:, k])
                off += base[:, k] * strides[k]
        out += weight[:, None] * fields[:, off].T


def godunov_step(V, L, shape, strides, periodic, dx, a, s, dt, trusted, out):
    shape = tuple(int(n) for n in shape)
    Vg = V.reshape(shape)
    ham = np.zeros(shape)
    for k in range(len(shape)):
        dm, dp = _one_sided(Vg, k, dx[k], bool(periodic[k]))
        ak = _field(a[k], shape)
        sk = _field(s[k], shape)
        hm = ak * dm + sk * np.abs(dm)
        hp = ak * dp + sk * np.abs(dp)
        up = dm <= dp
        h = np.where(up, np.maximum(hm, hp), np.minimum(hm, hp))
        h = np.where(up & (dm < 0) & (dp > 0) & (h < 0), 0.0, h)
        h = np.where(~up & (dp < 0) & (dm > 0) & (h > 0), 0.0, h)
        ham += h
    out[:] = np.maximum(Vg + dt * ham, L.reshape(shape)).ravel()
    if not np.all(np.isfinite(out)):
        return np.nan
    delta = np.abs(out - V)
    delta[~trusted] = 0.0
    return float(delta.max())
