"""Hot numeric kernels with a numba path and a pure-numpy path.

Both implementations are always importable (the numba ones are ``None`` when
numba is missing); the public names ``gelu``, ``gelu_with_grad`` and
``denoise_chain`` are bound to whichever backend ``_accel.USE_NUMBA`` selects.
"""

import math

import numpy as np
from scipy.special import erf

from . import _accel

INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------- numpy path


def gelu_np(z):
    return 0.5 * z * (1.0 + erf(z * INV_SQRT2))


def gelu_with_grad_np(z):
    cdf = 0.5 * (1.0 + erf(z * INV_SQRT2))
    return z * cdf, cdf + z * np.exp(-0.5 * z * z) * INV_SQRT_2PI


def _gelu_inplace_np(x, tmp):
    np.multiply(x, INV_SQRT2, out=tmp)
    erf(tmp, out=tmp)
    tmp += 1.0
    tmp *= 0.5
    x *= tmp
    return x


def denoise_chain_np(enc_w, enc_b, act_w, lat_w, step_bias, den_w, den_b,
                     obs, a, z, c1, c2, sigma, literal):
    """One control step of reverse diffusion.

    ``step_bias[t - 1]`` holds the time-embedding contribution plus bias of
    the denoiser's first layer for diffusion step ``t``. Returns the final
    action and the diffusion step at which a non-finite value appeared
    (``-1`` when the chain finished cleanly).
    """
    x = obs
    n_enc = len(enc_w)
    for i in range(n_enc):
        x = enc_w[i] @ x + enc_b[i]
        if i < n_enc - 1:
            x = gelu_np(x)
    lat_term = lat_w @ x
    a = a.copy()
    n_den = len(den_w)
    n_steps = step_bias.shape[0]
    bufs = [np.empty(w.shape[0], w.dtype) for w in (act_w,) + tuple(den_w)]
    tmps = [np.empty_like(b) for b in bufs]
    for k in range(n_steps):
        ti = n_steps - 1 - k
        h = np.dot(act_w, a, out=bufs[0])
        h += step_bias[ti]
        h += lat_term
        h = _gelu_inplace_np(h, tmps[0])
        for j in range(n_den):
            h = np.dot(den_w[j], h, out=bufs[j + 1])
            h += den_b[j]
            if j < n_den - 1:
                h = _gelu_inplace_np(h, tmps[j + 1])
        if literal:
            a -= h
        else:
            h *= c2[ti]
            a -= h
            a *= c1[ti]
            if sigma[ti] != 0.0:
                a += sigma[ti] * z[ti]
        if not np.isfinite(a).all():
            return a, ti + 1
    return a, -1


# ---------------------------------------------------------------- numba path

if _accel.HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _gelu_flat_nb(flat):
        out = np.empty_like(flat)
        for i in range(flat.size):
            x = flat[i]
            out[i] = 0.5 * x * (1.0 + math.erf(x * INV_SQRT2))
        return out

    @njit(cache=True)
    def _gelu_grad_flat_nb(flat):
        out = np.empty_like(flat)
        deriv = np.empty_like(flat)
        for i in range(flat.size):
            x = flat[i]
            cdf = 0.5 * (1.0 + math.erf(x * INV_SQRT2))
            out[i] = x * cdf
            deriv[i] = cdf + x * math.exp(-0.5 * x * x) * INV_SQRT_2PI
        return out, deriv

    @njit(cache=True)
    def _gelu_vec_nb(x):
        for i in range(x.size):
            v = x[i]
            x[i] = 0.5 * v * (1.0 + math.erf(v * INV_SQRT2))
        return x

    @njit(cache=True)
    def _denoise_chain_nb(enc_w, enc_b, act_w, lat_w, step_bias, den_w, den_b,
                          obs, a, z, c1, c2, sigma, literal):
        x = obs.copy()
        n_enc = len(enc_w)
        for i in range(n_enc):
            x = np.dot(enc_w[i], x) + enc_b[i]
            if i < n_enc - 1:
                x = _gelu_vec_nb(x)
        lat_term = np.dot(lat_w, x)
        a = a.copy()
        n_den = len(den_w)
        n_steps = step_bias.shape[0]
        for k in range(n_steps):
            ti = n_steps - 1 - k
            h = _gelu_vec_nb(np.dot(act_w, a) + step_bias[ti] + lat_term)
            for j in range(n_den):
                h = np.dot(den_w[j], h) + den_b[j]
                if j < n_den - 1:
                    h = _gelu_vec_nb(h)
            if literal:
                for m in range(a.size):
                    a[m] = a[m] - h[m]
            else:
                for m in range(a.size):
                    a[m] = c1[ti] * (a[m] - c2[ti] * h[m]) + sigma[ti] * z[ti, m]
            for m in range(a.size):
                if not math.isfinite(a[m]):
                    return a, ti + 1
        return a, -1

    def gelu_nb(z):
        z = np.ascontiguousarray(z)
        return _gelu_flat_nb(z.reshape(-1)).reshape(z.shape)

    def gelu_with_grad_nb(z):
        z = np.ascontiguousarray(z)
        out, deriv = _gelu_grad_flat_nb(z.reshape(-1))
        return out.reshape(z.shape), deriv.reshape(z.shape)

    def denoise_chain_nb(enc_w, enc_b, act_w, lat_w, step_bias, den_w, den_b,
                         obs, a, z, c1, c2, sigma, literal):
        return _denoise_chain_nb(enc_w, enc_b, act_w, lat_w, step_bias, den_w, den_b,
                                 obs, a, z, c1, c2, sigma, bool(literal))
else:
    gelu_nb = gelu_with_grad_nb = denoise_chain_nb = None


if _accel.USE_NUMBA:
    gelu = gelu_nb
    gelu_with_grad = gelu_with_grad_nb
    denoise_chain = denoise_chain_nb
else:
    gelu = gelu_np
    gelu_with_grad = gelu_with_grad_np
    denoise_chain = denoise_chain_np


def get_backend(name):
    """Return ``(gelu, gelu_with_grad, denoise_chain)`` for ``"numba"`` or ``"numpy"``."""
    if name == "numpy":
        return gelu_np, gelu_with_grad_np, denoise_chain_np
    if name == "numba":
        if not _accel.HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return gelu_nb, gelu_with_grad_nb, denoise_chain_nb
    raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
