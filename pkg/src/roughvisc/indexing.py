"""Index conventions shared by every module.

Gubinelli derivatives carry the driver index last: ``zx[..., i, l]`` multiplies
``dx^l``.  Second-order coefficients ``zxx[..., i, l, k]`` contract with the
area entry ``x2[k, l]`` (``int dx^k dx^l``), matching
``z^{xx;ilk} x^{2;kl}``.  Flow coefficients written ``[A_{l2} A_{l1}] x^{2;l2 l1}``
therefore live at ``zxx[..., i, l1, l2]``.
"""
from __future__ import annotations

import numpy as np


def _pad(v, target_ndim: int, tail: int):
    v = np.asarray(v)
    pad = target_ndim - v.ndim
    if pad < 0:
        raise ValueError("increment has more axes than the coefficient")
    return v.reshape(v.shape[: v.ndim - tail] + (1,) * pad + v.shape[v.ndim - tail:])


def contract_x(zx, dx):
    """``sum_l zx[..., l] dx[l]``.

    ``dx`` has shape ``(*lead, d)`` where ``lead`` is a prefix of ``zx``'s
    leading axes (e.g. time); middle axes broadcast.
    """
    zx = np.asarray(zx)
    return np.sum(zx * _pad(dx, zx.ndim, 1), axis=-1)


def contract_xx(zxx, x2):
    """``sum_{l,k} zxx[..., l, k] x2[k, l]`` with the same broadcasting as :func:`contract_x`."""
    zxx = np.asarray(zxx)
    x2t = np.swapaxes(np.asarray(x2), -1, -2)
    return np.sum(zxx * _pad(x2t, zxx.ndim, 2), axis=(-2, -1))


def expand_time(v, target_ndim: int):
    """Append singleton axes so a per-time value broadcasts against a field."""
    v = np.asarray(v)
    return v.reshape(v.shape + (1,) * (target_ndim - v.ndim))
