"""Vectorized numpy implementation of the Jacobian-assembly kernel."""

import numpy as np


def dSbus_dV(ybus: np.ndarray, v: np.ndarray):
    """Partials of complex bus power injections w.r.t. voltage angle and magnitude.

    S = diag(V) conj(Ybus V). Returns (dS_dVa, dS_dVm), dense complex (n, n).
    """
    ibus = ybus @ v
    diag_v = np.diag(v)
    diag_i = np.diag(ibus)
    diag_vnorm = np.diag(v / np.abs(v))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm
    return ds_dva, ds_dvm


IMPLEMENTATION = "numpy"
