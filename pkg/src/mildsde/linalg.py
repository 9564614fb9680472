"""Shared dense/diagonal linear-algebra kernels.

Everything here works on plain complex ndarrays; the operator layer in
:mod:`mildsde.operators` decides which kernel applies to which generator
variant.
"""

import numpy as np
import scipy.linalg

__all__ = [
    "phi1",
    "expm",
    "expm_and_phi1",
    "vanloan_ctrl_gramian",
    "vanloan_obs_gramian",
    "diag_exp_integral",
    "hermitian_part_check",
]

# Below this threshold the closed form (e^z - 1)/z loses digits; switch to
# the truncated series, which is exact to machine precision there.
_PHI_SERIES_CUTOFF = 1e-2


def phi1(z):
    """First exponential-integrator weight (e^z - 1)/z with the z=0 limit.

    Accepts scalars or arrays, real or complex.  The removable singularity
    at z=0 is handled by a series expansion, never by division.
    """
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < _PHI_SERIES_CUTOFF
    zs = z[small]
    out[small] = (
        1.0 + zs / 2.0 + zs**2 / 6.0 + zs**3 / 24.0 + zs**4 / 120.0 + zs**5 / 720.0
    )
    zb = z[~small]
    out[~small] = (np.exp(zb) - 1.0) / zb
    return out if out.ndim else complex(out)


def expm(matrix):
    """Dense matrix exponential (scaling-and-squaring Pade)."""
    return scipy.linalg.expm(np.asarray(matrix, dtype=complex))


def expm_and_phi1(matrix, dt):
    """Return (e^{A dt}, \\int_0^dt e^{A s} ds) for a dense matrix A.

    The integral is read off the top-right block of the exponential of the
    augmented matrix [[A, I], [0, 0]]; this avoids inverting A and is exact
    for singular A.
    """
    a = np.asarray(matrix, dtype=complex)
    k = a.shape[0]
    aug = np.zeros((2 * k, 2 * k), dtype=complex)
    aug[:k, :k] = a * dt
    aug[:k, k:] = np.eye(k) * dt
    big = scipy.linalg.expm(aug)
    return big[:k, :k], big[:k, k:]


def vanloan_ctrl_gramian(a, b, tau):
    """Controllability Gramian \\int_0^tau e^{At} B B* e^{A*t} dt (dense)."""
    a = np.asarray(a, dtype=complex)
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    if b.shape[0] != a.shape[0]:
        b = b.T
    k = a.shape[0]
    q = b @ b.conj().T
    aug = np.zeros((2 * k, 2 * k), dtype=complex)
    aug[:k, :k] = -a * tau
    aug[:k, k:] = q * tau
    aug[k:, k:] = a.conj().T * tau
    big = scipy.linalg.expm(aug)
    w = big[k:, k:].conj().T @ big[:k, k:]
    return 0.5 * (w + w.conj().T)


def vanloan_obs_gramian(a, c, tau):
    """Observability Gramian \\int_0^tau e^{A*t} C* C e^{At} dt (dense)."""
    a = np.asarray(a, dtype=complex)
    c = np.atleast_2d(np.asarray(c, dtype=complex))
    k = a.shape[0]
    q = c.conj().T @ c
    aug = np.zeros((2 * k, 2 * k), dtype=complex)
    aug[:k, :k] = -a.conj().T * tau
    aug[:k, k:] = q * tau
    aug[k:, k:] = a * tau
    big = scipy.linalg.expm(aug)
    w = big[k:, k:].conj().T @ big[:k, k:]
    return 0.5 * (w + w.conj().T)


def diag_exp_integral(rates, tau):
    """\\int_0^tau e^{r t} dt for an array of (complex) rates r."""
    return tau * phi1(np.asarray(rates, dtype=complex) * tau)


def hermitian_part_check(w, tol=1e-10):
    """Assert a matrix is numerically Hermitian; return the symmetrized copy."""
    w = np.asarray(w)
    dev = np.max(np.abs(w - w.conj().T)) if w.size else 0.0
    if dev > tol * max(1.0, np.max(np.abs(w))):
        raise ValueError(f"matrix deviates from Hermitian by {dev:.3e}")
    return 0.5 * (w + w.conj().T)
