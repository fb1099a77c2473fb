"""Hermitian matrix helpers shared by the lifted beamforming code.

Lifted beamforming variables are complex Hermitian PSD matrices, but real
conic solvers only know real symmetric cones.  The bridge is the standard
real embedding

    E(W) = [[Re W, -Im W],
            [Im W,  Re W]],

which is symmetric PSD iff W is Hermitian PSD and whose spectrum is that of
W with every eigenvalue doubled in multiplicity.
"""

import numpy as np

# relative eigenvalue floor used by is_psd
PSD_TOL = 1e-8


def as_hermitian(a: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate that `a` is Hermitian (up to `tol`, relative) and return the
    exactly-Hermitian canonical form (a + a^H)/2."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 0.0)
    asym = float(np.abs(a - a.conj().T).max()) if a.size else 0.0
    if asym > tol * scale:
        raise ValueError(f"matrix is not Hermitian (asymmetry {asym:.3e})")
    return (a + a.conj().T) / 2.0


def quadratic_form(h: np.ndarray, w: np.ndarray) -> float:
    """h^H W h as a float.

    W must be Hermitian so the form is real; a non-negligible imaginary part
    (|Im| > 1e-9 |Re| + 1e-12) means the storage was corrupted and raises.
    """
    h = np.asarray(h, dtype=complex).ravel()
    w = np.asarray(w, dtype=complex)
    if w.shape != (h.size, h.size):
        raise ValueError(f"dimension mismatch: h has {h.size} entries, W is {w.shape}")
    val = complex(np.vdot(h, w @ h))
    if abs(val.imag) > 1e-9 * abs(val.real) + 1e-12:
        raise ValueError(f"quadratic form has non-negligible imaginary part {val.imag:.3e}; "
                         "matrix is not Hermitian")
    return float(val.real)


def real_embedding(w: np.ndarray) -> np.ndarray:
    """Map a Hermitian matrix to its real symmetric embedding [[X,-Y],[Y,X]]."""
    w = np.asarray(w, dtype=complex)
    return np.block([[w.real, -w.imag], [w.imag, w.real]])


def inverse_real_embedding(e: np.ndarray) -> np.ndarray:
    """Recover the Hermitian matrix from its real embedding (averaging the two
    redundant copies, so slightly asymmetric solver output comes back canonical)."""
    e = np.asarray(e, dtype=float)
    if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] % 2:
        raise ValueError(f"expected an even-dimension square matrix, got shape {e.shape}")
    n = e.shape[0] // 2
    x = (e[:n, :n] + e[n:, n:]) / 2.0
    y = (e[n:, :n] - e[:n, n:]) / 2.0
    w = x + 1j * y
    return (w + w.conj().T) / 2.0


def leading_eigenpair(w: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Return (lam1, v1, lam2): the largest eigenvalue of Hermitian `w`, its unit
    eigenvector, and the second largest eigenvalue (0 for 1x1 input).

    np.linalg.LinAlgError propagates if the eigen-iteration fails to converge.
    """
    w = as_hermitian(w, tol=1e-7)
    vals, vecs = np.linalg.eigh(w)
    lam2 = float(vals[-2]) if w.shape[0] > 1 else 0.0
    return float(vals[-1]), vecs[:, -1].copy(), lam2


def is_psd(w: np.ndarray, tol: float = PSD_TOL) -> bool:
    """PSD check with a relative floor: lam_min >= -tol * max(1, lam_max)."""
    w = np.asarray(w, dtype=complex)
    if w.size == 0:
        return True
    vals = np.linalg.eigvalsh(w)
    return bool(vals[0] >= -tol * max(1.0, float(vals[-1])))
