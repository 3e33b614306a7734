"""Finite-step variational propagation on the working space.

One step builds the Crank-Nicolson-like approximate propagator Utilde
between the working spaces at t1 and t2 and replaces it by the closest
(semi-)unitary matrix Ubar.  When the two dimensions differ, the larger
space is truncated variationally first; in the shrink case the current
coefficient vector (and optional extra pins) is constrained to survive
the truncation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import workspace as wsp
from .model import ModelSpec, cross_matrices, tau_matrix
from .workspace import WorkingSpace, fix_eigenvector_phases


class PinningError(ValueError):
    """More pinned vectors than the target working-space dimension."""


@dataclass(frozen=True)
class StiefelStep:
    """Diagnostics of one variational step."""

    case: str              # 'equal', 'grow' (M2>M1), or 'shrink' (M2<M1)
    Utilde: np.ndarray
    Ubar: np.ndarray
    singular_values: np.ndarray
    R: np.ndarray | None = None
    D: np.ndarray | None = None

    @property
    def M1(self):
        return self.Utilde.shape[1]

    @property
    def M2(self):
        return self.Utilde.shape[0]


def assemble_utilde(dt, Hbar1, Hbar2, Sbar21, Hbar21):
    """Symmetrized finite-step propagator estimate.

    2 Utilde = [1 - i Hbar2 dt/2][Sbar21 - i Hbar21 dt/2]
             + [Sbar21 - i Hbar21 dt/2][1 - i Hbar1 dt/2]
    """
    m2, m1 = Sbar21.shape
    if Hbar1.shape != (m1, m1) or Hbar2.shape != (m2, m2) \
            or Hbar21.shape != (m2, m1):
        raise ValueError("inconsistent working-space dimensions")
    mid = Sbar21 - 0.5j * dt * Hbar21
    left = np.eye(m2) - 0.5j * dt * Hbar2
    right = np.eye(m1) - 0.5j * dt * Hbar1
    return 0.5 * (left @ mid + mid @ right)


def closest_unitary(Utilde):
    """Unitary matrix closest to Utilde in Frobenius norm (polar factor)."""
    if Utilde.shape[0] != Utilde.shape[1]:
        raise ValueError("closest_unitary needs a square matrix")
    X, sv, Yh = np.linalg.svd(Utilde)
    return X @ Yh, sv


def truncate_grow(Utilde):
    """Shrink the bra space of a tall Utilde (M2 > M1) and unitarize.

    R holds the M1 dominant eigenvectors of Utilde Utilde^t; the polar
    factor of R^t Utilde lifted back by R gives the semi-unitary Ubar
    with Ubar^t Ubar = 1_M1.
    """
    m2, m1 = Utilde.shape
    if m2 <= m1:
        raise ValueError("truncate_grow expects M2 > M1")
    w, vec = np.linalg.eigh(Utilde @ Utilde.conj().T)
    R = fix_eigenvector_phases(vec[:, ::-1][:, :m1])
    X, sv, Yh = np.linalg.svd(R.conj().T @ Utilde)
    return R, R @ X @ Yh, sv


def _orthonormal_complement(E, D):
    """Re-orthogonalize E columns against D and among themselves."""
    E = E - D @ (D.conj().T @ E)
    Q, r = np.linalg.qr(E)
    if np.min(np.abs(np.diag(r))) < 1e-10:
        raise np.linalg.LinAlgError(
            "degenerate truncation basis in the shrink case")
    return fix_eigenvector_phases(Q)


def truncate_shrink(Utilde, D):
    """Shrink the ket space of a wide Utilde (M2 < M1) and unitarize.

    D (M1 x N_c, orthonormal columns) is forced to survive: R = (D E)
    where E are the M2 - N_c dominant eigenvectors of the D-projected
    Utilde^t Utilde.  Ubar = X' Y'^t R^t satisfies Ubar Ubar^t = 1_M2
    and Ubar^t Ubar D = D.
    """
    m2, m1 = Utilde.shape
    if m2 >= m1:
        raise ValueError("truncate_shrink expects M2 < M1")
    D = np.asarray(D)
    if D.ndim == 1:
        D = D[:, None]
    n_c = D.shape[1]
    if n_c > m2:
        raise PinningError(f"{n_c} pinned vectors exceed target dimension "
                           f"M2={m2}")
    if D.shape[0] != m1:
        raise ValueError("pinned vectors live in the t1 working space")
    if n_c < m2:
        proj = np.eye(m1) - D @ D.conj().T
        G = proj @ (Utilde.conj().T @ Utilde) @ proj
        w, vec = np.linalg.eigh(G)
        E = _orthonormal_complement(vec[:, ::-1][:, :m2 - n_c], D)
        R = np.hstack([D, E])
    else:
        R = D
    X, sv, Yh = np.linalg.svd(Utilde @ R)
    return R, X @ Yh @ R.conj().T, sv


def orthonormalize_pins(Cbar1, pins=None):
    """Orthonormal D matrix from the coefficient vector plus extra pins."""
    cols = [np.asarray(Cbar1, dtype=complex)]
    if pins is not None:
        cols.extend(np.asarray(p, dtype=complex) for p in pins)
    A = np.column_stack(cols)
    Q, r = np.linalg.qr(A)
    keep = np.abs(np.diag(r)) > 1e-12 * max(np.linalg.norm(A, axis=0))
    return Q[:, keep]


def build_ubar(Utilde, Cbar1, pins=None) -> StiefelStep:
    """Dispatch on the dimensionality case and build the final Ubar."""
    m2, m1 = Utilde.shape
    if m2 == m1:
        Ubar, sv = closest_unitary(Utilde)
        return StiefelStep("equal", Utilde, Ubar, sv)
    if m2 > m1:
        R, Ubar, sv = truncate_grow(Utilde)
        return StiefelStep("grow", Utilde, Ubar, sv, R=R)
    D = orthonormalize_pins(Cbar1, pins)
    R, Ubar, sv = truncate_shrink(Utilde, D)
    return StiefelStep("shrink", Utilde, Ubar, sv, R=R, D=D)


def var_step(state1, frame2, model: ModelSpec, dt, eps_S, pins=None):
    """Propagate one WavepacketState across a full variational step.

    Builds both working spaces from scratch; the harness uses a cached
    variant of the same algebra (see harness._VarCell).  Returns the new
    state and the StiefelStep diagnostics.
    """
    from .observables import WavepacketState

    frame1 = state1.frame
    m1 = cross_matrices(frame1, frame1, model)
    m2 = cross_matrices(frame2, frame2, model)
    ws1 = wsp.build_working_space(m1["S"], eps_S)
    ws2 = wsp.build_working_space(m2["S"], eps_S)
    cross = cross_matrices(frame2, frame1, model)
    Hbar1 = wsp.transform_operator(ws1, ws1, m1["H"])
    Hbar2 = wsp.transform_operator(ws2, ws2, m2["H"])
    Sbar21 = wsp.transform_operator(ws2, ws1, cross["S"])
    Hbar21 = wsp.transform_operator(ws2, ws1, cross["H"])
    Utilde = assemble_utilde(dt, Hbar1, Hbar2, Sbar21, Hbar21)
    Cbar1 = wsp.restrict(ws1, state1.C)
    step = build_ubar(Utilde, Cbar1, pins=pins)
    C2 = wsp.lift(ws2, step.Ubar @ Cbar1)
    return WavepacketState(time=frame2.time, C=C2, frame=frame2), step
