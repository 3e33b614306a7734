"""Linearly independent working space from the overlap eigendecomposition.

The overlap S of the moving Gaussians is Hermitian PSD but typically
numerically singular.  Eigenpairs with eigenvalue >= eps_S span the
working space; Phi = V s^{-1/2} maps working-basis coefficients to the
full basis and PhiMinus = s^{1/2} V^t maps back (canonical
orthogonalization, Phi^t S Phi = 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyWorkingSpaceError(RuntimeError):
    """All overlap eigenvalues fell below the threshold."""


def fix_eigenvector_phases(V):
    """Make the largest-magnitude component of each column real positive.

    Eigenvectors are only defined up to a phase; a fixed convention makes
    the working space (and everything derived from it) deterministic.
    """
    idx = np.argmax(np.abs(V), axis=0)
    piv = V[idx, np.arange(V.shape[1])]
    phase = np.where(np.abs(piv) > 0, piv / np.where(np.abs(piv) > 0,
                                                     np.abs(piv), 1.0), 1.0)
    return V / phase[None, :]


@dataclass(frozen=True)
class WorkingSpace:
    """Retained eigendecomposition of one overlap matrix."""

    V: np.ndarray          # N_g x M retained eigenvectors
    s: np.ndarray          # M retained eigenvalues, descending
    eps_S: float
    discarded: np.ndarray  # eigenvalues below eps_S

    @property
    def M(self):
        return len(self.s)

    @property
    def Phi(self):
        return self.V / np.sqrt(self.s)[None, :]

    @property
    def PhiMinus(self):
        return np.sqrt(self.s)[:, None] * self.V.conj().T


def build_working_space(S, eps_S) -> WorkingSpace:
    """Eigendecompose S and keep eigenpairs with eigenvalue >= eps_S.

    The threshold is absolute.  Raises EmptyWorkingSpaceError if nothing
    survives.
    """
    if eps_S <= 0:
        raise ValueError("eps_S must be positive")
    w, V = np.linalg.eigh(S)
    return working_space_from_eigh(w, V, eps_S)


def working_space_from_eigh(w, V, eps_S) -> WorkingSpace:
    """Build a WorkingSpace from a precomputed ascending eigh of S.

    Lets several thresholds share one eigendecomposition.
    """
    keep = w >= eps_S
    if not np.any(keep):
        raise EmptyWorkingSpaceError(
            f"all {len(w)} overlap eigenvalues below eps_S={eps_S:g} "
            f"(max eigenvalue {w.max():.3e})")
    order = np.argsort(w[keep])[::-1]
    s = w[keep][order]
    Vk = fix_eigenvector_phases(V[:, keep][:, order])
    return WorkingSpace(V=Vk, s=s, eps_S=eps_S, discarded=w[~keep])


def restrict(ws: WorkingSpace, C):
    """Full-basis coefficients -> working basis: Cbar = PhiMinus C."""
    C = np.asarray(C)
    if C.shape[0] != ws.V.shape[0]:
        raise ValueError(f"coefficient length {C.shape[0]} != basis size "
                         f"{ws.V.shape[0]}")
    return ws.PhiMinus @ C

def lift(ws: WorkingSpace, Cbar):
    """Working-basis coefficients -> full basis: C = Phi Cbar."""
    Cbar = np.asarray(Cbar)
    if Cbar.shape[0] != ws.M:
        raise ValueError(f"coefficient length {Cbar.shape[0]} != working "
                         f"dimension {ws.M}")
    return ws.Phi @ Cbar


def transform_operator(ws_bra: WorkingSpace, ws_ket: WorkingSpace, A):
    """Operator matrix in the working bases: Phi_bra^t A Phi_ket."""
    A = np.asarray(A)
    if A.shape != (ws_bra.V.shape[0], ws_ket.V.shape[0]):
        raise ValueError(f"operator shape {A.shape} does not match bases "
                         f"({ws_bra.V.shape[0]}, {ws_ket.V.shape[0]})")
    return ws_bra.Phi.conj().T @ A @ ws_ket.Phi
