"""Regularized baseline propagators and the exact oscillator-basis reference.

The baselines integrate the coefficient equation of motion
S Cdot = -(iH + tau) C directly, replacing S^{-1} by an approximate
inverse: plain inversion ('naive'), spectral truncation ('reg1'), or an
exponentially regularized inverse ('reg2').  The exact reference
propagates in a fixed oscillator eigenbasis with the cached
eigendecomposition of the Hamiltonian.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, cross_matrices, ho_hamiltonian, tau_matrix

METHODS = ("naive", "reg1", "reg2")


class StepError(RuntimeError):
    """Linear solve failed in a baseline step."""


def _inverse_eigenvalue_map(w, eps_S, method):
    """Approximate 1/lambda for each eigenvalue of S."""
    if method == "naive":
        with np.errstate(divide="ignore"):
            return 1.0 / w
    if method == "reg1":
        inv = np.zeros_like(w)
        keep = w >= eps_S
        inv[keep] = 1.0 / w[keep]
        if not np.any(keep):
            warnings.warn("all overlap eigenvalues below eps_S; "
                          "pseudo-inverse is the zero matrix")
        return inv
    if method == "reg2":
        with np.errstate(over="ignore"):
            floor = eps_S * np.exp(-w / eps_S)
        return 1.0 / (w + floor)
    raise ValueError(f"unknown method {method!r}")


def reg1_inverse(S, eps_S):
    """Moore-Penrose pseudo-inverse with eigenvalues < eps_S dropped."""
    w, V = np.linalg.eigh(S)
    return (V * _inverse_eigenvalue_map(w, eps_S, "reg1")) @ V.conj().T


def reg2_inverse(S, eps_S):
    """[S + eps_S exp(-S/eps_S)]^{-1}, evaluated in the eigenbasis of S."""
    w, V = np.linalg.eigh(S)
    return (V * _inverse_eigenvalue_map(w, eps_S, "reg2")) @ V.conj().T


def approximate_inverse(S, eps_S, method):
    w, V = np.linalg.eigh(S)
    return (V * _inverse_eigenvalue_map(w, eps_S, method)) @ V.conj().T


def reg_cn_step(C1, frame1, frame2, model: ModelSpec, dt, eps_S,
                method="reg1"):
    """One Crank-Nicolson step of the regularized coefficient EOM.

    C2 = [1 + dt/2 S2^- (iH2 + tau2)]^{-1} [1 - dt/2 S1^- (iH1 + tau1)] C1
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    mats = []
    for frame in (frame1, frame2):
        m = cross_matrices(frame, frame, model)
        tau = tau_matrix(frame, m["S"])
        sm = approximate_inverse(m["S"], eps_S, method)
        mats.append(sm @ (1j * m["H"] + tau))
    n = len(C1)
    rhs = (np.eye(n) - 0.5 * dt * mats[0]) @ C1
    lhs = np.eye(n) + 0.5 * dt * mats[1]
    try:
        C2 = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(lhs)
        raise StepError(f"singular CN system at t={frame2.time:g} "
                        f"(cond estimate {cond:.3e})") from exc
    if not np.all(np.isfinite(C2)):
        raise StepError(f"non-finite coefficients at t={frame2.time:g}")
    return C2


# ---------------------------------------------------------------------------
# exact reference in the oscillator basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenCache:
    energies: np.ndarray
    modes: np.ndarray      # columns are eigenvectors of the HO-basis H


@dataclass(frozen=True)
class ExactState:
    time: float
    coeffs: np.ndarray
    cache: EigenCache


def make_exact_state(model: ModelSpec, coeffs, n_b=20, time=0.0) -> ExactState:
    rep = ho_hamiltonian(model, n_b)
    w, U = np.linalg.eigh(rep.h_matrix)
    return ExactState(time=time, coeffs=np.asarray(coeffs, dtype=complex),
                      cache=EigenCache(energies=w, modes=U))


def exact_step(state: ExactState, dt) -> ExactState:
    """Exactly unitary step using the cached eigendecomposition."""
    U = state.cache.modes
    phase = np.exp(-1j * state.cache.energies * dt)
    coeffs = U @ (phase * (U.conj().T @ state.coeffs))
    return ExactState(time=state.time + dt, coeffs=coeffs, cache=state.cache)
