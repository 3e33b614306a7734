"""Expectation values, overlaps, and the error metrics of the experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, coherent_overlap, cross_matrices
from .trajectories import GaussianFrame


@dataclass(frozen=True)
class WavepacketState:
    """Coefficient vector in the full Gaussian basis at one time."""

    time: float
    C: np.ndarray
    frame: GaussianFrame


@dataclass(frozen=True)
class ErrorSeries:
    times: np.ndarray
    values: np.ndarray
    quantity: str = ""

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values length mismatch")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


def expectation(state: WavepacketState, which, model: ModelSpec = None,
                matrices=None):
    """norm, energy, or position of a state.

    norm is sqrt(C^t S C); energy and position are unnormalized C^t A C
    (initial states are unit norm).  Precomputed same-frame matrices can
    be passed to avoid reassembly.
    """
    if matrices is None:
        matrices = cross_matrices(state.frame, state.frame, model)
    C = state.C
    if which == "norm":
        val = np.real(C.conj() @ matrices["S"] @ C)
        return float(np.sqrt(max(val, 0.0)))
    key = {"energy": "H", "position": "X"}[which]
    return float(np.real(C.conj() @ matrices[key] @ C))


def pair_overlap(a: WavepacketState, b: WavepacketState,
                 model: ModelSpec = None, S_cross=None):
    """<Psi_a|Psi_b> across possibly different frames."""
    if S_cross is None:
        S_cross = cross_matrices(a.frame, b.frame, model)["S"]
    return complex(a.C.conj() @ S_cross @ b.C)


def autocorrelation(z0, state: WavepacketState):
    """<z0|Psi(t)> against a frozen single-Gaussian initial state."""
    s0 = coherent_overlap(z0, state.frame.z)
    return complex(s0 @ state.C)


def local_error(times, values, exact, quantity="") -> ErrorSeries:
    """Pointwise error f(Psi) - f(Psi_exact) on a shared time grid."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values)
    exact = np.asarray(exact)
    if values.shape != exact.shape or len(times) != len(values):
        raise ValueError("series grids do not match")
    return ErrorSeries(times=times, values=values - exact, quantity=quantity)


def time_avg_error(err: ErrorSeries, t_i=None, t_f=None):
    """Trapezoidal time average of |error| over [t_i, t_f]."""
    t = err.times
    if t_i is None:
        t_i = t[0]
    if t_f is None:
        t_f = t[-1]
    mask = (t >= t_i - 1e-12) & (t <= t_f + 1e-12)
    if mask.sum() < 2 or t_f <= t_i:
        raise ValueError("empty averaging window")
    tt = t[mask]
    vv = np.abs(err.values[mask])
    return float(np.trapezoid(vv, tt) / (tt[-1] - tt[0]))
