"""Analytic matrix elements between frozen-width Gaussian (coherent) states.

The basis functions are coherent states of the harmonic oscillator
H0 = (P^2 + Q^2)/2, i.e. eigenstates of the annihilation operator
a = (Q + iP)/sqrt(2) with eigenvalue z = (q + ip)/sqrt(2), using the
normalization |z> = exp(-|z|^2/2) exp(z a^t)|0>.

Matrix elements of polynomial operators are generated by normal ordering
in the ladder operators, which gives closed forms both between coherent
states and in the oscillator eigenbasis used by the exact reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT2 = math.sqrt(2.0)


class ConfigurationError(ValueError):
    """Unsupported model definition (e.g. potential degree > 4)."""


@dataclass(frozen=True)
class ModelSpec:
    """Polynomial model Hamiltonian: kinetic_coeff*P^2 + sum_n c_n Q^n."""

    kinetic_coeff: float
    potential_coeffs: dict[int, float] = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if self.kinetic_coeff <= 0:
            raise ConfigurationError("kinetic_coeff must be positive")
        for deg in self.potential_coeffs:
            if deg < 0 or deg > 4:
                raise ConfigurationError(
                    f"potential degree {deg} unsupported (max 4)")

    def potential(self, q):
        """V(q) for scalar or array q."""
        v = np.zeros_like(np.asarray(q, dtype=float))
        for deg, c in self.potential_coeffs.items():
            v = v + c * np.asarray(q, dtype=float) ** deg
        return v

    def potential_deriv(self, q):
        """dV/dq."""
        v = np.zeros_like(np.asarray(q, dtype=float))
        for deg, c in self.potential_coeffs.items():
            if deg > 0:
                v = v + deg * c * np.asarray(q, dtype=float) ** (deg - 1)
        return v

    def potential_deriv2(self, q):
        """d2V/dq2."""
        v = np.zeros_like(np.asarray(q, dtype=float))
        for deg, c in self.potential_coeffs.items():
            if deg > 1:
                v = v + deg * (deg - 1) * c * np.asarray(q, dtype=float) ** (deg - 2)
        return v

    def potential_minimum(self) -> float:
        """Global minimum of V over the real line (quartic or bounded)."""
        coeffs = np.zeros(5)
        for deg, c in self.potential_coeffs.items():
            coeffs[deg] = c
        dpoly = np.polynomial.polynomial.polyder(coeffs)
        roots = np.polynomial.polynomial.polyroots(dpoly)
        crit = [r.real for r in roots if abs(r.imag) < 1e-12]
        crit.append(0.0)
        return float(min(self.potential(q) for q in crit))


# the two model Hamiltonians used throughout (atomic units)
DOUBLE_WELL = ModelSpec(0.5, {2: -1.0 / 5.0, 4: 1.0 / 4.0}, label="doublewell")
RESCALED = ModelSpec(0.5, {2: -1.0 / 8.0, 4: 1.0 / 64.0}, label="rescaled")


def well_minimum(model: ModelSpec) -> float:
    """Position of the left minimum x_- of the double-well potential."""
    c2 = model.potential_coeffs.get(2, 0.0)
    c4 = model.potential_coeffs.get(4, 0.0)
    if c4 <= 0 or c2 >= 0:
        raise ConfigurationError("model has no double-well minima")
    return -math.sqrt(-c2 / (2.0 * c4))


# ---------------------------------------------------------------------------
# normal ordering of ladder-operator polynomials
# ---------------------------------------------------------------------------

def _term_product(t1, t2):
    """Product of two normal-ordered monomials a^t^m a^n.

    Uses a^n1 a^t^m2 = sum_k k! C(n1,k) C(m2,k) a^t^(m2-k) a^(n1-k).
    Returns a dict {(m, n): coeff}.
    """
    (m1, n1), c1 = t1
    (m2, n2), c2 = t2
    out = {}
    for k in range(min(n1, m2) + 1):
        coeff = (c1 * c2 * math.factorial(k)
                 * math.comb(n1, k) * math.comb(m2, k))
        key = (m1 + m2 - k, n1 + n2 - k)
        out[key] = out.get(key, 0.0) + coeff
    return out


def _poly_product(p1, p2):
    out = {}
    for t1 in p1.items():
        for t2 in p2.items():
            for key, c in _term_product(t1, t2).items():
                out[key] = out.get(key, 0.0) + c
    return {k: c for k, c in out.items() if c != 0}


def _poly_add(p1, p2, scale=1.0):
    out = dict(p1)
    for k, c in p2.items():
        out[k] = out.get(k, 0.0) + scale * c
    return {k: c for k, c in out.items() if c != 0}


_Q = {(0, 1): 1 / SQRT2, (1, 0): 1 / SQRT2}
_P = {(0, 1): -1j / SQRT2, (1, 0): 1j / SQRT2}


def _poly_power(p, n):
    out = {(0, 0): 1.0}
    for _ in range(n):
        out = _poly_product(out, p)
    return out


def normal_ordered_hamiltonian(model: ModelSpec):
    """Normal-ordered ladder expansion {(m, n): coeff} of the Hamiltonian."""
    ham = _poly_product(_P, _P)
    ham = {k: model.kinetic_coeff * c for k, c in ham.items()}
    for deg, c in sorted(model.potential_coeffs.items()):
        ham = _poly_add(ham, _poly_power(_Q, deg), scale=c)
    return ham


def _coherent_poly_eval(poly, zbar, z):
    """sum_mn c_mn zbar^m z^n for arrays zbar (column) and z (row)."""
    out = np.zeros(np.broadcast(zbar, z).shape, dtype=complex)
    for (m, n), c in poly.items():
        out = out + c * zbar**m * z**n
    return out


# ---------------------------------------------------------------------------
# coherent-state matrix elements
# ---------------------------------------------------------------------------

def coherent_overlap(z1, z2):
    """<z1|z2> = exp(z1* z2 - (|z1|^2 + |z2|^2)/2); broadcasts over arrays."""
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    return np.exp(np.conj(z1) * z2
                  - 0.5 * (np.abs(z1) ** 2 + np.abs(z2) ** 2))


def cross_matrices(frame_bra, frame_ket, model: ModelSpec):
    """Overlap, Hamiltonian, and position matrices between two frames.

    Rows index the bra frame, columns the ket frame.  All three are
    proportional to the overlap times a polynomial in (z_bra* , z_ket),
    so they are exact for polynomial potentials of degree <= 4.
    Returns a dict with keys 'S', 'H', 'X'.
    """
    zb = np.asarray(frame_bra.z, dtype=complex)[:, None]
    zk = np.asarray(frame_ket.z, dtype=complex)[None, :]
    S = coherent_overlap(zb, zk)
    ham = normal_ordered_hamiltonian(model)
    H = S * _coherent_poly_eval(ham, np.conj(zb), zk)
    X = S * (np.conj(zb) + zk) / SQRT2
    return {"S": S, "H": H, "X": X}


def tau_matrix(frame, S):
    """Time-derivative coupling tau_kl = <g_k|d/dt g_l>.

    Closed form tau_kl = S_kl (z_k* zdot_l - Re(z_l* zdot_l)); the frame
    must carry velocities.
    """
    if frame.zdot is None:
        raise ValueError("frame carries no velocities; evaluate the "
                         "classical flow first")
    z = np.asarray(frame.z, dtype=complex)
    zd = np.asarray(frame.zdot, dtype=complex)
    return S * (np.conj(z)[:, None] * zd[None, :]
                - np.real(np.conj(z) * zd)[None, :])


# ---------------------------------------------------------------------------
# oscillator-basis representation (exact reference)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HORepresentation:
    """Hamiltonian projected on the n_b lowest oscillator eigenstates."""

    n_b: int
    h_matrix: np.ndarray


def _ladder_term_matrix(m, n, n_b):
    """Matrix of a^t^m a^n in the n_b-dimensional oscillator basis."""
    out = np.zeros((n_b, n_b))
    for j in range(n, n_b):
        i = j - n + m
        if i >= n_b:
            continue
        amp = math.sqrt(math.factorial(j) / math.factorial(j - n))
        amp *= math.sqrt(math.factorial(j - n + m) / math.factorial(j - n))
        out[i, j] = amp
    return out


def ho_hamiltonian(model: ModelSpec, n_b: int) -> HORepresentation:
    """Hamiltonian matrix in the oscillator eigenbasis via ladder algebra."""
    if n_b < 1:
        raise ConfigurationError("n_b must be >= 1")
    h = np.zeros((n_b, n_b), dtype=complex)
    for (m, n), c in normal_ordered_hamiltonian(model).items():
        h = h + c * _ladder_term_matrix(m, n, n_b)
    return HORepresentation(n_b=n_b, h_matrix=h)


def coherent_in_ho(z, n_b):
    """Oscillator-basis components of |z>: e^{-|z|^2/2} z^n / sqrt(n!)."""
    z = complex(z)
    n = np.arange(n_b)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, n_b)))))
    amp = np.exp(-0.5 * abs(z) ** 2 - 0.5 * log_fact)
    if z == 0:
        vec = np.zeros(n_b, dtype=complex)
        vec[0] = amp[0]
        return vec
    return amp * z**n


def ho_position(n_b):
    """Position matrix Q in the oscillator basis."""
    x = np.zeros((n_b, n_b))
    for (m, n), c in _Q.items():
        x = x + c * _ladder_term_matrix(m, n, n_b)
    return x
