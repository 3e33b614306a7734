"""Classical evolution of the Gaussian centers and initial-condition sampling.

Each Gaussian center z_k = (q_k + i p_k)/sqrt(2) follows its own classical
trajectory under the model Hamilton function; the centers are fully
decoupled, so the implicit midpoint (Crank-Nicolson) step reduces to an
independent 2x2 Newton iteration per Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SQRT2, ModelSpec


class NewtonError(RuntimeError):
    """Implicit classical step failed to converge."""


@dataclass(frozen=True)
class GaussianFrame:
    """Snapshot of the moving basis: centers z_k and velocities zdot_k."""

    time: float
    z: np.ndarray
    zdot: np.ndarray | None = None

    @property
    def n_gauss(self):
        return len(self.z)

    @property
    def q(self):
        return SQRT2 * np.real(self.z)

    @property
    def p(self):
        return SQRT2 * np.imag(self.z)


@dataclass(frozen=True)
class SamplerConfig:
    n_gauss: int
    kT: float = 0.2
    q_range: tuple[float, float] = (-1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_gauss < 1:
            raise ValueError("n_gauss must be >= 1")
        if self.kT <= 0:
            raise ValueError("kT must be positive")


def _qp_rhs(q, p, model: ModelSpec, literal=False):
    """Hamilton flow (qdot, pdot); `literal` reproduces the printed
    compact zdot form for the double-well, whose cubic coefficient differs
    from the Hamilton-derived one by a factor 4 (kept for comparison)."""
    if literal:
        return p, 0.4 * q - 0.25 * q**3
    return 2.0 * model.kinetic_coeff * p, -model.potential_deriv(q)


def classical_rhs(z, model: ModelSpec, literal=False):
    """zdot for center(s) z from the classical equations of motion."""
    z = np.asarray(z, dtype=complex)
    q = SQRT2 * np.real(z)
    p = SQRT2 * np.imag(z)
    qdot, pdot = _qp_rhs(q, p, model, literal=literal)
    return (qdot + 1j * pdot) / SQRT2


def hamilton_function(z, model: ModelSpec):
    """Classical energy H(q, p) of the center(s)."""
    z = np.asarray(z, dtype=complex)
    q = SQRT2 * np.real(z)
    p = SQRT2 * np.imag(z)
    return model.kinetic_coeff * p**2 + model.potential(q)


def cn_newton_step(z1, dt, model: ModelSpec, tol=1e-12, max_iter=50,
                   literal=False):
    """One implicit step z2 = z1 + dt/2 (zdot1 + zdot2), solved by Newton.

    The iteration runs element-wise in (q, p) with the forward Euler
    step as initial guess.  Returns z2 as a complex array.
    """
    z1 = np.atleast_1d(np.asarray(z1, dtype=complex))
    q1 = SQRT2 * np.real(z1)
    p1 = SQRT2 * np.imag(z1)
    qd1, pd1 = _qp_rhs(q1, p1, model, literal=literal)
    q2 = q1 + dt * qd1
    p2 = p1 + dt * pd1
    kc = model.kinetic_coeff
    for _ in range(max_iter):
        qd2, pd2 = _qp_rhs(q2, p2, model, literal=literal)
        fq = q2 - q1 - 0.5 * dt * (qd1 + qd2)
        fp = p2 - p1 - 0.5 * dt * (pd1 + pd2)
        res = np.max(np.hypot(fq, fp))
        if res <= tol:
            return (q2 + 1j * p2) / SQRT2
        # Jacobian [[1, -dt*kc], [dt/2 V'', 1]] per element
        if literal:
            vpp = -(0.4 - 0.75 * q2**2)
        else:
            vpp = model.potential_deriv2(q2)
        ja = np.ones_like(q2)
        jb = -dt * kc * np.ones_like(q2)
        jc = 0.5 * dt * vpp
        det = ja - jb * jc
        q2 = q2 - (fq - jb * fp) / det
        p2 = p2 - (fp - jc * fq) / det
    raise NewtonError(
        f"implicit classical step did not converge: residual {res:.3e} "
        f"after {max_iter} iterations (dt={dt})")


def advance_frame(frame: GaussianFrame, dt, model: ModelSpec, tol=1e-12,
                  max_iter=50, literal=False) -> GaussianFrame:
    """Step a frame by dt and attach the new velocities."""
    z2 = cn_newton_step(frame.z, dt, model, tol=tol, max_iter=max_iter,
                        literal=literal)
    return GaussianFrame(time=frame.time + dt, z=z2,
                         zdot=classical_rhs(z2, model, literal=literal))


def frame_with_velocities(time, z, model: ModelSpec,
                          literal=False) -> GaussianFrame:
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    return GaussianFrame(time=time, z=z,
                         zdot=classical_rhs(z, model, literal=literal))


def sample_initial_conditions(cfg: SamplerConfig,
                              model: ModelSpec) -> GaussianFrame:
    """Monte Carlo sampling of the initial phase-space configuration.

    q is uniform on q_range, p is a zero-mean Gaussian with variance kT,
    and the pair is accepted with Boltzmann probability
    exp(-(H(q,p) - V_min)/kT).  Fully determined by the seed.
    """
    rng = np.random.default_rng(cfg.seed)
    h_min = model.potential_minimum()
    qs, ps = [], []
    while len(qs) < cfg.n_gauss:
        q = rng.uniform(cfg.q_range[0], cfg.q_range[1])
        p = rng.normal(0.0, np.sqrt(cfg.kT))
        energy = model.kinetic_coeff * p**2 + float(model.potential(q))
        if rng.uniform() < np.exp(-(energy - h_min) / cfg.kT):
            qs.append(q)
            ps.append(p)
    z = (np.array(qs) + 1j * np.array(ps)) / SQRT2
    return frame_with_velocities(0.0, z, model)


def load_initial_conditions(path, model: ModelSpec) -> GaussianFrame:
    """Read a two-column q p text file (one Gaussian per line, # comments)."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns q p")
    z = (data[:, 0] + 1j * data[:, 1]) / SQRT2
    return frame_with_velocities(0.0, z, model)


def save_initial_conditions(path, frame: GaussianFrame):
    np.savetxt(path, np.column_stack([frame.q, frame.p]),
               header="q p (a.u.)", fmt="%.17g")
