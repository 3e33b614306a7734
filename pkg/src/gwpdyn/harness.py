"""Experiment orchestration: runs, sweeps, reversibility, unitarity.

The engine advances the classical frames once per step and updates any
number of method "cells" in lockstep.  The eigendecomposition of the
overlap matrix and the heavy basis transformations are shared between
cells, since they do not depend on the method or the threshold; this is
what makes full N_g x eps_S sweeps affordable.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import baselines, varprop
from .model import (DOUBLE_WELL, RESCALED, ModelSpec, coherent_in_ho,
                    coherent_overlap, cross_matrices, ho_hamiltonian,
                    ho_position, tau_matrix, well_minimum, SQRT2)
from .trajectories import (GaussianFrame, SamplerConfig, advance_frame,
                           frame_with_velocities, load_initial_conditions,
                           sample_initial_conditions)
from .workspace import EmptyWorkingSpaceError, fix_eigenvector_phases

MODELS = {"doublewell": DOUBLE_WELL, "rescaled": RESCALED}
# a unit-norm problem whose norm reaches 10 has unambiguously blown up
DIVERGENCE_NORM = 10.0

CSV_COLUMNS = ("t", "norm", "energy", "energy_minus_half", "position",
               "autocorr_re", "autocorr_im", "autocorr_abs", "M", "s_min",
               "case")


@dataclass(frozen=True)
class RunConfig:
    model: str = "doublewell"
    method: str = "var"
    n_gauss: int = 30
    eps_s: float = 1e-12
    dt: float = 1e-3
    t_final: float = 6.0
    # reference basis size; 200 holds the double-well truncation error
    # near 1e-10 over t <= 6 (checked against a split-operator grid)
    n_b: int = 200
    seed: int = 1
    stride: int = 10
    initial_file: str | None = None
    z2: complex | None = None
    frozen_frames: bool = False
    literal_zdot: bool = False
    newton_tol: float = 1e-12
    label: str = ""

    def __post_init__(self):
        if self.dt <= 0 or self.t_final <= 0 or self.eps_s <= 0:
            raise ValueError("dt, t_final, and eps_s must be positive")
        if self.method not in ("var", "reg1", "reg2", "naive", "exact"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")

    @property
    def model_spec(self) -> ModelSpec:
        return MODELS[self.model]

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


def initial_frame(cfg: RunConfig) -> GaussianFrame:
    if cfg.initial_file:
        return load_initial_conditions(cfg.initial_file, cfg.model_spec)
    sampler = SamplerConfig(n_gauss=cfg.n_gauss, seed=cfg.seed)
    return sample_initial_conditions(sampler, cfg.model_spec)


def initial_gaussians(cfg: RunConfig):
    """Centers of the tracked wavepackets (main state, optional second)."""
    z0 = well_minimum(cfg.model_spec) / SQRT2
    zs = [complex(z0)]
    if cfg.z2 is not None:
        zs.append(complex(cfg.z2))
    return zs


def frame_hash(frame: GaussianFrame) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(frame.z).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# shared per-step data
# ---------------------------------------------------------------------------

class _FrameData:
    """Same-frame matrices and eigendecomposition, computed lazily."""

    def __init__(self, frame: GaussianFrame, model: ModelSpec, bra_zs):
        self.frame = frame
        self.model = model
        self._bra_zs = bra_zs
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def mats(self):
        return self._get("mats", lambda: cross_matrices(
            self.frame, self.frame, self.model))

    @property
    def S(self):
        return self.mats["S"]

    @property
    def H(self):
        return self.mats["H"]

    @property
    def X(self):
        return self.mats["X"]

    @property
    def tau(self):
        return self._get("tau", lambda: tau_matrix(self.frame, self.S))

    @property
    def eig(self):
        """(s, V) of the overlap, descending, phase-fixed."""
        def compute():
            w, V = np.linalg.eigh(self.S)
            return w[::-1], fix_eigenvector_phases(V[:, ::-1])
        return self._get("eig", compute)

    @property
    def Hcore(self):
        """V^t H V in the descending eigenbasis."""
        _, V = self.eig
        return self._get("Hcore", lambda: V.conj().T @ self.H @ V)

    @property
    def G(self):
        return self._get("G", lambda: 1j * self.H + self.tau)

    @property
    def Gcore(self):
        _, V = self.eig
        return self._get("Gcore", lambda: V.conj().T @ self.G @ V)

    @property
    def bra0(self):
        """Rows <z_init_i | g_k> for the tracked initial Gaussians."""
        return self._get("bra0", lambda: np.array(
            [coherent_overlap(z, self.frame.z) for z in self._bra_zs]))


class _StepContext:
    """One propagation step: frame data at t1 and t2 plus cross blocks."""

    def __init__(self, fd1: _FrameData, fd2: _FrameData, dt: float):
        self.fd1 = fd1
        self.fd2 = fd2
        self.dt = dt
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def cross(self):
        return self._get("cross", lambda: cross_matrices(
            self.fd2.frame, self.fd1.frame, self.fd1.model))

    @property
    def Score(self):
        """V2^t S21 V1 (full spectrum; cells slice what they retain)."""
        _, V1 = self.fd1.eig
        _, V2 = self.fd2.eig
        return self._get("Score",
                         lambda: V2.conj().T @ self.cross["S"] @ V1)

    @property
    def Hcross_core(self):
        _, V1 = self.fd1.eig
        _, V2 = self.fd2.eig
        return self._get("Hcross_core",
                         lambda: V2.conj().T @ self.cross["H"] @ V1)


# ---------------------------------------------------------------------------
# method cells
# ---------------------------------------------------------------------------

class CellDiverged(RuntimeError):
    pass


class _CellBase:
    """One (method, eps_S) propagation sharing the engine's frame data."""

    method = "?"

    def __init__(self, eps_s):
        self.eps_s = eps_s
        self.failed = None        # error message once diverged
        self.series = {k: [] for k in
                       ("t", "norm", "energy", "position", "autocorr",
                        "M", "s_min", "case", "n_small", "norm2",
                        "overlap12")}
        self.case_counts = {"equal": 0, "grow": 0, "shrink": 0}

    # -- to implement -------------------------------------------------------
    def initialize(self, fd0: _FrameData):
        raise NotImplementedError

    def step(self, ctx: _StepContext):
        raise NotImplementedError

    def full_coefficients(self, fd: _FrameData):
        """List of full-basis coefficient vectors of the tracked states."""
        raise NotImplementedError

    # -- shared machinery ---------------------------------------------------
    def _space_diag(self, fd: _FrameData):
        w, _ = fd.eig
        m = int(np.count_nonzero(w >= self.eps_s))
        return m, float(w[-1]), int(np.count_nonzero(w < 1e-7))

    def record(self, fd: _FrameData, case="-"):
        s = self.series
        s["t"].append(fd.frame.time)
        if self.failed is not None:
            return
        cs = self.full_coefficients(fd)
        c = cs[0]
        norm2 = np.real(c.conj() @ fd.S @ c)
        if not np.isfinite(norm2) or norm2 > DIVERGENCE_NORM**2:
            self.failed = (f"{self.method}(eps={self.eps_s:g}) diverged at "
                           f"t={fd.frame.time:g} (norm^2 {norm2:.3e})")
            s["t"].pop()
            return
        s["norm"].append(float(np.sqrt(max(norm2, 0.0))))
        s["energy"].append(float(np.real(c.conj() @ fd.H @ c)))
        s["position"].append(float(np.real(c.conj() @ fd.X @ c)))
        s["autocorr"].append(complex(fd.bra0[0] @ c))
        m, s_min, n_small = self._space_diag(fd)
        s["M"].append(m)
        s["s_min"].append(s_min)
        s["case"].append(case)
        s["n_small"].append(n_small)
        if len(cs) > 1:
            c2 = cs[1]
            n2 = np.real(c2.conj() @ fd.S @ c2)
            s["norm2"].append(float(np.sqrt(max(n2, 0.0))))
            s["overlap12"].append(complex(c.conj() @ fd.S @ c2))

    def check_state(self, vecs, time):
        # coefficients may legitimately be large when S is ill-conditioned;
        # only non-finite values are conclusive here, wavefunction-norm
        # blowup is checked at observation time
        for v in vecs:
            if not np.all(np.isfinite(v)):
                raise CellDiverged(
                    f"{self.method}(eps={self.eps_s:g}) diverged at "
                    f"t={time:g}")


class _VarCell(_CellBase):
    """Finite-step variational propagation; state kept in the working basis."""

    method = "var"

    def __init__(self, eps_s):
        super().__init__(eps_s)
        self.cbars = None
        self.last_case = "-"

    def _slice(self, fd: _FrameData):
        w, _ = fd.eig
        m = int(np.count_nonzero(w >= self.eps_s))
        if m == 0:
            raise EmptyWorkingSpaceError(
                f"all overlap eigenvalues below eps_S={self.eps_s:g} at "
                f"t={fd.frame.time:g}")
        return m, w[:m]

    def initialize(self, fd0: _FrameData):
        m, s = self._slice(fd0)
        _, V = fd0.eig
        # Cbar = Phi^t b with b_k = <g_k|z_init_i>
        proj = (V[:, :m].conj().T @ fd0.bra0.conj().T) / np.sqrt(s)[:, None]
        self.cbars = [proj[:, i].copy() for i in range(fd0.bra0.shape[0])]

    def step(self, ctx: _StepContext):
        m1, s1 = self._slice(ctx.fd1)
        m2, s2 = self._slice(ctx.fd2)
        inv1 = 1.0 / np.sqrt(s1)
        inv2 = 1.0 / np.sqrt(s2)
        Hbar1 = inv1[:, None] * ctx.fd1.Hcore[:m1, :m1] * inv1[None, :]
        Hbar2 = inv2[:, None] * ctx.fd2.Hcore[:m2, :m2] * inv2[None, :]
        Sbar21 = inv2[:, None] * ctx.Score[:m2, :m1] * inv1[None, :]
        Hbar21 = inv2[:, None] * ctx.Hcross_core[:m2, :m1] * inv1[None, :]
        Utilde = varprop.assemble_utilde(ctx.dt, Hbar1, Hbar2, Sbar21,
                                         Hbar21)
        step = varprop.build_ubar(Utilde, self.cbars[0],
                                  pins=self.cbars[1:] or None)
        self.cbars = [step.Ubar @ c for c in self.cbars]
        self.case_counts[step.case] += 1
        self.last_case = step.case
        self.check_state(self.cbars, ctx.fd2.frame.time)
        return step

    def full_coefficients(self, fd: _FrameData):
        m, s = self._slice(fd)
        _, V = fd.eig
        return [V[:, :m] @ (c / np.sqrt(s)) for c in self.cbars]

    def record(self, fd, case=None):
        # norms and mutual overlaps are evaluated on the working-basis
        # coefficients: the working basis is orthonormal, so these are the
        # same quantities as the full-basis quadratic forms but without the
        # 1/s_min cancellation noise of the reconstruction round trip
        s = self.series
        s["t"].append(fd.frame.time)
        if self.failed is not None:
            return
        cb = self.cbars[0]
        norm2 = float(np.real(cb.conj() @ cb))
        if not np.isfinite(norm2) or norm2 > DIVERGENCE_NORM**2:
            self.failed = (f"var(eps={self.eps_s:g}) diverged at "
                           f"t={fd.frame.time:g} (norm^2 {norm2:.3e})")
            s["t"].pop()
            return
        c = self.full_coefficients(fd)[0]
        s["norm"].append(float(np.sqrt(norm2)))
        s["energy"].append(float(np.real(c.conj() @ fd.H @ c)))
        s["position"].append(float(np.real(c.conj() @ fd.X @ c)))
        s["autocorr"].append(complex(fd.bra0[0] @ c))
        m, s_min, n_small = self._space_diag(fd)
        s["M"].append(m)
        s["s_min"].append(s_min)
        s["case"].append(case if case is not None else self.last_case)
        s["n_small"].append(n_small)
        if len(self.cbars) > 1:
            cb2 = self.cbars[1]
            s["norm2"].append(float(np.linalg.norm(cb2)))
            s["overlap12"].append(complex(cb.conj() @ cb2))


class _RegCell(_CellBase):
    """Regularized CN integration of the coefficient EOM (reg1 or reg2)."""

    def __init__(self, eps_s, method):
        super().__init__(eps_s)
        self.method = method
        self.cs = None

    def _finv(self, w):
        return baselines._inverse_eigenvalue_map(w, self.eps_s, self.method)

    def initialize(self, fd0: _FrameData):
        w, V = fd0.eig
        f = self._finv(w)
        b = fd0.bra0.conj().T        # columns <g_k|z_i>
        proj = V @ (f[:, None] * (V.conj().T @ b))
        self.cs = [proj[:, i].copy() for i in range(b.shape[1])]

    def step(self, ctx: _StepContext):
        w1, V1 = ctx.fd1.eig
        w2, V2 = ctx.fd2.eig
        f1 = self._finv(w1)
        f2 = self._finv(w2)
        lhs = np.eye(len(w2)) + 0.5 * ctx.dt * f2[:, None] * ctx.fd2.Gcore
        new = []
        rhs_cols = []
        for c in self.cs:
            u = V1 @ (f1 * (V1.conj().T @ (ctx.fd1.G @ c)))
            rhs_cols.append(V2.conj().T @ (c - 0.5 * ctx.dt * u))
        try:
            sol = np.linalg.solve(lhs, np.column_stack(rhs_cols))
        except np.linalg.LinAlgError as exc:
            raise CellDiverged(
                f"{self.method}(eps={self.eps_s:g}) singular CN system at "
                f"t={ctx.fd2.frame.time:g}") from exc
        new = [V2 @ sol[:, i] for i in range(sol.shape[1])]
        self.check_state(new, ctx.fd2.frame.time)
        self.cs = new

    def full_coefficients(self, fd):
        return self.cs


class _NaiveCell(_CellBase):
    """Direct inversion of the overlap (dense solver, partial pivoting)."""

    method = "naive"

    def __init__(self, eps_s=0.0):
        super().__init__(eps_s)
        self.cs = None

    def initialize(self, fd0: _FrameData):
        b = fd0.bra0.conj().T
        try:
            proj = np.linalg.solve(fd0.S, b)
        except np.linalg.LinAlgError as exc:
            raise CellDiverged("naive: singular initial overlap") from exc
        self.cs = [proj[:, i].copy() for i in range(b.shape[1])]

    def step(self, ctx: _StepContext):
        n = len(self.cs[0])
        try:
            rhs_cols = []
            for c in self.cs:
                u = np.linalg.solve(ctx.fd1.S, ctx.fd1.G @ c)
                rhs_cols.append(ctx.fd2.S @ (c - 0.5 * ctx.dt * u))
            lhs = ctx.fd2.S + 0.5 * ctx.dt * ctx.fd2.G
            sol = np.linalg.solve(lhs, np.column_stack(rhs_cols))
        except np.linalg.LinAlgError as exc:
            raise CellDiverged(
                f"naive: singular overlap at t={ctx.fd2.frame.time:g} "
                f"(cond {np.linalg.cond(ctx.fd2.S):.2e})") from exc
        new = [sol[:, i] for i in range(sol.shape[1])]
        self.check_state(new, ctx.fd2.frame.time)
        self.cs = new

    def full_coefficients(self, fd):
        return self.cs


class _ExactCell(_CellBase):
    """Oscillator-basis reference propagation (frames unused)."""

    method = "exact"

    def __init__(self, model: ModelSpec, n_b, z_inits, dt):
        super().__init__(eps_s=0.0)
        self.n_b = n_b
        rep = ho_hamiltonian(model, n_b)
        self.h = rep.h_matrix
        self.x = ho_position(n_b)
        w, U = np.linalg.eigh(self.h)
        self.prop = U @ (np.exp(-1j * w * dt)[:, None] * U.conj().T)
        self.cs = [coherent_in_ho(z, n_b) for z in z_inits]
        self.bra0 = coherent_in_ho(z_inits[0], n_b).conj()

    def initialize(self, fd0):
        pass

    def step(self, ctx):
        self.cs = [self.prop @ c for c in self.cs]

    def full_coefficients(self, fd):
        return self.cs

    def record(self, fd, case="-"):
        s = self.series
        s["t"].append(fd.frame.time)
        c = self.cs[0]
        s["norm"].append(float(np.linalg.norm(c)))
        s["energy"].append(float(np.real(c.conj() @ self.h @ c)))
        s["position"].append(float(np.real(c.conj() @ self.x @ c)))
        s["autocorr"].append(complex(self.bra0 @ c))
        s["M"].append(self.n_b)
        s["s_min"].append(1.0)
        s["case"].append("-")
        s["n_small"].append(0)
        if len(self.cs) > 1:
            c2 = self.cs[1]
            s["norm2"].append(float(np.linalg.norm(c2)))
            s["overlap12"].append(complex(c.conj() @ c2))


def make_cell(cfg: RunConfig, z_inits, dt=None):
    dt = cfg.dt if dt is None else dt
    if cfg.method == "var":
        return _VarCell(cfg.eps_s)
    if cfg.method in ("reg1", "reg2"):
        return _RegCell(cfg.eps_s, cfg.method)
    if cfg.method == "naive":
        return _NaiveCell()
    return _ExactCell(cfg.model_spec, cfg.n_b, z_inits, dt)


# ---------------------------------------------------------------------------
# the lockstep engine
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    times: np.ndarray
    data: dict
    case_counts: dict
    diverged: bool
    error: str | None
    final_frame: GaussianFrame
    final_states: list
    frames_digest: str

    def column(self, name):
        return self.data[name]


def _advance(frame, dt, model, frozen, tol, literal):
    if frozen:
        return GaussianFrame(time=frame.time + dt, z=frame.z,
                             zdot=np.zeros_like(frame.z))
    return advance_frame(frame, dt, model, tol=tol, literal=literal)


def run_cells(cfg: RunConfig, cells, frame0=None, dt=None, n_steps=None,
              z_inits=None):
    """Propagate all cells over the configured horizon; shared frames."""
    model = cfg.model_spec
    dt = cfg.dt if dt is None else dt
    n_steps = cfg.n_steps if n_steps is None else n_steps
    if frame0 is None:
        frame0 = initial_frame(cfg)
    if cfg.frozen_frames:
        frame0 = GaussianFrame(time=frame0.time, z=frame0.z,
                               zdot=np.zeros_like(frame0.z))
    if z_inits is None:
        z_inits = initial_gaussians(cfg)
    digest = frame_hash(frame0)

    fd1 = _FrameData(frame0, model, z_inits)
    for cell in cells:
        try:
            cell.initialize(fd1)
            cell.record(fd1, case="-")
        except (CellDiverged, EmptyWorkingSpaceError) as exc:
            cell.failed = str(exc)
            cell.series["t"].append(frame0.time)
    for istep in range(1, n_steps + 1):
        frame2 = _advance(fd1.frame, dt, model, cfg.frozen_frames,
                          cfg.newton_tol, cfg.literal_zdot)
        fd2 = _FrameData(frame2, model, z_inits)
        ctx = _StepContext(fd1, fd2, dt)
        for cell in cells:
            if cell.failed is not None:
                continue
            try:
                cell.step(ctx)
            except (CellDiverged, EmptyWorkingSpaceError,
                    FloatingPointError) as exc:
                cell.failed = str(exc)
        if istep % cfg.stride == 0 or istep == n_steps:
            for cell in cells:
                if cell.failed is None:
                    cell.record(fd2)
        fd1 = fd2
    return fd1, digest


def _cell_result(cfg, cell, fd_final, digest) -> RunResult:
    s = cell.series
    n = len(s["norm"])
    times = np.array(s["t"][:n])
    ac = np.array(s["autocorr"], dtype=complex)
    data = {
        "t": times,
        "norm": np.array(s["norm"]),
        "energy": np.array(s["energy"]),
        "energy_minus_half": np.array(s["energy"]) - 0.5,
        "position": np.array(s["position"]),
        "autocorr_re": ac.real,
        "autocorr_im": ac.imag,
        "autocorr_abs": np.abs(ac),
        "M": np.array(s["M"], dtype=int),
        "s_min": np.array(s["s_min"]),
        "case": np.array(s["case"]),
        "n_small": np.array(s["n_small"], dtype=int),
    }
    if s["norm2"]:
        data["norm2"] = np.array(s["norm2"])
        data["overlap12"] = np.array(s["overlap12"], dtype=complex)
    try:
        states = cell.full_coefficients(fd_final)
    except Exception:
        states = []
    return RunResult(config=cfg, times=times, data=data,
                     case_counts=dict(cell.case_counts),
                     diverged=cell.failed is not None, error=cell.failed,
                     final_frame=fd_final.frame, final_states=states,
                     frames_digest=digest)


def run(cfg: RunConfig, frame0=None) -> RunResult:
    """Single propagation with the configured method."""
    z_inits = initial_gaussians(cfg)
    cell = make_cell(cfg, z_inits)
    fd_final, digest = run_cells(cfg, [cell], frame0=frame0,
                                 z_inits=z_inits)
    return _cell_result(cfg, cell, fd_final, digest)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def exact_reference(cfg: RunConfig, frame0=None) -> RunResult:
    # the reference ignores the Gaussian frames; keep them minimal
    ecfg = replace(cfg, method="exact",
                   n_gauss=cfg.n_gauss if frame0 is not None else 1,
                   initial_file=None if frame0 is None else cfg.initial_file)
    return run(ecfg, frame0=frame0)


def sweep(cfg: RunConfig, n_gauss_list, eps_list, methods=("var", "reg1",
                                                           "reg2")):
    """Time-average errors over a (method, N_g, eps_S) grid.

    Cells sharing N_g run in lockstep on identical frames.  Returns a
    list of row dicts.
    """
    exact = exact_reference(cfg)
    rows = []
    for n_g in n_gauss_list:
        sub = replace(cfg, n_gauss=int(n_g))
        grid = [(m, e) for m in methods for e in eps_list]
        cells = [make_cell(replace(sub, method=m, eps_s=e),
                           initial_gaussians(sub)) for m, e in grid]
        fd_final, digest = run_cells(sub, cells)
        for (m, e), cell in zip(grid, cells):
            ccfg = replace(sub, method=m, eps_s=e)
            res = _cell_result(ccfg, cell, fd_final, digest)
            row = {"method": m, "n_gauss": int(n_g), "eps_s": e,
                   "diverged": res.diverged}
            for qty, col in (("autocorr", "autocorr_abs"),
                             ("energy", "energy"),
                             ("position", "position")):
                if res.diverged or len(res.times) != len(exact.times):
                    row[f"dbar_{qty}"] = float("nan")
                else:
                    err = np.abs(res.data[col] - exact.data[col])
                    row[f"dbar_{qty}"] = float(
                        np.trapezoid(err, res.times)
                        / (res.times[-1] - res.times[0]))
            rows.append(row)
    return rows


def revert(cfg: RunConfig, frame0=None):
    """Forward run to t_final, then backward to 0; compare positions.

    Returns (times, |q_fwd - q_bwd|, forward_result, backward_result).
    """
    if cfg.n_steps % cfg.stride != 0:
        raise ValueError("revert needs stride to divide the step count")
    fwd = run(cfg, frame0=frame0)
    if fwd.diverged:
        raise RuntimeError(f"forward run diverged: {fwd.error}")
    bcfg = cfg
    z_inits = initial_gaussians(cfg)
    cell = make_cell(bcfg, z_inits)
    # start from the forward endpoint and integrate with -dt
    frame_end = fwd.final_frame
    bcell = _ResumeCell(cell, fwd.final_states)
    fd_final, digest = run_cells(bcfg, [bcell], frame0=frame_end,
                                 dt=-cfg.dt, n_steps=cfg.n_steps,
                                 z_inits=z_inits)
    bwd = _cell_result(bcfg, bcell, fd_final, digest)
    if bwd.diverged:
        raise RuntimeError(f"backward run diverged: {bwd.error}")
    qf = fwd.data["position"]
    qb = bwd.data["position"][::-1]
    tb = bwd.times[::-1]
    if len(qf) != len(qb) or not np.allclose(fwd.times, tb, atol=1e-9):
        raise RuntimeError("forward/backward output grids do not match")
    return fwd.times, np.abs(qf - qb), fwd, bwd


class _ResumeCell:
    """Wrap a cell so it starts from given full-basis coefficients."""

    def __init__(self, cell, states):
        self._cell = cell
        self._states = [np.asarray(s, dtype=complex) for s in states]

    def __getattr__(self, name):
        return getattr(self._cell, name)

    def initialize(self, fd0: _FrameData):
        c = self._cell
        if isinstance(c, _VarCell):
            m, s = c._slice(fd0)
            _, V = fd0.eig
            c.cbars = [np.sqrt(s) * (V[:, :m].conj().T @ st)
                       for st in self._states]
        elif isinstance(c, _ExactCell):
            c.cs = list(self._states)
        else:
            c.cs = list(self._states)

    def record(self, fd, case=None):
        if case is None:
            self._cell.record(fd)
        else:
            self._cell.record(fd, case=case)

    def step(self, ctx):
        return self._cell.step(ctx)


def unitarity_run(cfg: RunConfig, frame0=None):
    """Co-propagate the main state and the companion state z2.

    Returns dict with times, per-state norm errors, and the error on the
    normalized mutual overlap, all relative to the exact reference.
    """
    if cfg.z2 is None:
        cfg = replace(cfg, z2=-0.034575 - 0.521422j)
    res = run(cfg, frame0=frame0)
    if res.diverged:
        raise RuntimeError(f"run diverged: {res.error}")
    exact = exact_reference(cfg, frame0=frame0)
    ov = np.abs(res.data["overlap12"]) / (res.data["norm"]
                                          * res.data["norm2"])
    ov_exact = np.abs(exact.data["overlap12"]) / (exact.data["norm"]
                                                  * exact.data["norm2"])
    return {
        "times": res.times,
        "dnorm1": res.data["norm"] - exact.data["norm"],
        "dnorm2": res.data["norm2"] - exact.data["norm2"],
        "doverlap": ov - ov_exact,
        "result": res,
        "exact": exact,
    }


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"LDQD1"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, frame: GaussianFrame, states, rng_state=None):
    """Versioned little-endian binary checkpoint."""
    states = [np.asarray(s, dtype=complex) for s in states]
    rng_blob = json.dumps(rng_state).encode() if rng_state is not None \
        else b""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<Id", CHECKPOINT_VERSION, frame.time))
    buf.write(struct.pack("<II", frame.n_gauss, len(states)))
    for arr in (frame.z, frame.zdot if frame.zdot is not None
                else np.zeros_like(frame.z)):
        buf.write(np.asarray(arr, dtype="<c16").tobytes())
    for s in states:
        buf.write(struct.pack("<I", len(s)))
        buf.write(s.astype("<c16").tobytes())
    buf.write(struct.pack("<I", len(rng_blob)))
    buf.write(rng_blob)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 5
    version, time = struct.unpack_from("<Id", data, off)
    off += struct.calcsize("<Id")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    n_g, n_states = struct.unpack_from("<II", data, off)
    off += 8
    z = np.frombuffer(data, dtype="<c16", count=n_g, offset=off).copy()
    off += 16 * n_g
    zdot = np.frombuffer(data, dtype="<c16", count=n_g, offset=off).copy()
    off += 16 * n_g
    states = []
    for _ in range(n_states):
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        states.append(np.frombuffer(data, dtype="<c16", count=ln,
                                    offset=off).copy())
        off += 16 * ln
    (rng_len,) = struct.unpack_from("<I", data, off)
    off += 4
    rng_state = json.loads(data[off:off + rng_len]) if rng_len else None
    frame = GaussianFrame(time=time, z=z, zdot=zdot)
    return frame, states, rng_state


def write_run_csv(path, result: RunResult):
    """One row per output time; deterministic formatting."""
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        d = result.data
        for i in range(len(result.times)):
            row = []
            for col in CSV_COLUMNS:
                v = d[col][i]
                row.append(v if isinstance(v, str) else repr(float(v))
                           if col != "M" else str(int(v)))
            fh.write(",".join(row) + "\n")
        if result.diverged:
            fh.write(f"# ERROR: {result.error}\n")


PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Plot the time series written next to this script.\"\"\"
import sys
import matplotlib.pyplot as plt
import numpy as np

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
rows = np.genfromtxt(path, delimiter=",", names=True, comments="#",
                     dtype=None, encoding=None)
fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 8))
axes[0].plot(rows["t"], rows["position"])
axes[0].set_ylabel("position (a.u.)")
axes[1].plot(rows["t"], rows["autocorr_abs"])
axes[1].set_ylabel("|autocorrelation|")
axes[2].plot(rows["t"], rows["energy"])
axes[2].set_ylabel("energy (a.u.)")
axes[2].set_xlabel("t (a.u.)")
fig.tight_layout()
plt.show()
"""


def write_plot_script(path, csv_name):
    with open(path, "w") as fh:
        fh.write(PLOT_SCRIPT.format(csv_name=csv_name))


def write_sweep_csv(path, rows):
    cols = ("method", "n_gauss", "eps_s", "dbar_autocorr", "dbar_energy",
            "dbar_position", "diverged")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            out = []
            for c in cols:
                v = row[c]
                out.append(str(v) if not isinstance(v, float) else repr(v))
            fh.write(",".join(out) + "\n")
