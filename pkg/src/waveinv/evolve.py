"""Time integration of the second-order system and its backward adjoint.

The second-order equation is rewritten with the momentum p = C(t) u' as the
first-order system

    C(t) u' = p,      p' = f - B(t) u' - (A(t) + Q(t)) u,

and advanced by the implicit midpoint rule with half-node operators obtained
by averaging adjacent node samples.  The initial momentum (not the velocity)
is the second initial datum, so a time-dependent C never needs to be
differentiated inside the stepper.  Per-step sparse LU factorizations are
kept, and reused verbatim when consecutive step matrices are identical (which
covers constant-in-time coefficients and localized-in-time perturbations);
they also power the exact-transpose adjoint sweeps in :mod:`.sensitivity`.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import RegularityError, ResolutionError, SolverFailureError
from .galerkin import OperatorTimeline, _csr_equal, matrix_time_derivative


@dataclass
class SourceTerm:
    """Load vectors (time node x free DOF): entries are (f(t_n), basis_i)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"source must be 2-D (time x dof), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("source contains non-finite entries")

    @classmethod
    def zero(cls, n_time, n_free):
        return cls(np.zeros((n_time, n_free)))


@dataclass
class Trajectory:
    """Node samples of the state, its velocity, and its acceleration.

    ``meta`` carries the solver cache (timeline, per-step factorizations)
    that derivative and adjoint sweeps reuse; it is never serialized.
    """

    u: np.ndarray
    du: np.ndarray
    ddu: np.ndarray | None
    time_grid: np.ndarray
    dt: float
    mode: str = "midpoint"
    meta: dict = dataclass_field(default_factory=dict)

    def __sub__(self, other):
        ddu = None
        if self.ddu is not None and other.ddu is not None:
            ddu = self.ddu - other.ddu
        return Trajectory(
            self.u - other.u, self.du - other.du, ddu, self.time_grid, self.dt, self.mode
        )


def make_source(disc, time_grid, fn):
    """Sample a source function into load form using the full-mesh mass rows.

    ``fn(t, x)`` (scalar problems) or ``fn(t, x, y) -> (2, n_nodes)`` /
    ``(n_nodes, 2)`` (elastic) is evaluated at every node, then weighted by
    the mass rows so boundary-adjacent couplings are kept.
    """
    tg = np.asarray(time_grid, dtype=float)
    vals = np.empty((tg.size, disc.n_free))
    nodal = np.zeros(disc.n_dofs)
    for i, t in enumerate(tg):
        if disc.dim == 1:
            nodal[:] = fn(t, disc.nodes)
        else:
            comp = np.asarray(fn(t, disc.nodes[:, 0], disc.nodes[:, 1]))
            if comp.shape == (2, disc.n_nodes):
                comp = comp.T
            nodal[0::2] = comp[:, 0]
            nodal[1::2] = comp[:, 1]
        vals[i] = disc.M_load @ nodal
    return SourceTerm(vals)


def momentum_from_velocity(timeline, velocity):
    """Initial momentum datum p(0) = C(0) v for a velocity coefficient vector."""
    return timeline.C[0] @ np.asarray(velocity, dtype=float)


class _FactorCache:
    """splu factorizations with verbatim-reuse for repeated step matrices."""

    def __init__(self):
        self._mat = None
        self._factor = None

    def factorize(self, mat, node):
        if self._mat is not None and _csr_equal(mat, self._mat):
            return self._factor
        try:
            factor = spla.splu(mat.tocsc())
        except RuntimeError as exc:
            raise SolverFailureError(node, f"factorization failed ({exc})") from exc
        self._mat = mat
        self._factor = factor
        return factor


def solve_forward(timeline, f, u0=None, u1=None):
    """March the implicit midpoint scheme over the timeline.

    Parameters
    ----------
    timeline : OperatorTimeline
    f : SourceTerm
        Loads at every time node.
    u0 : array, optional
        Initial state coefficients (defaults to zero).
    u1 : array, optional
        Initial momentum datum p(0) = (C u')(0) in load form (defaults to
        zero).  Use :func:`momentum_from_velocity` to build it from a velocity.

    Returns
    -------
    Trajectory
        With velocity ``du`` recovered from C(t_n) du = p_n and acceleration
        ``ddu`` from the residual C ddu = f - B du - (A + Q) u - (dC) du.
    """
    tg = timeline.time_grid
    n_steps = tg.size - 1
    dt = timeline.dt
    n_free = timeline.n_free
    fv = f.values
    if fv.shape != (tg.size, n_free):
        raise ValueError(f"source shape {fv.shape} does not match ({tg.size}, {n_free})")

    u = np.zeros((tg.size, n_free))
    p = np.zeros((tg.size, n_free))
    if u0 is not None:
        u[0] = np.asarray(u0, dtype=float)
    if u1 is not None:
        p[0] = np.asarray(u1, dtype=float)

    factors = []
    t_mats = []
    c_half = []
    cache = _FactorCache()
    two_dt = 2.0 / dt
    for n in range(n_steps):
        ah = (timeline.A[n] + timeline.A[n + 1]) * 0.5
        bh = (timeline.B[n] + timeline.B[n + 1]) * 0.5
        ch = (timeline.C[n] + timeline.C[n + 1]) * 0.5
        qh = (timeline.Q[n] + timeline.Q[n + 1]) * 0.5
        aq = (ah + qh) * (dt / 2.0)
        s_mat = (ch * two_dt + bh + aq).tocsr()
        t_mat = (ch * two_dt + bh - aq).tocsr()
        factor = cache.factorize(s_mat, n)
        rhs = t_mat @ u[n] + 2.0 * p[n] + dt * 0.5 * (fv[n] + fv[n + 1])
        u[n + 1] = factor.solve(rhs)
        if not np.all(np.isfinite(u[n + 1])):
            raise SolverFailureError(n, "midpoint solve produced non-finite values")
        p[n + 1] = two_dt * (ch @ (u[n + 1] - u[n])) - p[n]
        factors.append(factor)
        t_mats.append(t_mat)
        c_half.append(ch.tocsr())

    du = np.empty_like(u)
    ddu = np.empty_like(u)
    c_cache = _FactorCache()
    c_factors = []
    for n in range(tg.size):
        cf = c_cache.factorize(timeline.C[n].tocsr(), n)
        du[n] = cf.solve(p[n])
        c_factors.append(cf)
    for n in range(tg.size):
        resid = (
            fv[n]
            - timeline.B[n] @ du[n]
            - (timeline.A[n] + timeline.Q[n]) @ u[n]
            - timeline.dC[n] @ du[n]
        )
        ddu[n] = c_factors[n].solve(resid)

    traj = Trajectory(u=u, du=du, ddu=ddu, time_grid=tg, dt=dt)
    traj.meta["scheme"] = {
        "timeline": timeline,
        "factors": factors,
        "t_mats": t_mats,
        "c_half": c_half,
        "c_factors": c_factors,
        "momentum": p,
        "source": f,
    }
    return traj


def reverse_timeline(timeline):
    """The timeline of the end-condition adjoint equation after time reversal.

    The adjoint equation (C w')' - B* w' + (A + Q* - (B*)') w = v with
    homogeneous end conditions becomes, in the reversed variable
    w~(s) = w(T - s), an initial-value problem of the same form with

        A -> A reversed,  C -> C reversed,  B -> +B^T reversed,
        Q -> (Q^T - (dB)^T) reversed,

    where dB keeps the orientation of the original time axis.
    """
    rev = slice(None, None, -1)
    a_r = timeline.A[rev]
    c_r = timeline.C[rev]
    b_r = [m.T.tocsr() for m in timeline.B][rev]
    q_r = [
        (timeline.Q[n].T - timeline.dB[n].T).tocsr() for n in range(timeline.time_grid.size)
    ][rev]
    return OperatorTimeline.from_matrices(
        timeline.problem, timeline.time_grid, a_r, b_r, c_r, q_r
    )


def solve_backward(timeline, v):
    """Solve the adjoint equation backward in time with end conditions zero.

    ``v`` is the adjoint source in load form.  The equation is reversed to an
    initial-value problem (see :func:`reverse_timeline`), marched with
    :func:`solve_forward`, and the output is flipped back; velocities change
    sign under the reversal.
    """
    tl_rev = reverse_timeline(timeline)
    src = SourceTerm(v.values[::-1].copy())
    back = solve_forward(tl_rev, src)
    w = back.u[::-1].copy()
    dw = -back.du[::-1].copy()
    ddw = back.ddu[::-1].copy()
    traj = Trajectory(w, dw, ddw, timeline.time_grid, timeline.dt)
    traj.meta["reversed"] = back
    return traj


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class CompatibilityReport:
    """Outcome of the higher-regularity compatibility conditions."""

    k: int
    passed: bool
    conditions: list
    u2: np.ndarray | None = None

    def failures(self):
        return [c for c in self.conditions if not c["ok"]]


def compatibility_check(f, u0, u1, k, timeline=None):
    """Check the data conditions for solution smoothness level ``k``.

    Level 0 imposes nothing.  Levels >= 1 require homogeneous initial data,
    and vanishing source traces d^j f / dt^j (0) for j <= k - 2 (tolerance
    1e-8 relative to the largest load).  For k >= 2 with a timeline supplied,
    the report carries the induced second time-derivative at t = 0, solving
    C(0) u2 = f(0) - [dC(0) + B(0)] v1 - [A(0) + Q(0)] u0 with v1 the initial
    velocity.
    """
    k = int(k)
    if k not in (0, 1, 2):
        raise ValueError(f"smoothness level must be 0, 1 or 2, got {k}")
    fv = f.values
    scale = float(np.max(np.abs(fv))) if fv.size else 0.0
    ztol = 1e-12 * max(1.0, scale)
    conditions = []

    if k >= 1:
        for name, data in (("u0 = 0", u0), ("u1 = 0", u1)):
            val = 0.0 if data is None else float(np.max(np.abs(data)))
            conditions.append({"name": name, "value": val, "tol": ztol, "ok": val <= ztol})

    n_time = fv.shape[0]
    dt = None
    trace = fv
    for j in range(max(0, k - 1)):
        if j > 0:
            if dt is None:
                raise ResolutionError("source traces beyond order 0 need the time step")
            trace = _one_sided_derivative(trace, dt)
        val = float(np.max(np.abs(trace[0]))) if n_time else 0.0
        tol = 1e-8 * scale if scale > 0 else 1e-8
        conditions.append(
            {"name": f"f^({j})(0) = 0", "value": val, "tol": tol, "ok": val <= tol}
        )

    u2 = None
    if k >= 2 and timeline is not None:
        n_free = timeline.n_free
        u0v = np.zeros(n_free) if u0 is None else np.asarray(u0, dtype=float)
        p0 = np.zeros(n_free) if u1 is None else np.asarray(u1, dtype=float)
        v1 = spla.spsolve(timeline.C[0].tocsc(), p0)
        rhs = (
            fv[0]
            - (timeline.dC[0] + timeline.B[0]) @ v1
            - (timeline.A[0] + timeline.Q[0]) @ u0v
        )
        u2 = spla.spsolve(timeline.C[0].tocsc(), rhs)

    return CompatibilityReport(
        k=k, passed=all(c["ok"] for c in conditions), conditions=conditions, u2=u2
    )


def _one_sided_derivative(values, dt):
    if values.shape[0] < 3:
        raise ResolutionError("one-sided derivative needs at least three nodes")
    out = np.empty_like(values)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dt)
    return out


@dataclass
class EnergyReport:
    """Discrete energy series E_n = (du . C du + u . (A+Q) u) / 2 and summaries."""

    energies: np.ndarray
    max_step_increase: float
    max_relative_drift: float
    monotone_nonincreasing: bool
    lambda_hat: float | None = None


def energy_monitor(trajectory, timeline, f=None, disc=None):
    """Track the discrete energy along a trajectory.

    ``max_relative_drift`` is the largest per-step energy change relative to
    the peak energy; ``lambda_hat`` (recorded only when a source and mesh are
    supplied) is the observed stability ratio max E / ||f||^2 with the source
    measured in the time-integrated pivot norm through the inverse mass
    matrix.  It is an empirical constant of this run, nothing more.
    """
    u = trajectory.u
    du = trajectory.du
    n_time = u.shape[0]
    energies = np.empty(n_time)
    for n in range(n_time):
        energies[n] = 0.5 * (
            du[n] @ (timeline.C[n] @ du[n])
            + u[n] @ ((timeline.A[n] + timeline.Q[n]) @ u[n])
        )
    steps = np.diff(energies)
    peak = float(energies.max()) if n_time else 0.0
    ref = peak if peak > 0 else 1.0
    lam = None
    if f is not None and disc is not None:
        from .forward import trapezoid_weights  # local import to avoid a cycle

        wts = trapezoid_weights(trajectory.time_grid)
        minv = spla.splu(disc.M.tocsc())
        total = 0.0
        for n in range(n_time):
            total += wts[n] * float(f.values[n] @ minv.solve(f.values[n]))
        if total > 0:
            lam = peak / total
    return EnergyReport(
        energies=energies,
        max_step_increase=float(steps.max()) if steps.size else 0.0,
        max_relative_drift=float(np.abs(steps).max() / ref) if steps.size else 0.0,
        monotone_nonincreasing=bool(np.all(steps <= 1e-12 * ref)),
        lambda_hat=lam,
    )


def y_norm(trajectory, disc, k=0):
    """Solution-space norm: sup-in-time energy norms of the state and rates.

    k = 0: max_n |u|_V + max_n |du|_H;  k = 1 additionally max_n |du|_V +
    max_n |ddu|_H.  Requires the acceleration for k = 1.
    """
    if k not in (0, 1):
        raise ValueError(f"norm level must be 0 or 1, got {k}")

    def sup_norm(rows, gram):
        if rows is None:
            return 0.0
        prods = np.einsum("ni,ni->n", rows, (gram @ rows.T).T)
        return float(np.sqrt(np.maximum(prods, 0.0)).max())

    total = sup_norm(trajectory.u, disc.K_V) + sup_norm(trajectory.du, disc.M)
    if k == 1:
        if trajectory.ddu is None:
            raise RegularityError("level-1 norm needs the acceleration samples")
        total += sup_norm(trajectory.du, disc.K_V) + sup_norm(trajectory.ddu, disc.M)
    return total
