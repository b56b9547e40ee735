"""Derivative of the forward operator and its adjoint, in two modes.

The derivative is computed by differentiating the midpoint recursion itself:
with S_n, T_n the step matrices of the base solve and a dot denoting the
directional derivative of the assembled operators, the derivative trajectory
(eta, pi) obeys

    S_n eta_{n+1} = T_n eta_n + 2 pi_n + (Tdot_n u_n - Sdot_n u_{n+1}),
    pi_{n+1} = (2/dt) C_half_n (eta_{n+1} - eta_n) - pi_n
               + (2/dt) Cbar_half_n (u_{n+1} - u_n),

which is an O(dt^2)-consistent discretization of the linearized equation and
at the same time the exact derivative of the discrete solver — so its
remainder is purely quadratic in the direction and its transpose can be run
exactly over the stored factorizations.

Two adjoints are provided: ``adjoint_apply_discrete`` reverses the recursion
above (dot test exact to rounding at any step size), while
``adjoint_apply_continuous`` solves the backward-in-time adjoint equation
with end conditions and assembles the classical gradient densities
(e.g. -div u div w, u' . w'); the two agree at second order in dt.

Gradient fields are per-element densities g(n, e) paired with nodal parameter
directions h through

    <g, h> = sum_n w_n sum_e |e| g(n, e) (vertex-mean h)(n, e),

with trapezoidal time weights w_n; ``nodal_gradient`` converts them to the
equivalent nodal representative for iteration updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTestError,
    DirectionShapeError,
    ObservationError,
    RegularityError,
    RequiresForwardSolveError,
)
from .evolve import SourceTerm, Trajectory, solve_backward
from .forward import (
    DataVector,
    data_inner,
    data_norm,
    observe,
    trapezoid_weights,
)
from .galerkin import FIELD_NAMES, ParameterField, ParameterPoint, assemble_direction


@dataclass
class GradientFields:
    """Named per-element gradient densities on (time node x element)."""

    problem: str
    fields: dict
    time_grid: np.ndarray


def _require_scheme(base):
    scheme = base.meta.get("scheme")
    if scheme is None:
        raise RequiresForwardSolveError(
            "this operation needs the cached forward solve; call forward_map first"
        )
    return scheme


def _direction_fields(disc, point, direction):
    """Normalize a direction dict to full (time x node) arrays."""
    tg = point.time_grid
    out = {}
    for name in FIELD_NAMES[disc.problem]:
        f = direction.get(name)
        if f is None:
            continue
        vals = f.values if isinstance(f, ParameterField) else np.asarray(f, dtype=float)
        if vals.shape != (tg.size, disc.n_nodes):
            raise DirectionShapeError(
                f"direction field '{name}' has shape {vals.shape}, "
                f"expected {(tg.size, disc.n_nodes)}"
            )
        out[name] = vals
    unknown = set(direction) - set(FIELD_NAMES[disc.problem])
    if unknown:
        raise DirectionShapeError(
            f"direction has fields {sorted(unknown)} unknown to '{disc.problem}'"
        )
    return out


def shift_point(point, direction, s):
    """The parameter point with fields moved by s times the direction."""
    out = point.copy()
    for name, f in direction.items():
        vals = f.values if isinstance(f, ParameterField) else np.asarray(f, dtype=float)
        out.fields[name].values = out.fields[name].values + s * vals
    return out


def linearized_rhs(symbol, u, h_timeline):
    """Node-sampled source of the linearized equation for one operator slot.

    For a direction quadruple (Abar, Bbar, Cbar, Qbar) the linearized
    equation is driven by  -Abar u  (slot A), -Qbar u (slot Q),
    -Bbar du (slot B) and -(Cbar du)' = -(dCbar) du - Cbar ddu (slot C);
    the last needs the acceleration samples.
    """
    n_time = u.time_grid.size
    vals = np.empty((n_time, h_timeline.n_free))
    if symbol == "A":
        for n in range(n_time):
            vals[n] = -(h_timeline.A[n] @ u.u[n])
    elif symbol == "Q":
        for n in range(n_time):
            vals[n] = -(h_timeline.Q[n] @ u.u[n])
    elif symbol == "B":
        for n in range(n_time):
            vals[n] = -(h_timeline.B[n] @ u.du[n])
    elif symbol == "C":
        if u.ddu is None:
            raise RegularityError(
                "the C-slot source needs acceleration samples (second derivatives)"
            )
        for n in range(n_time):
            vals[n] = -(h_timeline.dC[n] @ u.du[n]) - (h_timeline.C[n] @ u.ddu[n])
    else:
        raise ValueError(f"operator slot must be one of A, B, C, Q; got {symbol!r}")
    return SourceTerm(vals)


def derivative_apply(disc, point, direction, base):
    """Directional derivative of the forward map at a cached base solve.

    Differentiates the midpoint recursion exactly (see the module docstring),
    reusing the base factorizations; initial data of the derivative are
    homogeneous.  Returns a Trajectory whose velocity and acceleration are
    the exact derivatives of the base recovery formulas.
    """
    scheme = _require_scheme(base)
    timeline = scheme["timeline"]
    tlh = assemble_direction(disc, point, direction)
    tg = timeline.time_grid
    n_steps = tg.size - 1
    dt = timeline.dt
    two_dt = 2.0 / dt
    factors = scheme["factors"]
    t_mats = scheme["t_mats"]
    c_half = scheme["c_half"]
    u = base.u

    eta = np.zeros_like(u)
    pi = np.zeros_like(u)
    for n in range(n_steps):
        abar = (tlh.A[n] + tlh.A[n + 1]) * 0.5
        bbar = (tlh.B[n] + tlh.B[n + 1]) * 0.5
        cbar = (tlh.C[n] + tlh.C[n + 1]) * 0.5
        qbar = (tlh.Q[n] + tlh.Q[n + 1]) * 0.5
        aqbar = (abar + qbar) * (dt / 2.0)
        s_dot = cbar * two_dt + bbar + aqbar
        t_dot = cbar * two_dt + bbar - aqbar
        b_n = t_dot @ u[n] - s_dot @ u[n + 1]
        eta[n + 1] = factors[n].solve(t_mats[n] @ eta[n] + 2.0 * pi[n] + b_n)
        pi[n + 1] = (
            two_dt * (c_half[n] @ (eta[n + 1] - eta[n]))
            - pi[n]
            + two_dt * (cbar @ (u[n + 1] - u[n]))
        )

    c_factors = scheme["c_factors"]
    deta = np.empty_like(eta)
    ddeta = np.empty_like(eta)
    for n in range(tg.size):
        deta[n] = c_factors[n].solve(pi[n] - tlh.C[n] @ base.du[n])
    for n in range(tg.size):
        resid = (
            -(tlh.B[n] @ base.du[n])
            - timeline.B[n] @ deta[n]
            - (tlh.A[n] + tlh.Q[n]) @ base.u[n]
            - (timeline.A[n] + timeline.Q[n]) @ eta[n]
            - (tlh.dC[n] @ base.du[n])
            - timeline.dC[n] @ deta[n]
            - (tlh.C[n] @ base.ddu[n] if base.ddu is not None else 0.0)
        )
        ddeta[n] = c_factors[n].solve(resid)

    traj = Trajectory(eta, deta, ddeta, tg, dt)
    traj.meta["direction_timeline"] = tlh
    traj.meta["base"] = base
    return traj


def _adjoint_seeds(disc, v, time_grid):
    """Load-form seeds of the data functional <., v> at every node."""
    w = trapezoid_weights(time_grid)
    seeds = np.zeros((time_grid.size, disc.n_free))
    if v.spec.kind == "full-field":
        seeds[:] = w[:, None] * (disc.M @ v.values.T).T
    else:
        seeds[:, v.spec.indices] = w[:, None] * (v.values * v.spec.weights)
    return seeds


def _steps_to_nodes(step_density):
    """Distribute half-node step densities to time nodes (1/2 each side)."""
    n_steps, n_el = step_density.shape
    acc = np.zeros((n_steps + 1, n_el))
    acc[:-1] += 0.5 * step_density
    acc[1:] += 0.5 * step_density
    return acc


def adjoint_apply_discrete(disc, point, v, base):
    """Exact transpose of ``observe(derivative_apply(.))`` against data ``v``.

    Runs the midpoint recursion backward over the stored factorizations
    (transposed solves), then transposes the direction-assembly maps into
    per-element gradient densities.  Satisfies the dot test to rounding at
    any fixed step size.
    """
    scheme = _require_scheme(base)
    timeline = scheme["timeline"]
    tg = timeline.time_grid
    n_steps = tg.size - 1
    dt = timeline.dt
    two_dt = 2.0 / dt
    factors = scheme["factors"]
    t_mats = scheme["t_mats"]
    c_half = scheme["c_half"]
    u = base.u

    seeds = _adjoint_seeds(disc, v, tg)
    p = seeds[n_steps].copy()
    q = np.zeros_like(p)
    beta = np.empty((n_steps, disc.n_free))
    gamma = np.empty((n_steps, disc.n_free))
    for n in range(n_steps - 1, -1, -1):
        a = p + two_dt * (c_half[n].T @ q)
        r = factors[n].solve(a, trans="T")
        beta[n] = r
        gamma[n] = q
        p = seeds[n] + t_mats[n].T @ r - two_dt * (c_half[n].T @ q)
        q = 2.0 * r - q

    du_step = u[1:] - u[:-1]
    su_step = u[:-1] + u[1:]
    # collected coefficients of the direction operators inside the recursion:
    # C-slot pairs with the step difference through both b_n and c_n, the
    # B-slot pairs with the step difference through T - S, and the A/Q slots
    # pair with the step sum through the midpoint average.
    x_c = two_dt * (gamma - beta)
    x_b = -beta
    x_aq = -(dt / 2.0) * beta

    w = trapezoid_weights(tg)
    scale = 1.0 / (w[:, None] * disc.element_sizes[None, :])

    fields = {}
    if disc.problem == "wave1d":
        acc_a = _steps_to_nodes(disc.kits["stiffness"].element_bilinear_many(x_aq, su_step))
        acc_b = _steps_to_nodes(disc.kits["mass"].element_bilinear_many(x_b, du_step))
        acc_q = _steps_to_nodes(disc.kits["mass"].element_bilinear_many(x_aq, su_step))
        acc_c = _steps_to_nodes(disc.kits["mass"].element_bilinear_many(x_c, du_step))
        fields = {
            "a": acc_a * scale,
            "b": acc_b * scale,
            "q": acc_q * scale,
            "rho": acc_c * scale,
        }
    elif disc.problem == "elastic2d":
        acc_mu = _steps_to_nodes(disc.kits["eps"].element_bilinear_many(x_aq, su_step))
        acc_lam = _steps_to_nodes(disc.kits["div"].element_bilinear_many(x_aq, su_step))
        acc_c = _steps_to_nodes(disc.kits["vmass"].element_bilinear_many(x_c, du_step))
        fields = {
            "lam": acc_lam * scale,
            "mu": acc_mu * scale,
            "rho": acc_c * scale,
        }
    else:  # maxwell1d
        acc_stiff = _steps_to_nodes(
            disc.kits["stiffness"].element_bilinear_many(x_aq, su_step)
        )
        acc_c = _steps_to_nodes(disc.kits["mass"].element_bilinear_many(x_c, du_step))
        mu_e = disc.element_means(point.fields["mu"].values)
        fields = {
            "eps": acc_c * scale,
            "mu": -acc_stiff * scale / mu_e**2,
        }
    return GradientFields(problem=disc.problem, fields=fields, time_grid=tg)


def adjoint_apply_continuous(disc, point, v, base):
    """Gradient densities via the backward adjoint equation.

    Solves the end-condition adjoint problem with source ``v`` (full-field
    only), then samples the classical densities with the same per-element
    quadrature as the forward bilinear forms, so the pairing with a direction
    reproduces the defining integrals discretely.
    """
    if v.spec.kind != "full-field":
        raise ObservationError(
            "the continuous-mode adjoint supports full-field data only"
        )
    scheme = _require_scheme(base)
    timeline = scheme["timeline"]
    tg = timeline.time_grid
    load = SourceTerm((disc.M @ v.values.T).T)
    w = solve_backward(timeline, load)

    inv_sizes = 1.0 / disc.element_sizes[None, :]
    fields = {}
    if disc.problem == "wave1d":
        fields = {
            "a": -disc.kits["stiffness"].element_bilinear_many(base.u, w.u) * inv_sizes,
            "b": -disc.kits["mass"].element_bilinear_many(base.du, w.u) * inv_sizes,
            "q": -disc.kits["mass"].element_bilinear_many(base.u, w.u) * inv_sizes,
            "rho": disc.kits["mass"].element_bilinear_many(base.du, w.du) * inv_sizes,
        }
    elif disc.problem == "elastic2d":
        fields = {
            "lam": -disc.kits["div"].element_bilinear_many(base.u, w.u) * inv_sizes,
            "mu": -disc.kits["eps"].element_bilinear_many(base.u, w.u) * inv_sizes,
            "rho": disc.kits["vmass"].element_bilinear_many(base.du, w.du) * inv_sizes,
        }
    else:  # maxwell1d
        mu_e = disc.element_means(point.fields["mu"].values)
        fields = {
            "eps": disc.kits["mass"].element_bilinear_many(base.du, w.du) * inv_sizes,
            "mu": disc.kits["stiffness"].element_bilinear_many(base.u, w.u)
            * inv_sizes
            / mu_e**2,
        }
    return GradientFields(problem=disc.problem, fields=fields, time_grid=tg)


# ---------------------------------------------------------------------------
# pairings, norms, and consistency tests


def parameter_pairing(disc, grad, direction):
    """<g, h>: trapezoid in time, measure-weighted vertex-mean in space."""
    w = trapezoid_weights(grad.time_grid)
    total = 0.0
    for name, dens in grad.fields.items():
        h = direction.get(name)
        if h is None:
            continue
        vals = h.values if isinstance(h, ParameterField) else np.asarray(h, dtype=float)
        h_e = disc.element_means(vals)
        total += float(
            np.einsum("n,ne,ne->", w, dens * disc.element_sizes[None, :], h_e)
        )
    return total


def gradient_norm(disc, grad):
    """Norm of gradient densities in the element-measure pairing."""
    w = trapezoid_weights(grad.time_grid)
    total = 0.0
    for dens in grad.fields.values():
        total += float(np.einsum("n,ne->", w, dens**2 * disc.element_sizes[None, :]))
    return float(np.sqrt(max(total, 0.0)))


def direction_norm(disc, direction, time_grid):
    """Norm of a nodal direction in the same element-measure pairing."""
    w = trapezoid_weights(time_grid)
    total = 0.0
    for h in direction.values():
        vals = h.values if isinstance(h, ParameterField) else np.asarray(h, dtype=float)
        h_e = disc.element_means(vals)
        total += float(np.einsum("n,ne->", w, h_e**2 * disc.element_sizes[None, :]))
    return float(np.sqrt(max(total, 0.0)))


def nodal_gradient(disc, grad):
    """Nodal representative of gradient densities.

    Returns per-field (time x node) arrays G with
    sum_n w_n sum_i l_i G(n,i) h(n,i) = <g, h> for every nodal direction h,
    where l_i is the lumped node measure; dividing by l_i makes G a descent
    representative in the weighted nodal inner product.
    """
    out = {}
    for name, dens in grad.fields.items():
        acc = disc.accumulate_to_nodes(dens)
        out[name] = acc / disc.lumped_node_measure[None, :]
    return out


def dot_test(disc, point, direction, v, mode="discrete", base=None):
    """Relative adjoint-consistency mismatch for one (direction, data) pair.

    Compares <dF h, v> in the data inner product with <dF* v, h> in the
    parameter pairing; ``mode`` selects the discrete (exact-transpose) or
    continuous (backward-equation) adjoint.
    """
    if base is None:
        raise RequiresForwardSolveError("dot_test needs the cached base trajectory")
    deriv = derivative_apply(disc, point, direction, base)
    d_out = observe(deriv, v.spec)
    lhs = data_inner(d_out, v, disc)
    if mode == "discrete":
        grad = adjoint_apply_discrete(disc, point, v, base)
    elif mode == "continuous":
        grad = adjoint_apply_continuous(disc, point, v, base)
    else:
        raise ValueError(f"mode must be 'discrete' or 'continuous', got {mode!r}")
    rhs = parameter_pairing(disc, grad, direction)
    denom = data_norm(d_out, disc) * data_norm(v, disc) + gradient_norm(
        disc, grad
    ) * direction_norm(disc, direction, point.time_grid)
    if denom == 0.0:
        raise DegenerateTestError("both pairings vanish; the test is uninformative")
    return abs(lhs - rhs) / denom


@dataclass
class TaylorReport:
    """Remainders ||F(x+sh) - F(x) - s dF(x)h|| and their fitted order."""

    s_values: np.ndarray
    remainders: np.ndarray
    order: float


def taylor_test(disc, point, direction, f, s_values, u0=None, u1=None, base=None):
    """Measure the Taylor remainder order of the derivative along a direction.

    The perturbed points x + s h must stay admissible for every s.  The order
    is the least-squares slope of log remainder against log s.
    """
    from .forward import forward_map  # local import to avoid a cycle

    if base is None:
        base = forward_map(disc, point, f, u0=u0, u1=u1)
    deriv = derivative_apply(disc, point, direction, base)
    d0 = observe(base)
    d1 = observe(deriv)
    s_values = np.asarray(list(s_values), dtype=float)
    remainders = np.empty_like(s_values)
    for i, s in enumerate(s_values):
        shifted = shift_point(point, direction, s)
        traj = forward_map(disc, shifted, f, u0=u0, u1=u1)
        predicted = DataVector(d0.values + s * d1.values, d0.time_grid, d0.spec)
        diff = DataVector(
            observe(traj).values - predicted.values, d0.time_grid, d0.spec
        )
        remainders[i] = data_norm(diff, disc)
    logs = np.log(np.maximum(remainders, 1e-300))
    slope = np.polyfit(np.log(s_values), logs, 1)[0]
    return TaylorReport(s_values=s_values, remainders=remainders, order=float(slope))
