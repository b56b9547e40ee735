"""Spatial discretization of the three model problems.

Lowest-order conforming finite elements on uniform meshes discretize the
second-order evolution equation

    (C(t) u')' + B(t) u' + (A(t) + Q(t)) u = f,   u = 0 on the boundary,

for three instantiations:

``wave1d``
    scalar wave equation on an interval: A = stiffness(a), B = mass(b),
    C = mass(rho), Q = mass(q);
``elastic2d``
    plane linear elasticity on a rectangle with time-dependent Lame fields:
    A from the bilinear form 2 mu eps(u):eps(v) + lam div(u) div(v),
    C = rho-weighted vector mass, B = Q = 0;
``maxwell1d``
    one-dimensional reduction of the time-domain Maxwell system,
    (eps E')' - (mu^-1 E_x)_x = f: A = stiffness(1/mu), C = eps-weighted
    mass, B = Q = 0 (the curl becomes a plain spatial derivative).

Coefficients are nodal space-time tables; each element uses the mean of its
vertex values (midpoint sampling of the piecewise-linear interpolant), so
every parameter-to-operator map is a smooth function of per-element values and
its linearization is available in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import (
    ConstraintViolationError,
    DirectionShapeError,
    InvalidMeshError,
    ResolutionError,
    SpectralError,
    SymmetryViolationError,
)

PROBLEMS = ("wave1d", "elastic2d", "maxwell1d")

#: parameter field names per problem, in canonical order
FIELD_NAMES = {
    "wave1d": ("a", "b", "q", "rho"),
    "elastic2d": ("lam", "mu", "rho"),
    "maxwell1d": ("eps", "mu"),
}


class AssemblyKit:
    """Precomputed element data for one bilinear form.

    Holds the unit-coefficient local matrices and the scatter pattern
    restricted to free degrees of freedom, so that assembling the global
    matrix for a per-element coefficient vector is a single sparse
    construction, and element-level bilinear values x_e^T L_e y_e come out of
    one einsum.
    """

    def __init__(self, local, dof_map, n_dofs, free_dofs):
        self.local = np.ascontiguousarray(local)  # (n_el, k, k)
        self.dof_map = np.ascontiguousarray(dof_map)  # (n_el, k)
        self.n_dofs = int(n_dofs)
        self.free_dofs = np.asarray(free_dofs)
        n_el, k, _ = self.local.shape
        rows = np.broadcast_to(self.dof_map[:, :, None], (n_el, k, k)).ravel()
        cols = np.broadcast_to(self.dof_map[:, None, :], (n_el, k, k)).ravel()
        full2free = -np.ones(self.n_dofs, dtype=np.int64)
        full2free[self.free_dofs] = np.arange(self.free_dofs.size)
        rf = full2free[rows]
        cf = full2free[cols]
        keep = (rf >= 0) & (cf >= 0)
        self._rows = rf[keep]
        self._cols = cf[keep]
        self._vals = self.local.ravel()[keep]
        self._elem = np.repeat(np.arange(n_el), k * k)[keep]
        self._shape = (self.free_dofs.size, self.free_dofs.size)

    def assemble(self, coeff_elem):
        """Global matrix on free DOFs for per-element coefficients."""
        data = self._vals * np.asarray(coeff_elem)[self._elem]
        mat = sp.csr_matrix((data, (self._rows, self._cols)), shape=self._shape)
        return mat

    def assemble_full(self, coeff_elem):
        """Global matrix on all DOFs (no boundary elimination)."""
        n_el, k, _ = self.local.shape
        rows = np.broadcast_to(self.dof_map[:, :, None], (n_el, k, k)).ravel()
        cols = np.broadcast_to(self.dof_map[:, None, :], (n_el, k, k)).ravel()
        data = (self.local * np.asarray(coeff_elem)[:, None, None]).ravel()
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_dofs, self.n_dofs))

    def _gather(self, x_free):
        x_free = np.asarray(x_free)
        full = np.zeros(x_free.shape[:-1] + (self.n_dofs,))
        full[..., self.free_dofs] = x_free
        return full[..., self.dof_map]  # (..., n_el, k)

    def element_bilinear(self, x_free, y_free):
        """Per-element values x_e^T L_e y_e for free-DOF vectors x, y."""
        xg = self._gather(x_free)
        yg = self._gather(y_free)
        return np.einsum("eij,ei,ej->e", self.local, xg, yg)

    def element_bilinear_many(self, X_free, Y_free):
        """Batched variant: (T, n_free) x (T, n_free) -> (T, n_el)."""
        xg = self._gather(X_free)
        yg = self._gather(Y_free)
        return np.einsum("eij,tei,tej->te", self.local, xg, yg)


@dataclass
class Discretization:
    """Uniform P1 mesh with the inner-product matrices of the energy spaces.

    ``M`` realizes the pivot-space (L2) inner product and ``K_V`` the energy
    (H1-type) inner product, both restricted to the free (non-Dirichlet)
    degrees of freedom.  ``M_load`` keeps the full-mesh mass rows so nodal
    samples of a source can be turned into load vectors without losing the
    boundary-adjacent couplings.
    """

    problem: str
    dim: int
    n_components: int
    nodes: np.ndarray
    elements: np.ndarray
    element_sizes: np.ndarray
    boundary_nodes: np.ndarray
    free_nodes: np.ndarray
    free_dofs: np.ndarray
    n_dofs: int
    M: sp.csr_matrix
    K_V: sp.csr_matrix
    M_load: sp.csr_matrix
    kits: dict = dataclass_field(default_factory=dict)
    lumped_node_measure: np.ndarray | None = None

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_free(self):
        return self.free_dofs.size

    def element_means(self, nodal_values):
        """Vertex-mean (midpoint sample) of nodal values, per element.

        Accepts (n_nodes,) or (T, n_nodes); returns (n_el,) or (T, n_el).
        """
        vals = np.asarray(nodal_values)
        return vals[..., self.elements].mean(axis=-1)

    def accumulate_to_nodes(self, element_density):
        """Spread |e|-weighted element densities to vertices.

        For densities g(.., e) returns G(.., i) = sum_{e owning i} |e| g(.., e) / n_vert,
        the transpose of :meth:`element_means` against the measure-weighted pairing.
        """
        dens = np.asarray(element_density)
        nvert = self.elements.shape[1]
        out = np.zeros(dens.shape[:-1] + (self.n_nodes,))
        weighted = dens * (self.element_sizes / nvert)
        for v in range(nvert):
            np.add.at(out, (..., self.elements[:, v]), weighted)
        return out


def _interval_mesh(n, length):
    h = length / n
    nodes = np.linspace(0.0, length, n + 1)
    elements = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    sizes = np.full(n, h)
    k_loc = np.tile((1.0 / h) * np.array([[1.0, -1.0], [-1.0, 1.0]]), (n, 1, 1))
    m_loc = np.tile((h / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]]), (n, 1, 1))
    return nodes, elements, sizes, k_loc, m_loc


def _triangle_mesh(nx, ny, extent):
    lx, ly = extent
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    xg, yg = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.stack([xg.ravel(), yg.ravel()], axis=1)  # node id = j*(nx+1)+i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = a + (nx + 1)
            d = c + 1
            tris.append([a, b, d])
            tris.append([a, d, c])
    elements = np.array(tris, dtype=np.int64)

    coords = nodes[elements]  # (n_el, 3, 2)
    x = coords[..., 0]
    y = coords[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (
        y[:, 1] - y[:, 0]
    )
    area = 0.5 * np.abs(det)
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([b, c], axis=2) / det[:, None, None]  # (n_el, 3, 2)
    return nodes, elements, area, grads


def build_grid(problem, n, extent=None):
    """Build the mesh and inner-product matrices for one model problem.

    Parameters
    ----------
    problem : str
        One of ``wave1d``, ``elastic2d``, ``maxwell1d``.
    n : int or (int, int)
        Number of elements (1D) or cells per direction (2D).
    extent : float or (float, float), optional
        Interval length, or rectangle side lengths.  Defaults to 1 (unit
        interval / unit square).

    Returns
    -------
    Discretization
    """
    if problem not in PROBLEMS:
        raise InvalidMeshError(f"unknown problem kind '{problem}'")

    if problem in ("wave1d", "maxwell1d"):
        n = int(n)
        length = 1.0 if extent is None else float(extent)
        if n < 2:
            raise InvalidMeshError(f"need at least 2 elements, got {n}")
        if length <= 0:
            raise InvalidMeshError(f"extent must be positive, got {length}")
        nodes, elements, sizes, k_loc, m_loc = _interval_mesh(n, length)
        n_nodes = nodes.size
        boundary = np.array([0, n])
        free_nodes = np.arange(1, n)
        free_dofs = free_nodes
        kits = {
            "stiffness": AssemblyKit(k_loc, elements, n_nodes, free_dofs),
            "mass": AssemblyKit(m_loc, elements, n_nodes, free_dofs),
        }
        ones = np.ones(elements.shape[0])
        M = kits["mass"].assemble(ones)
        K_V = kits["stiffness"].assemble(ones)
        M_load = kits["mass"].assemble_full(ones)[free_dofs, :]
        disc = Discretization(
            problem=problem,
            dim=1,
            n_components=1,
            nodes=nodes,
            elements=elements,
            element_sizes=sizes,
            boundary_nodes=boundary,
            free_nodes=free_nodes,
            free_dofs=free_dofs,
            n_dofs=n_nodes,
            M=M,
            K_V=K_V,
            M_load=M_load,
            kits=kits,
        )
    else:
        try:
            nx, ny = (int(n[0]), int(n[1]))
        except TypeError:
            nx = ny = int(n)
        if extent is None:
            extent = (1.0, 1.0)
        lx, ly = float(extent[0]), float(extent[1])
        if nx < 2 or ny < 2:
            raise InvalidMeshError(f"need at least 2 cells per direction, got {(nx, ny)}")
        if lx <= 0 or ly <= 0:
            raise InvalidMeshError(f"extent must be positive, got {(lx, ly)}")
        nodes, elements, area, grads = _triangle_mesh(nx, ny, (lx, ly))
        n_nodes = nodes.shape[0]
        n_el = elements.shape[0]
        on_bdry = (
            (nodes[:, 0] == 0.0)
            | (nodes[:, 0] == lx)
            | (nodes[:, 1] == 0.0)
            | (nodes[:, 1] == ly)
        )
        boundary = np.nonzero(on_bdry)[0]
        free_nodes = np.nonzero(~on_bdry)[0]
        n_dofs = 2 * n_nodes
        free_dofs = np.sort(np.concatenate([2 * free_nodes, 2 * free_nodes + 1]))

        k_scalar = area[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)
        m_scalar = (area[:, None, None] / 12.0) * (np.ones((3, 3)) + np.eye(3))

        dof_vec = np.empty((n_el, 6), dtype=np.int64)
        dof_vec[:, 0::2] = 2 * elements
        dof_vec[:, 1::2] = 2 * elements + 1

        # strain-displacement rows: (eps_xx, eps_yy, 2 eps_xy)
        bmat = np.zeros((n_el, 3, 6))
        bmat[:, 0, 0::2] = grads[..., 0]
        bmat[:, 1, 1::2] = grads[..., 1]
        bmat[:, 2, 0::2] = grads[..., 1]
        bmat[:, 2, 1::2] = grads[..., 0]
        dmat = np.diag([2.0, 2.0, 1.0])  # realizes 2 eps(u):eps(v)
        k_eps = area[:, None, None] * np.einsum("eai,ab,ebj->eij", bmat, dmat, bmat)

        gvec = np.zeros((n_el, 6))
        gvec[:, 0::2] = grads[..., 0]
        gvec[:, 1::2] = grads[..., 1]
        k_div = area[:, None, None] * np.einsum("ei,ej->eij", gvec, gvec)

        m_vec = np.zeros((n_el, 6, 6))
        m_vec[:, 0::2, 0::2] = m_scalar
        m_vec[:, 1::2, 1::2] = m_scalar
        k_vstiff = np.zeros((n_el, 6, 6))
        k_vstiff[:, 0::2, 0::2] = k_scalar
        k_vstiff[:, 1::2, 1::2] = k_scalar

        kits = {
            "eps": AssemblyKit(k_eps, dof_vec, n_dofs, free_dofs),
            "div": AssemblyKit(k_div, dof_vec, n_dofs, free_dofs),
            "vmass": AssemblyKit(m_vec, dof_vec, n_dofs, free_dofs),
            "vstiff": AssemblyKit(k_vstiff, dof_vec, n_dofs, free_dofs),
        }
        ones = np.ones(n_el)
        M = kits["vmass"].assemble(ones)
        K_V = kits["vstiff"].assemble(ones) + M  # full H1 inner product
        M_load = kits["vmass"].assemble_full(ones)[free_dofs, :]
        disc = Discretization(
            problem=problem,
            dim=2,
            n_components=2,
            nodes=nodes,
            elements=elements,
            element_sizes=area,
            boundary_nodes=boundary,
            free_nodes=free_nodes,
            free_dofs=free_dofs,
            n_dofs=n_dofs,
            M=M.tocsr(),
            K_V=K_V.tocsr(),
            M_load=M_load.tocsr(),
            kits=kits,
        )

    nvert = disc.elements.shape[1]
    lumped = np.zeros(disc.n_nodes)
    np.add.at(
        lumped,
        disc.elements.ravel(),
        np.repeat(disc.element_sizes / nvert, nvert),
    )
    disc.lumped_node_measure = lumped
    return disc


# ---------------------------------------------------------------------------
# parameter fields and admissibility


@dataclass
class ParameterField:
    """A scalar coefficient tabulated on (time node x mesh node)."""

    values: np.ndarray
    time_grid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        if self.values.ndim != 2:
            raise DirectionShapeError(
                f"field values must be 2-D (time x space), got shape {self.values.shape}"
            )
        if self.values.shape[0] != self.time_grid.size:
            raise DirectionShapeError(
                f"field has {self.values.shape[0]} time rows but the grid has "
                f"{self.time_grid.size} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise DirectionShapeError("field contains non-finite entries")

    @classmethod
    def constant(cls, value, time_grid, n_space):
        vals = np.full((np.asarray(time_grid).size, n_space), float(value))
        return cls(vals, time_grid)

    @classmethod
    def from_callable(cls, fn, time_grid, disc):
        """Sample fn(t, x) (1D) or fn(t, x, y) (2D) at grid points."""
        tg = np.asarray(time_grid, dtype=float)
        vals = np.empty((tg.size, disc.n_nodes))
        for i, t in enumerate(tg):
            if disc.dim == 1:
                vals[i] = fn(t, disc.nodes)
            else:
                vals[i] = fn(t, disc.nodes[:, 0], disc.nodes[:, 1])
        return cls(vals, tg)

    def copy(self):
        return ParameterField(self.values.copy(), self.time_grid.copy())


@dataclass(frozen=True)
class AdmissibleSet:
    """Box bounds defining the admissible parameter set, with strict slack.

    Defaults: wave1d needs a >= a0, rho >= c0; elastic2d needs rho >= rho0 and
    mu, 2 mu + 3 lam within [1/alpha0, alpha0]; maxwell1d needs eps >= eps0
    and mu within [mu0, mu1].  All bounds are enforced with a strict interior
    slack so that admissible points stay away from the boundary of the box.
    """

    problem: str
    slack: float = 1e-8
    a0: float = 0.1
    c0: float = 0.1
    rho0: float = 0.1
    alpha0: float = 10.0
    eps0: float = 0.1
    mu0: float = 0.1
    mu1: float = 10.0

    def _bounds(self, fields):
        """Yield (bound_name, field_name, array, lower, upper) tuples."""
        s = self.slack
        if self.problem == "wave1d":
            yield ("a >= a0", "a", fields["a"].values, self.a0 + s, None)
            yield ("rho >= c0", "rho", fields["rho"].values, self.c0 + s, None)
        elif self.problem == "elastic2d":
            yield ("rho >= rho0", "rho", fields["rho"].values, self.rho0 + s, None)
            yield (
                "1/alpha0 <= mu <= alpha0",
                "mu",
                fields["mu"].values,
                1.0 / self.alpha0 + s,
                self.alpha0 - s,
            )
            combo = 2.0 * fields["mu"].values + 3.0 * fields["lam"].values
            yield (
                "1/alpha0 <= 2*mu+3*lam <= alpha0",
                "lam",
                combo,
                1.0 / self.alpha0 + s,
                self.alpha0 - s,
            )
        elif self.problem == "maxwell1d":
            yield ("eps >= eps0", "eps", fields["eps"].values, self.eps0 + s, None)
            yield ("mu0 <= mu <= mu1", "mu", fields["mu"].values, self.mu0 + s, self.mu1 - s)
        else:  # pragma: no cover - guarded at construction
            raise ValueError(f"unknown problem '{self.problem}'")

    def violations(self, fields):
        """List of (bound, field, (time, space), value, limit) violations."""
        found = []
        for bound, name, arr, lo, hi in self._bounds(fields):
            if lo is not None:
                bad = arr < lo
                if np.any(bad):
                    idx = np.unravel_index(np.argmax(bad), arr.shape)
                    found.append((bound, name, idx, float(arr[idx]), float(lo)))
            if hi is not None:
                bad = arr > hi
                if np.any(bad):
                    idx = np.unravel_index(np.argmax(bad), arr.shape)
                    found.append((bound, name, idx, float(arr[idx]), float(hi)))
        return found


@dataclass
class ParameterPoint:
    """A full set of named coefficient fields for one problem."""

    problem: str
    fields: dict
    bounds: AdmissibleSet | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem '{self.problem}'")
        missing = [n for n in FIELD_NAMES[self.problem] if n not in self.fields]
        if missing:
            raise DirectionShapeError(f"missing parameter fields {missing}")
        extra = set(self.fields) - set(FIELD_NAMES[self.problem])
        if extra:
            raise DirectionShapeError(
                f"fields {sorted(extra)} unknown to problem '{self.problem}'"
            )
        if self.bounds is None:
            self.bounds = AdmissibleSet(self.problem)
        tg = self.time_grid
        n_space = self.fields[self.field_names[0]].values.shape[1]
        for name, f in self.fields.items():
            if f.values.shape != (tg.size, n_space):
                raise DirectionShapeError(
                    f"field '{name}' has shape {f.values.shape}, inconsistent with the point"
                )
            if not np.array_equal(f.time_grid, tg):
                raise DirectionShapeError(f"field '{name}' uses a different time grid")

    @property
    def field_names(self):
        return FIELD_NAMES[self.problem]

    @property
    def time_grid(self):
        return self.fields[self.field_names[0]].time_grid

    @classmethod
    def from_constants(cls, problem, time_grid, n_space, bounds=None, **values):
        fields = {
            name: ParameterField.constant(values[name], time_grid, n_space)
            for name in FIELD_NAMES[problem]
        }
        return cls(problem, fields, bounds)

    def copy(self):
        return ParameterPoint(
            self.problem, {n: f.copy() for n, f in self.fields.items()}, self.bounds
        )

    def check_admissible(self):
        """Raise ConstraintViolationError on the first violated bound."""
        bad = self.bounds.violations(self.fields)
        if bad:
            raise ConstraintViolationError(*bad[0])

    def is_admissible(self):
        return not self.bounds.violations(self.fields)


def project_point(point):
    """Clip a parameter point back into the admissible box (with slack).

    The elastic constraints couple mu and lam; mu is clipped first and the
    combined bound is then restored through lam, which is a feasibility-
    restoring (not Euclidean) projection onto the box.
    """
    out = point.copy()
    b = point.bounds
    s = b.slack
    f = out.fields
    if point.problem == "wave1d":
        np.clip(f["a"].values, b.a0 + s, None, out=f["a"].values)
        np.clip(f["rho"].values, b.c0 + s, None, out=f["rho"].values)
    elif point.problem == "elastic2d":
        np.clip(f["rho"].values, b.rho0 + s, None, out=f["rho"].values)
        np.clip(f["mu"].values, 1.0 / b.alpha0 + s, b.alpha0 - s, out=f["mu"].values)
        lo = (1.0 / b.alpha0 + s - 2.0 * f["mu"].values) / 3.0
        hi = (b.alpha0 - s - 2.0 * f["mu"].values) / 3.0
        f["lam"].values = np.clip(f["lam"].values, lo, hi)
    elif point.problem == "maxwell1d":
        np.clip(f["eps"].values, b.eps0 + s, None, out=f["eps"].values)
        np.clip(f["mu"].values, b.mu0 + s, b.mu1 - s, out=f["mu"].values)
    return out


# ---------------------------------------------------------------------------
# operator timelines


@dataclass
class OperatorTimeline:
    """Time-sampled operator quadruple (A, B, C, Q) plus time derivatives."""

    problem: str
    time_grid: np.ndarray
    A: list
    B: list
    C: list
    Q: list
    dA: list
    dB: list
    dC: list
    dQ: list
    coercivity_margins: object = None

    @property
    def n_free(self):
        return self.A[0].shape[0]

    @property
    def dt(self):
        return float(self.time_grid[1] - self.time_grid[0])

    @classmethod
    def from_matrices(cls, problem, time_grid, A, B, C, Q):
        """Build a timeline from node-sampled matrices, differencing in time."""
        tg = np.asarray(time_grid, dtype=float)
        dt = tg[1] - tg[0]
        if len(A) >= 3:
            dA = matrix_time_derivative(A, dt)
            dB = matrix_time_derivative(B, dt)
            dC = matrix_time_derivative(C, dt)
            dQ = matrix_time_derivative(Q, dt)
        else:
            zero = sp.csr_matrix(A[0].shape)
            dA = [zero] * len(A)
            dB = [zero] * len(A)
            dC = [zero] * len(A)
            dQ = [zero] * len(A)
        return cls(problem, tg, list(A), list(B), list(C), list(Q), dA, dB, dC, dQ)


def matrix_time_derivative(mats, dt):
    """Second-order time derivatives of matrix samples.

    Central differences at interior nodes, one-sided three-point stencils at
    the ends; all stencils are exact for quadratic-in-time entries.
    """
    n_last = len(mats) - 1
    if n_last < 2:
        raise ResolutionError("matrix time derivative needs at least three samples")
    inv = 1.0 / (2.0 * dt)
    out = [(-3.0 * mats[0] + 4.0 * mats[1] - mats[2]) * inv]
    for n in range(1, n_last):
        out.append((mats[n + 1] - mats[n - 1]) * inv)
    out.append((3.0 * mats[n_last] - 4.0 * mats[n_last - 1] + mats[n_last - 2]) * inv)
    return [m.tocsr() for m in out]


def _zero_like(disc):
    return sp.csr_matrix((disc.n_free, disc.n_free))


def assemble_operators(disc, point, check=True):
    """Assemble the node-sampled operator quadruple for a parameter point.

    Raises ConstraintViolationError if the point leaves the admissible box
    (skipped with ``check=False``, used by perturbation studies that validate
    separately).
    """
    if point.problem != disc.problem:
        raise DirectionShapeError(
            f"point is for '{point.problem}' but the mesh is for '{disc.problem}'"
        )
    if check:
        point.check_admissible()
    tg = point.time_grid
    if tg.size < 3:
        raise ResolutionError("timelines need at least three time nodes")
    n_t = tg.size
    zero = _zero_like(disc)
    A = []
    B = []
    C = []
    Q = []
    if disc.problem == "wave1d":
        a_e = disc.element_means(point.fields["a"].values)
        b_e = disc.element_means(point.fields["b"].values)
        q_e = disc.element_means(point.fields["q"].values)
        rho_e = disc.element_means(point.fields["rho"].values)
        for n in range(n_t):
            A.append(disc.kits["stiffness"].assemble(a_e[n]))
            B.append(disc.kits["mass"].assemble(b_e[n]))
            C.append(disc.kits["mass"].assemble(rho_e[n]))
            Q.append(disc.kits["mass"].assemble(q_e[n]))
    elif disc.problem == "elastic2d":
        lam_e = disc.element_means(point.fields["lam"].values)
        mu_e = disc.element_means(point.fields["mu"].values)
        rho_e = disc.element_means(point.fields["rho"].values)
        for n in range(n_t):
            A.append(
                disc.kits["eps"].assemble(mu_e[n]) + disc.kits["div"].assemble(lam_e[n])
            )
            B.append(zero)
            C.append(disc.kits["vmass"].assemble(rho_e[n]))
            Q.append(zero)
    else:  # maxwell1d
        eps_e = disc.element_means(point.fields["eps"].values)
        mu_e = disc.element_means(point.fields["mu"].values)
        for n in range(n_t):
            A.append(disc.kits["stiffness"].assemble(1.0 / mu_e[n]))
            B.append(zero)
            C.append(disc.kits["mass"].assemble(eps_e[n]))
            Q.append(zero)
    return OperatorTimeline.from_matrices(disc.problem, tg, A, B, C, Q)


def assemble_direction(disc, point, direction):
    """Linearization of the parameter-to-operator map in a given direction.

    ``direction`` maps field names to ParameterFields (missing names are
    treated as zero).  Returns the operator quadruple of the derivative:

    - wave1d:    (stiffness(a_bar), mass(b_bar), mass(rho_bar), mass(q_bar))
    - elastic2d: (A_{lam_bar, mu_bar}, 0, C_{rho_bar}, 0)
    - maxwell1d: (-stiffness(mu_bar / mu^2), 0, C_{eps_bar}, 0)
    """
    if point.problem != disc.problem:
        raise DirectionShapeError(
            f"point is for '{point.problem}' but the mesh is for '{disc.problem}'"
        )
    tg = point.time_grid
    n_t = tg.size
    n_nodes = disc.n_nodes
    arrs = {}
    for name in FIELD_NAMES[disc.problem]:
        f = direction.get(name)
        if f is None:
            arrs[name] = np.zeros((n_t, n_nodes))
        else:
            vals = f.values if isinstance(f, ParameterField) else np.asarray(f, dtype=float)
            if vals.shape != (n_t, n_nodes):
                raise DirectionShapeError(
                    f"direction field '{name}' has shape {vals.shape}, expected {(n_t, n_nodes)}"
                )
            arrs[name] = vals
    unknown = set(direction) - set(FIELD_NAMES[disc.problem])
    if unknown:
        raise DirectionShapeError(
            f"direction has fields {sorted(unknown)} unknown to problem '{disc.problem}'"
        )

    zero = _zero_like(disc)
    A = []
    B = []
    C = []
    Q = []
    if disc.problem == "wave1d":
        a_e = disc.element_means(arrs["a"])
        b_e = disc.element_means(arrs["b"])
        q_e = disc.element_means(arrs["q"])
        rho_e = disc.element_means(arrs["rho"])
        for n in range(n_t):
            A.append(disc.kits["stiffness"].assemble(a_e[n]))
            B.append(disc.kits["mass"].assemble(b_e[n]))
            C.append(disc.kits["mass"].assemble(rho_e[n]))
            Q.append(disc.kits["mass"].assemble(q_e[n]))
    elif disc.problem == "elastic2d":
        lam_e = disc.element_means(arrs["lam"])
        mu_e = disc.element_means(arrs["mu"])
        rho_e = disc.element_means(arrs["rho"])
        for n in range(n_t):
            A.append(
                disc.kits["eps"].assemble(mu_e[n]) + disc.kits["div"].assemble(lam_e[n])
            )
            B.append(zero)
            C.append(disc.kits["vmass"].assemble(rho_e[n]))
            Q.append(zero)
    else:  # maxwell1d
        mu_base = disc.element_means(point.fields["mu"].values)
        mu_bar = disc.element_means(arrs["mu"])
        eps_bar = disc.element_means(arrs["eps"])
        for n in range(n_t):
            A.append(disc.kits["stiffness"].assemble(-mu_bar[n] / mu_base[n] ** 2))
            B.append(zero)
            C.append(disc.kits["mass"].assemble(eps_bar[n]))
            Q.append(zero)
    return OperatorTimeline.from_matrices(disc.problem, tg, A, B, C, Q)


# ---------------------------------------------------------------------------
# coercivity


@dataclass
class CoercivityReport:
    """Per-node coercivity margins of (A, K_V) and (C, M)."""

    margins_A: np.ndarray
    margins_C: np.ndarray
    min_A: float
    min_C: float
    threshold_A: float
    threshold_C: float
    slack: float
    passed: bool


def _check_symmetric(mat, label, node):
    dense_max = np.abs(mat.data).max() if mat.nnz else 0.0
    asym = mat - mat.T
    asym_max = np.abs(asym.data).max() if asym.nnz else 0.0
    if dense_max > 0 and asym_max > 1e-12 * dense_max:
        raise SymmetryViolationError(
            f"operator {label} at node {node} is not symmetric: "
            f"max asymmetry {asym_max:.3e} vs scale {dense_max:.3e}"
        )


def _smallest_generalized_eig(mat, gram):
    try:
        vals = scipy.linalg.eigh(
            mat.toarray(), gram.toarray(), eigvals_only=True, subset_by_index=[0, 0]
        )
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - hard to trigger
        raise SpectralError(f"generalized eigensolve failed: {exc}") from exc
    return float(vals[0])


def _csr_equal(a, b):
    return (
        a.shape == b.shape
        and a.nnz == b.nnz
        and np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )


def check_coercivity(timeline, disc, threshold_A=0.0, threshold_C=0.0, slack=1e-8):
    """Smallest generalized eigenvalues of (A(t_n), K_V) and (C(t_n), M).

    The report records per-node margins, their minima, and whether both
    minima exceed the configured thresholds by the strict slack (interior
    membership).  Consecutive identical operator samples share one solve.
    """
    margins_A = np.empty(timeline.time_grid.size)
    margins_C = np.empty(timeline.time_grid.size)
    for name, mats, gram, out in (
        ("A", timeline.A, disc.K_V, margins_A),
        ("C", timeline.C, disc.M, margins_C),
    ):
        prev = None
        for n, mat in enumerate(mats):
            _check_symmetric(mat.tocsr(), name, n)
            if prev is not None and _csr_equal(mat, mats[n - 1]):
                out[n] = out[n - 1]
            else:
                out[n] = _smallest_generalized_eig(mat, gram)
            prev = mat
    report = CoercivityReport(
        margins_A=margins_A,
        margins_C=margins_C,
        min_A=float(margins_A.min()),
        min_C=float(margins_C.min()),
        threshold_A=threshold_A,
        threshold_C=threshold_C,
        slack=slack,
        passed=bool(
            margins_A.min() > threshold_A + slack and margins_C.min() > threshold_C + slack
        ),
    )
    timeline.coercivity_margins = report
    return report


# ---------------------------------------------------------------------------
# discrete parameter norms


def time_difference(values, dt):
    """Second-order difference quotient in time along axis 0."""
    vals = np.asarray(values, dtype=float)
    if vals.shape[0] < 3:
        raise ResolutionError("time differences need at least three nodes")
    out = np.empty_like(vals)
    out[1:-1] = (vals[2:] - vals[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * vals[0] + 4.0 * vals[1] - vals[2]) / (2.0 * dt)
    out[-1] = (3.0 * vals[-1] - 4.0 * vals[-2] + vals[-3]) / (2.0 * dt)
    return out


def parameter_norm(field, k):
    """Discrete surrogate of the W^{k+1,inf}-in-time sup norm.

    Maximum over time-difference orders 0 .. k+1 of the max-abs value over all
    samples; differences use the second-order stencils of
    :func:`time_difference`.
    """
    k = int(k)
    n_steps = field.time_grid.size - 1
    if k + 1 > n_steps:
        raise ResolutionError(
            f"order {k} norm needs at least {k + 2} time nodes, grid has {n_steps + 1}"
        )
    dt = float(field.time_grid[1] - field.time_grid[0])
    cur = field.values
    best = 0.0
    for order in range(k + 2):
        best = max(best, float(np.max(np.abs(cur))))
        if order < k + 1:
            cur = time_difference(cur, dt)
    return best


# ---------------------------------------------------------------------------
# external interfaces


def _triplets(mat):
    coo = mat.tocoo()
    return {
        "shape": list(coo.shape),
        "rows": coo.row.tolist(),
        "cols": coo.col.tolist(),
        "values": coo.data.tolist(),
    }


def discretization_to_json(disc):
    """JSON-serializable dump: nodes, connectivity, inner-product triplets."""
    return {
        "problem": disc.problem,
        "dim": disc.dim,
        "n_components": disc.n_components,
        "nodes": np.asarray(disc.nodes).tolist(),
        "elements": disc.elements.tolist(),
        "free_dofs": disc.free_dofs.tolist(),
        "M": _triplets(disc.M),
        "K_V": _triplets(disc.K_V),
    }


def save_discretization(disc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(discretization_to_json(disc), fh)


def load_field_csv(path, time_grid, n_space):
    """Read a coefficient table (time rows x space columns) from CSV."""
    vals = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
    tg = np.asarray(time_grid, dtype=float)
    if vals.shape != (tg.size, n_space):
        raise DirectionShapeError(
            f"CSV table {path} has shape {vals.shape}, expected {(tg.size, n_space)}"
        )
    return ParameterField(vals, tg)
