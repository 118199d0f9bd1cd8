"""Energy-minimizing solver for the nonlinear steady-current problem.

The potential with prescribed boundary trace minimizes the convex energy
``sum_e area_e * Q_e(|grad u|_e)`` over piecewise-linear nodal fields; the
minimizer solves the discrete current-conservation equations. The solver is
damped Newton on that energy with Armijo backtracking, falling back to
Polak-Ribiere nonlinear conjugate gradients when a Newton step cannot make
progress (degenerate tangents of power-law materials). Energy and gradient
are never regularized; only the Newton tangent clamps the field magnitude
inside its sigma'(E)/E factor.

All public entry points accept an ``assignment`` (one model id per element)
plus a mapping of model ids to conductivity laws; solves are deterministic
and share immutable mesh/model data, so they can run concurrently for
distinct boundary traces.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from nltomo.errors import NonConvergenceError
from nltomo.mesh import Mesh

__all__ = [
    "TraceFunction",
    "PotentialField",
    "BoundaryFunctional",
    "SolveReport",
    "SolverOptions",
    "ForwardProblem",
    "project_zero_mean",
    "trace_from_callable",
    "uniform_assignment",
    "energy",
    "energy_gradient",
    "solve_forward",
    "boundary_flux",
]

# field-magnitude clamp (relative to E0) inside the tangent's sigma'(E)/E factor
_TANGENT_FIELD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class TraceFunction:
    """Boundary potential sampled at ``mesh.boundary_nodes`` (same order)."""

    mesh: Mesh
    values: np.ndarray
    zero_mean: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.mesh.boundary_nodes.shape:
            raise ValueError("trace length does not match the mesh boundary")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def weighted_mean(self) -> float:
        w = self.mesh.boundary_mass
        return float(np.dot(w, self.values) / w.sum())

    def scaled(self, factor: float) -> "TraceFunction":
        return TraceFunction(self.mesh, self.values * factor, zero_mean=self.zero_mean)

    def plus(self, other: "TraceFunction", factor: float = 1.0) -> "TraceFunction":
        if other.mesh is not self.mesh:
            raise ValueError("traces live on different meshes")
        return TraceFunction(
            self.mesh,
            self.values + factor * other.values,
            zero_mean=self.zero_mean and other.zero_mean,
        )

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def project_zero_mean(mesh: Mesh, raw_values) -> TraceFunction:
    """Subtract the boundary-mass-weighted mean; idempotent."""
    if len(mesh.boundary_nodes) == 0:
        raise ValueError("mesh has no boundary")
    raw = np.asarray(raw_values, dtype=float)
    if raw.shape != mesh.boundary_nodes.shape:
        raise ValueError("boundary values must cover every boundary node")
    w = mesh.boundary_mass
    mean = np.dot(w, raw) / w.sum()
    return TraceFunction(mesh, raw - mean, zero_mean=True)


def trace_from_callable(mesh: Mesh, fn) -> TraceFunction:
    """Zero-mean trace of ``fn(x, y)`` evaluated at the boundary nodes."""
    pts = mesh.nodes[mesh.boundary_nodes]
    return project_zero_mean(mesh, fn(pts[:, 0], pts[:, 1]))


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Nodal potential with its per-element gradients and field magnitudes."""

    mesh: Mesh
    u: np.ndarray
    gradients: np.ndarray
    magnitudes: np.ndarray

    def trace(self) -> TraceFunction:
        return TraceFunction(self.mesh, self.u[self.mesh.boundary_nodes], zero_mean=False)


@dataclass(frozen=True, eq=False)
class BoundaryFunctional:
    """Element of the dual of the zero-mean trace space.

    ``values`` pair with a trace by a plain dot product over the boundary
    nodes. The canonical representative is stored: a boundary-mass multiple of
    the constant is removed so pairing with constants is exactly zero, which
    leaves pairings with zero-mean traces unchanged.
    """

    mesh: Mesh
    values: np.ndarray
    meta: dict = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.mesh.boundary_nodes.shape:
            raise ValueError("functional length does not match the mesh boundary")
        w = self.mesh.boundary_mass
        v = v - (v.sum() / w.sum()) * w
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def pair(self, trace: TraceFunction) -> float:
        if trace.values.shape != self.values.shape:
            raise ValueError("trace/functional dimension mismatch")
        return float(np.dot(self.values, trace.values))

    def scaled(self, factor: float) -> "BoundaryFunctional":
        return BoundaryFunctional(self.mesh, self.values * factor, meta=self.meta)


@dataclass(frozen=True)
class SolverOptions:
    tol_abs: float = 1e-12
    tol_rel: float = 1e-10
    max_iter: int = 200
    ncg_max_iter: int = 2000
    fallback: bool = True
    armijo_c1: float = 1e-4
    max_backtracks: int = 40
    method: str = "auto"  # "auto" (newton, ncg fallback) or "ncg"


@dataclass
class SolveReport:
    iterations: int
    residual_norm: float
    energy: float
    backtracks: int
    branch: str
    tolerance: float
    ncg_iterations: int = 0


def uniform_assignment(mesh: Mesh, model_id: str) -> np.ndarray:
    labels = np.array([model_id] * mesh.n_elements, dtype=object)
    labels.flags.writeable = False
    return labels


class ForwardProblem:
    """Precomputed discretization for one (mesh, assignment, models) triple.

    Holds per-element gradient operators, the sparse tangent pattern and a
    cached factorization of the frozen-conductivity stiffness used both as
    warm start and as the exact tangent for purely linear laws. Instances are
    immutable after construction apart from that lazy cache; a lock guards it
    so solves for distinct traces may run on separate threads.
    """

    def __init__(self, mesh: Mesh, assignment, models):
        self.mesh = mesh
        self.assignment = np.asarray(assignment, dtype=object)
        if self.assignment.shape != (mesh.n_elements,):
            raise ValueError("assignment must label every element")
        self.models = dict(models)

        used = sorted(set(self.assignment))
        missing = [label for label in used if label not in self.models]
        if missing:
            raise KeyError(f"assignment references unknown model ids: {missing}")
        self.groups = [(label, np.flatnonzero(self.assignment == label)) for label in used]
        self.all_linear = all(self.models[label].kind == "linear" for label in used)

        self._build_geometry()
        self._lock = threading.Lock()
        self._frozen_lu = None
        self._frozen_ib = None

    # -- geometry and assembly ----------------------------------------------

    def _build_geometry(self):
        mesh = self.mesh
        p = mesh.nodes[mesh.elements]  # (m, 3, 2)
        area = mesh.element_areas
        # grad phi_i = perp(P_k - P_j) / (2A) for cyclic (i, j, k)
        b = np.empty((mesh.n_elements, 2, 3))
        for i, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
            b[:, 0, i] = p[:, j, 1] - p[:, k, 1]
            b[:, 1, i] = p[:, k, 0] - p[:, j, 0]
        b /= 2.0 * area[:, None, None]
        self.B = b
        self.G2 = np.einsum("eik,eil->ekl", b, b)

        n = mesh.n_nodes
        tri = mesh.elements
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        int_index = np.full(n, -1, dtype=np.int64)
        int_index[mesh.interior_nodes] = np.arange(len(mesh.interior_nodes))
        r_int = int_index[rows]
        c_int = int_index[cols]
        b_pos = mesh.boundary_index[cols]
        self._ii_mask = (r_int >= 0) & (c_int >= 0)
        self._ii_rows = r_int[self._ii_mask]
        self._ii_cols = c_int[self._ii_mask]
        self._ib_mask = (r_int >= 0) & (b_pos >= 0)
        self._ib_rows = r_int[self._ib_mask]
        self._ib_cols = b_pos[self._ib_mask]
        self._n_int = len(mesh.interior_nodes)
        self._n_bnd = len(mesh.boundary_nodes)

        # per-element conductivity at the reference field (warm-start stiffness)
        s0 = np.empty(mesh.n_elements)
        for label, idx in self.groups:
            model = self.models[label]
            s0[idx] = model.sigma(model.E0)
        self._sigma_ref = s0

    def _per_element(self, fn, magnitudes):
        out = np.empty(self.mesh.n_elements)
        for label, idx in self.groups:
            out[idx] = fn(self.models[label], magnitudes[idx])
        return out

    def field(self, u) -> PotentialField:
        u = np.asarray(u, dtype=float)
        g = np.einsum("eij,ej->ei", self.B, u[self.mesh.elements])
        mag = np.hypot(g[:, 0], g[:, 1])
        return PotentialField(self.mesh, u, g, mag)

    def energy(self, u) -> float:
        fld = u if isinstance(u, PotentialField) else self.field(u)
        q = self._per_element(lambda m, e: m.energy_density(e), fld.magnitudes)
        return float(np.dot(self.mesh.element_areas, q))

    def gradient_full(self, u) -> np.ndarray:
        """Weak-form residual against every nodal hat function."""
        fld = u if isinstance(u, PotentialField) else self.field(u)
        s = self._per_element(lambda m, e: m.sigma(e), fld.magnitudes)
        coef = self.mesh.element_areas * s
        contrib = coef[:, None] * np.einsum("ei,eij->ej", fld.gradients, self.B)
        return np.bincount(
            self.mesh.elements.ravel(), weights=contrib.ravel(), minlength=self.mesh.n_nodes
        )

    def gradient(self, u) -> np.ndarray:
        """Residual restricted to interior nodes (Dirichlet rows excluded)."""
        return self.gradient_full(u)[self.mesh.interior_nodes]

    def _tangent_values(self, fld: PotentialField) -> np.ndarray:
        s = self._per_element(lambda m, e: m.sigma(e), fld.magnitudes)
        e_reg = np.empty(self.mesh.n_elements)
        ratio = np.empty(self.mesh.n_elements)
        for label, idx in self.groups:
            model = self.models[label]
            er = np.maximum(fld.magnitudes[idx], _TANGENT_FIELD_FLOOR * model.E0)
            e_reg[idx] = er
            ratio[idx] = model.dsigma(er) / er
        c = np.einsum("ei,eij->ej", fld.gradients, self.B)
        k = self.mesh.element_areas[:, None, None] * (
            s[:, None, None] * self.G2 + ratio[:, None, None] * c[:, :, None] * c[:, None, :]
        )
        return k.reshape(-1)

    def _interior_matrix(self, values) -> sp.csc_matrix:
        return sp.coo_matrix(
            (values[self._ii_mask], (self._ii_rows, self._ii_cols)),
            shape=(self._n_int, self._n_int),
        ).tocsc()

    def _frozen_factorization(self):
        with self._lock:
            if self._frozen_lu is None:
                vals = (
                    self.mesh.element_areas[:, None, None]
                    * self._sigma_ref[:, None, None]
                    * self.G2
                ).reshape(-1)
                self._frozen_lu = spla.splu(self._interior_matrix(vals))
                self._frozen_ib = sp.coo_matrix(
                    (vals[self._ib_mask], (self._ib_rows, self._ib_cols)),
                    shape=(self._n_int, self._n_bnd),
                ).tocsr()
            return self._frozen_lu, self._frozen_ib

    def harmonic_init(self, f: TraceFunction) -> np.ndarray:
        """Extension of f solving the frozen-conductivity (reference field) problem."""
        lu, k_ib = self._frozen_factorization()
        u = np.zeros(self.mesh.n_nodes)
        u[self.mesh.boundary_nodes] = f.values
        with self._lock:
            u[self.mesh.interior_nodes] = lu.solve(-(k_ib @ f.values))
        return u

    def boundary_flux(self, fld: PotentialField, meta=None) -> BoundaryFunctional:
        """Current-flux functional of a converged solution.

        Evaluated through the volume (divergence-theorem) form: the residual
        assembled at boundary hat functions.
        """
        full = self.gradient_full(fld)
        return BoundaryFunctional(self.mesh, full[self.mesh.boundary_nodes], meta=meta or {})

    # -- solvers --------------------------------------------------------------

    def solve(self, f: TraceFunction, options: SolverOptions = None, init=None):
        """Minimize the energy subject to trace f; returns (field, report)."""
        opts = options or SolverOptions()
        if not f.zero_mean:
            raise ValueError("boundary trace must be zero-mean (project it first)")

        if not np.any(f.values):
            u = np.zeros(self.mesh.n_nodes)
            fld = self.field(u)
            report = SolveReport(0, 0.0, 0.0, 0, "newton", opts.tol_abs)
            return fld, report

        if init is None:
            u = self.harmonic_init(f)
        else:
            u = np.array(init, dtype=float, copy=True)
            u[self.mesh.boundary_nodes] = f.values

        r = self.gradient(u)
        norm0 = float(np.linalg.norm(r))
        tol = opts.tol_abs + opts.tol_rel * norm0
        backtracks_total = 0
        iterations = 0
        ncg_iterations = 0
        branch = "newton"

        if opts.method == "ncg":
            branch = "ncg"
            u, r, ncg_iterations, backtracks_total = self._ncg(u, r, tol, opts)
        else:
            fail_to_ncg = False
            norm = float(np.linalg.norm(r))
            while norm > tol and iterations < opts.max_iter:
                step = self._newton_direction(u, r)
                if step is None:
                    fail_to_ncg = True
                    break
                u_new, bt, ok = self._line_search(u, r, step, opts)
                backtracks_total += bt
                if not ok:
                    fail_to_ncg = True
                    break
                u = u_new
                r = self.gradient(u)
                norm = float(np.linalg.norm(r))
                iterations += 1
            if norm > tol:
                if fail_to_ncg and opts.fallback:
                    branch = "ncg"
                    u, r, ncg_iterations, bt = self._ncg(u, r, tol, opts)
                    backtracks_total += bt
                elif iterations >= opts.max_iter and opts.fallback:
                    branch = "ncg"
                    u, r, ncg_iterations, bt = self._ncg(u, r, tol, opts)
                    backtracks_total += bt

        norm = float(np.linalg.norm(r))
        if norm > tol:
            raise NonConvergenceError(iterations + ncg_iterations, norm)

        # polish: one extra Newton step sharpens identities paired with the
        # solution (power product vs. volume integral) well below tol
        if norm > 0.0:
            step = self._newton_direction(u, r)
            if step is not None:
                u_try = u.copy()
                u_try[self.mesh.interior_nodes] += step
                r_try = self.gradient(u_try)
                if float(np.linalg.norm(r_try)) < norm:
                    u, r = u_try, r_try
                    norm = float(np.linalg.norm(r))

        fld = self.field(u)
        report = SolveReport(
            iterations=iterations,
            residual_norm=norm,
            energy=self.energy(fld),
            backtracks=backtracks_total,
            branch=branch,
            tolerance=tol,
            ncg_iterations=ncg_iterations,
        )
        return fld, report

    def _newton_direction(self, u, r):
        """Solve the (regularized) tangent system; None signals failure."""
        if self.all_linear:
            lu, _ = self._frozen_factorization()
            with self._lock:
                return -lu.solve(r)
        fld = self.field(u)
        values = self._tangent_values(fld)
        mat = self._interior_matrix(values)
        shift = 0.0
        for _ in range(3):
            try:
                if shift:
                    lu = spla.splu(mat + shift * sp.identity(self._n_int, format="csc"))
                else:
                    lu = spla.splu(mat)
                d = -lu.solve(r)
                if np.all(np.isfinite(d)):
                    return d
            except RuntimeError:
                pass
            diag = mat.diagonal()
            base = float(np.abs(diag).mean()) or 1.0
            shift = (shift or 1e-12 * base) * 100.0
        return None

    def _line_search(self, u, r, direction, opts):
        """Armijo backtracking along a descent direction (interior dofs)."""
        descent = float(np.dot(r, direction))
        if descent >= 0.0:
            return u, 0, False
        f0 = self.energy(u)
        u_try = u.copy()
        # near the minimum the predicted decrement drops below the rounding
        # floor of the energy; comparisons are noise there, and the full
        # (locally quadratically convergent) step is the right move
        if -descent <= 1e-14 * (1.0 + abs(f0)):
            u_try[self.mesh.interior_nodes] = u[self.mesh.interior_nodes] + direction
            return u_try, 0, True
        t = 1.0
        for bt in range(opts.max_backtracks + 1):
            u_try[self.mesh.interior_nodes] = u[self.mesh.interior_nodes] + t * direction
            if self.energy(u_try) <= f0 + opts.armijo_c1 * t * descent:
                return u_try, bt, True
            t *= 0.5
        return u, opts.max_backtracks, False

    def _ncg(self, u, r, tol, opts):
        """Polak-Ribiere nonlinear CG with restarts on the interior dofs.

        The energy is convex along any line, so the line search brackets the
        sign change of the directional derivative and refines it by a
        safeguarded secant until the curvature target |phi'| <= 0.1|phi'(0)|
        holds; that near-exact search is what lets CG reach tight residuals.
        """
        g = r.copy()
        gg = float(np.dot(g, g))
        d = -g
        t_prev = 1.0 / (1.0 + np.sqrt(gg))
        it = 0
        evals_total = 0
        while np.sqrt(gg) > tol and it < opts.ncg_max_iter:
            descent = float(np.dot(g, d))
            if descent >= 0.0:  # restart on loss of descent
                d = -g
                descent = -gg
            step = self._line_minimize(u, d, descent, t_prev)
            if step is None:
                break
            t, u_new, g_new, evals = step
            evals_total += evals
            beta = max(0.0, float(np.dot(g_new, g_new - g)) / gg)
            d = -g_new + beta * d
            u, g = u_new, g_new
            gg = float(np.dot(g, g))
            t_prev = t
            it += 1
        return u, g, it, evals_total

    def _line_minimize(self, u, d, phi0, t_init, c2=0.1, max_evals=40):
        """Near-exact minimization of the convex 1-D energy slice along d."""
        interior = self.mesh.interior_nodes

        def probe(t):
            u_try = u.copy()
            u_try[interior] += t * d
            g_try = self.gradient(u_try)
            return u_try, g_try, float(np.dot(g_try, d))

        target = c2 * abs(phi0)
        t = max(t_init, 1e-300)
        u_t, g_t, phi_t = probe(t)
        evals = 1
        while phi_t < -target and evals < max_evals:
            t *= 2.0
            u_t, g_t, phi_t = probe(t)
            evals += 1
        if abs(phi_t) <= target:
            return t, u_t, g_t, evals
        lo, phi_lo = 0.0, phi0
        hi, phi_hi = t, phi_t
        best = (t, u_t, g_t)
        while evals < max_evals:
            width = hi - lo
            tm = hi - phi_hi * width / (phi_hi - phi_lo)
            if not (lo + 1e-3 * width <= tm <= hi - 1e-3 * width):
                tm = lo + 0.5 * width
            u_m, g_m, phi_m = probe(tm)
            evals += 1
            best = (tm, u_m, g_m)
            if abs(phi_m) <= target or width <= 1e-14 * max(1.0, hi):
                return tm, u_m, g_m, evals
            if phi_m < 0.0:
                lo, phi_lo = tm, phi_m
            else:
                hi, phi_hi = tm, phi_m
        return (*best, evals)


# -- free-function surface ---------------------------------------------------


def energy(mesh: Mesh, assignment, models, u) -> float:
    return ForwardProblem(mesh, assignment, models).energy(u)


def energy_gradient(mesh: Mesh, assignment, models, u) -> np.ndarray:
    return ForwardProblem(mesh, assignment, models).gradient(u)


def solve_forward(mesh: Mesh, assignment, models, f: TraceFunction, options=None, init=None):
    return ForwardProblem(mesh, assignment, models).solve(f, options=options, init=init)


def boundary_flux(mesh: Mesh, assignment, models, fld: PotentialField) -> BoundaryFunctional:
    return ForwardProblem(mesh, assignment, models).boundary_flux(fld)
