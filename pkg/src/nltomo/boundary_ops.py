"""Boundary operators built on the forward solver.

``dtn`` maps a zero-mean boundary trace to the current-flux functional of the
solved potential. ``avg_dtn`` integrates that response over scaled traces
alpha*f for alpha in (0, 1) with Gauss-Legendre quadrature; its power product
with f reproduces the interior energy of the solution, which is what makes it
monotone under pointwise ordering of conductivities even for laws where the
plain flux power is not proportional to the energy.

Quadrature uses open Gauss-Legendre rules so alpha = 0 is never a solve; each
node along a rule is warm-started from the previous node's solution scaled by
the ratio of the alphas, but every node is still iterated to full solver
tolerance, so warm starting cannot change converged answers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nltomo._parallel import map_ordered
from nltomo.errors import NonConvergenceError, QuadratureNotConvergedError
from nltomo.forward import (
    BoundaryFunctional,
    ForwardProblem,
    SolverOptions,
    TraceFunction,
    project_zero_mean,
)
from nltomo.mesh import Mesh, boundary_loop

__all__ = [
    "QuadratureOptions",
    "QuadratureReport",
    "AveragedDtNResult",
    "GramRow",
    "GramTable",
    "dtn",
    "power_product",
    "avg_dtn",
    "weighted_power_form",
    "gram_record",
    "fourier_dictionary",
    "bump_dictionary",
]


@dataclass(frozen=True)
class QuadratureOptions:
    nodes: int = 8
    tol: float = 1e-6
    adaptive: bool = False
    max_nodes: int = 64


@dataclass
class QuadratureReport:
    nodes: int
    alphas: np.ndarray
    node_powers: np.ndarray
    error_abs: float
    error_rel: float


@dataclass(frozen=True, eq=False)
class AveragedDtNResult:
    functional: BoundaryFunctional
    power: float
    report: QuadratureReport


def dtn(mesh: Mesh, assignment, models, f: TraceFunction, solver: SolverOptions = None
        ) -> BoundaryFunctional:
    """Current-flux functional of the potential driven by trace f."""
    problem = ForwardProblem(mesh, assignment, models)
    fld, _ = problem.solve(f, options=solver)
    return problem.boundary_flux(fld, meta={"alpha": 1.0})


def power_product(functional: BoundaryFunctional, trace: TraceFunction) -> float:
    """Bilinear pairing of a flux functional with a zero-mean trace."""
    if not trace.zero_mean:
        raise ValueError("pairing requires a zero-mean trace")
    return functional.pair(trace)


def _gauss_legendre_01(k: int):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


def _rule(problem: ForwardProblem, f: TraceFunction, k: int, solver):
    """Evaluate flux responses at the k-node rule, chaining warm starts."""
    alphas, weights = _gauss_legendre_01(k)
    fluxes = []
    u_prev = None
    a_prev = None
    for a in alphas:
        init = None if u_prev is None else u_prev * (a / a_prev)
        fld, _ = problem.solve(f.scaled(a), options=solver, init=init)
        fluxes.append(problem.boundary_flux(fld, meta={"alpha": float(a)}))
        u_prev, a_prev = fld.u, a
    node_powers = np.array([flux.pair(f) for flux in fluxes])
    combined = BoundaryFunctional(
        problem.mesh,
        sum(w * flux.values for w, flux in zip(weights, fluxes)),
        meta={"rule": k},
    )
    return alphas, node_powers, fluxes, weights, combined


def avg_dtn(mesh: Mesh, assignment, models, f: TraceFunction,
            quadrature: QuadratureOptions = None, solver: SolverOptions = None
            ) -> AveragedDtNResult:
    """Averaged flux response: the integral over alpha in [0,1] of dtn(alpha*f).

    Always evaluates a k and a 2k rule; the finer combination is returned and
    the difference of their powers is the error estimate. With
    ``adaptive=True`` the rule keeps doubling until the relative estimate
    meets ``tol`` or the node cap is hit (QuadratureNotConvergedError).
    """
    quad = quadrature or QuadratureOptions()
    problem = ForwardProblem(mesh, assignment, models)
    return _avg_dtn_on(problem, f, quad, solver)


def _avg_dtn_on(problem: ForwardProblem, f: TraceFunction, quad: QuadratureOptions,
                solver: SolverOptions):
    k = quad.nodes
    _, powers_c, _, weights_c, combined_c = _rule(problem, f, k, solver)
    p_coarse = combined_c.pair(f)
    while True:
        alphas_f, powers_f, _, weights_f, combined_f = _rule(problem, f, 2 * k, solver)
        p_fine = combined_f.pair(f)
        err = abs(p_fine - p_coarse)
        rel = 0.0 if err == 0.0 else err / max(abs(p_fine), 1e-300)
        if not quad.adaptive or rel <= quad.tol:
            report = QuadratureReport(
                nodes=2 * k,
                alphas=alphas_f,
                node_powers=powers_f,
                error_abs=err,
                error_rel=rel,
            )
            return AveragedDtNResult(functional=combined_f, power=p_fine, report=report)
        if 2 * k >= quad.max_nodes:
            raise QuadratureNotConvergedError(2 * k, rel)
        k *= 2
        p_coarse = p_fine


def weighted_power_form(mesh: Mesh, assignment, models, f: TraceFunction,
                        quadrature: QuadratureOptions = None,
                        solver: SolverOptions = None) -> float:
    """Integral over alpha of alpha**-1 times the ohmic power at trace alpha*f.

    Numerically independent route to the averaged power: each node evaluates
    the power at the scaled trace and divides by alpha.
    """
    quad = quadrature or QuadratureOptions()
    problem = ForwardProblem(mesh, assignment, models)
    k = quad.nodes
    value_prev = _weighted_rule(problem, f, k, solver)
    while True:
        value = _weighted_rule(problem, f, 2 * k, solver)
        err = abs(value - value_prev)
        rel = 0.0 if err == 0.0 else err / max(abs(value), 1e-300)
        if not quad.adaptive or rel <= quad.tol:
            return value
        if 2 * k >= quad.max_nodes:
            raise QuadratureNotConvergedError(2 * k, rel)
        k *= 2
        value_prev = value


def _weighted_rule(problem, f, k, solver):
    alphas, weights = _gauss_legendre_01(k)
    total = 0.0
    u_prev = None
    a_prev = None
    for a, w in zip(alphas, weights):
        scaled = f.scaled(a)
        init = None if u_prev is None else u_prev * (a / a_prev)
        fld, _ = problem.solve(scaled, options=solver, init=init)
        power_at_scaled = problem.boundary_flux(fld).pair(scaled)
        total += w * power_at_scaled / a
        u_prev, a_prev = fld.u, a
    return total


@dataclass
class GramRow:
    i: int
    j: int
    dtn_pairing: float = None
    avg_power: float = None
    quad_error: float = None


@dataclass
class GramTable:
    rows: list
    failures: dict = field(default_factory=dict)
    quadrature: list = field(default_factory=list)

    def diagonal_powers(self) -> np.ndarray:
        return np.array([r.avg_power for r in self.rows if r.i == r.j], dtype=float)


def gram_record(mesh: Mesh, assignment, models, excitations,
                quadrature: QuadratureOptions = None, solver: SolverOptions = None,
                jobs: int = 1) -> GramTable:
    """Measurement table over an excitation set.

    Off-diagonal entries hold the flux pairing of excitation i's response with
    excitation j; diagonal entries also hold the averaged power and its
    quadrature error estimate. Solver failures are recorded per excitation and
    leave the affected entries missing.
    """
    excitations = list(excitations)
    problem = ForwardProblem(mesh, assignment, models)
    quad = quadrature or QuadratureOptions()

    def run(i):
        f = excitations[i]
        try:
            flux = None
            fld, _ = problem.solve(f, options=solver)
            flux = problem.boundary_flux(fld)
            avg = _avg_dtn_on(problem, f, quad, solver)
            return i, flux, avg, None
        except (NonConvergenceError, QuadratureNotConvergedError) as exc:
            return i, flux, None, str(exc)

    results = map_ordered(run, range(len(excitations)), jobs=jobs)
    rows = []
    failures = {}
    quad_summaries = []
    for i, flux, avg, err in results:
        if err is not None:
            failures[i] = err
        if avg is not None:
            quad_summaries.append({
                "excitation": i,
                "nodes": avg.report.nodes,
                "error_abs": avg.report.error_abs,
                "error_rel": avg.report.error_rel,
            })
        for j, g in enumerate(excitations):
            row = GramRow(i=i, j=j)
            if flux is not None:
                row.dtn_pairing = flux.pair(g)
            if i == j and avg is not None:
                row.avg_power = avg.power
                row.quad_error = avg.report.error_rel
            rows.append(row)
    return GramTable(rows=rows, failures=failures, quadrature=quad_summaries)


def fourier_dictionary(mesh: Mesh, count: int) -> list:
    """First ``count`` zero-mean boundary modes, ordered sin/cos per frequency.

    The boundary loop is parameterized by arclength from a deterministic start
    node; mode 2k-1 is sin(2*pi*k*s/L), mode 2k is cos(2*pi*k*s/L), each
    projected to zero boundary-mass mean.
    """
    if count < 1:
        raise ValueError("count must be positive")
    order, arclen, total = boundary_loop(mesh)
    pos = mesh.boundary_index[order]
    phase = 2.0 * np.pi * arclen / total
    modes = []
    k = 1
    while len(modes) < count:
        for wave in (np.sin, np.cos):
            raw = np.empty(len(order))
            raw[pos] = wave(k * phase)
            modes.append(project_zero_mean(mesh, raw))
            if len(modes) == count:
                break
        k += 1
    return modes


def bump_dictionary(mesh: Mesh, count: int, width: float = None) -> list:
    """``count`` localized boundary bumps at equispaced arclength centers.

    Each trace is a raised-cosine bump of half-width ``width`` (default
    1.5*L/count, overlapping neighbours), projected to zero mean. Localized
    drives resolve laterally separated regions that global modes cannot, so
    they are the dictionary of choice for shape-reconstruction sweeps.
    """
    if count < 1:
        raise ValueError("count must be positive")
    order, arclen, total = boundary_loop(mesh)
    pos = mesh.boundary_index[order]
    w = width if width is not None else 1.5 * total / count
    if w <= 0:
        raise ValueError("width must be positive")
    modes = []
    for j in range(count):
        center = (j + 0.5) * total / count
        dist = np.abs(arclen - center)
        dist = np.minimum(dist, total - dist)
        raw = np.where(dist < w, np.cos(np.pi * dist / (2.0 * w)) ** 2, 0.0)
        vals = np.empty(len(order))
        vals[pos] = raw
        modes.append(project_zero_mean(mesh, vals))
    return modes
