"""Inclusion testing and shape reconstruction from averaged power data.

The decision rule uses only diagonal data (averaged power per excitation):
pointwise ordering of conductivities orders those powers, so a candidate
region T inside the true anomaly can never push a simulated power below the
measured one (up to solver/quadrature tolerance) under the "anomaly less
conductive than background" convention. A region is excluded as soon as one
excitation violates that ordering by more than a relative threshold tau; the
per-excitation margin rule for aggregating finitely many excitations is this
module's construction, the ordering itself is the guaranteed part.

Noise contract: multiplicative measurement noise of fractional level delta is
absorbed by any tau >= 2*delta - ordered regions then stay compatible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nltomo._parallel import map_ordered
from nltomo.boundary_ops import QuadratureOptions, _avg_dtn_on
from nltomo.constitutive import ConductivityModel, default_validation_grid
from nltomo.errors import ConfigurationError, NonConvergenceError, QuadratureNotConvergedError
from nltomo.forward import ForwardProblem, SolverOptions
from nltomo.mesh import Mesh

__all__ = [
    "MeasurementSet",
    "InclusionTest",
    "RegionVerdict",
    "IndicatorMap",
    "synthesize_measurements",
    "check_contrast_direction",
    "mpm_test",
    "mpm_reconstruct",
    "disk_region",
    "disk_test_grid",
    "classify_margins",
]

_BACKGROUND = "background"
_ANOMALY = "anomaly"


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Averaged powers per excitation, possibly noisy (fractional level delta)."""

    excitations: tuple
    powers: np.ndarray
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        powers = np.asarray(self.powers, dtype=float)
        if len(powers) != len(self.excitations):
            raise ValueError("one power per excitation required")
        if np.any(powers < 0.0):
            raise ValueError("negative measured power (inadmissible law or noise > 100%)")
        powers = powers.copy()
        powers.flags.writeable = False
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "excitations", tuple(self.excitations))


def synthesize_measurements(mesh: Mesh, assignment, models, excitations,
                            noise: float = 0.0, seed: int = 0,
                            quadrature: QuadratureOptions = None,
                            solver: SolverOptions = None, jobs: int = 1) -> MeasurementSet:
    """Averaged powers of the true assignment, times (1 + noise*eta_i).

    eta_i is uniform in [-1, 1] from a generator seeded with ``seed``; the
    noise draw happens after all solves, in excitation order, so results are
    bit-identical for a fixed seed regardless of ``jobs``.
    """
    if noise < 0.0:
        raise ValueError("noise level must be nonnegative")
    excitations = list(excitations)
    quad = quadrature or QuadratureOptions()
    problem = ForwardProblem(mesh, assignment, models)

    def run(f):
        return _avg_dtn_on(problem, f, quad, solver).power

    powers = np.array(map_ordered(run, excitations, jobs=jobs))
    if noise > 0.0:
        eta = np.random.default_rng(seed).uniform(-1.0, 1.0, size=len(excitations))
        powers = powers * (1.0 + noise * eta)
    return MeasurementSet(tuple(excitations), powers, noise=noise, seed=seed)


def check_contrast_direction(background: ConductivityModel, anomaly: ConductivityModel,
                             direction: str = "less", e_grid=None) -> None:
    """Raise ConfigurationError unless the laws are ordered as declared."""
    if direction not in ("less", "greater"):
        raise ConfigurationError(f"unknown contrast direction {direction!r}")
    if e_grid is None:
        e_grid = default_validation_grid(background)
    sb = np.asarray(background.sigma(e_grid))
    sa = np.asarray(anomaly.sigma(e_grid))
    slack = 1e-12 * (np.abs(sb) + np.abs(sa) + 1.0)
    if direction == "less":
        bad = sa > sb + slack
    else:
        bad = sa < sb - slack
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise ConfigurationError(
            f"anomaly law is not '{direction}' than background at E={e_grid[k]:g} "
            f"(anomaly {sa[k]:g}, background {sb[k]:g})"
        )


def classify_margins(margins, measured, tau: float, direction: str = "less"):
    """Verdict from per-excitation margins sim_i - m_i.

    Under "less" the ordered direction guarantees nonnegative margins, so a
    margin below -tau*max(m_i, floor) excludes; under "greater" the sign
    flips. Returns (verdict, worst_margin, worst_excitation).
    """
    margins = np.asarray(margins, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if tau < 0.0:
        raise ValueError("tau must be nonnegative")
    floor = 1e-12 * float(measured.max(initial=0.0))
    thresholds = tau * np.maximum(measured, floor)
    if direction == "less":
        violations = margins < -thresholds
        worst = int(np.argmin(margins))
    else:
        violations = margins > thresholds
        worst = int(np.argmax(margins))
    verdict = "excluded" if bool(violations.any()) else "compatible"
    return verdict, float(margins[worst]), worst


@dataclass
class InclusionTest:
    """Outcome of testing one candidate region against the measurements."""

    elements: np.ndarray
    sims: np.ndarray
    margins: np.ndarray
    tau: float
    direction: str
    verdict: str
    worst_margin: float
    worst_excitation: int


def _test_assignment(mesh: Mesh, region_elements) -> np.ndarray:
    labels = np.array([_BACKGROUND] * mesh.n_elements, dtype=object)
    labels[np.asarray(region_elements, dtype=int)] = _ANOMALY
    return labels


def mpm_test(mesh: Mesh, background: ConductivityModel, anomaly: ConductivityModel,
             region_elements, measurements: MeasurementSet, tau: float,
             direction: str = "less", quadrature: QuadratureOptions = None,
             solver: SolverOptions = None, jobs: int = 1) -> InclusionTest:
    """Simulate the candidate region and compare powers against measurements."""
    check_contrast_direction(background, anomaly, direction)
    quad = quadrature or QuadratureOptions()
    labels = _test_assignment(mesh, region_elements)
    problem = ForwardProblem(mesh, labels, {_BACKGROUND: background, _ANOMALY: anomaly})

    def run(f):
        return _avg_dtn_on(problem, f, quad, solver).power

    sims = np.array(map_ordered(run, measurements.excitations, jobs=jobs))
    margins = sims - measurements.powers
    verdict, worst_margin, worst_exc = classify_margins(
        margins, measurements.powers, tau, direction
    )
    return InclusionTest(
        elements=np.asarray(region_elements, dtype=int),
        sims=sims,
        margins=margins,
        tau=tau,
        direction=direction,
        verdict=verdict,
        worst_margin=worst_margin,
        worst_excitation=worst_exc,
    )


@dataclass
class RegionVerdict:
    center: tuple
    radius: float
    elements: np.ndarray
    margins: np.ndarray
    verdict: str
    worst_margin: float = None
    worst_excitation: int = None
    error: str = None


@dataclass
class IndicatorMap:
    regions: list
    tau: float
    direction: str

    def compatible_count(self) -> int:
        return sum(1 for r in self.regions if r.verdict == "compatible")

    def reclassified(self, measurements: MeasurementSet, tau: float) -> "IndicatorMap":
        """Re-threshold stored margins at a different tau without re-solving."""
        out = []
        for r in self.regions:
            if r.error is not None:
                out.append(r)
                continue
            verdict, worst, k = classify_margins(
                r.margins, measurements.powers, tau, self.direction
            )
            out.append(
                RegionVerdict(r.center, r.radius, r.elements, r.margins, verdict, worst, k)
            )
        return IndicatorMap(out, tau, self.direction)


def disk_region(mesh: Mesh, center, radius: float) -> np.ndarray:
    """Element indices whose centroid lies in the disk (same rule as phantoms)."""
    c = mesh.centroids()
    inside = (c[:, 0] - center[0]) ** 2 + (c[:, 1] - center[1]) ** 2 <= radius**2
    return np.flatnonzero(inside)


def disk_test_grid(mesh: Mesh, radius: float, m: int, bounds=None) -> list:
    """(center, radius) candidates on an m x m lattice of cell centers."""
    if bounds is None:
        bounds = mesh.bounding_box()
    x0, y0, x1, y1 = bounds
    xs = x0 + (np.arange(m) + 0.5) * (x1 - x0) / m
    ys = y0 + (np.arange(m) + 0.5) * (y1 - y0) / m
    return [((float(x), float(y)), float(radius)) for y in ys for x in xs]


def mpm_reconstruct(mesh: Mesh, background: ConductivityModel, anomaly: ConductivityModel,
                    measurements: MeasurementSet, regions, tau: float,
                    direction: str = "less", quadrature: QuadratureOptions = None,
                    solver: SolverOptions = None, jobs: int = 1) -> IndicatorMap:
    """Sweep candidate disk regions; compatible ones form the shape estimate.

    ``regions`` is a list of (center, radius). Regions are independent and may
    be evaluated concurrently; the map is assembled in grid order. Per-region
    solver failures are recorded and the region marked "unknown".
    """
    check_contrast_direction(background, anomaly, direction)
    quad = quadrature or QuadratureOptions()
    regions = list(regions)

    def run(spec):
        center, radius = spec
        elements = disk_region(mesh, center, radius)
        try:
            labels = _test_assignment(mesh, elements)
            problem = ForwardProblem(
                mesh, labels, {_BACKGROUND: background, _ANOMALY: anomaly}
            )
            sims = np.array(
                [_avg_dtn_on(problem, f, quad, solver).power for f in measurements.excitations]
            )
            margins = sims - measurements.powers
            verdict, worst, k = classify_margins(margins, measurements.powers, tau, direction)
            return RegionVerdict(tuple(center), radius, elements, margins, verdict, worst, k)
        except (NonConvergenceError, QuadratureNotConvergedError) as exc:
            return RegionVerdict(
                tuple(center), radius, elements, None, "unknown", error=str(exc)
            )

    return IndicatorMap(map_ordered(run, regions, jobs=jobs), tau, direction)
