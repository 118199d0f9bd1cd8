"""Nonlinear conductivity laws and their admissibility checks.

A law maps field magnitude E >= 0 to a conductivity sigma(E) >= 0; the
derived quantities are the current density J(E) = sigma(E)*E and the energy
density Q(E) = integral of J from 0 to E. Spatial dependence is piecewise
constant: a mesh assignment selects one law per element.

Four kinds are supported: "linear" (sigma0), "monomial" (theta * E**(p-2)),
"polynomial" (sum of theta_k * E**k with nonnegative coefficients) and
"tabulated" (monotone-cubic interpolation of measured J samples). Admissibility
is a set of five conditions: (H1) spatial measurability, (H2) strict increase
of J in E, (H3) continuity in E, (H4) two-sided power-law growth envelopes
with exponent p >= 2 and reference field E0, (H5) strong monotonicity of the
vector law with constant c > 0. ``validate_hypotheses`` reports pass/fail per
condition instead of raising, so inadmissible laws (e.g. saturating J curves)
can be constructed and then rejected by inspection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

__all__ = [
    "ConductivityModel",
    "EnergyDensityValue",
    "HypothesisReport",
    "sigma",
    "current_density",
    "energy_density",
    "validate_hypotheses",
    "default_validation_grid",
    "h4_envelope",
    "export_constitutive_curves",
]


@dataclass(frozen=True, eq=False)
class ConductivityModel:
    """Immutable single-material conductivity law.

    Use the classmethod constructors (``linear``, ``monomial``, ``polynomial``,
    ``tabulated``) rather than the raw dataclass fields.
    """

    kind: str
    p: float
    E0: float = 1.0
    sigma0: float = None
    theta: float = None
    coefficients: tuple = None
    sigma_lower: float = None  # (H4) lower constant
    sigma_upper: float = None  # (H4) upper constant
    strong_monotonicity_c: float = None  # (H5) constant when known analytically
    _j_spline: object = field(default=None, repr=False)
    _j_prime: object = field(default=None, repr=False)
    _j_antideriv: object = field(default=None, repr=False)
    _e_max: float = field(default=None, repr=False)

    # -- constructors -------------------------------------------------------

    @classmethod
    def linear(cls, sigma0: float, E0: float = 1.0) -> "ConductivityModel":
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        _check_e0(E0)
        return cls(
            kind="linear",
            p=2.0,
            E0=E0,
            sigma0=float(sigma0),
            sigma_lower=float(sigma0),
            sigma_upper=float(sigma0),
            strong_monotonicity_c=float(sigma0),
        )

    @classmethod
    def monomial(cls, theta: float, p: float, E0: float = 1.0) -> "ConductivityModel":
        """sigma(E) = theta * E**(p-2). p < 2 is constructible but inadmissible."""
        if theta <= 0:
            raise ValueError("theta must be positive")
        if p <= 1:
            raise ValueError("p must exceed 1")
        _check_e0(E0)
        bound = float(theta) * float(E0) ** (p - 2.0)
        c = float(theta) / 2.0 ** (p - 1.0) if p >= 2.0 else None
        return cls(
            kind="monomial",
            p=float(p),
            E0=E0,
            theta=float(theta),
            sigma_lower=bound,
            sigma_upper=bound,
            strong_monotonicity_c=c,
        )

    @classmethod
    def polynomial(cls, coefficients, E0: float = 1.0) -> "ConductivityModel":
        """sigma(E) = sum_k coefficients[k] * E**k, growth exponent p = N + 2."""
        coeffs = tuple(float(c) for c in coefficients)
        if not coeffs:
            raise ValueError("need at least one coefficient")
        if any(c < 0 for c in coeffs):
            raise ValueError("coefficients must be nonnegative")
        if coeffs[-1] <= 0:
            raise ValueError("leading coefficient must be positive")
        _check_e0(E0)
        n = len(coeffs) - 1
        return cls(
            kind="polynomial",
            p=float(n + 2),
            E0=E0,
            coefficients=coeffs,
            sigma_lower=coeffs[-1] * float(E0) ** n,
            sigma_upper=sum(c * float(E0) ** k for k, c in enumerate(coeffs)),
            strong_monotonicity_c=coeffs[-1] / 2.0 ** (n + 1),
        )

    @classmethod
    def tabulated(
        cls,
        e_samples,
        j_samples,
        p: float = 2.0,
        E0: float = 1.0,
        sigma_lower: float = None,
        sigma_upper: float = None,
    ) -> "ConductivityModel":
        """Law defined by samples of J(E), interpolated with a monotone cubic.

        The sample grid must start at (0, 0) and be strictly increasing in E.
        Monotone data yields a monotone interpolant; beyond the last sample J
        is extended linearly with the terminal slope. J samples are *not*
        required to be increasing here - validate_hypotheses reports (H2).
        """
        e = np.asarray(e_samples, dtype=float)
        j = np.asarray(j_samples, dtype=float)
        if e.ndim != 1 or e.shape != j.shape or len(e) < 3:
            raise ValueError("need matching 1-D sample arrays with at least 3 points")
        if e[0] != 0.0 or j[0] != 0.0:
            raise ValueError("samples must start at E=0, J=0")
        if np.any(np.diff(e) <= 0):
            raise ValueError("E samples must be strictly increasing")
        if not np.all(np.isfinite(j)):
            raise ValueError("J samples must be finite")
        _check_e0(E0)
        spline = PchipInterpolator(e, j, extrapolate=False)
        return cls(
            kind="tabulated",
            p=float(p),
            E0=E0,
            sigma_lower=sigma_lower,
            sigma_upper=sigma_upper,
            _j_spline=spline,
            _j_prime=spline.derivative(),
            _j_antideriv=spline.antiderivative(),
            _e_max=float(e[-1]),
        )

    # -- evaluation ---------------------------------------------------------

    def sigma(self, E):
        """Conductivity sigma(E); the secant J(E)/E of the current-density curve."""
        E, restore = _as_field_array(E)
        if self.kind == "linear":
            out = np.full_like(E, self.sigma0)
        elif self.kind == "monomial":
            with np.errstate(divide="ignore"):
                out = self.theta * E ** (self.p - 2.0)
        elif self.kind == "polynomial":
            out = np.polynomial.polynomial.polyval(E, self.coefficients)
        else:
            out = np.empty_like(E)
            pos = E > 0.0
            out[pos] = self._j(E[pos]) / E[pos]
            out[~pos] = self._j_prime(0.0)
        return restore(out)

    def dsigma(self, E):
        """Derivative of sigma with respect to E (used by the solver tangent)."""
        E, restore = _as_field_array(E)
        if self.kind == "linear" or (self.kind == "monomial" and self.p == 2.0):
            out = np.zeros_like(E)
        elif self.kind == "monomial":
            with np.errstate(divide="ignore"):
                out = self.theta * (self.p - 2.0) * E ** (self.p - 3.0)
        elif self.kind == "polynomial":
            deriv = tuple(k * c for k, c in enumerate(self.coefficients))[1:] or (0.0,)
            out = np.polynomial.polynomial.polyval(E, deriv)
        else:
            out = np.zeros_like(E)
            pos = E > 0.0
            ep = E[pos]
            out[pos] = (self._dj(ep) * ep - self._j(ep)) / ep**2
        return restore(out)

    def current_density(self, E):
        """J(E) = sigma(E) * E."""
        E, restore = _as_field_array(E)
        if self.kind == "linear":
            out = self.sigma0 * E
        elif self.kind == "monomial":
            out = self.theta * E ** (self.p - 1.0)
        elif self.kind == "polynomial":
            out = np.polynomial.polynomial.polyval(E, self.coefficients) * E
        else:
            out = self._j(E)
        return restore(out)

    def dj(self, E):
        """Slope of the current-density curve, J'(E)."""
        E, restore = _as_field_array(E)
        if self.kind == "linear":
            out = np.full_like(E, self.sigma0)
        elif self.kind == "monomial":
            out = self.theta * (self.p - 1.0) * E ** (self.p - 2.0)
        elif self.kind == "polynomial":
            deriv = tuple((k + 1) * c for k, c in enumerate(self.coefficients))
            out = np.polynomial.polynomial.polyval(E, deriv)
        else:
            out = self._dj(E)
        return restore(out)

    def energy_density(self, E):
        """Q(E), the area under the J curve from 0 to E."""
        E, restore = _as_field_array(E)
        if self.kind == "linear":
            out = 0.5 * self.sigma0 * E**2
        elif self.kind == "monomial":
            out = self.theta * E**self.p / self.p
        elif self.kind == "polynomial":
            anti = (0.0, 0.0) + tuple(
                c / (k + 2.0) for k, c in enumerate(self.coefficients)
            )
            out = np.polynomial.polynomial.polyval(E, anti)
        else:
            out = np.empty_like(E)
            below = E <= self._e_max
            out[below] = self._j_antideriv(E[below])
            if np.any(~below):
                de = E[~below] - self._e_max
                j_end = float(self._j_spline(self._e_max))
                s_end = float(self._j_prime(self._e_max))
                out[~below] = (
                    float(self._j_antideriv(self._e_max)) + j_end * de + 0.5 * s_end * de**2
                )
        return restore(out)

    # -- tabulated helpers (linear extension past the last sample) ----------

    def _j(self, E):
        E = np.asarray(E, dtype=float)
        out = np.empty_like(E)
        below = E <= self._e_max
        out[below] = self._j_spline(E[below])
        if np.any(~below):
            j_end = float(self._j_spline(self._e_max))
            s_end = float(self._j_prime(self._e_max))
            out[~below] = j_end + s_end * (E[~below] - self._e_max)
        return out

    def _dj(self, E):
        E = np.asarray(E, dtype=float)
        out = np.empty_like(E)
        below = E <= self._e_max
        out[below] = self._j_prime(E[below])
        out[~below] = float(self._j_prime(self._e_max))
        return out


def _check_e0(E0):
    if E0 <= 0:
        raise ValueError("E0 must be positive")


def _as_field_array(E):
    """Validate E >= 0 and normalize to 1-D; returns (array, shape restorer)."""
    arr = np.asarray(E, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError("field magnitude must be nonnegative")
    shape = arr.shape
    flat = np.ascontiguousarray(arr.reshape(-1))

    def restore(out):
        out = np.asarray(out, dtype=float)
        if shape == ():
            return float(out[0])
        return out.reshape(shape)

    return flat, restore


@dataclass(frozen=True)
class EnergyDensityValue:
    """One evaluated point of a law: magnitude, conductivity, current, energy."""

    E: float
    sigma: float
    J: float
    Q: float


def sigma(model: ConductivityModel, E):
    return model.sigma(E)


def current_density(model: ConductivityModel, E):
    return model.current_density(E)


def energy_density(model: ConductivityModel, E):
    return model.energy_density(E)


def default_validation_grid(model: ConductivityModel, points: int = 256) -> np.ndarray:
    """Log-spaced field grid over [1e-6*E0, 1e3*E0] used for sampled checks."""
    return np.geomspace(1e-6 * model.E0, 1e3 * model.E0, points)


def h4_envelope(model: ConductivityModel, E):
    """(H4) lower/upper envelopes at E, using the model's stored constants."""
    if model.sigma_lower is None or model.sigma_upper is None:
        raise ValueError("model carries no growth-bound constants")
    E = np.asarray(E, dtype=float)
    ratio = E / model.E0
    lower = model.sigma_lower * ratio ** (model.p - 2.0)
    upper = model.sigma_upper * np.maximum(1.0, ratio ** (model.p - 2.0))
    return lower, upper


@dataclass(frozen=True)
class HypothesisReport:
    """Outcome of the admissibility checks: status per condition plus witnesses."""

    statuses: dict
    witnesses: dict
    c_estimate: float = None

    @property
    def admissible(self) -> bool:
        return all(s != "fail" for s in self.statuses.values())


def validate_hypotheses(model: ConductivityModel, e_grid=None, seed: int = 0) -> HypothesisReport:
    """Check the admissibility conditions (H1)-(H5) on a field grid.

    Grid-sampled, not symbolic: a "pass" for sampled conditions means no
    counterexample was found on the grid. Failures are reported, never raised.
    """
    if e_grid is None:
        e_grid = default_validation_grid(model)
    e_grid = np.asarray(e_grid, dtype=float)
    if e_grid.size == 0:
        raise ValueError("validation grid must be nonempty")
    if np.any(np.diff(e_grid) <= 0) or np.any(e_grid <= 0):
        raise ValueError("validation grid must be positive and increasing")

    statuses = {}
    witnesses = {}

    # (H1): spatial dependence is piecewise constant per element by design
    statuses["H1"] = "pass"

    j = np.asarray(model.current_density(e_grid))
    rising = np.diff(j) > 0.0
    if np.all(rising):
        statuses["H2"] = "pass"
    else:
        k = int(np.flatnonzero(~rising)[0])
        statuses["H2"] = "fail"
        witnesses["H2"] = {"E_lo": float(e_grid[k]), "E_hi": float(e_grid[k + 1]),
                           "J_lo": float(j[k]), "J_hi": float(j[k + 1])}

    # (H3): all four kinds evaluate through continuous closed forms or a
    # continuous interpolant
    statuses["H3"] = "pass"

    if model.p < 2.0:
        statuses["H4"] = "fail"
        witnesses["H4"] = {"reason": "growth exponent p < 2"}
    elif model.sigma_lower is None or model.sigma_upper is None:
        statuses["H4"] = "not-checked"
    else:
        s = np.asarray(model.sigma(e_grid))
        lower, upper = h4_envelope(model, e_grid)
        slack = 1e-12
        low_ok = s >= lower * (1.0 - slack) - slack
        up_ok = s <= upper * (1.0 + slack) + slack
        if np.all(low_ok) and np.all(up_ok):
            statuses["H4"] = "pass"
        else:
            k = int(np.flatnonzero(~(low_ok & up_ok))[0])
            statuses["H4"] = "fail"
            witnesses["H4"] = {"E": float(e_grid[k]), "sigma": float(s[k]),
                               "lower": float(lower[k]), "upper": float(upper[k])}

    c_est = None
    if model.strong_monotonicity_c is not None and model.p >= 2.0:
        # linear / monomial / polynomial: the constant follows from the
        # standard vector inequality, no sampling needed
        statuses["H5"] = "pass"
        c_est = model.strong_monotonicity_c
        witnesses["H5"] = {"c": c_est, "source": "analytic"}
    else:
        c_est, bad_pair = _sample_strong_monotonicity(model, seed)
        if c_est > 0.0:
            statuses["H5"] = "pass"
            witnesses["H5"] = {"c": c_est, "source": "sampled-estimate"}
        else:
            statuses["H5"] = "fail"
            witnesses["H5"] = {"c": c_est, "pair": bad_pair}

    return HypothesisReport(statuses=statuses, witnesses=witnesses, c_estimate=c_est)


def _sample_strong_monotonicity(model, seed, n_pairs: int = 4096):
    """Estimate the (H5) constant from random 2-D field pairs.

    Returns (min ratio, worst pair). A nonpositive ratio is a counterexample;
    a positive minimum is only a witness, not a certificate.
    """
    rng = np.random.default_rng(seed)
    v1 = rng.uniform(-10.0, 10.0, size=(n_pairs, 2))
    v2 = rng.uniform(-10.0, 10.0, size=(n_pairs, 2))
    e1 = np.hypot(v1[:, 0], v1[:, 1])
    e2 = np.hypot(v2[:, 0], v2[:, 1])
    s1 = np.asarray(model.sigma(e1))
    s2 = np.asarray(model.sigma(e2))
    lhs = np.einsum("ij,ij->i", s2[:, None] * v2 - s1[:, None] * v1, v2 - v1)
    gap = np.linalg.norm(v2 - v1, axis=1)
    ok = gap > 1e-12
    ratios = lhs[ok] / gap[ok] ** model.p
    k = int(np.argmin(ratios))
    worst = (v1[ok][k].tolist(), v2[ok][k].tolist())
    return float(ratios[k]), worst


def export_constitutive_curves(model: ConductivityModel, e_grid) -> np.ndarray:
    """Tabulate (E, sigma, J, Q) rows over an increasing nonnegative grid."""
    e_grid = np.asarray(e_grid, dtype=float)
    if np.any(e_grid < 0) or np.any(np.diff(e_grid) <= 0):
        raise ValueError("grid must be nonnegative and increasing")
    s = np.asarray(model.sigma(e_grid), dtype=float)
    j = np.asarray(model.current_density(e_grid), dtype=float)
    q = np.asarray(model.energy_density(e_grid), dtype=float)
    return np.column_stack([e_grid, s, j, q])
