"""Karhunen-Loeve cohort generator.

Subjects get a uniform number of observations at sorted uniform times;
scores are independent normals with the given eigenvalues as variances and
the measurement error is Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import legendre

from .curves import LongitudinalSample, trapezoid_weights

ORTHONORMAL_TOL = 1e-3
CHECK_POINTS = 1001

CurveSpec = Union[Callable, np.ndarray]


def legendre_basis(domain, n: int) -> list:
    """First ``n`` shifted Legendre polynomials, orthonormal in L2(domain).

    The first is constant (a level shift), the second linear (a slope).
    """
    a, b = map(float, domain)
    length = b - a

    def make(k):
        coef = np.zeros(k + 1)
        coef[k] = 1.0
        scale = np.sqrt((2 * k + 1) / length)
        return lambda t: scale * legendre.legval(2.0 * (np.asarray(t, dtype=np.float64) - a) / length - 1.0, coef)

    return [make(k) for k in range(n)]


def linear_mean(intercept: float, slope: float) -> Callable:
    return lambda t: intercept + slope * np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class KlSpec:
    """Generative description of one homogeneous cohort.

    ``mean`` and each eigenfunction are callables of time, or values
    tabulated at ``tab_points`` (evaluated by linear interpolation).
    """

    domain: tuple
    mean: CurveSpec
    eigenfunctions: Sequence[CurveSpec]
    eigenvalues: Sequence[float]
    sigma2: float = 0.0
    obs_range: tuple = (2, 8)
    tab_points: Optional[np.ndarray] = None

    def __post_init__(self):
        a, b = map(float, self.domain)
        if not (np.isfinite(a) and np.isfinite(b) and b > a):
            raise ValueError("domain must be a finite interval with t_max > t_min")
        object.__setattr__(self, "domain", (a, b))
        lam = np.asarray(self.eigenvalues, dtype=np.float64).reshape(-1)
        if np.any(lam < 0) or np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be nonnegative and nonincreasing")
        object.__setattr__(self, "eigenvalues", lam)
        if len(self.eigenfunctions) != lam.size:
            raise ValueError("need one eigenfunction per eigenvalue")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        lo, hi = map(int, self.obs_range)
        if lo < 1 or hi < lo:
            raise ValueError("obs_range must satisfy 1 <= min <= max")
        object.__setattr__(self, "obs_range", (lo, hi))
        if self.tab_points is not None:
            tab = np.asarray(self.tab_points, dtype=np.float64)
            if tab[0] > a or tab[-1] < b or np.any(np.diff(tab) <= 0):
                raise ValueError("tab_points must be increasing and cover the domain")
            object.__setattr__(self, "tab_points", tab)
        self._check_orthonormal()

    def _evaluate(self, curve, t):
        if callable(curve):
            return np.asarray(curve(t), dtype=np.float64) * np.ones_like(t)
        if self.tab_points is None:
            raise ValueError("tabulated curves need tab_points")
        return np.interp(t, self.tab_points, np.asarray(curve, dtype=np.float64))

    def mean_at(self, t) -> np.ndarray:
        return self._evaluate(self.mean, np.asarray(t, dtype=np.float64))

    def eigenfunctions_at(self, t) -> np.ndarray:
        """Shape (K, len(t))."""
        t = np.asarray(t, dtype=np.float64)
        if not len(self.eigenfunctions):
            return np.zeros((0, t.size))
        return np.stack([self._evaluate(f, t) for f in self.eigenfunctions])

    def covariance_at(self, s, t) -> np.ndarray:
        """True covariance surface on the outer product of ``s`` and ``t``."""
        return (self.eigenfunctions_at(s).T * self.eigenvalues) @ self.eigenfunctions_at(t)

    def _check_orthonormal(self):
        if not len(self.eigenfunctions):
            return
        tabulated = all(not callable(f) for f in self.eigenfunctions) and self.tab_points is not None
        if tabulated:
            inside = (self.tab_points >= self.domain[0]) & (self.tab_points <= self.domain[1])
            pts = self.tab_points[inside]
        else:
            pts = np.linspace(self.domain[0], self.domain[1], CHECK_POINTS)
        w = trapezoid_weights(pts)
        phi = self.eigenfunctions_at(pts)
        gram = (phi * w) @ phi.T
        if np.max(np.abs(gram - np.eye(gram.shape[0]))) > ORTHONORMAL_TOL:
            raise ValueError("eigenfunctions are not orthonormal on the domain")


def default_spec(
    eigenvalues=(9.0, 4.0),
    sigma2: float = 4.0,
    domain=(0.0, 15.0),
    obs_range=(2, 8),
    intercept: float = 50.0,
    slope: float = -2.0,
) -> KlSpec:
    """Declining linear mean with level-shift, slope, ... modes."""
    lam = tuple(float(v) for v in eigenvalues)
    return KlSpec(
        domain=tuple(domain),
        mean=linear_mean(intercept, slope),
        eigenfunctions=legendre_basis(domain, len(lam)),
        eigenvalues=lam,
        sigma2=sigma2,
        obs_range=tuple(obs_range),
    )


def shifted(spec: KlSpec, delta) -> KlSpec:
    """Copy of ``spec`` whose mean is moved by ``delta`` (a constant or a callable)."""
    base = spec

    def mean(t):
        shift = delta(t) if callable(delta) else delta
        return base.mean_at(t) + shift

    return replace(spec, mean=mean)


def _draw_subject(spec: KlSpec, rng: np.random.Generator):
    lo, hi = spec.obs_range
    m = int(rng.integers(lo, hi + 1))
    a, b = spec.domain
    times = np.sort(rng.uniform(a, b, size=m))
    xi = rng.normal(size=spec.eigenvalues.size) * np.sqrt(spec.eigenvalues)
    signal = spec.mean_at(times) + xi @ spec.eigenfunctions_at(times)
    noise = rng.normal(size=m) * np.sqrt(spec.sigma2)
    return times, signal + noise, xi


def simulate_cohort(
    spec: KlSpec,
    n_subjects: int,
    seed: int = 0,
    label: Optional[str] = None,
    stream: int = 0,
    return_scores: bool = False,
):
    """Draw ``n_subjects`` subjects from ``spec``.

    Each subject uses its own generator seeded by ``(seed, stream, index)``,
    so the first subjects do not change when ``n_subjects`` grows.
    Ids are ``"<label>-<index>"`` (or ``"s<index>"`` without a label).

    Returns
    -------
    list of LongitudinalSample, or ``(samples, scores)`` with scores of
    shape (n_subjects, K) when ``return_scores`` is set.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be at least 1")
    samples, scores = [], []
    for i in range(n_subjects):
        rng = np.random.default_rng([int(seed), int(stream), i])
        times, values, xi = _draw_subject(spec, rng)
        sid = f"{label}-{i:05d}" if label is not None else f"s{i:05d}"
        samples.append(LongitudinalSample(sid, times, values, label))
        scores.append(xi)
    if return_scores:
        return samples, np.array(scores).reshape(n_subjects, spec.eigenvalues.size)
    return samples


def simulate_groups(specs: Sequence[tuple], seed: int = 0) -> list:
    """Concatenate labelled cohorts; ``specs`` holds ``(KlSpec, n, label)`` triples.

    Group ``g`` draws from stream ``g``, so a single group reproduces
    :func:`simulate_cohort` with the same seed.
    """
    labels = [label for _, _, label in specs]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate group labels")
    out = []
    for g, (spec, n, label) in enumerate(specs):
        out.extend(simulate_cohort(spec, n, seed=seed, label=None if label is None else str(label), stream=g))
    return out


def _curve_from_json(entry, domain, what):
    if entry is None:
        return None
    if isinstance(entry, dict) and "intercept" in entry:
        return linear_mean(float(entry["intercept"]), float(entry.get("slope", 0.0)))
    raise ValueError(f"unsupported {what} description: {entry!r}")


def specs_from_dict(data: dict) -> list:
    """Parse a JSON simulation description into ``(KlSpec, n, label)`` triples.

    Recognised keys (all optional unless stated): ``domain``, ``eigenvalues``,
    ``sigma2``, ``obs_range``, ``mean`` (``{"intercept", "slope"}``),
    ``tab_points`` with tabulated ``mean_values`` / ``eigenfunction_values``,
    and either ``n_subjects`` or ``groups``: a list of objects with ``label``,
    ``n`` and any of the keys above as per-group overrides plus ``mean_shift``.
    """

    def build(cfg):
        domain = tuple(cfg.get("domain", (0.0, 15.0)))
        lam = [float(v) for v in cfg.get("eigenvalues", (9.0, 4.0))]
        tab = cfg.get("tab_points")
        if tab is not None:
            mean = np.asarray(cfg["mean_values"], dtype=np.float64)
            phis = list(np.asarray(cfg["eigenfunction_values"], dtype=np.float64).reshape(len(lam), -1))
        else:
            mean = _curve_from_json(cfg.get("mean"), domain, "mean") or linear_mean(50.0, -2.0)
            phis = legendre_basis(domain, len(lam))
        spec = KlSpec(
            domain=domain,
            mean=mean,
            eigenfunctions=phis,
            eigenvalues=lam,
            sigma2=float(cfg.get("sigma2", 4.0)),
            obs_range=tuple(cfg.get("obs_range", (2, 8))),
            tab_points=None if tab is None else np.asarray(tab, dtype=np.float64),
        )
        shift = float(cfg.get("mean_shift", 0.0))
        return shifted(spec, shift) if shift else spec

    if "groups" in data:
        out = []
        for group in data["groups"]:
            merged = {k: v for k, v in data.items() if k not in ("groups", "n_subjects")}
            merged.update(group)
            if "label" not in group or "n" not in group:
                raise ValueError("every group needs 'label' and 'n'")
            out.append((build(merged), int(group["n"]), str(group["label"])))
        return out
    if "n_subjects" not in data:
        raise ValueError("simulation spec needs 'n_subjects' or 'groups'")
    return [(build(data), int(data["n_subjects"]), None)]
