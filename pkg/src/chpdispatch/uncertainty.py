"""Budget uncertainty sets, their lifted linear description, moments, sampling.

The demand forecast error lives in normalized coordinates: each period's
deviation delta_t ranges in [-1, 1] and the 1-norm of the whole vector is
capped by a budget.  A physical radius per period maps delta back to MWh.
Splitting delta into positive and negative parts gives the lifted polyhedron
used both by piecewise-linear decision rules and by the dualization of the
robust counterpart.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, DimensionTooLarge, NegativeSigma,
                     NotPSD, UnsupportedSet)


@dataclass(frozen=True, eq=False)
class BudgetUncertaintySet:
    """The normalized set {delta : -1 <= delta <= 1, ||delta||_1 <= gamma}
    together with the physical half-width of each coordinate.

    Attributes:
        dim: number of uncertain coordinates (one per period).
        gamma: deviation budget, 0 <= gamma <= dim.
        radius: physical deviation per unit delta, e.g. MWh/h of heat demand;
            defaults to ones (purely normalized set).
    """

    dim: int
    gamma: float
    radius: np.ndarray = None

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionMismatch(f"dimension must be positive, got {self.dim}")
        if not 0.0 <= self.gamma <= self.dim:
            raise UnsupportedSet(
                f"budget must lie in [0, dim], got {self.gamma} with dim {self.dim}")
        radius = np.ones(self.dim) if self.radius is None \
            else np.asarray(self.radius, dtype=float)
        if radius.shape != (self.dim,):
            raise DimensionMismatch(
                f"radius has shape {radius.shape}, need ({self.dim},)")
        if radius.min() < 0:
            raise UnsupportedSet("radius must be nonnegative elementwise")
        object.__setattr__(self, "radius", radius)
        object.__setattr__(self, "gamma", float(self.gamma))

    def contains(self, delta, tol: float = 1e-9) -> bool:
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (self.dim,):
            raise DimensionMismatch(f"point has shape {delta.shape}, need ({self.dim},)")
        return bool(np.abs(delta).max() <= 1.0 + tol
                    and np.abs(delta).sum() <= self.gamma + tol)


@dataclass
class LiftedPolyhedron:
    """Linear description L @ (delta, delta_plus, delta_minus) >= l.

    Row layout for dimension n: delta_plus upper boxes as -delta_plus >= -1
    (n rows), delta_plus >= 0 (n), delta_minus upper boxes (n),
    delta_minus >= 0 (n), the linking equality delta = delta_plus -
    delta_minus as two opposed inequality rows per coordinate (2n), and the
    budget row -sum(delta_plus + delta_minus) >= -gamma (1); 6n + 1 rows over
    3n coordinates.  The polyhedron is bounded and projects onto the budget
    set in the first n coordinates.
    """

    L: np.ndarray
    l: np.ndarray
    dim: int

    @property
    def n_rows(self) -> int:
        return self.L.shape[0]

    @staticmethod
    def lift_point(delta) -> np.ndarray:
        """Canonical lift (delta, max(delta, 0), max(-delta, 0))."""
        delta = np.asarray(delta, dtype=float)
        return np.concatenate([delta, np.maximum(delta, 0.0), np.maximum(-delta, 0.0)])

    def contains(self, point, tol: float = 1e-9) -> bool:
        point = np.asarray(point, dtype=float)
        if point.shape != (3 * self.dim,):
            raise DimensionMismatch(
                f"lifted point has shape {point.shape}, need ({3 * self.dim},)")
        return bool((self.L @ point - self.l).min() >= -tol)


def linearize_budget_set(uset: BudgetUncertaintySet) -> LiftedPolyhedron:
    """Lift the budget set into (delta, delta_plus, delta_minus) coordinates."""
    n = uset.dim
    rows = 6 * n + 1
    L = np.zeros((rows, 3 * n))
    l = np.zeros(rows)
    eye = np.eye(n)
    # -delta_plus >= -1 and delta_plus >= 0
    L[0:n, n:2 * n] = -eye
    l[0:n] = -1.0
    L[n:2 * n, n:2 * n] = eye
    # -delta_minus >= -1 and delta_minus >= 0
    L[2 * n:3 * n, 2 * n:3 * n] = -eye
    l[2 * n:3 * n] = -1.0
    L[3 * n:4 * n, 2 * n:3 * n] = eye
    # linking delta - delta_plus + delta_minus = 0 as opposed inequalities
    L[4 * n:5 * n, 0:n] = eye
    L[4 * n:5 * n, n:2 * n] = -eye
    L[4 * n:5 * n, 2 * n:3 * n] = eye
    L[5 * n:6 * n, 0:n] = -eye
    L[5 * n:6 * n, n:2 * n] = eye
    L[5 * n:6 * n, 2 * n:3 * n] = -eye
    # budget -sum(delta_plus + delta_minus) >= -gamma
    L[6 * n, n:] = -1.0
    l[6 * n] = -uset.gamma
    return LiftedPolyhedron(L=L, l=l, dim=n)


def enumerate_vertices(uset: BudgetUncertaintySet, max_dim: int = 12) -> np.ndarray:
    """Exact vertex set of the budget set in normalized delta coordinates.

    For an integer budget g the vertices put exactly g coordinates at +-1;
    for fractional g, floor(g) coordinates sit at +-1 and one further
    coordinate carries the remainder (the pure +-1 patterns are then not
    vertices: their active constraints leave the budget slack).  A budget of
    zero collapses the set to the origin.

    Returns:
        Array of shape (n_vertices, dim).

    Raises:
        DimensionTooLarge: dimension above max_dim (combinatorial blow-up).
    """
    n = uset.dim
    if n > max_dim:
        raise DimensionTooLarge(
            f"vertex enumeration limited to dim <= {max_dim}, got {n}")
    g = uset.gamma
    if g == 0.0:
        return np.zeros((1, n))
    k = int(math.floor(g + 1e-12))
    frac = g - k
    if frac < 1e-12:
        frac = 0.0
    vertices = []
    for support in itertools.combinations(range(n), k):
        for signs in itertools.product((1.0, -1.0), repeat=k):
            base = np.zeros(n)
            for idx, sgn in zip(support, signs):
                base[idx] = sgn
            if frac == 0.0:
                vertices.append(base)
            else:
                rest = [j for j in range(n) if j not in support]
                for j in rest:
                    for sgn in (1.0, -1.0):
                        v = base.copy()
                        v[j] = sgn * frac
                        vertices.append(v)
    return np.array(vertices)


def enumerate_lifted_vertices(uset: BudgetUncertaintySet,
                              max_dim: int = 12) -> np.ndarray:
    """Exact vertices of the lifted polyhedron for integer budgets.

    Eliminating delta through the linking rows leaves the box-knapsack
    polytope {(delta_plus, delta_minus) in [0,1]^2n : sum <= gamma}, whose
    vertices for an integer budget are all 0/1 split-part vectors with at
    most gamma ones.  That includes points where both parts of the same
    coordinate saturate and cancel in delta, so the projection onto delta is
    NOT a vertex of the budget set for those; robustness over the lifted
    polyhedron still constrains them.

    Raises:
        UnsupportedSet: fractional budget (vertices then carry a fractional
            split part; not needed by the oracles, so unsupported).
        DimensionTooLarge: dimension above max_dim.
    """
    n = uset.dim
    if n > max_dim:
        raise DimensionTooLarge(
            f"vertex enumeration limited to dim <= {max_dim}, got {n}")
    k_max = int(round(uset.gamma))
    if abs(uset.gamma - k_max) > 1e-9:
        raise UnsupportedSet(
            f"lifted vertex enumeration requires an integer budget, got {uset.gamma}")
    points = []
    for k in range(k_max + 1):
        for support in itertools.combinations(range(2 * n), k):
            split = np.zeros(2 * n)
            split[list(support)] = 1.0
            plus, minus = split[:n], split[n:]
            points.append(np.concatenate([plus - minus, plus, minus]))
    return np.array(points)


HALF_NORMAL_FACTOR = math.sqrt(1.0 / (2.0 * math.pi))


def halfnormal_mean(sigma: float) -> float:
    """E{max(X, 0)} for X ~ N(0, sigma^2), equal to sigma * sqrt(1/(2 pi))."""
    if sigma < 0:
        raise NegativeSigma(f"standard deviation must be nonnegative, got {sigma}")
    return sigma * HALF_NORMAL_FACTOR


def gaussian_cross_moments(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross moments E{delta_plus delta^T} and E{delta_minus delta^T}.

    For a centered Gaussian vector the positive and negative parts each carry
    half of the covariance with opposite sign: E{max(delta_i,0) delta_j} =
    cov_ij / 2 and E{max(-delta_i,0) delta_j} = -cov_ij / 2, so their
    difference reconstructs E{delta delta^T} = cov exactly.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise NotPSD("covariance matrix is not symmetric")
    if cov.size and np.linalg.eigvalsh(cov).min() < -1e-9:
        raise NotPSD("covariance matrix has negative eigenvalues")
    return cov / 2.0, -cov / 2.0


@dataclass
class MomentModel:
    """First and second moments of the normalized deviation and its split
    parts, plus the price-channel scales the robust objective needs.

    Attributes:
        mean_delta: E{delta}, zero by construction.
        cov_delta: Cov(delta) in normalized coordinates.
        mean_plus, mean_minus: E{delta_plus}, E{delta_minus}.
        cross_plus, cross_minus: E{delta_plus delta^T}, E{delta_minus delta^T}.
        price_mean: nominal balancing price path (the day-ahead forecast).
        price_std: physical balancing price deviation std per period.
        price_corr: correlation between the standardized demand deviation and
            the balancing price deviation of the same period.
    """

    mean_delta: np.ndarray
    cov_delta: np.ndarray
    mean_plus: np.ndarray
    mean_minus: np.ndarray
    cross_plus: np.ndarray
    cross_minus: np.ndarray
    price_mean: np.ndarray
    price_std: np.ndarray
    price_corr: float

    @property
    def dim(self) -> int:
        return self.mean_delta.shape[0]

    def validate(self, tol: float = 1e-9) -> None:
        n = self.dim
        shapes = {"mean_delta": (n,), "mean_plus": (n,), "mean_minus": (n,),
                  "cov_delta": (n, n), "cross_plus": (n, n), "cross_minus": (n, n),
                  "price_mean": (n,), "price_std": (n,)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, need {shape}")
        if np.linalg.eigvalsh(self.cov_delta).min() < -tol:
            raise NotPSD("cov_delta has negative eigenvalues")
        if self.mean_plus.min() < -tol:
            raise ValueError("mean_plus must be nonnegative")
        if np.abs(self.mean_plus - self.mean_minus).max() > tol:
            raise ValueError("zero-mean symmetry requires mean_plus == mean_minus")
        # split parts must reassemble the covariance
        gap = np.abs(self.cross_plus - self.cross_minus - self.cov_delta).max()
        if gap > tol:
            raise ValueError(
                f"cross moments do not reconstruct the covariance (gap {gap:.2e})")
        if not -1.0 <= self.price_corr <= 1.0:
            raise ValueError(f"price correlation {self.price_corr} outside [-1, 1]")


@dataclass
class UncertaintyMapping:
    """Linear dependence of problem data on delta for one two-stage problem.

    Attributes:
        G: recourse-cost deviation per unit delta (balancing-price channel),
            shaped (n recourse columns, dim).
        H_e, H_i: equality/inequality right-hand-side deviation per unit
            delta (heat-demand channel), shaped (rows, dim).
        g_hat: nominal recourse cost vector.
        h_e_hat, h_i_hat: nominal right-hand sides.
    """

    G: np.ndarray
    H_e: np.ndarray
    H_i: np.ndarray
    g_hat: np.ndarray
    h_e_hat: np.ndarray
    h_i_hat: np.ndarray

    def validate(self, n_recourse: int, n_eq: int, n_ineq: int, dim: int) -> None:
        checks = {"G": (self.G, (n_recourse, dim)),
                  "H_e": (self.H_e, (n_eq, dim)),
                  "H_i": (self.H_i, (n_ineq, dim)),
                  "g_hat": (self.g_hat, (n_recourse,)),
                  "h_e_hat": (self.h_e_hat, (n_eq,)),
                  "h_i_hat": (self.h_i_hat, (n_ineq,))}
        for name, (arr, shape) in checks.items():
            if arr.shape != shape:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, need {shape}")


@dataclass(frozen=True)
class UncertaintyModel:
    """A budget set with its moments and the price loading per unit delta."""

    uset: BudgetUncertaintySet
    moments: MomentModel
    price_loading: np.ndarray

    @property
    def degenerate(self) -> bool:
        return bool(np.all(self.uset.radius == 0.0))


def demand_price_uncertainty(price, demand, gamma: float, radius_mult: float,
                             demand_rmse: float = 0.07, price_rmse: float = 0.33,
                             correlation: float = 0.3) -> UncertaintyModel:
    """Build the uncertainty description for one market day.

    The per-period demand deviation std is demand_rmse times nominal load and
    the set radius is radius_mult of that std, so the normalized deviation
    has std 1/radius_mult.  The balancing price deviation std is price_rmse
    times the day-ahead price; its regression slope on delta_t (the price
    loading) is correlation * price_std * radius_mult.  A zero radius
    multiplier or zero budget collapses the set, the moments and both
    channels to zero, which reduces any robust counterpart built on top to
    the nominal problem.
    """
    price = np.asarray(price, dtype=float)
    demand = np.asarray(demand, dtype=float)
    if price.shape != demand.shape or price.ndim != 1:
        raise DimensionMismatch("price and demand must be equal-length vectors")
    if demand_rmse < 0 or price_rmse < 0:
        raise NegativeSigma("rmse fractions must be nonnegative")
    T = price.shape[0]
    sigma_d = demand_rmse * demand
    sigma_b = price_rmse * price
    degenerate = radius_mult == 0.0 or gamma == 0.0 or not sigma_d.any()
    if degenerate:
        uset = BudgetUncertaintySet(dim=T, gamma=float(gamma), radius=np.zeros(T))
        zeros_v, zeros_m = np.zeros(T), np.zeros((T, T))
        moments = MomentModel(
            mean_delta=zeros_v.copy(), cov_delta=zeros_m.copy(),
            mean_plus=zeros_v.copy(), mean_minus=zeros_v.copy(),
            cross_plus=zeros_m.copy(), cross_minus=zeros_m.copy(),
            price_mean=price.copy(), price_std=sigma_b, price_corr=correlation)
        moments.validate()
        return UncertaintyModel(uset=uset, moments=moments,
                                price_loading=np.zeros(T))
    uset = BudgetUncertaintySet(dim=T, gamma=float(gamma),
                                radius=radius_mult * sigma_d)
    sigma_delta = 1.0 / radius_mult
    # The objective books expectations of the recourse response, but the
    # constraints only defend realizations inside the budget set.  With the
    # raw std the expected l1 mass T*E|delta_j| can exceed the budget, and
    # the counterpart then credits planned adjustments (e.g. scheduling the
    # expensive unit and cutting it "on average") on deviation mass that is
    # never defended, which flips the schedule structure at small budgets.
    # Shrinking the booked distribution so its expected l1 mass equals the
    # budget keeps credited volumes within defended ones; whenever the
    # budget covers the raw mass the moments are the plain Gaussian values.
    mass = 2.0 * T * halfnormal_mean(sigma_delta)
    if mass > gamma:
        sigma_delta *= gamma / mass
    cov = np.eye(T) * sigma_delta ** 2
    cross_plus, cross_minus = gaussian_cross_moments(cov)
    moments = MomentModel(
        mean_delta=np.zeros(T), cov_delta=cov,
        mean_plus=np.full(T, halfnormal_mean(sigma_delta)),
        mean_minus=np.full(T, halfnormal_mean(sigma_delta)),
        cross_plus=cross_plus, cross_minus=cross_minus,
        price_mean=price.copy(), price_std=sigma_b, price_corr=correlation)
    moments.validate()
    return UncertaintyModel(uset=uset, moments=moments,
                            price_loading=correlation * sigma_b * radius_mult)


def sample_scenarios(mm: MomentModel, uset: BudgetUncertaintySet, n: int,
                     seed: int):
    """Draw equal-probability joint (demand, price) deviation paths.

    Each scenario uses an independent substream keyed by (seed, index), so
    chunked or parallel generation yields identical draws.  The normalized
    demand deviation is Gaussian with the model's covariance and is scaled to
    physical units by the set's radius; the price deviation of each period
    correlates with that period's standardized demand deviation.  Draws are
    not truncated to the set: out-of-sample paths may leave it.

    Returns:
        ScenarioSet with paths shaped (n, dim, 2): demand deviation in
        channel 0, balancing price deviation in channel 1.
    """
    from .stochastic import ScenarioSet

    if n < 1:
        raise ValueError(f"need at least one scenario, got {n}")
    T = mm.dim
    if uset.dim != T:
        raise DimensionMismatch(f"set dim {uset.dim} differs from moments dim {T}")
    sigma = np.sqrt(np.diag(mm.cov_delta))
    # PSD-safe factor: cov = C C^T even for singular covariances
    vals, vecs = np.linalg.eigh(mm.cov_delta)
    factor = vecs * np.sqrt(np.maximum(vals, 0.0))
    rho = mm.price_corr
    mix = math.sqrt(max(0.0, 1.0 - rho * rho))
    active = sigma > 0.0
    paths = np.empty((n, T, 2))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        z = rng.standard_normal(T)
        w = rng.standard_normal(T)
        delta = factor @ z
        paths[i, :, 0] = uset.radius * delta
        std = np.where(active, delta / np.where(active, sigma, 1.0), 0.0)
        # periods with no demand variance keep the full price variance
        paths[i, :, 1] = mm.price_std * np.where(active, rho * std + mix * w, w)
    return ScenarioSet(paths=paths, probs=np.full(n, 1.0 / n))
