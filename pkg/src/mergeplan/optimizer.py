"""Residual-sum objective over single or combinatorial trajectories.

The decision variables are longitudinal support points at uniform dt.
Velocity, acceleration and jerk are forward finite differences of the
support points; each carries a value residual (pull toward a desired
value) and a range residual (one-sided quadratic outside an interval).
Collision risk against a truncated-Gaussian prediction of another vehicle
is priced per support point through the truncated CDF.

For combinatorial planning the lead and yield alternatives share a common
parameter prefix up to a branch index; the flat parameter array holds the
shared points once and both branch tails. Residual windows that span the
junction between the shared part and the yield tail provide the coupling;
windows fully inside the shared prefix are counted once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize
from scipy.special import erf

from .errors import DegenerateTruncationError, NonFiniteCostError

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# finite-difference stencils per derivative order
_FD_COEFFS = {
    1: np.array([-1.0, 1.0]),
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-1.0, 3.0, -3.0, 1.0]),
}
_ORDER_NAMES = {1: "velocity", 2: "acceleration", 3: "jerk"}


def normal_cdf(z):
    """Standard normal CDF, 0.5 + 0.5 erf(z / sqrt(2))."""
    return 0.5 + 0.5 * erf(np.asarray(z, dtype=float) / _SQRT2)


def normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / _SQRT2PI


def collision_cost(x, mu, sigma, a, b, w_coll: float):
    """Truncated-Gaussian CDF at x, scaled by w_coll and clamped to [0, w_coll].

    The unweighted value is the probability that the predicted position is
    at or below x given it lies in [a, b].
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(np.asarray(a) >= np.asarray(b)):
        raise ValueError("truncation requires a < b")
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    cdf_a = normal_cdf((a - mu) / sigma)
    denom = normal_cdf((b - mu) / sigma) - cdf_a
    if np.any(denom < 1e-12):
        raise DegenerateTruncationError("truncation interval carries no probability mass")
    raw = (normal_cdf((x - mu) / sigma) - cdf_a) / denom
    return w_coll * np.clip(raw, 0.0, 1.0)


def finite_differences(x: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward finite differences: velocity, acceleration, jerk arrays."""
    x = np.asarray(x, dtype=float)
    if len(x) < 4:
        raise ValueError("at least 4 support points required for third differences")
    v = np.diff(x) / dt
    acc = np.diff(x, n=2) / dt**2
    jrk = np.diff(x, n=3) / dt**3
    return v, acc, jrk


def value_residual(y, y_des: float, w: float) -> float:
    """w * sum((y - y_des)^2)."""
    d = np.asarray(y, dtype=float) - y_des
    return float(w * np.sum(d * d))


def range_residual(y, lo: float, hi: float, w: float) -> float:
    """One-sided quadratic penalty outside [lo, hi], zero inside."""
    if lo > hi:
        raise ValueError("empty range interval")
    y = np.asarray(y, dtype=float)
    below = np.minimum(y - lo, 0.0)
    above = np.maximum(y - hi, 0.0)
    return float(w * (np.sum(below * below) + np.sum(above * above)))


@dataclass(frozen=True)
class ResidualWeights:
    """Weights, targets and intervals of the ride-quality residuals."""

    w_v_vel: float = 1.5
    w_v_acc: float = 0.05
    w_v_jrk: float = 0.2
    w_r_vel: float = 100.0
    w_r_acc: float = 200.0
    w_r_jrk: float = 50.0
    w_coll: float = 60000.0
    v_desired: float = 8.0
    a_desired: float = 0.0
    v_range: tuple[float, float] = (0.0, 10.5)
    a_range: tuple[float, float] = (-4.0, 1.5)
    j_range: tuple[float, float] = (-4.0, 4.0)

    def __post_init__(self) -> None:
        for name in ("w_v_vel", "w_v_acc", "w_v_jrk", "w_r_vel", "w_r_acc", "w_r_jrk", "w_coll"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("v_range", "a_range", "j_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty")

    def value_weight(self, order: int) -> float:
        return (self.w_v_vel, self.w_v_acc, self.w_v_jrk)[order - 1]

    def value_target(self, order: int) -> float:
        return (self.v_desired, self.a_desired, 0.0)[order - 1]

    def range_weight(self, order: int) -> float:
        return (self.w_r_vel, self.w_r_acc, self.w_r_jrk)[order - 1]

    def range_interval(self, order: int) -> tuple[float, float]:
        return (self.v_range, self.a_range, self.j_range)[order - 1]


@dataclass
class TrajectoryParams:
    """Support points of one trajectory with a pinned leading segment."""

    x: np.ndarray
    dt: float
    pinned_count: int = 2

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        if len(self.x) < 4:
            raise ValueError("at least 4 support points required")
        if not (0 <= self.pinned_count <= len(self.x)):
            raise ValueError("pinned_count out of range")


@dataclass
class CombinatorialLayout:
    """Index bookkeeping for the shared/lead/yield flat parameter array.

    Flat array order: shared points 0..tc_index, then the lead tail, then
    the yield tail. Both reconstructed trajectories have n_points support
    points; bridge_residuals lists the finite-difference windows of the
    yield reconstruction that mix shared and yield-tail parameters.
    """

    n_points: int
    tc_index: int
    shared_indices: np.ndarray = field(init=False)
    lead_indices: np.ndarray = field(init=False)
    yield_indices: np.ndarray = field(init=False)
    lead_map: np.ndarray = field(init=False)
    yield_map: np.ndarray = field(init=False)
    bridge_residuals: dict[str, list[tuple[int, ...]]] = field(init=False)

    def __post_init__(self) -> None:
        n, tc = self.n_points, self.tc_index
        if not (0 <= tc <= n - 2):
            raise ValueError("tc_index must satisfy 0 <= tc_index <= n_points - 2")
        self.shared_indices = np.arange(0, tc + 1)
        self.lead_indices = np.arange(tc + 1, n)
        self.yield_indices = np.arange(n, 2 * n - tc - 1)
        self.lead_map = np.arange(n)
        self.yield_map = np.concatenate((self.shared_indices, self.yield_indices))
        self.bridge_residuals = {}
        for order, name in _ORDER_NAMES.items():
            windows = []
            for i in range(max(0, tc - order + 1), min(tc, n - 1 - order) + 1):
                windows.append(tuple(self.yield_map[i : i + order + 1]))
            self.bridge_residuals[name] = windows

    @property
    def n_params(self) -> int:
        return 2 * self.n_points - self.tc_index - 1


def build_layout(n_points: int, tc_index: int, pin_index: int = 0) -> CombinatorialLayout:
    """Layout for a given branch index; pinned points must lie in the shared part."""
    if pin_index > tc_index:
        raise ValueError("pinned points must not extend past the branch index")
    return CombinatorialLayout(n_points, tc_index)


@dataclass
class CollisionField:
    """One hypothesis component mapped into ego path coordinates.

    mu/sigma/lower/upper describe the truncated Gaussian per prediction
    step (step i applies to ego support point i + 1). conflict_begin is
    the arclength where the conflict zone starts on the ego route; only
    probability mass at or beyond it is priced, which keeps positions
    before the zone free of cost.
    """

    mu: np.ndarray
    sigma: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    conflict_begin: float
    weight: float = 1.0
    _cdf_lo: np.ndarray = field(init=False, repr=False)
    _denom: np.ndarray = field(init=False, repr=False)
    _gate: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.sigma <= 0.0):
            raise ValueError("sigma must be positive")
        if np.any(self.lower >= self.upper):
            raise DegenerateTruncationError("empty truncation interval")
        self._cdf_lo = normal_cdf((self.lower - self.mu) / self.sigma)
        self._denom = normal_cdf((self.upper - self.mu) / self.sigma) - self._cdf_lo
        if np.any(self._denom < 1e-12):
            raise DegenerateTruncationError("truncation interval carries no probability mass")
        gate_raw = (
            normal_cdf((self.conflict_begin - self.mu) / self.sigma) - self._cdf_lo
        ) / self._denom
        self._gate = np.clip(gate_raw, 0.0, 1.0)

    def __len__(self) -> int:
        return len(self.mu)

    def term(self, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
        """Gated unweighted collision term at ego positions x (step indices given)."""
        x = np.asarray(x, dtype=float)
        mu, sig = self.mu[steps], self.sigma[steps]
        raw = (normal_cdf((x - mu) / sig) - self._cdf_lo[steps]) / self._denom[steps]
        cdf = np.clip(raw, 0.0, 1.0)
        out = np.maximum(cdf - self._gate[steps], 0.0)
        out[x <= self.conflict_begin] = 0.0
        return out

    def term_grad(self, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
        """d(term)/dx; zero outside the active, unclipped region."""
        x = np.asarray(x, dtype=float)
        mu, sig = self.mu[steps], self.sigma[steps]
        raw = (normal_cdf((x - mu) / sig) - self._cdf_lo[steps]) / self._denom[steps]
        grad = normal_pdf((x - mu) / sig) / (sig * self._denom[steps])
        active = (
            (x > self.conflict_begin)
            & (x > self.lower[steps])
            & (x < self.upper[steps])
            & (raw > self._gate[steps])
        )
        return np.where(active, grad, 0.0)


@dataclass
class _Branch:
    name: str
    index_map: np.ndarray  # flat indices forming the n_points trajectory
    window_start: dict[int, int]  # per order: first counted window start
    collision: CollisionField | None


class CostAssembly:
    """Assembled objective over a flat parameter array.

    With a layout, both reconstructed trajectories contribute their value
    and range residuals (shared-prefix windows counted once, attributed to
    the lead reconstruction) and their per-support-point collision terms
    against their paired hypothesis component. Without a layout a single
    trajectory is assembled the same way.
    """

    def __init__(
        self,
        n_points: int,
        dt: float,
        weights: ResidualWeights,
        layout: CombinatorialLayout | None = None,
        collision_fields: dict[str, CollisionField | None] | None = None,
    ) -> None:
        if n_points < 4:
            raise ValueError("at least 4 support points required")
        self.n_points = n_points
        self.dt = dt
        self.weights = weights
        self.layout = layout
        fields = collision_fields or {}
        self.branches: list[_Branch] = []
        if layout is None:
            self.n_params = n_points
            self.branches.append(
                _Branch("main", np.arange(n_points), {1: 0, 2: 0, 3: 0}, fields.get("main"))
            )
        else:
            if layout.n_points != n_points:
                raise ValueError("layout does not match n_points")
            self.n_params = layout.n_params
            tc = layout.tc_index
            self.branches.append(
                _Branch("lead", layout.lead_map, {1: 0, 2: 0, 3: 0}, fields.get("lead"))
            )
            # windows fully inside the shared prefix already counted by the lead branch
            yield_starts = {d: max(0, tc - d + 1) for d in (1, 2, 3)}
            self.branches.append(
                _Branch("yield", layout.yield_map, yield_starts, fields.get("yield"))
            )
        for br in self.branches:
            if br.collision is not None and len(br.collision) < n_points - 1:
                raise ValueError(
                    f"collision field for branch {br.name!r} shorter than the horizon"
                )
        # precomputed window index matrices per (branch, order)
        self._windows: dict[tuple[str, int], np.ndarray] = {}
        for br in self.branches:
            for order in (1, 2, 3):
                starts = np.arange(br.window_start[order], n_points - order)
                idx = br.index_map[starts[:, None] + np.arange(order + 1)[None, :]]
                self._windows[(br.name, order)] = idx

    def _check_params(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        return params

    def breakdown(self, params: np.ndarray) -> dict[str, float]:
        """Per-term costs; their sum is the total objective."""
        params = self._check_params(params)
        w = self.weights
        out = {f"value_{n}": 0.0 for n in _ORDER_NAMES.values()}
        out.update({f"range_{n}": 0.0 for n in _ORDER_NAMES.values()})
        out["collision"] = 0.0
        for br in self.branches:
            for order, name in _ORDER_NAMES.items():
                idx = self._windows[(br.name, order)]
                q = (params[idx] @ _FD_COEFFS[order]) / self.dt**order
                out[f"value_{name}"] += value_residual(q, w.value_target(order), w.value_weight(order))
                lo, hi = w.range_interval(order)
                out[f"range_{name}"] += range_residual(q, lo, hi, w.range_weight(order))
            if br.collision is not None and w.w_coll > 0.0:
                steps = np.arange(self.n_points - 1)
                x = params[br.index_map[1:]]
                term = br.collision.term(x, steps)
                out["collision"] += w.w_coll * br.collision.weight * float(np.sum(term))
        return out

    def cost(self, params: np.ndarray) -> float:
        return float(sum(self.breakdown(params).values()))

    def cost_and_grad(self, params: np.ndarray) -> tuple[float, np.ndarray]:
        params = self._check_params(params)
        w = self.weights
        total = 0.0
        grad = np.zeros(self.n_params)
        for br in self.branches:
            for order in (1, 2, 3):
                idx = self._windows[(br.name, order)]
                coeff = _FD_COEFFS[order] / self.dt**order
                q = params[idx] @ coeff
                d_val = q - w.value_target(order)
                total += w.value_weight(order) * float(np.dot(d_val, d_val))
                lo, hi = w.range_interval(order)
                below = np.minimum(q - lo, 0.0)
                above = np.maximum(q - hi, 0.0)
                total += w.range_weight(order) * float(np.dot(below, below) + np.dot(above, above))
                dq = 2.0 * (
                    w.value_weight(order) * d_val + w.range_weight(order) * (below + above)
                )
                np.add.at(grad, idx.ravel(), (dq[:, None] * coeff[None, :]).ravel())
            if br.collision is not None and w.w_coll > 0.0:
                steps = np.arange(self.n_points - 1)
                flat = br.index_map[1:]
                x = params[flat]
                scale = w.w_coll * br.collision.weight
                total += scale * float(np.sum(br.collision.term(x, steps)))
                np.add.at(grad, flat, scale * br.collision.term_grad(x, steps))
        return total, grad

    def shared_prefix_ride_cost(self, params: np.ndarray) -> float:
        """Value/range residual sum of windows fully inside the shared prefix."""
        if self.layout is None:
            return 0.0
        params = self._check_params(params)
        w = self.weights
        tc = self.layout.tc_index
        total = 0.0
        for order in (1, 2, 3):
            starts = np.arange(0, max(0, tc - order + 1))
            if len(starts) == 0:
                continue
            idx = self.layout.lead_map[starts[:, None] + np.arange(order + 1)[None, :]]
            q = (params[idx] @ _FD_COEFFS[order]) / self.dt**order
            total += value_residual(q, w.value_target(order), w.value_weight(order))
            lo, hi = w.range_interval(order)
            total += range_residual(q, lo, hi, w.range_weight(order))
        return total


@dataclass
class OptimizationResult:
    params: np.ndarray
    total_cost: float
    per_term_costs: dict[str, float]
    converged: bool
    iterations: int
    cost_history: list[float]


def minimize(
    assembly: CostAssembly,
    x0: np.ndarray,
    pinned: np.ndarray,
    bounds: list[tuple[float | None, float | None] | None] | None = None,
    gtol: float = 1e-8,
    max_iter: int = 200,
    memory: int = 10,
) -> OptimizationResult:
    """Quasi-Newton minimization over the non-pinned parameters.

    `pinned` lists flat indices held at their x0 values. Bounds are per
    flat parameter (None = unbounded). Raises NonFiniteCostError when the
    objective stops being finite.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    if x0.shape != (assembly.n_params,):
        raise ValueError("x0 does not match the assembly parameter count")
    free = np.ones(assembly.n_params, dtype=bool)
    free[np.asarray(pinned, dtype=int)] = False
    if bounds is not None:
        # start from a feasible point so the recorded cost history is monotone
        for i, bnd in enumerate(bounds):
            if bnd is None or not free[i]:
                continue
            lo, hi = bnd
            if lo is not None:
                x0[i] = max(x0[i], lo)
            if hi is not None:
                x0[i] = min(x0[i], hi)
    x_full = x0.copy()

    def fun(xf: np.ndarray) -> tuple[float, np.ndarray]:
        x_full[free] = xf
        c, g = assembly.cost_and_grad(x_full)
        if not np.isfinite(c) or not np.all(np.isfinite(g)):
            raise NonFiniteCostError(
                f"non-finite objective at |x|={np.linalg.norm(x_full):.3e}"
            )
        return c, g[free]

    history = [assembly.cost(x_full)]

    def callback(xf: np.ndarray) -> None:
        x_full[free] = xf
        history.append(assembly.cost(x_full))

    free_bounds = None
    if bounds is not None:
        padded = [bounds[i] if bounds[i] is not None else (None, None)
                  for i in range(assembly.n_params)]
        free_bounds = [b for b, f in zip(padded, free) if f]
    res = _scipy_minimize(
        fun,
        x0[free],
        jac=True,
        method="L-BFGS-B",
        bounds=free_bounds,
        callback=callback,
        options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-14, "maxcor": memory},
    )
    x_full[free] = res.x
    per_term = assembly.breakdown(x_full)
    total = float(sum(per_term.values()))
    return OptimizationResult(
        params=x_full.copy(),
        total_cost=total,
        per_term_costs=per_term,
        converged=bool(res.success),
        iterations=int(res.nit),
        cost_history=history,
    )
