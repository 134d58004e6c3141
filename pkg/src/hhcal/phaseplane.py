"""Phase-plane geometry: nullclines, fixed points, saddle manifolds.

Nullcline zero sets are contoured by marching squares
(``skimage.measure.find_contours``) on a sampled grid, then every
polyline vertex is refined by bisection along its grid edge until the
field component is below the curve tolerance.  Fixed points come from
2D Newton solves seeded at proximity pairs between the nullcline
polylines; saddle manifolds are shot from eigenvector offsets with the
shared integrator.

Models plug in through a small planar-field surface: ``fV(V, n, I)``
(vectorized), ``g(V, n)`` (vectorized), ``field(y)`` or ``rhs(t, y)``
for pointwise evaluation, optionally ``n_nullcline(V)`` (analytic
recovery-nullcline) and ``analytic_jacobian(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .errors import NewtonError, ValidationError
from .integrate import IntegratorOptions, Watcher, integrate

__all__ = [
    "Box",
    "NullclineSet",
    "FixedPoint",
    "Manifold",
    "extract_nullclines",
    "find_fixed_points",
    "classify",
    "eigenvalues_2x2",
    "jacobian",
    "newton",
    "shoot_manifold",
    "DEFAULT_BOX_REDUCED",
    "DEFAULT_RESOLUTION",
]

# Spans the hyperpolarized pump-induced resting node (V near -53 at the
# calcium presets) as well as the full spike excursion.
DEFAULT_BOX_REDUCED = (-70.0, 120.0, 0.0, 1.0)
DEFAULT_RESOLUTION = 600
CURVE_TOL = 1e-8
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
NEWTON_MAX_DAMPING = 8
DEDUP_RADIUS = 1e-6
SEED_CELL_FACTOR = 1.5
NONHYPERBOLIC_EPS = 1e-6


@dataclass(frozen=True)
class Box:
    """Axis-aligned analysis window (x = first state, y = second state)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValidationError("box must be nondegenerate")

    @classmethod
    def coerce(cls, b) -> "Box":
        return b if isinstance(b, Box) else cls(*b)

    def contains(self, pt, margin: float = 0.0) -> bool:
        return (self.x_min - margin <= pt[0] <= self.x_max + margin
                and self.y_min - margin <= pt[1] <= self.y_max + margin)

    def diagonal(self) -> float:
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)

    def cell_diagonal(self, resolution: int) -> float:
        return math.hypot((self.x_max - self.x_min) / (resolution - 1),
                          (self.y_max - self.y_min) / (resolution - 1))

    def as_tuple(self):
        return (self.x_min, self.x_max, self.y_min, self.y_max)


@dataclass
class NullclineSet:
    """Polylines of both nullclines within a box.

    ``v_nullcline`` holds one (N, 2) array per connected component;
    ``n_nullcline`` is a single polyline (analytic when the model
    provides it).  Vertices satisfy |relevant field component| <
    ``curve_tol``.
    """

    v_nullcline: list
    n_nullcline: np.ndarray
    box: Box
    resolution: int
    curve_tol: float = CURVE_TOL

    def all_v_points(self) -> np.ndarray:
        if not self.v_nullcline:
            return np.empty((0, 2))
        return np.vstack(self.v_nullcline)


@dataclass
class FixedPoint:
    """Equilibrium with its Jacobian and eigenvalue classification."""

    location: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    kind: str  # stable-node | stable-focus | saddle | unstable-node | unstable-focus | nonhyperbolic

    @property
    def is_saddle(self) -> bool:
        return self.kind == "saddle"

    def to_dict(self) -> dict:
        return {
            "location": [float(x) for x in self.location],
            "jacobian": [[float(x) for x in row] for row in self.jacobian],
            "eigenvalues": [[ev.real, ev.imag] for ev in self.eigenvalues],
            "kind": self.kind,
        }


@dataclass
class Manifold:
    """One saddle-manifold branch as a polyline with bookkeeping."""

    saddle: FixedPoint
    branch: str  # stable-plus | stable-minus | unstable-plus | unstable-minus
    polyline: np.ndarray
    arclength: float
    termination: str = ""
    crossings: list = dc_field(default_factory=list)


def _grid(box: Box, resolution: int):
    xs = np.linspace(box.x_min, box.x_max, resolution)
    ys = np.linspace(box.y_min, box.y_max, resolution)
    return xs, ys


def _refine_vertices(f_vec, pts_lo, pts_hi, tol, max_iter=60):
    """Vectorized bisection of f along segments [lo, hi] with a sign change."""
    lo = pts_lo.copy()
    hi = pts_hi.copy()
    f_lo = f_vec(lo[:, 0], lo[:, 1])
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = f_vec(mid[:, 0], mid[:, 1])
        done = np.abs(f_mid) < tol
        if done.all():
            return mid
        same = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(same[:, None], mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same[:, None], hi, mid)
    return 0.5 * (lo + hi)


def _contour_zero(f_vec, box: Box, resolution: int, tol: float):
    """Marching-squares zero set of f over the box, vertices refined to tol.

    Returns a list of (N, 2) polylines in (x, y) coordinates.
    """
    xs, ys = _grid(box, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    F = np.asarray(f_vec(X, Y), dtype=float)
    if not np.all(np.isfinite(F)):
        bad = np.argwhere(~np.isfinite(F))
        cells = [(float(xs[i]), float(ys[j])) for i, j in bad[:10]]
        raise ValidationError(f"field non-finite on grid near {cells}")
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    polylines = []
    for contour in measure.find_contours(F, 0.0):
        pts = np.column_stack([box.x_min + contour[:, 0] * dx,
                               box.y_min + contour[:, 1] * dy])
        # Each marching-squares vertex lies on a grid edge: one index is
        # (near-)integral.  Build the edge endpoints for bisection.
        ij = contour
        frac_i = np.abs(ij[:, 0] - np.round(ij[:, 0]))
        on_row = frac_i < 1e-9  # interpolated along the y-edge
        lo = pts.copy()
        hi = pts.copy()
        i_f = np.floor(ij[:, 0])
        j_f = np.floor(ij[:, 1])
        lo[:, 0] = np.where(on_row, pts[:, 0], box.x_min + i_f * dx)
        hi[:, 0] = np.where(on_row, pts[:, 0], box.x_min + np.minimum(i_f + 1, resolution - 1) * dx)
        lo[:, 1] = np.where(on_row, box.y_min + j_f * dy, pts[:, 1])
        hi[:, 1] = np.where(on_row, box.y_min + np.minimum(j_f + 1, resolution - 1) * dy, pts[:, 1])
        f_lo = np.asarray(f_vec(lo[:, 0], lo[:, 1]), dtype=float)
        f_hi = np.asarray(f_vec(hi[:, 0], hi[:, 1]), dtype=float)
        refinable = (np.sign(f_lo) != np.sign(f_hi)) & np.isfinite(f_lo) & np.isfinite(f_hi)
        refined = pts.copy()
        if refinable.any():
            refined[refinable] = _refine_vertices(
                f_vec, lo[refinable], hi[refinable], tol)
        polylines.append(refined)
    return polylines


def extract_nullclines(model, box=None, resolution: int = DEFAULT_RESOLUTION,
                       I=None, curve_tol: float = CURVE_TOL) -> NullclineSet:
    """Extract both nullclines of a planar model within a box.

    The first-component nullcline is contoured; the recovery nullcline
    uses the model's analytic curve when available, otherwise it is
    contoured as well.
    """
    if resolution < 16:
        raise ValidationError("resolution must be at least 16")
    box = Box.coerce(box if box is not None else DEFAULT_BOX_REDUCED)
    fv = (lambda x, y: model.fV(x, y, I=I)) if I is not None else model.fV
    v_polys = _contour_zero(fv, box, resolution, curve_tol)
    if getattr(model, "n_nullcline", None) is not None:
        xs, _ = _grid(box, resolution)
        n_poly = np.column_stack([xs, np.asarray(model.n_nullcline(xs), dtype=float)])
        inside = (n_poly[:, 1] >= box.y_min) & (n_poly[:, 1] <= box.y_max)
        n_poly = n_poly[inside]
    else:
        n_polys = _contour_zero(model.g, box, resolution, curve_tol)
        n_poly = max(n_polys, key=len) if n_polys else np.empty((0, 2))
    return NullclineSet(v_polys, n_poly, box, resolution, curve_tol)


def eigenvalues_2x2(J) -> np.ndarray:
    """Eigenvalues of a 2x2 matrix from the trace/determinant closed form."""
    J = np.asarray(J, dtype=float)
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    disc = tr * tr - 4.0 * det
    if disc >= 0.0:
        r = math.sqrt(disc)
        return np.array([(tr + r) / 2.0, (tr - r) / 2.0], dtype=complex)
    r = math.sqrt(-disc)
    return np.array([complex(tr / 2.0, r / 2.0), complex(tr / 2.0, -r / 2.0)])


def classify(J) -> str:
    """Stability class of a 2x2 Jacobian.

    saddle <=> real eigenvalues of opposite sign (det < 0); focus <=>
    nonzero imaginary part; stability from the sign of the largest real
    part; nonhyperbolic when |Re| is below the classification epsilon.
    """
    ev = eigenvalues_2x2(J)
    re = ev.real
    scale = 1.0 + float(np.max(np.abs(ev)))
    if np.max(np.abs(re)) < NONHYPERBOLIC_EPS * scale:
        return "nonhyperbolic"
    det = float(np.asarray(J)[0, 0] * np.asarray(J)[1, 1]
                - np.asarray(J)[0, 1] * np.asarray(J)[1, 0])
    if det < 0.0:
        return "saddle"
    if np.min(np.abs(re)) < NONHYPERBOLIC_EPS * scale:
        return "nonhyperbolic"
    focus = bool(np.any(np.abs(ev.imag) > 0.0))
    stable = bool(np.max(re) < 0.0)
    if focus:
        return "stable-focus" if stable else "unstable-focus"
    return "stable-node" if stable else "unstable-node"


def jacobian(field, x, fd_step: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian with per-component relative steps."""
    x = np.asarray(x, dtype=float)
    k = x.size
    f0 = np.asarray(field(x), dtype=float)
    J = np.zeros((f0.size, k))
    for j in range(k):
        h = fd_step * (1.0 + abs(x[j]))
        e = np.zeros(k)
        e[j] = h
        J[:, j] = (np.asarray(field(x + e)) - np.asarray(field(x - e))) / (2.0 * h)
    return J


def _field_of(model, I=None):
    if hasattr(model, "field"):
        if I is None:
            return lambda y: model.field(y)
        i_base = getattr(getattr(model, "params", None), "I_app", None)
        if i_base is None:
            i_base = getattr(getattr(model, "params", None), "I", 0.0)
        i_ext = I - i_base
        return lambda y: model.field(y, i_ext)
    return model


def _jac_of(model, field):
    # The planar models' Jacobians do not depend on the applied current,
    # so the analytic form is valid at any I.
    analytic = getattr(model, "analytic_jacobian", None)
    if analytic is not None:
        return lambda y: analytic(y)
    return lambda y: jacobian(field, y)


def newton(field, x0, jac=None, tol: float = NEWTON_TOL,
           max_iter: int = NEWTON_MAX_ITER) -> np.ndarray:
    """Damped Newton for field(x) = 0; raises NewtonError on failure.

    The step is halved up to 8 times whenever the residual norm does
    not decrease.
    """
    jac = jac or (lambda y: jacobian(field, y))
    x = np.asarray(x0, dtype=float).copy()
    f = np.asarray(field(x), dtype=float)
    r = float(np.max(np.abs(f)))
    for _ in range(max_iter):
        if r < tol:
            return x
        try:
            step = np.linalg.solve(jac(x), -f)
        except np.linalg.LinAlgError:
            raise NewtonError("singular Jacobian in Newton iteration")
        lam = 1.0
        for _ in range(NEWTON_MAX_DAMPING + 1):
            x_new = x + lam * step
            f_new = np.asarray(field(x_new), dtype=float)
            if np.all(np.isfinite(f_new)):
                r_new = float(np.max(np.abs(f_new)))
                if r_new < r:
                    break
            lam *= 0.5
        else:
            raise NewtonError(f"Newton stalled at residual {r:.3e}")
        x, f, r = x_new, f_new, r_new
    if r < tol:
        return x
    raise NewtonError(f"Newton did not converge (residual {r:.3e})")


def find_fixed_points(model, box=None, nullclines: NullclineSet = None,
                      I=None, resolution: int = DEFAULT_RESOLUTION) -> list:
    """All equilibria in the box: nullcline-proximity seeds, Newton, dedup.

    Seeds are pairs of vertices from the two nullcline families closer
    than 1.5 cell diagonals.  Non-convergent seeds are dropped; roots
    are deduplicated at radius 1e-6 and classified via their Jacobian.
    """
    box = Box.coerce(box if box is not None else DEFAULT_BOX_REDUCED)
    if nullclines is None:
        nullclines = extract_nullclines(model, box, resolution, I=I)
    fld = _field_of(model, I)
    jac = _jac_of(model, fld)
    v_pts = nullclines.all_v_points()
    n_pts = nullclines.n_nullcline
    if len(v_pts) == 0 or len(n_pts) == 0:
        return []
    radius = SEED_CELL_FACTOR * box.cell_diagonal(nullclines.resolution)
    tree = cKDTree(v_pts)
    pairs = tree.query_ball_point(n_pts, r=radius)
    seeds = []
    for i, hits in enumerate(pairs):
        for j in hits:
            seeds.append(0.5 * (n_pts[i] + v_pts[j]))
    roots = []
    for seed in seeds:
        try:
            x = newton(fld, seed, jac=jac)
        except NewtonError:
            continue
        if not box.contains(x, margin=1e-9):
            continue
        if any(np.linalg.norm(x - r) < DEDUP_RADIUS for r in roots):
            continue
        roots.append(x)
    roots.sort(key=lambda r: (r[0], r[1]))
    out = []
    for x in roots:
        J = np.asarray(jac(x), dtype=float)
        out.append(FixedPoint(x, J, eigenvalues_2x2(J), classify(J)))
    return out


_BRANCHES = {
    "stable-plus": ("stable", +1),
    "stable-minus": ("stable", -1),
    "unstable-plus": ("unstable", +1),
    "unstable-minus": ("unstable", -1),
}


def shoot_manifold(model, saddle: FixedPoint, branch: str, box=None,
                   I=None, opts: IntegratorOptions = None,
                   arclength_budget: float = None,
                   known_fixed_points=(), watchers=(),
                   seed_offset: float = None, t_max: float = 2000.0) -> Manifold:
    """Shoot one branch of a saddle manifold as a trajectory polyline.

    Seeds at ``saddle +/- delta * eigenvector`` and integrates forward
    in time for unstable branches, backward for stable ones.  Stops on
    leaving the box, exceeding the arclength budget, or entering a
    small ball around any known fixed point.  Extra watchers (e.g. a
    section) are passed to the integrator and their crossings returned
    on the manifold.
    """
    if not saddle.is_saddle:
        raise ValidationError("shoot_manifold requires a saddle fixed point")
    try:
        which, sign = _BRANCHES[branch]
    except KeyError:
        raise ValidationError(f"unknown branch {branch!r}") from None
    box = Box.coerce(box if box is not None else DEFAULT_BOX_REDUCED)
    fld = _field_of(model, I)
    ev, vecs = np.linalg.eig(saddle.jacobian)
    idx = int(np.argmax(ev.real)) if which == "unstable" else int(np.argmin(ev.real))
    direction = vecs[:, idx].real
    direction = direction / np.linalg.norm(direction)
    delta = seed_offset if seed_offset is not None else 1e-4 * box.diagonal()
    x0 = saddle.location + sign * delta * direction
    rhs = ((lambda t, y, i: fld(y)) if which == "unstable"
           else (lambda t, y, i: -fld(y)))

    def box_guard(t, y):
        cx = 0.5 * (box.x_min + box.x_max)
        cy = 0.5 * (box.y_min + box.y_max)
        hx = 0.5 * (box.x_max - box.x_min)
        hy = 0.5 * (box.y_max - box.y_min)
        return max(abs(y[0] - cx) / hx, abs(y[1] - cy) / hy) - 1.0

    all_watchers = [Watcher(guard=box_guard, direction=1, action="stop", name="left-box")]
    for fp in known_fixed_points:
        loc = fp.location if isinstance(fp, FixedPoint) else np.asarray(fp, float)
        if np.linalg.norm(loc - saddle.location) < 1e-9:
            continue
        all_watchers.append(Watcher(
            guard=lambda t, y, loc=loc: float(np.max(np.abs(y - loc))) - 1e-6,
            direction=-1, action="stop", name="fixed-point"))
    all_watchers.extend(watchers)
    opts = opts or IntegratorOptions()
    budget = arclength_budget if arclength_budget is not None else 20.0 * box.diagonal()

    traj = integrate(rhs, x0, (0.0, t_max), watchers=all_watchers,
                     opts=opts.with_(stop_at_equilibrium=True,
                                     eq_rate_tol=max(opts.eq_rate_tol, 1e-8)))
    pts = traj.states
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] > budget:
        k = int(np.searchsorted(arc, budget)) + 1
        pts = pts[:k]
        arc = arc[:k]
        term = "arclength-budget"
    else:
        term = traj.termination
    return Manifold(saddle, branch, pts, float(arc[-1]) if len(arc) else 0.0,
                    term, traj.crossings)
