"""Codimension-1 bifurcation detectors in the applied current.

Every detector reports an explicit bracket rather than a bare point
estimate, re-evaluates its defining sign condition at the bracket ends,
and stores kind-specific diagnostics:

* transcritical — Newton on (dfV/dV, dfV/dn) = 0 (a system independent
  of the applied current), critical current by affinity, transversality
  checked via the Hessian determinant and d2fV/dV2,
* Andronov-Hopf — equilibrium-branch continuation with Newton warm
  starts, bisection on the sign of the leading eigenvalue real part,
* saddle-node — bisection on existence of the node/saddle pair,
* saddle-homoclinic — bisection on the sign of a manifold miss
  distance measured on a phase-plane section near the saddle,
* saddle-node of limit cycles — simulation-based hysteresis bisection
  on a sustained-spiking predicate,
* hybrid homoclinic — bisection on the rest-vs-spike outcome of the
  trajectory from the reset point.

Detectors return ``None`` for a clean "not found in range" and raise
:class:`~hhcal.errors.DetectionError` when a certification step fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import AmbiguousOutcomeError, DetectionError, NewtonError, ValidationError
from .integrate import IntegratorOptions, Watcher, integrate
from .models import HybridModel, HybridParams, ModelParams, ReducedModel
from .phaseplane import (
    Box,
    DEFAULT_BOX_REDUCED,
    FixedPoint,
    classify,
    eigenvalues_2x2,
    find_fixed_points,
    jacobian,
    newton,
)

__all__ = [
    "BifurcationPoint",
    "SectionCrossing",
    "detect_transcritical",
    "detect_hopf",
    "detect_saddle_node",
    "homoclinic_miss_distance",
    "detect_saddle_homoclinic",
    "detect_snlc",
    "detect_hybrid_homoclinic",
]

BISECT_MAX_ITER = 60
# Transcritical points count as physiological only inside the analysis
# box with n in [0, 1] and a critical current no more hyperpolarizing
# than this floor.
PHYSIOLOGICAL_I_MIN = -5.0


@dataclass
class BifurcationPoint:
    kind: str
    value: float
    bracket: tuple
    location: np.ndarray = None
    diagnostics: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, (np.floating, np.integer)):
                return float(v)
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v]
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, complex):
                return [v.real, v.imag]
            return v

        return {
            "kind": self.kind,
            "value": float(self.value),
            "bracket": [float(self.bracket[0]), float(self.bracket[1])],
            "location": None if self.location is None else [float(x) for x in self.location],
            "diagnostics": clean(self.diagnostics),
        }


@dataclass
class SectionCrossing:
    """A located crossing of a horizontal section n = n_ref."""

    n_ref: float
    v_window: tuple
    point: np.ndarray
    direction: int


def _reduced_factory(params: ModelParams):
    return lambda I: ReducedModel(params.with_(I_app=I))


def _factory_of(model_or_params):
    if isinstance(model_or_params, ModelParams):
        return _reduced_factory(model_or_params)
    if callable(model_or_params) and not hasattr(model_or_params, "fV"):
        return model_or_params
    raise ValidationError("expected ModelParams or a model factory I -> planar model")


def _bisect(predicate, lo, hi, p_lo, p_hi, tol):
    """Boolean bisection; returns (lo, hi) with predicate flipping inside."""
    if p_lo == p_hi:
        return None
    it = 0
    while hi - lo > tol and it < BISECT_MAX_ITER:
        mid = 0.5 * (lo + hi)
        if predicate(mid) == p_lo:
            lo = mid
        else:
            hi = mid
        it += 1
    return lo, hi


# ---------------------------------------------------------------------------
# transcritical

def _grad_fV(model, x, h=1e-6):
    V, n = float(x[0]), float(x[1])
    aj = getattr(model, "analytic_jacobian", None)
    if aj is not None:
        J = aj([V, n])
        return np.array([J[0, 0], J[0, 1]])
    hV = h * (1.0 + abs(V))
    hn = h * (1.0 + abs(n))
    dV = (float(model.fV(V + hV, n)) - float(model.fV(V - hV, n))) / (2 * hV)
    dn = (float(model.fV(V, n + hn)) - float(model.fV(V, n - hn))) / (2 * hn)
    return np.array([dV, dn])


def _hessian_fV(model, x, h=1e-4):
    """Hessian of fV in (V, n) by central differences of the gradient."""
    x = np.asarray(x, dtype=float)
    H = np.zeros((2, 2))
    for j in range(2):
        step = h * (1.0 + abs(x[j]))
        e = np.zeros(2)
        e[j] = step
        H[:, j] = (_grad_fV(model, x + e) - _grad_fV(model, x - e)) / (2 * step)
    return 0.5 * (H + H.T)


def detect_transcritical(model_or_params, box=None, tol: float = 1e-4,
                         seed_resolution: int = 60) -> BifurcationPoint:
    """Locate the transversal self-intersection of the V-nullcline.

    Solves dfV/dV = dfV/dn = 0 by multi-start Newton (the system does
    not involve the applied current), sets the critical current so the
    point lies on the nullcline (fV is affine in I), and verifies the
    transversality conditions: negative Hessian determinant and nonzero
    d2fV/dV2.  Candidates outside the physiological window (n in [0,1],
    V inside the box, critical current above -5) are reported with
    ``diagnostics["physiological"] = False``.
    """
    factory = None
    if isinstance(model_or_params, ModelParams):
        factory = _reduced_factory(model_or_params)
        model = factory(0.0)
    else:
        model = model_or_params
    box = Box.coerce(box if box is not None else DEFAULT_BOX_REDUCED)

    # seeds: local minima of the scale-normalized gradient magnitude
    Vs = np.linspace(box.x_min, box.x_max, seed_resolution)
    ns = np.linspace(max(box.y_min - 0.2, -0.4), min(box.y_max + 0.2, 1.4),
                     seed_resolution)
    X, Y = np.meshgrid(Vs, ns, indexing="ij")
    hV = 1e-4 * (1.0 + np.abs(X))
    hn = 1e-6
    gV = (np.asarray(model.fV(X + hV, Y), float)
          - np.asarray(model.fV(X - hV, Y), float)) / (2 * hV)
    gn = (np.asarray(model.fV(X, Y + hn), float)
          - np.asarray(model.fV(X, Y - hn), float)) / (2 * hn)
    sV = max(float(np.median(np.abs(gV))), 1e-12)
    sn = max(float(np.median(np.abs(gn))), 1e-12)
    score = (gV / sV) ** 2 + (gn / sn) ** 2
    # strict local minima over the 8-neighborhood
    inner = score[1:-1, 1:-1]
    is_min = np.ones_like(inner, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_min &= inner <= score[1 + di:seed_resolution - 1 + di,
                                     1 + dj:seed_resolution - 1 + dj]
    mins = np.argwhere(is_min) + 1
    order = np.argsort(score[mins[:, 0], mins[:, 1]])
    seeds = [np.array([X[i, j], Y[i, j]]) for i, j in mins[order][:40]]

    def grad(x):
        if abs(x[0]) > 10 * (abs(box.x_min) + abs(box.x_max)) or abs(x[1]) > 10:
            return np.array([1e9, 1e9])
        return _grad_fV(model, x)

    roots = []
    for seed in seeds:
        try:
            x = newton(grad, seed, jac=lambda y: _hessian_fV(model, y), tol=1e-9)
        except NewtonError:
            continue
        if any(np.max(np.abs(x - r)) < 1e-5 for r in roots):
            continue
        roots.append(x)
    if not roots:
        raise DetectionError("no critical point of the V-rate found")

    candidates = []
    for x in roots:
        H = _hessian_fV(model, x)
        det = float(np.linalg.det(H))
        if det >= 0:
            continue  # extremum / isola center, not a self-intersection
        f0 = float(model.fV(x[0], x[1], I=0.0))
        f1 = float(model.fV(x[0], x[1], I=1.0))
        slope = f1 - f0
        if abs(slope) < 1e-12:
            raise DetectionError("V-rate is not affine-increasing in the current")
        I_tc = -f0 / slope
        phys = (0.0 <= x[1] <= 1.0 and box.contains(x)
                and I_tc > PHYSIOLOGICAL_I_MIN)
        candidates.append((phys, abs(det), x, H, det, I_tc, slope))
    if not candidates:
        raise DetectionError(
            "transversality condition violated: Hessian determinant nonnegative "
            "at every critical point")
    candidates.sort(key=lambda c: (not c[0], -c[1]))
    phys, _, x, H, det, I_tc, slope = candidates[0]

    d2V = float(H[0, 0])
    if abs(d2V) < 1e-10:
        raise DetectionError("transversality condition violated: d2fV/dV2 = 0")
    resid = _grad_fV(model, x)
    if float(np.max(np.abs(resid))) > 1e-6:
        raise DetectionError("critical-point residual above tolerance")

    lo, hi = I_tc - tol / 2.0, I_tc + tol / 2.0
    f_lo = float(model.fV(x[0], x[1], I=lo))
    f_hi = float(model.fV(x[0], x[1], I=hi))
    return BifurcationPoint(
        kind="transcritical",
        value=I_tc,
        bracket=(lo, hi),
        location=np.array([x[0], x[1]]),
        diagnostics={
            "hessian_det": det,
            "d2fV_dV2": d2V,
            "d2fV_dVdn": float(H[0, 1]),
            "d2fV_dn2": float(H[1, 1]),
            "grad_residual": float(np.max(np.abs(resid))),
            "fV_at_bracket": [f_lo, f_hi],
            "dI_slope": slope,
            "physiological": bool(phys),
        },
    )


# ---------------------------------------------------------------------------
# Andronov-Hopf

def detect_hopf(model_or_params, I_range, branch_start=None,
                tol: float = 1e-4, n_steps: int = 200, box=None):
    """Bracket the Hopf current along a continued equilibrium branch.

    The branch is tracked from I_range[0] by Newton warm starts (step
    halving on failure); the detector bisects the first sign change of
    the leading eigenvalue real part.  Returns ``None`` when the sign
    never changes in range.
    """
    factory = _factory_of(model_or_params)
    lo, hi = float(I_range[0]), float(I_range[1])

    def root_at(I, guess):
        m = factory(I)
        fld = (lambda y: m.field(y)) if hasattr(m, "field") else (lambda y: m.rhs(0.0, y))
        aj = getattr(m, "analytic_jacobian", None)
        jac = (lambda y: aj(y)) if aj is not None else (lambda y: jacobian(fld, y))
        x = newton(fld, guess, jac=jac)
        return x, np.asarray(jac(x), dtype=float)

    if branch_start is None:
        fps = find_fixed_points(factory(lo), box=box)
        if not fps:
            raise DetectionError(f"no equilibrium found at I={lo}")
        focus = [f for f in fps if np.any(np.abs(f.eigenvalues.imag) > 0)]
        branch_start = (focus or fps)[0].location
    x, J = root_at(lo, branch_start)

    def max_re(J):
        return float(np.max(eigenvalues_2x2(J).real))

    sign_lo = max_re(J) > 0
    # continuation sweep to find the first sign change
    step = (hi - lo) / n_steps
    I_prev, x_prev, s_prev = lo, x, sign_lo
    found = None
    I_cur = lo
    while I_cur < hi - 1e-15:
        I_next = min(I_cur + step, hi)
        try:
            x_next, J_next = root_at(I_next, x_prev)
        except NewtonError:
            step *= 0.5
            if step < (hi - lo) * 1e-6:
                raise DetectionError("equilibrium branch lost during continuation")
            continue
        s_next = max_re(J_next) > 0
        if s_next != s_prev:
            found = (I_cur, I_next, x_prev)
            break
        I_cur, x_prev, s_prev = I_next, x_next, s_next
    if found is None:
        return None

    b_lo, b_hi, warm = found
    warm_state = {"x": warm}

    def predicate(I):
        x, J = root_at(I, warm_state["x"])
        warm_state["x"] = x
        return max_re(J) > 0

    b = _bisect(predicate, b_lo, b_hi, s_prev, not s_prev, tol)
    lo_f, hi_f = b
    x_f, J_f = root_at(hi_f, warm_state["x"])
    ev = eigenvalues_2x2(J_f)
    x_lo, J_lo = root_at(lo_f, x_f)
    return BifurcationPoint(
        kind="hopf",
        value=hi_f,
        bracket=(lo_f, hi_f),
        location=x_f,
        diagnostics={
            "eigenvalues_hi": ev,
            "eigenvalues_lo": eigenvalues_2x2(J_lo),
            "max_re_lo": float(np.max(eigenvalues_2x2(J_lo).real)),
            "max_re_hi": float(np.max(ev.real)),
        },
    )


# ---------------------------------------------------------------------------
# saddle-node

def detect_saddle_node(model_or_params, I_range, tol: float = 1e-4, box=None):
    """Bracket the fold where the resting node and the saddle coalesce.

    The node/saddle pair must exist at I_range[0]; existence at each
    trial current is decided by warm-started Newton solves landing on
    two distinct roots.
    """
    factory = _factory_of(model_or_params)
    lo, hi = float(I_range[0]), float(I_range[1])
    fps = find_fixed_points(factory(lo), box=box)
    nodes = [f for f in fps if f.kind in ("stable-node", "stable-focus")]
    saddles = [f for f in fps if f.kind == "saddle"]
    if not nodes or not saddles:
        raise DetectionError(
            f"node/saddle pair absent at I={lo} "
            f"(found {[f.kind for f in fps]})")
    node = min(nodes, key=lambda f: f.location[0])
    saddle = min(saddles, key=lambda f: abs(f.location[0] - node.location[0]))
    warm = {"pair": (node.location.copy(), saddle.location.copy())}

    def pair_at(I):
        m = factory(I)
        fld = (lambda y: m.field(y)) if hasattr(m, "field") else (lambda y: m.rhs(0.0, y))
        aj = getattr(m, "analytic_jacobian", None)
        jac = (lambda y: aj(y)) if aj is not None else (lambda y: jacobian(fld, y))
        try:
            a = newton(fld, warm["pair"][0], jac=jac)
            b = newton(fld, warm["pair"][1], jac=jac)
        except NewtonError:
            return None
        if float(np.max(np.abs(a - b))) <= 1e-5:
            return None
        return a, b, jac

    def exists(I):
        got = pair_at(I)
        if got is None:
            return False
        a, b, _ = got
        warm["pair"] = (a, b)
        return True

    if not exists(lo):
        raise DetectionError(f"node/saddle pair not resolvable at I={lo}")
    if exists(hi):
        return None
    b = _bisect(exists, lo, hi, True, False, tol)
    lo_f, hi_f = b
    got = pair_at(lo_f)
    if got is None:
        raise DetectionError("pair lost at lower bracket end after bisection")
    a, bl, jac = got
    mid = 0.5 * (a + bl)
    J_mid = np.asarray(jac(mid), dtype=float)
    return BifurcationPoint(
        kind="saddle-node",
        value=hi_f,
        bracket=(lo_f, hi_f),
        location=mid,
        diagnostics={
            "det_at_merge": float(np.linalg.det(J_mid)),
            "pair_distance_lo": float(np.max(np.abs(a - bl))),
            "pair_exists": [True, False],
        },
    )


# ---------------------------------------------------------------------------
# saddle-homoclinic (continuous planar model)

def _saddle_of(model, guess=None, box=None):
    fld = (lambda y: model.field(y)) if hasattr(model, "field") else (lambda y: model.rhs(0.0, y))
    aj = getattr(model, "analytic_jacobian", None)
    jac = (lambda y: aj(y)) if aj is not None else (lambda y: jacobian(fld, y))
    if guess is not None:
        x = newton(fld, guess, jac=jac)
        J = np.asarray(jac(x), dtype=float)
        if classify(J) == "saddle":
            ev, vecs = np.linalg.eig(J)
            return x, ev.real, vecs.real
    fps = find_fixed_points(model, box=box)
    saddles = [f for f in fps if f.is_saddle]
    if not saddles:
        raise DetectionError("no saddle fixed point found")
    s = saddles[0]
    ev, vecs = np.linalg.eig(s.jacobian)
    return s.location, ev.real, vecs.real


def homoclinic_miss_distance(model_or_params, I, section_offset: float = 0.02,
                             v_window: float = 30.0, excursion_rise: float = 40.0,
                             opts: IntegratorOptions = None,
                             saddle_guess=None, t_max: float = 500.0):
    """Signed separation of the returning unstable branch from the stable manifold.

    A horizontal section is placed just above the saddle (n = n_saddle +
    section_offset, V within +-v_window of the saddle).  V_s is the
    stable manifold's crossing; V_u is the first descending crossing of
    the unstable branch that returns after its spike excursion (V rising
    past V_saddle + excursion_rise).  Negative miss = returns left of
    the stable manifold (toward rest); positive = right (toward the
    spiking cycle).

    Returns (miss, diagnostics).  Raises DetectionError when the
    unstable branch never returns through the section window.
    """
    if isinstance(model_or_params, ModelParams):
        model = ReducedModel(model_or_params.with_(I_app=float(I)))
    else:
        model = _factory_of(model_or_params)(float(I))
    fld = (lambda y: model.field(y)) if hasattr(model, "field") else (lambda y: model.rhs(0.0, y))
    xs, ev, vecs = _saddle_of(model, saddle_guess)
    i_u = int(np.argmax(ev))
    i_s = int(np.argmin(ev))
    if not (ev[i_u] > 0 > ev[i_s]):
        raise DetectionError(f"equilibrium at I={I} is not a saddle")
    n_sec = xs[1] + section_offset
    opts = opts or IntegratorOptions()
    delta = 1e-4 * math.hypot(DEFAULT_BOX_REDUCED[1] - DEFAULT_BOX_REDUCED[0],
                              DEFAULT_BOX_REDUCED[3] - DEFAULT_BOX_REDUCED[2])

    # stable manifold, upper branch (backward time), stopped at the section
    e_s = vecs[:, i_s] / np.linalg.norm(vecs[:, i_s])
    if e_s[1] < 0:
        e_s = -e_s
    sec_stop = Watcher(guard=lambda t, y: y[1] - n_sec, direction=0,
                       action="stop", name="section")
    back = integrate(lambda t, y, i: -fld(y), xs + delta * e_s, (0.0, 1000.0),
                     watchers=[sec_stop], opts=opts)
    if back.termination != "section":
        raise DetectionError(
            f"stable manifold did not reach the section at I={I}")
    V_s = float(back.states[-1, 0])

    e_u = vecs[:, i_u] / np.linalg.norm(vecs[:, i_u])
    attempts = {}
    for sign in (+1, -1):
        tr = integrate(lambda t, y, i: fld(y), xs + sign * delta * e_u,
                       (0.0, t_max),
                       watchers=[
                           Watcher(guard=lambda t, y: y[0] - (xs[0] + excursion_rise),
                                   direction=1, action="record", name="excursion"),
                           Watcher(guard=lambda t, y: y[1] - n_sec,
                                   direction=-1, action="record", name="section"),
                       ],
                       opts=opts.with_(divergence_bound=1e5))
        exc = [c.time for c in tr.crossings if c.name == "excursion"]
        if not exc:
            attempts[sign] = "no-excursion"
            continue
        hits = [c for c in tr.crossings
                if c.name == "section" and c.time > exc[0]
                and abs(c.state[0] - xs[0]) <= v_window]
        if not hits:
            attempts[sign] = f"no-return ({tr.termination})"
            continue
        V_u = float(hits[0].state[0])
        diag = {
            "saddle": xs,
            "section_n": n_sec,
            "V_stable": V_s,
            "V_unstable": V_u,
            "branch_sign": sign,
            "crossing": SectionCrossing(n_sec, (xs[0] - v_window, xs[0] + v_window),
                                        hits[0].state, hits[0].direction),
        }
        return V_u - V_s, diag
    raise DetectionError(
        f"unstable branch left the window without returning at I={I}: {attempts}")


def detect_saddle_homoclinic(model_or_params, I_range, tol: float = 1e-3,
                             section_offset: float = 0.02,
                             opts: IntegratorOptions = None):
    """Bisect the sign of the homoclinic miss distance over I_range.

    Requires opposite miss signs at the range ends; returns ``None``
    when both ends agree (no crossing bracketed).
    """
    lo, hi = float(I_range[0]), float(I_range[1])
    guess = {"x": None}

    def miss(I):
        m, diag = homoclinic_miss_distance(model_or_params, I,
                                           section_offset=section_offset,
                                           opts=opts, saddle_guess=guess["x"])
        guess["x"] = diag["saddle"]
        return m, diag

    m_lo, d_lo = miss(lo)
    m_hi, d_hi = miss(hi)
    if m_lo == 0.0 or m_hi == 0.0 or (m_lo < 0) == (m_hi < 0):
        return None
    b = _bisect(lambda I: miss(I)[0] < 0, lo, hi, m_lo < 0, m_hi < 0, tol)
    lo_f, hi_f = b
    m_lo_f, d_f = miss(lo_f)
    m_hi_f, _ = miss(hi_f)
    return BifurcationPoint(
        kind="saddle-homoclinic",
        value=hi_f,
        bracket=(lo_f, hi_f),
        location=np.asarray(d_f["saddle"]),
        diagnostics={
            "miss_lo": float(m_lo_f),
            "miss_hi": float(m_hi_f),
            "section_n": d_f["section_n"],
            "section_offset": section_offset,
        },
    )


# ---------------------------------------------------------------------------
# saddle-node of limit cycles (simulation-based)

def detect_snlc(model_or_params, I_range, tol: float = 1e-2,
                spike_level: float = 20.0, transient: float = 100.0,
                window: float = 200.0, min_spikes: int = 3,
                opts: IntegratorOptions = None):
    """Hysteresis bisection on a sustained-spiking predicate.

    The predicate integrates from a spiking initial condition (warm
    started from the nearest current where spiking was observed),
    discards a transient, and requires at least ``min_spikes`` level
    crossings in the following window.  Coarser by construction; the
    bracket width is capped at ``tol``.
    """
    factory = _factory_of(model_or_params)
    lo, hi = float(I_range[0]), float(I_range[1])
    opts = opts or IntegratorOptions(rtol=1e-6, atol=1e-8, max_step=1.0)
    warm = {"state": None, "I": None}

    def spiking_ic(I):
        if warm["state"] is not None:
            return warm["state"]
        return np.array([20.0, 0.4])

    def sustained(I):
        m = factory(I)
        tr = integrate(m, spiking_ic(I), (0.0, transient + window), opts=opts)
        t, V = tr.times, tr.states[:, 0]
        ix = np.where((V[:-1] < spike_level) & (V[1:] >= spike_level))[0]
        sp = t[ix]
        ok = int(np.sum(sp >= transient)) >= min_spikes
        if ok and (warm["I"] is None or I < warm["I"]):
            warm["state"] = tr.states[-1].copy()
            warm["I"] = I
        return ok

    s_hi = sustained(hi)
    if not s_hi:
        raise DetectionError(f"no sustained spiking at I={hi}")
    s_lo = sustained(lo)
    if s_lo:
        return None
    b = _bisect(sustained, lo, hi, False, True, tol)
    lo_f, hi_f = b
    return BifurcationPoint(
        kind="snlc",
        value=hi_f,
        bracket=(lo_f, hi_f),
        location=None,
        diagnostics={
            "predicate": [False, True],
            "spike_level": spike_level,
            "transient_ms": transient,
            "window_ms": window,
            "min_spikes": min_spikes,
            "method": "simulation-hysteresis",
        },
    )


# ---------------------------------------------------------------------------
# hybrid homoclinic

def hybrid_rest_point(hp: HybridParams, I: float):
    """Stable equilibrium of the 2-variable hybrid model, or None."""
    # equilibria solve v^2 - w^2 + I = 0 with w = a v + w0
    a, w0 = hp.a, hp.w0
    A = 1.0 - a * a
    B = -2.0 * a * w0
    C0 = I - w0 * w0
    disc = B * B - 4.0 * A * C0
    if disc < 0:
        return None
    for sv in (-1.0, 1.0):
        v = (-B + sv * math.sqrt(disc)) / (2.0 * A)
        w = a * v + w0
        J = np.array([[2.0 * v, -2.0 * w], [hp.eps * a, -hp.eps]])
        if classify(J) in ("stable-node", "stable-focus"):
            return np.array([v, w])
    return None


def classify_reset_outcome(hp: HybridParams, I: float, reset_point,
                           time_budget: float = 1e5,
                           opts: IntegratorOptions = None) -> str:
    """REST if the reset trajectory reaches the stable equilibrium, SPIKE if v
    hits the threshold first; AmbiguousOutcomeError at the time budget."""
    rest = hybrid_rest_point(hp, I)
    model = HybridModel(hp.with_(I=float(I)), dims=2)
    opts = opts or IntegratorOptions()
    watchers = [Watcher(guard=lambda t, y: y[0] - hp.v_th, direction=1,
                        action="stop", name="SPIKE")]
    if rest is not None:
        ball = 1e-3 * (1.0 + float(np.max(np.abs(rest))))
        watchers.append(Watcher(
            guard=lambda t, y: float(np.max(np.abs(y - rest))) - ball,
            direction=-1, action="stop", name="REST"))
    tr = integrate(model, np.asarray(reset_point, dtype=float),
                   (0.0, time_budget), watchers=watchers,
                   opts=opts.with_(stop_at_equilibrium=True, eq_rate_tol=1e-6))
    if tr.termination == "SPIKE":
        return "SPIKE"
    if tr.termination in ("REST", "converged-to-equilibrium"):
        return "REST"
    raise AmbiguousOutcomeError(
        f"no outcome within the time budget at I={I} "
        f"(termination={tr.termination})")


def detect_hybrid_homoclinic(hp: HybridParams, I_range, reset_point=None,
                             tol: float = 1e-4,
                             opts: IntegratorOptions = None):
    """Bracket the critical current where the reset connects the manifolds.

    Requires w0 < 0 (the high-calcium configuration).  The classifier
    integrates from the reset point; the bisection separates REST from
    SPIKE outcomes.  Location is the reset point.
    """
    if not hp.w0 < 0:
        raise ValidationError("hybrid homoclinic detection requires w0 < 0")
    lo, hi = float(I_range[0]), float(I_range[1])
    if reset_point is None:
        reset_point = (hp.c_reset, hp.d_reset)
    reset_point = np.asarray(reset_point, dtype=float)
    if hybrid_rest_point(hp, lo) is None:
        raise DetectionError(f"no stable equilibrium at I={lo}")

    def spikes(I):
        return classify_reset_outcome(hp, I, reset_point, opts=opts) == "SPIKE"

    s_lo, s_hi = spikes(lo), spikes(hi)
    if s_lo == s_hi:
        return None
    b = _bisect(spikes, lo, hi, s_lo, s_hi, tol)
    lo_f, hi_f = b
    return BifurcationPoint(
        kind="hybrid-homoclinic",
        value=hi_f,
        bracket=(lo_f, hi_f),
        location=reset_point,
        diagnostics={
            "outcome_lo": "SPIKE" if s_lo else "REST",
            "outcome_hi": "SPIKE" if s_hi else "REST",
            "reset_point": reset_point,
        },
    )
