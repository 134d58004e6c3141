"""Affine normal-form transform at the transcritical point.

At the transversal self-intersection of the V-nullcline the voltage
rate expands as

    fV = alpha (V - V_tc)^2 + 2 beta (V - V_tc)(n - n_tc)
         + gamma (n - n_tc)^2 + cubic terms,

with alpha = fVV/2, beta = fVn/2, gamma = fnn/2.  The affine change

    v = alpha (V - V_tc) + beta (n - n_tc),
    w = sqrt(beta^2 - gamma alpha) (n - n_tc)

turns the quadratic part into exactly v^2 - w^2 (the identity
alpha fV_quad = v^2 - w^2 holds whenever the discriminant
beta^2 - gamma alpha is positive).  The recovery rate enters through
its value g0 < 0 at the point: with the rescaled small parameter
eps_scaled = -sqrt(disc) * eps * g0, the transformed system reads

    dv/dt = v^2 - w^2 + I_scaled + h1,   dw/dt = eps_scaled (-1 + h2),

with I_scaled = lambda eps_scaled + alpha q (I - I_tc), lambda =
-beta/sqrt(disc), q the (constant) current sensitivity of fV.  h1
collects cubic and eps-proportional remainders, h2 linear ones; the
residual report measures their orders empirically.

Second derivatives use central differences with one Richardson
extrapolation step; eps itself is a bookkeeping estimate (ratio of the
recovery rate scale to the voltage contraction rate near the point)
since the timescale ratio is a formal parameter of the analysis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .bifurcation import BifurcationPoint, detect_transcritical
from .errors import DetectionError, ValidationError
from .models import ModelParams, ReducedModel, alpha_n, beta_n

__all__ = [
    "NormalFormTransform",
    "compute_transform",
    "pushforward_field",
    "residual_report",
    "estimate_eps",
]


@dataclass
class NormalFormTransform:
    V_tc: float
    n_tc: float
    I_tc: float
    alpha: float
    beta: float
    gamma: float
    discriminant: float
    lam: float
    g0: float
    eps: float
    eps_scaled: float
    current_slope: float  # dfV/dI (constant by affinity)

    @property
    def sqrt_disc(self) -> float:
        return math.sqrt(self.discriminant)

    def linear_map(self) -> np.ndarray:
        """Matrix of the (V, n) -> (v, w) linear part."""
        return np.array([[self.alpha, self.beta],
                         [0.0, self.sqrt_disc]])

    def to_normal(self, V, n):
        dV = np.asarray(V, float) - self.V_tc
        dn = np.asarray(n, float) - self.n_tc
        return self.alpha * dV + self.beta * dn, self.sqrt_disc * dn

    def from_normal(self, v, w):
        dn = np.asarray(w, float) / self.sqrt_disc
        dV = (np.asarray(v, float) - self.beta * dn) / self.alpha
        return self.V_tc + dV, self.n_tc + dn

    def rescaled_current(self, I) -> float:
        return self.lam * self.eps_scaled + self.alpha * self.current_slope * (
            float(I) - self.I_tc)

    def to_dict(self) -> dict:
        return {
            "V_tc": self.V_tc,
            "n_tc": self.n_tc,
            "I_tc": self.I_tc,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "discriminant": self.discriminant,
            "lambda": self.lam,
            "g0": self.g0,
            "eps": self.eps,
            "eps_scaled": self.eps_scaled,
            "current_slope": self.current_slope,
            "linear_map": [[self.alpha, self.beta], [0.0, self.sqrt_disc]],
            "offset": [self.V_tc, self.n_tc],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _model_of(model_or_params):
    if isinstance(model_or_params, ModelParams):
        return ReducedModel(model_or_params)
    return model_or_params


def _second_derivs(model, x, base_step: float = 1e-3):
    """Richardson-extrapolated central second derivatives of fV at x."""
    V0, n0 = float(x[0]), float(x[1])

    def f(V, n, I=None):
        return float(model.fV(V, n) if I is None else model.fV(V, n, I=I))

    def d2(h_pair):
        hV, hn = h_pair
        f0 = f(V0, n0)
        fVV = (f(V0 + hV, n0) - 2 * f0 + f(V0 - hV, n0)) / hV**2
        fnn = (f(V0, n0 + hn) - 2 * f0 + f(V0, n0 - hn)) / hn**2
        fVn = (f(V0 + hV, n0 + hn) - f(V0 + hV, n0 - hn)
               - f(V0 - hV, n0 + hn) + f(V0 - hV, n0 - hn)) / (4 * hV * hn)
        return np.array([fVV, fVn, fnn])

    hV = base_step * (1.0 + abs(V0))
    hn = base_step * (1.0 + abs(n0))
    coarse = d2((hV, hn))
    fine = d2((hV / 2.0, hn / 2.0))
    # central differences are O(h^2): one Richardson step
    return (4.0 * fine - coarse) / 3.0


def estimate_eps(model, V_tc: float, n_tc: float, half_width: float = 10.0,
                 samples: int = 41) -> float:
    """Bookkeeping timescale ratio near the transcritical point.

    Ratio of the mean recovery rate scale (alpha_n + beta_n, scaled by
    the capacitance) to the mean voltage contraction rate |dfV/dV|,
    both averaged over the section V_tc +- half_width at n = n_tc.
    The pointwise ratio diverges where dfV/dV = 0, so averages are
    taken separately.
    """
    Vs = np.linspace(V_tc - half_width, V_tc + half_width, samples)
    C = getattr(getattr(model, "params", None), "C", 1.0)
    if hasattr(model, "params"):  # conductance model: use the gate rates
        gate = np.array([alpha_n(V) + beta_n(V) for V in Vs])
    else:
        gate = np.abs(np.asarray(model.g(Vs, np.full_like(Vs, n_tc)), float))
    h = 1e-4 * (1.0 + np.abs(Vs))
    dfdV = (np.asarray(model.fV(Vs + h, np.full_like(Vs, n_tc)), float)
            - np.asarray(model.fV(Vs - h, np.full_like(Vs, n_tc)), float)) / (2 * h)
    denom = float(np.mean(np.abs(dfdV)))
    if denom <= 0:
        raise DetectionError("voltage rate has no contraction scale on the section")
    return float(np.mean(gate)) * C / denom


def compute_transform(model_or_params, tc: BifurcationPoint = None,
                      eps: float = None) -> NormalFormTransform:
    """Build the normal-form transform at the transcritical point.

    ``tc`` defaults to a fresh detect_transcritical run.  Raises
    DetectionError when a hypothesis fails: nonpositive discriminant,
    vanishing alpha, or nonnegative g0.
    """
    model = _model_of(model_or_params)
    if tc is None:
        tc = detect_transcritical(model_or_params)
    V_tc, n_tc = float(tc.location[0]), float(tc.location[1])
    I_tc = float(tc.value)

    fVV, fVn, fnn = _second_derivs(model, (V_tc, n_tc))
    alpha = 0.5 * fVV
    beta = 0.5 * fVn
    gamma = 0.5 * fnn
    disc = beta * beta - gamma * alpha
    if disc <= 0:
        raise DetectionError(
            f"normal-form discriminant nonpositive ({disc:.3e}); "
            "the nullcline self-intersection is not transversal")
    if abs(alpha) < 1e-12:
        raise DetectionError("alpha = d2fV/dV2 / 2 vanishes at the point")

    if eps is None:
        eps = estimate_eps(model, V_tc, n_tc)
    ndot0 = float(model.g(V_tc, n_tc))
    g0 = ndot0 / eps
    if g0 >= 0:
        raise DetectionError(
            f"slow-field hypothesis violated: g0 = {g0:.3e} >= 0")

    sq = math.sqrt(disc)
    lam = -beta / sq
    eps_scaled = -sq * eps * g0  # positive by g0 < 0
    q = float(model.fV(V_tc, n_tc, I=1.0)) - float(model.fV(V_tc, n_tc, I=0.0))
    return NormalFormTransform(
        V_tc=V_tc, n_tc=n_tc, I_tc=I_tc,
        alpha=float(alpha), beta=float(beta), gamma=float(gamma),
        discriminant=float(disc), lam=float(lam), g0=float(g0),
        eps=float(eps), eps_scaled=float(eps_scaled), current_slope=float(q),
    )


def pushforward_field(model_or_params, xf: NormalFormTransform, point, I=None):
    """Field at a normal-form point, pushed through the affine map.

    Maps (v, w) back to (V, n), evaluates the planar field at current I
    (default I_tc), and returns (dv/dt, dw/dt) in normal-form
    coordinates.  Near the origin dv/dt = v^2 - w^2 + rescaled current
    up to the h1 remainder, and dw/dt = eps_scaled (-1 + h2).
    """
    model = _model_of(model_or_params)
    v, w = float(point[0]), float(point[1])
    V, n = xf.from_normal(v, w)
    I_eval = xf.I_tc if I is None else float(I)
    dV = float(model.fV(V, n, I=I_eval))
    dn = float(model.g(V, n))
    return np.array([xf.alpha * dV + xf.beta * dn, xf.sqrt_disc * dn])


def _ball_points(r: float, n_angles: int = 64, rings=(1.0, 0.75, 0.5, 0.25)):
    th = np.linspace(0.0, 2 * math.pi, n_angles, endpoint=False)
    pts = []
    for f in rings:
        pts.append(np.column_stack([r * f * np.cos(th), r * f * np.sin(th)]))
    return np.vstack(pts)


def residual_report(model_or_params, xf: NormalFormTransform,
                    radii=(0.2, 0.1, 0.05), I=None, n_angles: int = 64) -> dict:
    """Empirical orders of the h1 / h2 remainders on shrinking balls.

    For each radius, the v-residual |dv/dt - (v^2 - w^2 + I_scaled)| is
    maximized over the ball with the eps contribution subtracted (the
    recovery-rate term dropped and the current evaluated at its eps = 0
    value), giving the cubic part of h1; the fitted log-log slope of
    max residual versus radius should be about 3.  The w-residual
    |dw/dt / eps_scaled + 1| is normalized by (|v| + |w| + eps_scaled)
    and its maximum reported as the h2 linear-bound constant.
    """
    model = _model_of(model_or_params)
    I_eval = xf.I_tc if I is None else float(I)
    radii = sorted(radii, reverse=True)
    max_v0 = []
    max_v_full = []
    c_w = []
    for r in radii:
        pts = _ball_points(r, n_angles)
        V, n = xf.from_normal(pts[:, 0], pts[:, 1])
        dV = np.asarray(model.fV(V, n, I=I_eval), float)
        dn = np.asarray(model.g(V, n), float)
        v, w = pts[:, 0], pts[:, 1]
        quad = v * v - w * w
        # eps = 0 evaluation: recovery term dropped, current term pure-affine
        r_v0 = xf.alpha * dV - (quad + xf.alpha * xf.current_slope * (I_eval - xf.I_tc))
        r_v = (xf.alpha * dV + xf.beta * dn) - (quad + xf.rescaled_current(I_eval))
        r_w = (xf.sqrt_disc * dn) / xf.eps_scaled + 1.0
        max_v0.append(float(np.max(np.abs(r_v0))))
        max_v_full.append(float(np.max(np.abs(r_v))))
        c_w.append(float(np.max(np.abs(r_w) / (np.abs(v) + np.abs(w) + xf.eps_scaled))))
    lr = np.log(np.asarray(radii))
    lv = np.log(np.maximum(np.asarray(max_v0), 1e-300))
    slope = float(np.polyfit(lr, lv, 1)[0])
    return {
        "radii": list(radii),
        "max_residual_v_eps0": max_v0,
        "max_residual_v_full": max_v_full,
        "loglog_slope_v": slope,
        "h2_bound_constant": float(np.max(c_w)),
        "h2_bound_per_radius": c_w,
        "eps": xf.eps,
        "eps_scaled": xf.eps_scaled,
        "I": I_eval,
    }
