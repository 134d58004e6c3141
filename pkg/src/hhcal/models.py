"""Conductance-based neuron models and their hybrid reductions.

Five model variants share this module:

* the four-dimensional Hodgkin-Huxley model augmented with a
  non-inactivating calcium current and a constant pump current,
* its planar reduction to (V, n) via instantaneous sodium activation
  and the h = 0.89 - 1.1 n relation,
* the truncated quadratic field v' = v^2 - w^2 + I used as an analytic
  oracle for the planar geometry,
* the transcritical hybrid model (2 or 3 state variables) with a
  threshold/reset rule, and
* a fold hybrid comparator v' = v^2 - w + I with a caller-supplied
  reset rule.

Units for the conductance-based models: mV, ms, uA/cm^2, mS/cm^2,
uF/cm^2.  Voltage follows the shifted 1952 convention (rest near V = 0,
depolarization positive), matching Nernst values V_K = -12, V_Na = 120,
V_L = 10.6.

Scalar rate functions use ``math`` for speed inside integrator loops;
``*_arr`` variants accept numpy arrays for grid evaluation.  Both are
held consistent by tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

__all__ = [
    "ModelParams",
    "HybridParams",
    "hh_rates",
    "m_inf",
    "n_inf",
    "full_rhs",
    "reduced_rhs",
    "ionic_current_profile",
    "hybrid_rhs",
    "hybrid_reset",
    "fold_hybrid_rhs",
    "FullModel",
    "ReducedModel",
    "TruncatedNormalForm",
    "HybridModel",
    "FoldHybridModel",
    "PRESETS",
    "preset",
    "params_to_json",
    "params_from_json",
]

# Series switch for the removable singularities of alpha_n / alpha_m.
_SERIES_CUTOFF = 1e-4


def _phi(u: float) -> float:
    """u / (exp(u) - 1) with a 4-term series across the u = 0 singularity."""
    if abs(u) < _SERIES_CUTOFF:
        return 1.0 - u / 2.0 + u * u / 12.0 - u**4 / 720.0
    if u > 700.0:  # expm1 overflow; ratio underflows to 0
        return 0.0
    return u / math.expm1(u)


def _phi_arr(u):
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < _SERIES_CUTOFF
    safe = np.clip(np.where(small, 1.0, u), None, 700.0)
    out = np.where(small,
                   1.0 - u / 2.0 + u * u / 12.0 - u**4 / 720.0,
                   safe / np.expm1(safe))
    return np.where(u > 700.0, 0.0, out)


def _exp(x: float) -> float:
    # exp with the argument capped so stray root-finder trial points at
    # absurd voltages cannot raise OverflowError
    return math.exp(min(x, 700.0))


def alpha_n(V: float) -> float:
    return 0.1 * _phi((10.0 - V) / 10.0)


def beta_n(V: float) -> float:
    return 0.125 * _exp(-V / 80.0)


def alpha_m(V: float) -> float:
    return _phi((25.0 - V) / 10.0)


def beta_m(V: float) -> float:
    return 4.0 * _exp(-V / 18.0)


def alpha_h(V: float) -> float:
    return 0.07 * _exp(-V / 20.0)


def beta_h(V: float) -> float:
    return 1.0 / (_exp((30.0 - V) / 10.0) + 1.0)


def alpha_n_arr(V):
    return 0.1 * _phi_arr((10.0 - np.asarray(V, float)) / 10.0)


def beta_n_arr(V):
    return 0.125 * np.exp(-np.asarray(V, float) / 80.0)


def alpha_m_arr(V):
    return _phi_arr((25.0 - np.asarray(V, float)) / 10.0)


def beta_m_arr(V):
    return 4.0 * np.exp(-np.asarray(V, float) / 18.0)


def hh_rates(V: float):
    """All six gating rates (alpha_n, beta_n, alpha_m, beta_m, alpha_h, beta_h) at V.

    Rates are in 1/ms and nonnegative for finite V; the removable
    singularities at V = 10 (alpha_n) and V = 25 (alpha_m) evaluate to
    their limits.
    """
    return (alpha_n(V), beta_n(V), alpha_m(V), beta_m(V),
            alpha_h(V), beta_h(V))


def m_inf(V: float) -> float:
    """Steady-state sodium activation alpha_m / (alpha_m + beta_m)."""
    a = alpha_m(V)
    return a / (a + beta_m(V))


def n_inf(V: float) -> float:
    """Steady-state potassium activation alpha_n / (alpha_n + beta_n)."""
    a = alpha_n(V)
    return a / (a + beta_n(V))


def m_inf_arr(V):
    a = alpha_m_arr(V)
    return a / (a + beta_m_arr(V))


def n_inf_arr(V):
    a = alpha_n_arr(V)
    return a / (a + beta_n_arr(V))


# Derivatives of the rate functions, used by the analytic Jacobian.

def _dphi(u: float) -> float:
    if abs(u) < _SERIES_CUTOFF:
        return -0.5 + u / 6.0 - u**3 / 180.0
    if u > 700.0:
        return 0.0
    e = math.expm1(u)
    return (e - u * (e + 1.0)) / (e * e)


def d_alpha_n(V: float) -> float:
    return 0.1 * _dphi((10.0 - V) / 10.0) * (-0.1)


def d_beta_n(V: float) -> float:
    return -0.125 / 80.0 * _exp(-V / 80.0)


def d_alpha_m(V: float) -> float:
    return _dphi((25.0 - V) / 10.0) * (-0.1)


def d_beta_m(V: float) -> float:
    return -4.0 / 18.0 * _exp(-V / 18.0)


def d_m_inf(V: float) -> float:
    a, b = alpha_m(V), beta_m(V)
    da, db = d_alpha_m(V), d_beta_m(V)
    s = a + b
    return (da * b - a * db) / (s * s)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the conductance-based models.

    C in uF/cm^2, conductances in mS/cm^2, potentials in mV, currents in
    uA/cm^2.  ``ca_exponent`` is the activation power of the calcium
    current (gated by n).
    """

    C: float = 1.0
    g_Na: float = 120.0
    g_K: float = 36.0
    g_L: float = 0.3
    g_Ca: float = 0.0
    V_Na: float = 120.0
    V_K: float = -12.0
    V_L: float = 10.6
    V_Ca: float = 150.0
    I_pump: float = 0.0
    I_app: float = 0.0
    ca_exponent: int = 3

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        for name in ("g_Na", "g_K", "g_L", "g_Ca"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not (isinstance(self.ca_exponent, int) and self.ca_exponent >= 1):
            raise ValueError("ca_exponent must be an integer >= 1")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class HybridParams:
    """Parameters of the hybrid (threshold/reset) models.

    ``eps_z`` and ``d_z`` drive the slow adaptation variable and are
    used only by the 3-variable variant.
    """

    a: float = 0.1
    b: float = -3.0
    eps: float = 1.0
    w0: float = 0.0
    c_reset: float = 15.0
    d_reset: float = 15.0
    v_th: float = 100.0
    I: float = 0.0
    eps_z: float = 0.0
    d_z: float = 0.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.v_th > self.c_reset:
            raise ValueError("v_th must exceed c_reset")
        if self.eps_z < 0 or self.d_z < 0:
            raise ValueError("eps_z and d_z must be nonnegative")

    def with_(self, **changes) -> "HybridParams":
        return replace(self, **changes)


def full_rhs(s, p: ModelParams, i_ext: float = 0.0) -> np.ndarray:
    """Time derivative of the full (V, n, m, h) state.

    ``i_ext`` is an additional applied current on top of ``p.I_app``
    (used by stimulus protocols).
    """
    V, n, m, h = float(s[0]), float(s[1]), float(s[2]), float(s[3])
    i_k = p.g_K * n**4 * (V - p.V_K)
    i_na = p.g_Na * m**3 * h * (V - p.V_Na)
    i_l = p.g_L * (V - p.V_L)
    i_ca = p.g_Ca * n**p.ca_exponent * (V - p.V_Ca)
    dV = (-i_k - i_na - i_l + p.I_app + i_ext - i_ca + p.I_pump) / p.C
    dn = alpha_n(V) * (1.0 - n) - beta_n(V) * n
    dm = alpha_m(V) * (1.0 - m) - beta_m(V) * m
    dh = alpha_h(V) * (1.0 - h) - beta_h(V) * h
    return np.array([dV, dn, dm, dh])


def _reduced_v_rate(V: float, n: float, p: ModelParams, i_ext: float) -> float:
    i_k = p.g_K * n**4 * (V - p.V_K)
    i_na = p.g_Na * m_inf(V) ** 3 * (0.89 - 1.1 * n) * (V - p.V_Na)
    i_l = p.g_L * (V - p.V_L)
    i_ca = p.g_Ca * n**p.ca_exponent * (V - p.V_Ca)
    return (-i_k - i_na - i_l + p.I_app + i_ext - i_ca + p.I_pump) / p.C


def reduced_rhs(s, p: ModelParams, i_ext: float = 0.0,
                clamp_n: bool = False) -> np.ndarray:
    """Time derivative of the planar (V, n) state.

    Sodium activation is instantaneous (m = m_inf(V)) and inactivation
    follows h = 0.89 - 1.1 n.  With ``clamp_n`` the n value used in the
    field evaluation is clamped to [0, 1]; the vector field already
    repels the boundary, so this is off by default.
    """
    V, n = float(s[0]), float(s[1])
    if clamp_n:
        n = min(max(n, 0.0), 1.0)
    dV = _reduced_v_rate(V, n, p, i_ext)
    dn = alpha_n(V) * (1.0 - n) - beta_n(V) * n
    return np.array([dV, dn])


def reduced_v_rate_arr(V, n, p: ModelParams, i_ext: float = 0.0):
    """Vectorized dV/dt of the planar model over arrays V, n."""
    V = np.asarray(V, float)
    n = np.asarray(n, float)
    i_k = p.g_K * n**4 * (V - p.V_K)
    i_na = p.g_Na * m_inf_arr(V) ** 3 * (0.89 - 1.1 * n) * (V - p.V_Na)
    i_l = p.g_L * (V - p.V_L)
    i_ca = p.g_Ca * n**p.ca_exponent * (V - p.V_Ca)
    return (-i_k - i_na - i_l + p.I_app + i_ext - i_ca + p.I_pump) / p.C


def reduced_n_rate_arr(V, n):
    V = np.asarray(V, float)
    n = np.asarray(n, float)
    return alpha_n_arr(V) * (1.0 - n) - beta_n_arr(V) * n


def ionic_current_profile(V: float, n_grid, p: ModelParams) -> np.ndarray:
    """Total ionic current (pump included, I_app excluded) at fixed V over n_grid.

    Returns -C*dV/dt with the applied current removed, i.e. the summed
    ionic currents the membrane must overcome at each n.
    """
    n_grid = np.asarray(n_grid, dtype=float)
    if n_grid.size == 0:
        raise ValueError("n_grid must not be empty")
    dv = reduced_v_rate_arr(V, n_grid, p)
    return -(p.C * dv - p.I_app)


def hybrid_rhs(s, p: HybridParams, i_ext: float = 0.0) -> np.ndarray:
    """Continuous dynamics of the transcritical hybrid model.

    2-state input: (v, w) with v' = v^2 - w^2 + I.  3-state input:
    (v, w, z) with v' = v^2 + b v w - w^2 + I - z and z' = -eps_z z.
    """
    v, w = float(s[0]), float(s[1])
    i_tot = p.I + i_ext
    dw = p.eps * (p.a * v - w + p.w0)
    if len(s) == 2:
        return np.array([v * v - w * w + i_tot, dw])
    z = float(s[2])
    dv = v * v + p.b * v * w - w * w + i_tot - z
    return np.array([dv, dw, -p.eps_z * z])


def hybrid_reset(s, p: HybridParams) -> np.ndarray:
    """Post-spike reset: v <- c, w <- d (and z <- z + d_z for 3 states).

    Raises ValueError when called below threshold; the post-reset state
    never satisfies the reset guard again.
    """
    if float(s[0]) < p.v_th:
        raise ValueError(
            f"reset applied below threshold (v={float(s[0]):g} < v_th={p.v_th:g})")
    out = np.array(s, dtype=float)
    out[0] = p.c_reset
    out[1] = p.d_reset
    if out.shape[0] >= 3:
        out[2] = float(s[2]) + p.d_z
    return out


def fold_hybrid_rhs(s, p: HybridParams, i_ext: float = 0.0) -> np.ndarray:
    """Continuous dynamics of the fold comparator.

    2-state: v' = v^2 - w + I.  3-state adds -z to v' and z' = -eps_z z,
    mirroring the transcritical variant for like-for-like comparisons.
    """
    v, w = float(s[0]), float(s[1])
    i_tot = p.I + i_ext
    dw = p.eps * (p.a * v - w + p.w0)
    if len(s) == 2:
        return np.array([v * v - w + i_tot, dw])
    z = float(s[2])
    return np.array([v * v - w + i_tot - z, dw, -p.eps_z * z])


class FullModel:
    """Four-dimensional HH + calcium model bound to a parameter set."""

    state_names = ("V", "n", "m", "h")

    def __init__(self, params: ModelParams):
        self.params = params

    def rhs(self, t, y, i_ext: float = 0.0) -> np.ndarray:
        return full_rhs(y, self.params, i_ext)

    def rest_guess(self) -> np.ndarray:
        V0 = 0.0
        a = alpha_h(V0)
        h0 = a / (a + beta_h(V0))
        return np.array([V0, n_inf(V0), m_inf(V0), h0])


class ReducedModel:
    """Planar (V, n) reduction bound to a parameter set."""

    state_names = ("V", "n")

    def __init__(self, params: ModelParams, clamp_n: bool = False):
        self.params = params
        self.clamp_n = clamp_n

    def rhs(self, t, y, i_ext: float = 0.0) -> np.ndarray:
        return reduced_rhs(y, self.params, i_ext, clamp_n=self.clamp_n)

    def field(self, y, i_ext: float = 0.0) -> np.ndarray:
        return reduced_rhs(y, self.params, i_ext, clamp_n=self.clamp_n)

    # Planar-field surface used by phase-plane and bifurcation analysis.
    def fV(self, V, n, I=None):
        i_ext = 0.0 if I is None else I - self.params.I_app
        return reduced_v_rate_arr(V, n, self.params, i_ext)

    def g(self, V, n):
        return reduced_n_rate_arr(V, n)

    def n_nullcline(self, V):
        return n_inf_arr(V)

    def analytic_jacobian(self, y, i_ext: float = 0.0) -> np.ndarray:
        p = self.params
        V, n = float(y[0]), float(y[1])
        mi = m_inf(V)
        dmi = d_m_inf(V)
        dfdV = (-p.g_K * n**4
                - p.g_Na * (0.89 - 1.1 * n)
                * (3.0 * mi * mi * dmi * (V - p.V_Na) + mi**3)
                - p.g_L - p.g_Ca * n**p.ca_exponent) / p.C
        a_ca = p.ca_exponent
        dfdn = (-4.0 * p.g_K * n**3 * (V - p.V_K)
                + 1.1 * p.g_Na * mi**3 * (V - p.V_Na)
                - a_ca * p.g_Ca * n ** (a_ca - 1) * (V - p.V_Ca)) / p.C
        dgdV = d_alpha_n(V) * (1.0 - n) - d_beta_n(V) * n
        dgdn = -(alpha_n(V) + beta_n(V))
        return np.array([[dfdV, dfdn], [dgdV, dgdn]])


class TruncatedNormalForm:
    """Analytic oracle field v' = v^2 - w^2 + I, w' = eps*(slope*v - w + w0).

    With ``w_dynamics="constant"`` the second equation is w' = eps*rate
    (used by the no-equilibria example).
    """

    state_names = ("v", "w")

    def __init__(self, I: float = 0.0, eps: float = 1.0, slope: float = 0.0,
                 w0: float = 0.0, w_dynamics: str = "linear", rate: float = -1.0):
        self.I = I
        self.eps = eps
        self.slope = slope
        self.w0 = w0
        self.w_dynamics = w_dynamics
        self.rate = rate

    def rhs(self, t, y, i_ext: float = 0.0) -> np.ndarray:
        v, w = float(y[0]), float(y[1])
        if self.w_dynamics == "constant":
            dw = self.eps * self.rate
        else:
            dw = self.eps * (self.slope * v - w + self.w0)
        return np.array([v * v - w * w + self.I + i_ext, dw])

    def field(self, y, i_ext: float = 0.0) -> np.ndarray:
        return self.rhs(0.0, y, i_ext)

    def fV(self, V, n, I=None):
        i_tot = self.I if I is None else I
        V = np.asarray(V, float)
        n = np.asarray(n, float)
        return V * V - n * n + i_tot

    def g(self, V, n):
        V = np.asarray(V, float)
        n = np.asarray(n, float)
        if self.w_dynamics == "constant":
            return np.broadcast_to(np.asarray(self.eps * self.rate), V.shape).copy()
        return self.eps * (self.slope * V - n + self.w0)

    n_nullcline = None


class HybridModel:
    """Transcritical hybrid model (2 or 3 state variables) with reset."""

    def __init__(self, params: HybridParams, dims: int = 2):
        if dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        self.params = params
        self.dims = dims

    @property
    def state_names(self):
        return ("v", "w") if self.dims == 2 else ("v", "w", "z")

    def rhs(self, t, y, i_ext: float = 0.0) -> np.ndarray:
        return hybrid_rhs(y, self.params, i_ext)

    def guard(self, y) -> float:
        return float(y[0]) - self.params.v_th

    def reset(self, y) -> np.ndarray:
        return hybrid_reset(y, self.params)

    def rest_guess(self) -> np.ndarray:
        v0 = self.params.c_reset - 30.0
        w0 = self.params.a * v0 + self.params.w0
        if self.dims == 2:
            return np.array([v0, w0])
        return np.array([v0, w0, 0.0])

    # Planar-field surface (2-variable variant, or fixed z for the 3-variable).
    def fV(self, V, n, I=None, z: float = 0.0):
        p = self.params
        i_tot = p.I if I is None else I
        V = np.asarray(V, float)
        n = np.asarray(n, float)
        b = p.b if self.dims == 3 else 0.0
        return V * V + b * V * n - n * n + i_tot - z

    def g(self, V, n):
        p = self.params
        V = np.asarray(V, float)
        n = np.asarray(n, float)
        return p.eps * (p.a * V - n + p.w0)

    def n_nullcline(self, V):
        p = self.params
        return p.a * np.asarray(V, float) + p.w0


class FoldHybridModel:
    """Fold comparator with a caller-supplied reset rule.

    ``reset_rule`` maps the pre-reset state to the post-reset state; the
    default applies the state-independent (c_reset, d_reset) rule with
    the z increment of the 3-variable variant.
    """

    def __init__(self, params: HybridParams, dims: int = 2, reset_rule=None):
        if dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        self.params = params
        self.dims = dims
        self._reset_rule = reset_rule

    @property
    def state_names(self):
        return ("v", "w") if self.dims == 2 else ("v", "w", "z")

    def rhs(self, t, y, i_ext: float = 0.0) -> np.ndarray:
        return fold_hybrid_rhs(y, self.params, i_ext)

    def guard(self, y) -> float:
        return float(y[0]) - self.params.v_th

    def reset(self, y) -> np.ndarray:
        if self._reset_rule is not None:
            return np.asarray(self._reset_rule(np.array(y, dtype=float)), dtype=float)
        return hybrid_reset(y, self.params)

    def fV(self, V, n, I=None, z: float = 0.0):
        p = self.params
        i_tot = p.I if I is None else I
        V = np.asarray(V, float)
        n = np.asarray(n, float)
        return V * V - n + i_tot - z

    def g(self, V, n):
        p = self.params
        V = np.asarray(V, float)
        n = np.asarray(n, float)
        return p.eps * (p.a * V - n + p.w0)

    def n_nullcline(self, V):
        p = self.params
        return p.a * np.asarray(V, float) + p.w0


# Named parameter presets.  The hh-* presets are the two Fig-style modes
# of the conductance model; the tc-* presets are the thalamocortical
# hybrid modes (low/high calcium conductance).
PRESETS = {
    "hh-classic": ("reduced", ModelParams(g_Ca=0.0, I_pump=0.0)),
    "hh-calcium": ("reduced", ModelParams(g_Ca=2.7, I_pump=-17.0)),
    "tc-low-ca": ("hybrid3", HybridParams(a=0.1, b=-3.0, eps=1.0, w0=3.2,
                                          c_reset=15.0, d_reset=15.0,
                                          v_th=100.0, I=0.0,
                                          eps_z=0.1, d_z=40.0)),
    "tc-high-ca": ("hybrid3", HybridParams(a=0.1, b=-3.0, eps=1.0, w0=-4.0,
                                           c_reset=15.0, d_reset=15.0,
                                           v_th=100.0, I=0.0,
                                           eps_z=0.1, d_z=40.0)),
}


def preset(name: str):
    """Return (kind, params) for a named preset; kind is 'reduced' or 'hybrid3'."""
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None


def params_to_json(p) -> str:
    """Serialize a parameter set to a JSON object with exact field names."""
    return json.dumps(asdict(p), sort_keys=True)


def params_from_json(text: str, kind: str = "model"):
    """Parse a parameter set from JSON; unknown fields are rejected.

    ``kind`` selects the target type: 'model' for ModelParams, 'hybrid'
    for HybridParams.
    """
    data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError("parameter JSON must be an object")
    cls = ModelParams if kind == "model" else HybridParams
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown parameter fields: {sorted(unknown)}")
    if "ca_exponent" in data:
        data["ca_exponent"] = int(data["ca_exponent"])
    return cls(**data)
