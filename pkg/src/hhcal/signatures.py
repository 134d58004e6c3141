"""Spike-train signature analysis: latency, plateau oscillations, ADP.

All analyses are pure functions of a trajectory, a stimulus protocol,
and a threshold set; the thresholds used are logged in every report.
For hybrid trajectories the reset events are the spikes; continuous
traces use level crossings confirmed by a nearby local maximum.

The after-depolarization detector looks for a dip-then-rebound after
the last spike: the first local minimum following the downstroke and
the first local maximum after it.  The apex counts as an ADP when it
stands above the settled voltage by the ADP threshold.  Damped
subthreshold ringing (the classic post-burst signature) instead sets
the ``subthreshold_oscillations`` flag: small-amplitude rate sign
changes inside the settle window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .integrate import StimulusProtocol, Trajectory, integrate, integrate_hybrid

__all__ = [
    "SignatureThresholds",
    "SignatureReport",
    "detect_spikes",
    "measure_latency",
    "detect_plateau",
    "detect_adp",
    "subthreshold_oscillations",
    "analyze",
    "robustness_run",
]


@dataclass(frozen=True)
class SignatureThresholds:
    """Detection levels; defaults suit mV-scale conductance-model traces."""

    spike_level: float = 20.0
    theta_plateau: float = 10.0
    theta_adp: float = 1.0
    settle_window: float = 50.0
    refractory_skip: float = 3.0
    spike_max_window: float = 5.0

    def __post_init__(self):
        for name in ("theta_plateau", "theta_adp", "settle_window",
                     "refractory_skip", "spike_max_window"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")

    @classmethod
    def hh_defaults(cls) -> "SignatureThresholds":
        return cls()

    @classmethod
    def hybrid_defaults(cls, v_th: float = 100.0) -> "SignatureThresholds":
        # hybrid spikes come from reset events; the level only backs up
        # event-free traces
        return cls(spike_level=v_th, theta_plateau=5.0, theta_adp=1.0,
                   settle_window=20.0, refractory_skip=1.0, spike_max_window=5.0)

    def with_(self, **changes) -> "SignatureThresholds":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "spike_level": self.spike_level,
            "theta_plateau": self.theta_plateau,
            "theta_adp": self.theta_adp,
            "settle_window": self.settle_window,
            "refractory_skip": self.refractory_skip,
            "spike_max_window": self.spike_max_window,
        }


@dataclass
class SignatureReport:
    spike_times: np.ndarray
    latency: float  # None when no spike during the step
    plateau: dict
    adp: dict
    subthreshold_oscillations: bool
    thresholds: SignatureThresholds
    extra_spike_count: int = None

    def to_dict(self) -> dict:
        return {
            "spike_times": [float(t) for t in self.spike_times],
            "latency": None if self.latency is None else float(self.latency),
            "plateau": self.plateau,
            "adp": self.adp,
            "subthreshold_oscillations": bool(self.subthreshold_oscillations),
            "thresholds": self.thresholds.to_dict(),
            "extra_spike_count": self.extra_spike_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def detect_spikes(traj: Trajectory, thresholds: SignatureThresholds = None) -> np.ndarray:
    """Spike times: reset events for hybrid runs, level crossings otherwise.

    A continuous-trace crossing counts only when a local maximum occurs
    within ``spike_max_window`` after it.
    """
    if len(traj) < 2:
        raise ValidationError("trajectory must have at least 2 samples")
    if traj.events:
        return np.array([e.time for e in traj.events])
    th = thresholds or SignatureThresholds()
    t = traj.times
    V = traj.states[:, 0]
    lev = th.spike_level
    idx = np.where((V[:-1] < lev) & (V[1:] >= lev))[0]
    out = []
    for i in idx:
        frac = (lev - V[i]) / (V[i + 1] - V[i])
        t_c = t[i] + frac * (t[i + 1] - t[i])
        window = (t > t_c) & (t <= t_c + th.spike_max_window)
        ks = np.where(window)[0]
        has_max = any(0 < k < len(V) - 1 and V[k - 1] <= V[k] >= V[k + 1]
                      for k in ks)
        if has_max or (len(ks) and ks[-1] == len(V) - 1 and V[-1] >= lev):
            out.append(t_c)
    return np.array(out)


def measure_latency(traj: Trajectory, protocol: StimulusProtocol,
                    thresholds: SignatureThresholds = None):
    """Delay from step onset to the first spike inside the step, or None."""
    spikes = detect_spikes(traj, thresholds)
    during = spikes[(spikes >= protocol.t_on) & (spikes < protocol.t_off)]
    if during.size == 0:
        return None
    return float(during[0] - protocol.t_on)


def _interval_minima(t, V, spikes):
    """Minimum V strictly inside each inter-spike interval."""
    minima = []
    for a, b in zip(spikes[:-1], spikes[1:]):
        mask = (t > a) & (t < b)
        if mask.any():
            minima.append(float(V[mask].min()))
    return minima


def detect_plateau(traj: Trajectory, protocol: StimulusProtocol,
                   thresholds: SignatureThresholds = None) -> dict:
    """Elevation of the inter-spike troughs over the pre-step rest voltage.

    The trough statistic is the median of per-interval minima (the
    first and last intervals are dropped when at least three exist), so
    burst trains measure their oscillation floor rather than the
    settles between bursts.  Present when margin = trough - rest
    exceeds theta_plateau.
    """
    th = thresholds or SignatureThresholds()
    t = traj.times
    V = traj.states[:, 0]
    pre = (t >= protocol.t_on - th.settle_window) & (t < protocol.t_on)
    if not pre.any():
        raise ValidationError("trajectory does not cover the pre-step window")
    rest = float(V[pre].mean())
    spikes = detect_spikes(traj, th)
    during = spikes[(spikes >= protocol.t_on) & (spikes < protocol.t_off)]
    if during.size < 2:
        return {"present": False, "trough_voltage": None, "rest_voltage": rest,
                "margin": None, "reason": "fewer than 2 spikes during the step"}
    minima = _interval_minima(t, V, during)
    if len(minima) >= 3:
        minima = minima[1:-1]
    if not minima:
        return {"present": False, "trough_voltage": None, "rest_voltage": rest,
                "margin": None, "reason": "no samples between spikes"}
    trough = float(np.median(minima))
    margin = trough - rest
    return {"present": bool(margin > th.theta_plateau),
            "trough_voltage": trough, "rest_voltage": rest, "margin": margin}


def _local_extrema(t, V, lo_t, hi_t):
    """(minima, maxima) sample indices strictly inside [lo_t, hi_t]."""
    sel = np.where((t >= lo_t) & (t <= hi_t))[0]
    mins, maxs = [], []
    for k in sel:
        if k == 0 or k == len(V) - 1:
            continue
        if V[k - 1] > V[k] <= V[k + 1] or V[k - 1] >= V[k] < V[k + 1]:
            mins.append(k)
        if V[k - 1] < V[k] >= V[k + 1] or V[k - 1] <= V[k] > V[k + 1]:
            maxs.append(k)
    return mins, maxs


def detect_adp(traj: Trajectory, protocol: StimulusProtocol = None,
               thresholds: SignatureThresholds = None) -> dict:
    """Dip-then-rebound after the last spike, compared to the settled voltage.

    Requires the trace to extend at least a settle window past the last
    spike.  The apex is the first local maximum after the first local
    minimum following the downstroke; present when apex - settle >
    theta_adp.
    """
    th = thresholds or SignatureThresholds()
    t = traj.times
    V = traj.states[:, 0]
    spikes = detect_spikes(traj, th)
    if spikes.size == 0:
        return {"present": False, "apex_voltage": None, "apex_time": None,
                "settle_voltage": None, "reason": "no spikes"}
    last = float(spikes[-1])
    if t[-1] - last < th.settle_window:
        raise ValidationError(
            "trace too short: needs a settle window beyond the last spike")
    settle_mask = t >= t[-1] - th.settle_window
    settle = float(V[settle_mask].mean())
    # The dip may follow the downstroke arbitrarily fast, so it is
    # searched from the spike time; sub-level voltage excludes the
    # spike's own peak.  The refractory skip gates the apex instead.
    mins, maxs = _local_extrema(t, V, last, t[-1])
    if protocol is not None:
        # a drive switch kinks the trace; extrema sitting on a protocol
        # breakpoint are artifacts of the switching, not rebounds
        bps = protocol.breakpoints()

        def at_breakpoint(k):
            dt = t[min(k + 1, len(t) - 1)] - t[max(k - 1, 0)]
            return any(abs(t[k] - b) <= dt for b in bps)

        mins = [k for k in mins if not at_breakpoint(k)]
        maxs = [k for k in maxs if not at_breakpoint(k)]
    mins = [k for k in mins if V[k] < th.spike_level]
    if not mins:
        return {"present": False, "apex_voltage": None, "apex_time": None,
                "settle_voltage": settle, "reason": "no post-spike dip"}
    k_dip = mins[0]
    after = [k for k in maxs
             if k > k_dip and V[k] < th.spike_level
             and t[k] >= last + th.refractory_skip]
    if not after:
        return {"present": False, "apex_voltage": None, "apex_time": None,
                "settle_voltage": settle, "dip_voltage": float(V[k_dip]),
                "reason": "no rebound after the dip"}
    k_apex = after[0]
    apex = float(V[k_apex])
    return {"present": bool(apex - settle > th.theta_adp),
            "apex_voltage": apex, "apex_time": float(t[k_apex]),
            "settle_voltage": settle, "dip_voltage": float(V[k_dip])}


def subthreshold_oscillations(traj: Trajectory,
                              thresholds: SignatureThresholds = None) -> bool:
    """Damped ringing flag: >= 2 rate sign changes in the settle window with
    small peak-to-peak amplitude."""
    th = thresholds or SignatureThresholds()
    t = traj.times
    V = traj.states[:, 0]
    mask = t >= t[-1] - th.settle_window
    Vw = V[mask]
    if Vw.size < 4:
        return False
    dv = np.diff(Vw)
    dv = dv[dv != 0.0]
    if dv.size < 2:
        return False
    changes = int(np.sum(np.sign(dv[1:]) != np.sign(dv[:-1])))
    p2p = float(Vw.max() - Vw.min())
    return changes >= 2 and p2p < th.theta_plateau


def analyze(traj: Trajectory, protocol: StimulusProtocol,
            thresholds: SignatureThresholds = None) -> SignatureReport:
    """Full signature report for one trajectory."""
    th = thresholds or SignatureThresholds()
    return SignatureReport(
        spike_times=detect_spikes(traj, th),
        latency=measure_latency(traj, protocol, th),
        plateau=detect_plateau(traj, protocol, th),
        adp=detect_adp(traj, protocol, th),
        subthreshold_oscillations=subthreshold_oscillations(traj, th),
        thresholds=th,
    )


def adp_pulse_threshold(model, s0, t_span=(0.0, 120.0), baseline: float = 0.0,
                        pulse_width: float = 0.5, amp_max: float = 10.0,
                        resolution: float = 1e-3, apex_time: float = None,
                        opts=None) -> dict:
    """Minimum pulse amplitude at the ADP apex that triggers an extra spike.

    Runs the nominal relaxation from ``s0``, locates the apex (the
    voltage maximum of the ride, excluding the start), then bisects the
    amplitude of a single pulse centered there until the spike outcome
    flips.  Works on 2-variable hybrid models via a threshold watcher
    (no reset applied; one crossing is the extra spike).
    """
    from .integrate import IntegratorOptions, Watcher, integrate

    opts = opts or IntegratorOptions(rtol=1e-8, atol=1e-10, max_step=0.1)
    v_th = model.params.v_th
    spike_w = [Watcher(guard=lambda t, y: y[0] - v_th, direction=1,
                       action="stop", name="spike")]

    def run(pulses):
        proto = StimulusProtocol(baseline=baseline, pulses=pulses)
        return integrate(model, s0, t_span, protocol=proto,
                         watchers=spike_w, opts=opts)

    nominal = run(())
    if nominal.termination == "spike":
        raise ValidationError("nominal run spikes; not a relaxation scenario")
    if apex_time is None:
        t, v = nominal.times, nominal.states[:, 0]
        mask = t > t[0]
        k = int(np.argmax(v[mask]))
        apex_time = float(t[mask][k])
        apex_v = float(v[mask][k])
    else:
        apex_v = float(nominal.sample([apex_time])[0, 0])

    def spikes(A):
        tr = run(((apex_time - pulse_width / 2.0, A, pulse_width),))
        return tr.termination == "spike"

    if not spikes(amp_max):
        return {"apex_time": apex_time, "apex_voltage": apex_v,
                "threshold_amplitude": None, "amp_max": amp_max,
                "pulse_width": pulse_width}
    lo, hi = 0.0, amp_max
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if spikes(mid):
            hi = mid
        else:
            lo = mid
    return {"apex_time": apex_time, "apex_voltage": apex_v,
            "threshold_amplitude": hi, "amp_max": amp_max,
            "pulse_width": pulse_width}


def compare_adp_robustness(eps: float = 0.1, a: float = 0.1, I: float = 0.3,
                           v_th: float = 100.0, tc_w0: float = -4.0,
                           fold_w0: float = 5.0, tc_start=(0.0, 8.0),
                           fold_start=(0.5, 0.3), pulse_width: float = 0.5,
                           resolution: float = 1e-3) -> dict:
    """Pulse-robustness of the ADP: transcritical model versus fold comparator.

    Both models run at the same timescale ratio, recovery gain, drive,
    threshold, and pulse width, each relaxing through its own ADP: the
    transcritical ride follows the attracting branch through the
    nullcline funnel, the fold ride slides under its parabolic
    nullcline near the saddle's stable manifold.  Reported amplitudes
    are configuration artifacts; the meaningful output is their strict
    ordering.
    """
    from .models import FoldHybridModel, HybridModel, HybridParams

    hp_tc = HybridParams(a=a, b=0.0, eps=eps, w0=tc_w0, c_reset=15.0,
                         d_reset=15.0, v_th=v_th, I=I)
    hp_f = HybridParams(a=a, b=0.0, eps=eps, w0=fold_w0, c_reset=15.0,
                        d_reset=15.0, v_th=v_th, I=I)
    tc = adp_pulse_threshold(HybridModel(hp_tc, dims=2), np.asarray(tc_start, float),
                             pulse_width=pulse_width, resolution=resolution)
    fold = adp_pulse_threshold(FoldHybridModel(hp_f, dims=2), np.asarray(fold_start, float),
                               pulse_width=pulse_width, resolution=resolution)
    out = {"transcritical": tc, "fold": fold}
    if tc["threshold_amplitude"] is not None and fold["threshold_amplitude"] is not None:
        out["fold_less_robust"] = bool(
            fold["threshold_amplitude"] < tc["threshold_amplitude"])
    else:
        out["fold_less_robust"] = None
    return out


def robustness_run(model, s0, t_span, protocol: StimulusProtocol,
                   opts=None, thresholds: SignatureThresholds = None,
                   hybrid: bool = None) -> SignatureReport:
    """Pulsed run versus its pulse-free nominal; reports the extra spikes.

    The nominal run strips the pulse train from the protocol; the
    report is for the pulsed trajectory with ``extra_spike_count`` =
    pulsed spikes - nominal spikes.
    """
    if hybrid is None:
        hybrid = hasattr(model, "reset")
    runner = integrate_hybrid if hybrid else integrate
    nominal_proto = StimulusProtocol(baseline=protocol.baseline,
                                     step=protocol.step, t_on=protocol.t_on,
                                     t_off=protocol.t_off, pulses=())
    nominal = runner(model, s0, t_span, protocol=nominal_proto, opts=opts)
    pulsed = runner(model, s0, t_span, protocol=protocol, opts=opts)
    th = thresholds or SignatureThresholds()
    n_nom = detect_spikes(nominal, th).size
    rep = analyze(pulsed, protocol, th)
    rep.extra_spike_count = int(detect_spikes(pulsed, th).size - n_nom)
    return rep
