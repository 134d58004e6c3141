"""Adaptive ODE integration with dense-output event location and resets.

The stepping core is scipy's embedded Dormand-Prince 4(5) pair
(``scipy.integrate.RK45``: proportional-integral step control, dense
output).  This module adds what the models need around it:

* piecewise-constant stimulus protocols whose discontinuities are exact
  step boundaries (the stepper restarts at them),
* upward/downward guard crossings located by bisection on the dense
  output, with record / stop / reset actions,
* hybrid reset handling with a one-step refractory guard and an event
  budget,
* divergence and (optional) equilibrium-convergence termination,
* CSV / JSON trajectory export with shortest round-trip floats.

All runs are deterministic: identical inputs produce bitwise-identical
trajectories on a fixed platform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import RK45

from .errors import RunawaySpikingError, StepUnderflowError, ValidationError

__all__ = [
    "StimulusProtocol",
    "IntegratorOptions",
    "ResetEvent",
    "Crossing",
    "Watcher",
    "Trajectory",
    "integrate",
    "integrate_hybrid",
]

_EQ_CONSECUTIVE = 3
_BISECT_MAX_ITER = 30


@dataclass(frozen=True)
class StimulusProtocol:
    """Piecewise-constant applied current: baseline + step window + pulse train.

    ``pulses`` is a sequence of (time, amplitude, width) triples.  The
    current at time t is baseline, plus ``step`` for t in [t_on, t_off),
    plus every pulse amplitude for t in [time, time + width).
    """

    baseline: float = 0.0
    step: float = 0.0
    t_on: float = 0.0
    t_off: float = 0.0
    pulses: tuple = ()

    def __post_init__(self):
        if self.step != 0.0 and not self.t_on < self.t_off:
            raise ValidationError("protocol step requires t_on < t_off")
        pulses = tuple(tuple(float(x) for x in p) for p in self.pulses)
        for p in pulses:
            if len(p) != 3:
                raise ValidationError("each pulse is a (time, amplitude, width) triple")
            if not p[2] > 0:
                raise ValidationError("pulse widths must be positive")
        object.__setattr__(self, "pulses", pulses)

    def current(self, t: float) -> float:
        i = self.baseline
        if self.step != 0.0 and self.t_on <= t < self.t_off:
            i += self.step
        for t0, amp, width in self.pulses:
            if t0 <= t < t0 + width:
                i += amp
        return i

    def breakpoints(self):
        """Discontinuity times, sorted and deduplicated."""
        pts = set()
        if self.step != 0.0:
            pts.update((self.t_on, self.t_off))
        for t0, _, width in self.pulses:
            pts.update((t0, t0 + width))
        return sorted(pts)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "step": self.step,
            "t_on": self.t_on,
            "t_off": self.t_off,
            "pulses": [list(p) for p in self.pulses],
        }


@dataclass(frozen=True)
class IntegratorOptions:
    """Tolerances and termination settings for one integration run.

    ``eq_radius`` is the equilibrium-convergence radius: with
    ``stop_at_equilibrium`` the run terminates once the rate norm stays
    below 1e-9 and the per-step state change stays below the radius for
    three consecutive accepted steps.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    event_tol: float = 1e-10
    eq_radius: float = 1e-7
    eq_rate_tol: float = 1e-9
    divergence_bound: float = 1e7
    max_events: int = 10**6
    stop_at_equilibrium: bool = False

    def __post_init__(self):
        for name in ("rtol", "atol", "max_step", "event_tol", "eq_radius",
                     "eq_rate_tol", "divergence_bound"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")

    def with_(self, **changes) -> "IntegratorOptions":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "rtol": self.rtol,
            "atol": self.atol,
            "max_step": self.max_step,
            "event_tol": self.event_tol,
            "eq_radius": self.eq_radius,
            "eq_rate_tol": self.eq_rate_tol,
            "divergence_bound": self.divergence_bound,
            "max_events": self.max_events,
            "stop_at_equilibrium": self.stop_at_equilibrium,
        }
        if math.isinf(d["max_step"]):
            d["max_step"] = None
        return d


@dataclass
class ResetEvent:
    time: float
    pre_state: np.ndarray
    post_state: np.ndarray


@dataclass
class Crossing:
    """A recorded guard crossing (e.g. of a phase-plane section)."""

    time: float
    state: np.ndarray
    direction: int
    name: str


@dataclass
class Watcher:
    """Scalar guard g(t, y) monitored on accepted steps.

    ``direction`` +1 fires on upward sign changes, -1 downward, 0 both.
    ``action`` is one of "record", "stop", "reset"; "reset" requires
    ``reset_map``.
    """

    guard: callable
    direction: int = 0
    action: str = "record"
    reset_map: callable = None
    name: str = "guard"


@dataclass
class Trajectory:
    """Dense output of one run: sample times, states, events, termination.

    ``times`` is strictly increasing; states has one row per sample.
    ``termination`` is one of "time-limit", "converged-to-equilibrium",
    "diverged", "error", or a stop-watcher name.
    """

    times: np.ndarray
    states: np.ndarray
    events: list
    termination: str
    state_names: tuple = ()
    crossings: list = field(default_factory=list)
    options: IntegratorOptions = None
    protocol: StimulusProtocol = None

    def __len__(self):
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.state_names.index(name)]

    def sample(self, ts) -> np.ndarray:
        """Linear interpolation of every state column at times ts."""
        ts = np.asarray(ts, float)
        out = np.empty((ts.size, self.states.shape[1]))
        for j in range(self.states.shape[1]):
            out[:, j] = np.interp(ts, self.times, self.states[:, j])
        return out

    def slice(self, t0: float, t1: float) -> "Trajectory":
        """Sub-trajectory restricted to [t0, t1] (events included)."""
        mask = (self.times >= t0) & (self.times <= t1)
        return Trajectory(
            times=self.times[mask],
            states=self.states[mask],
            events=[e for e in self.events if t0 <= e.time <= t1],
            termination=self.termination,
            state_names=self.state_names,
            crossings=[c for c in self.crossings if t0 <= c.time <= t1],
            options=self.options,
            protocol=self.protocol,
        )

    def event_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])

    def to_csv(self, path) -> None:
        """Write t, state columns, event flag; shortest round-trip floats."""
        names = self.state_names or tuple(f"x{i}" for i in range(self.states.shape[1]))
        ev = set(float(e.time) for e in self.events)
        with open(path, "w", newline="") as f:
            f.write("t," + ",".join(names) + ",event\n")
            for i, t in enumerate(self.times):
                row = [repr(float(t))]
                row += [repr(float(x)) for x in self.states[i]]
                row.append("1" if float(t) in ev else "0")
                f.write(",".join(row) + "\n")

    def to_json(self, path=None):
        doc = {
            "times": [float(t) for t in self.times],
            "states": [[float(x) for x in row] for row in self.states],
            "state_names": list(self.state_names),
            "events": [
                {
                    "time": float(e.time),
                    "pre_state": [float(x) for x in e.pre_state],
                    "post_state": [float(x) for x in e.post_state],
                }
                for e in self.events
            ],
            "termination": self.termination,
            "options": self.options.to_dict() if self.options else None,
            "protocol": self.protocol.to_dict() if self.protocol else None,
        }
        text = json.dumps(doc, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text)
        return text


def _crossed(g0: float, g1: float, direction: int) -> bool:
    if direction > 0:
        return g0 < 0.0 <= g1
    if direction < 0:
        return g0 > 0.0 >= g1
    return (g0 < 0.0 <= g1) or (g0 > 0.0 >= g1)


def _locate(dense, guard, t_lo, t_hi, direction, tol):
    """Bisect the dense output for the first guard satisfaction time."""
    g_lo = guard(t_lo, dense(t_lo))
    lo, hi = t_lo, t_hi
    for _ in range(_BISECT_MAX_ITER):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if _crossed(g_lo, guard(mid, dense(mid)), direction):
            hi = mid
        else:
            lo = mid
    return hi


def integrate(rhs, s0, t_span, protocol: StimulusProtocol = None,
              opts: IntegratorOptions = None, watchers=None,
              state_names=()) -> Trajectory:
    """Integrate ``rhs(t, y, i_ext)`` over t_span under a stimulus protocol.

    ``rhs`` may be a callable or any object with an ``rhs`` method (the
    model classes).  Protocol discontinuities split the run into
    segments integrated back to back, so step and pulse edges are exact.
    Watchers are scanned on every accepted step and located on the dense
    output.  Raises StepUnderflowError (with the partial trajectory
    attached) if the stepper stalls.
    """
    f = rhs.rhs if hasattr(rhs, "rhs") else rhs
    opts = opts or IntegratorOptions()
    watchers = list(watchers or ())
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValidationError("t_span must satisfy t1 > t0")
    y0 = np.array(s0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise ValidationError("initial state must be finite")

    if protocol is not None:
        cuts = [b for b in protocol.breakpoints() if t0 < b < t1]
    else:
        cuts = []
    bounds = [t0] + cuts + [t1]

    times = [t0]
    states = [y0.copy()]
    events = []
    crossings = []
    termination = "time-limit"
    eq_run = 0
    skip_reset_check = False

    def finish(reason):
        return Trajectory(np.array(times), np.array(states), events, reason,
                          tuple(state_names), crossings, opts, protocol)

    for seg in range(len(bounds) - 1):
        a, b = bounds[seg], bounds[seg + 1]
        # Piecewise-constant drive: freeze the current per segment so the
        # open/closed endpoint convention cannot leak into RK stages.
        i_seg = protocol.current(0.5 * (a + b)) if protocol is not None else 0.0
        fun = lambda t, y, _i=i_seg: f(t, y, _i)
        t_start, y_start = a, states[-1].copy()
        restart = True
        while restart:
            restart = False
            stepper = RK45(fun, t_start, y_start, t_bound=b,
                           rtol=opts.rtol, atol=opts.atol, max_step=opts.max_step)
            while stepper.status == "running":
                stepper.step()
                if stepper.status == "failed":
                    raise StepUnderflowError(
                        f"step size underflow at t={stepper.t:.6g}",
                        trajectory=finish("error"))
                t_prev, y_prev = times[-1], states[-1]
                t_new, y_new = stepper.t, stepper.y
                dense = None

                fired = []  # (t_event, watcher, direction), time-ordered below
                for w in watchers:
                    if w.action == "reset" and skip_reset_check:
                        continue
                    g0 = w.guard(t_prev, y_prev)
                    g1 = w.guard(t_new, y_new)
                    direction = 1 if g1 > g0 else -1
                    if _crossed(g0, g1, w.direction):
                        dense = dense or stepper.dense_output()
                        t_e = _locate(dense, w.guard, t_prev, t_new,
                                      w.direction or direction, opts.event_tol)
                        fired.append((t_e, w, direction))
                skip_reset_check = False
                fired.sort(key=lambda item: item[0])

                interrupted = False
                for t_e, w, direction in fired:
                    y_e = dense(t_e)
                    if w.action == "record":
                        crossings.append(Crossing(t_e, y_e.copy(), direction, w.name))
                        continue  # trajectory itself continues through the crossing
                    if w.action == "stop":
                        times.append(t_e)
                        states.append(y_e.copy())
                        return finish(w.name)
                    if w.action == "reset":
                        if len(events) >= opts.max_events:
                            raise RunawaySpikingError(
                                f"more than {opts.max_events} reset events")
                        post = np.asarray(w.reset_map(y_e.copy()), dtype=float)
                        events.append(ResetEvent(t_e, y_e.copy(), post.copy()))
                        times.append(t_e)
                        states.append(post.copy())
                        skip_reset_check = True
                        t_start, y_start = t_e, post
                        restart = True
                        interrupted = True
                        break  # later crossings in this step are invalidated
                if interrupted:
                    break  # rebuild the stepper from the post-reset state

                times.append(t_new)
                states.append(y_new.copy())

                norm = float(np.max(np.abs(y_new)))
                if norm > opts.divergence_bound:
                    return finish("diverged")
                if opts.stop_at_equilibrium:
                    rate = float(np.max(np.abs(fun(t_new, y_new))))
                    delta = float(np.max(np.abs(y_new - y_prev)))
                    if rate < opts.eq_rate_tol and delta < opts.eq_radius:
                        eq_run += 1
                        if eq_run >= _EQ_CONSECUTIVE:
                            return finish("converged-to-equilibrium")
                    else:
                        eq_run = 0

    return finish(termination)


def integrate_hybrid(model, s0, t_span, protocol: StimulusProtocol = None,
                     opts: IntegratorOptions = None) -> Trajectory:
    """Integrate a hybrid model, applying its reset at each upward v_th crossing.

    The pre-reset state is recorded in the event list, the reset map is
    applied, and integration resumes from the post-reset state at the
    located event time.  Only upward crossings trigger; a refractory
    guard of one accepted step suppresses numerical double-fires.
    """
    s0 = np.array(s0, dtype=float)
    if model.guard(s0) >= 0:
        raise ValidationError("initial state must satisfy v < v_th")
    watcher = Watcher(guard=lambda t, y: model.guard(y), direction=1,
                      action="reset", reset_map=model.reset, name="spike")
    traj = integrate(model, s0, t_span, protocol=protocol, opts=opts,
                     watchers=[watcher], state_names=model.state_names)
    # post-integration contract: v never exceeds threshold between events
    opts = opts or IntegratorOptions()
    v = traj.states[:, 0]
    if v.size and float(np.max(v)) > model.params.v_th + 1e-6:
        raise RunawaySpikingError("threshold exceeded between reset events")
    return traj
