"""Scenario files: validated JSON descriptions of reproducible runs.

A scenario names a model (preset or inline parameters plus a model
kind), a stimulus protocol, integrator options, and an ordered list of
analysis requests (simulate, signature, phase, bifurcate, normalform,
robustness).  Optional variants repeat the requests over parameter
overrides (sweeps); requests execute in order within a variant, and
variants may run concurrently with deterministic output naming.

Every run writes its outputs (CSV/JSON and the accompanying figures)
into one directory plus a manifest listing the SHA-256 of every file,
so re-runs are byte-checkable.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.optimize

from . import bifurcation as bif
from . import figures as figs
from . import normalform as nf
from . import phaseplane as pp
from . import signatures as sig
from .errors import HhcalError, NumericsError, ValidationError
from .integrate import IntegratorOptions, StimulusProtocol, integrate, integrate_hybrid
from .models import (
    FoldHybridModel,
    FullModel,
    HybridModel,
    HybridParams,
    ModelParams,
    PRESETS,
    ReducedModel,
    alpha_h,
    beta_h,
    full_rhs,
    ionic_current_profile,
    m_inf,
    n_inf,
    preset,
)

__all__ = ["load_scenario", "run_scenario", "RequestFailed"]

MODEL_KINDS = ("reduced", "full", "hybrid2", "hybrid3", "fold2", "fold3")
_HYBRID_KINDS = ("hybrid2", "hybrid3", "fold2", "fold3")
_REQUEST_OPS = ("simulate", "signature", "phase", "bifurcate", "normalform",
                "robustness")
DEFAULT_HYBRID_BOX = (-30.0, 30.0, -12.0, 20.0)


class RequestFailed(NumericsError):
    """A scenario request failed numerically; carries the request name."""

    def __init__(self, request_name, cause):
        super().__init__(f"request {request_name!r} failed: {cause}")
        self.request_name = request_name
        self.cause = cause


def _require(cond, msg):
    if not cond:
        raise ValidationError(msg)


def load_scenario(source) -> dict:
    """Parse and validate a scenario from a path, JSON text, or dict."""
    if isinstance(source, dict):
        sc = dict(source)
    else:
        text = source
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            with open(source) as f:
                text = f.read()
        try:
            sc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"scenario is not valid JSON: {e}") from None
    _require(isinstance(sc, dict), "scenario must be a JSON object")

    known = {"preset", "params", "model", "protocol", "t_span", "s0",
             "integrator", "requests", "variants", "figures", "label",
             "random_free"}
    unknown = set(sc) - known
    _require(not unknown, f"unknown scenario fields: {sorted(unknown)}")

    if "preset" in sc:
        _require(sc["preset"] in PRESETS,
                 f"unknown preset {sc['preset']!r}; known: {sorted(PRESETS)}")
        kind, params = preset(sc["preset"])
        sc.setdefault("model", kind)
    else:
        _require("params" in sc and "model" in sc,
                 "scenario needs either a preset or inline params plus a model kind")
    _require(sc.get("model") in MODEL_KINDS,
             f"model kind must be one of {MODEL_KINDS}")

    reqs = sc.get("requests")
    _require(isinstance(reqs, list) and len(reqs) > 0,
             "requests must be a non-empty list")
    norm = []
    for r in reqs:
        if isinstance(r, str):
            r = {"op": r}
        _require(isinstance(r, dict) and r.get("op") in _REQUEST_OPS,
                 f"each request needs an op in {_REQUEST_OPS} (got {r!r})")
        norm.append(dict(r))
    sc["requests"] = norm

    variants = sc.get("variants")
    if variants is not None:
        _require(isinstance(variants, list) and variants, "variants must be a non-empty list")
        labels = set()
        for v in variants:
            _require(isinstance(v, dict) and "label" in v,
                     "each variant needs a label")
            _require(v["label"] not in labels, f"duplicate variant label {v['label']!r}")
            labels.add(v["label"])
    sc.setdefault("figures", True)
    sc.setdefault("random_free", True)
    _require(sc["random_free"] is True, "random_free must be true (no stochastic features)")
    return sc


def _params_for(sc, variant) -> tuple:
    kind = sc["model"]
    if "preset" in sc:
        _, base = preset(sc["preset"])
    else:
        cls = ModelParams if kind in ("reduced", "full") else HybridParams
        data = dict(sc["params"])
        if "ca_exponent" in data:
            data["ca_exponent"] = int(data["ca_exponent"])
        try:
            base = cls(**data)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"bad inline params: {e}") from None
    if variant and variant.get("params"):
        try:
            base = base.with_(**variant["params"])
        except (TypeError, ValueError) as e:
            raise ValidationError(f"bad variant params for {variant['label']!r}: {e}") from None
    if variant and "I" in variant:
        field = "I_app" if kind in ("reduced", "full") else "I"
        base = base.with_(**{field: float(variant["I"])})
    return kind, base


def build_model(kind: str, params):
    if kind == "reduced":
        return ReducedModel(params)
    if kind == "full":
        return FullModel(params)
    if kind == "hybrid2":
        return HybridModel(params, dims=2)
    if kind == "hybrid3":
        return HybridModel(params, dims=3)
    if kind == "fold2":
        return FoldHybridModel(params, dims=2)
    if kind == "fold3":
        return FoldHybridModel(params, dims=3)
    raise ValidationError(f"unknown model kind {kind!r}")


def rest_state(kind: str, params, baseline: float = 0.0) -> np.ndarray:
    """Stable resting state at the baseline drive (most hyperpolarized)."""
    if kind in ("reduced", "full"):
        p = params.with_(I_app=params.I_app + baseline)
        if kind == "reduced":
            def f(V):
                m = ReducedModel(p)
                return float(m.fV(V, n_inf(V)))
        else:
            def f(V):
                ah = alpha_h(V)
                h = ah / (ah + beta_h(V))
                return float(full_rhs([V, n_inf(V), m_inf(V), h], p)[0])
        Vs = np.linspace(-75.0, 119.0, 800)
        vals = np.array([f(V) for V in Vs])
        idx = np.where(np.diff(np.sign(vals)) != 0)[0]
        roots = [scipy.optimize.brentq(f, Vs[i], Vs[i + 1]) for i in idx]
        m2 = ReducedModel(p)
        stable = []
        for r in roots:
            J = m2.analytic_jacobian([r, n_inf(r)])
            if pp.classify(J) in ("stable-node", "stable-focus"):
                stable.append(r)
        _require(stable, "no stable resting state at baseline; provide s0")
        Vr = min(stable)
        if kind == "reduced":
            return np.array([Vr, n_inf(Vr)])
        ah = alpha_h(Vr)
        return np.array([Vr, n_inf(Vr), m_inf(Vr), ah / (ah + beta_h(Vr))])
    # hybrid kinds: equilibrium of the planar part (z rests at 0)
    hp = params
    I = hp.I + baseline
    if kind.startswith("fold"):
        disc = hp.a * hp.a + 4.0 * (hp.w0 - I)
        _require(disc >= 0, "no fold resting state at baseline; provide s0")
        v = (hp.a - math.sqrt(disc)) / 2.0
        w = hp.a * v + hp.w0
    else:
        b = hp.b if kind == "hybrid3" else 0.0
        # v-rate zero along the w-nullcline w = a v + w0
        def g(v):
            w = hp.a * v + hp.w0
            return v * v + b * v * w - w * w + I
        vs = np.linspace(-80.0, hp.v_th, 600)
        vals = np.array([g(v) for v in vs])
        idx = np.where(np.diff(np.sign(vals)) != 0)[0]
        _require(len(idx) > 0, "no hybrid resting state at baseline; provide s0")
        roots = [scipy.optimize.brentq(g, vs[i], vs[i + 1]) for i in idx]
        stable = []
        for v in roots:
            w = hp.a * v + hp.w0
            J = np.array([[2 * v + b * w, b * v - 2 * w], [hp.eps * hp.a, -hp.eps]])
            if pp.classify(J) in ("stable-node", "stable-focus"):
                stable.append(v)
        _require(stable, "no stable hybrid resting state at baseline; provide s0")
        v = min(stable)
        w = hp.a * v + hp.w0
    if kind.endswith("2"):
        return np.array([v, w])
    return np.array([v, w, 0.0])


def _protocol_of(sc, variant) -> StimulusProtocol:
    proto = dict(sc.get("protocol") or {})
    if variant and variant.get("protocol"):
        proto.update(variant["protocol"])
    if not proto:
        return None
    known = {"baseline", "step", "t_on", "t_off", "pulses"}
    unknown = set(proto) - known
    _require(not unknown, f"unknown protocol fields: {sorted(unknown)}")
    if "pulses" in proto:
        proto["pulses"] = tuple(tuple(p) for p in proto["pulses"])
    return StimulusProtocol(**proto)


def _options_of(sc) -> IntegratorOptions:
    o = dict(sc.get("integrator") or {})
    if not o:
        return IntegratorOptions()
    allowed = {"rtol", "atol", "max_step", "event_tol", "eq_radius",
               "eq_rate_tol", "divergence_bound", "max_events",
               "stop_at_equilibrium"}
    unknown = set(o) - allowed
    _require(not unknown, f"unknown integrator fields: {sorted(unknown)}")
    return IntegratorOptions(**o)


def _json_dump(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def _csv_xy(path, pts, header=("x", "y")):
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in np.asarray(pts):
            f.write(",".join(repr(float(x)) for x in row) + "\n")


def _simulate(ctx, req):
    model = ctx["model"]
    hybrid = ctx["kind"] in _HYBRID_KINDS
    runner = integrate_hybrid if hybrid else integrate
    traj = runner(model, ctx["s0"], ctx["t_span"], protocol=ctx["protocol"],
                  opts=ctx["opts"])
    ctx["trajectory"] = traj
    base = ctx["prefix"] + "trace"
    traj.to_csv(os.path.join(ctx["out"], base + ".csv"))
    traj.to_json(os.path.join(ctx["out"], base + ".json"))
    if ctx["figures"]:
        figs.render_trace(traj, os.path.join(ctx["out"], base + ".png"),
                          protocol=ctx["protocol"],
                          label=model.state_names[0],
                          title=ctx["label"] or None)
    return f"simulate: {len(traj)} samples, {len(traj.events)} events, {traj.termination}"


def _signature(ctx, req):
    if ctx.get("trajectory") is None:
        _simulate(ctx, {})
    traj = ctx["trajectory"]
    proto = ctx["protocol"]
    _require(proto is not None, "signature request needs a protocol")
    if req.get("thresholds"):
        th = sig.SignatureThresholds(**req["thresholds"])
    elif ctx["kind"] in _HYBRID_KINDS:
        th = sig.SignatureThresholds.hybrid_defaults(ctx["params"].v_th)
    else:
        th = sig.SignatureThresholds.hh_defaults()
    report = sig.analyze(traj, proto, th)
    base = ctx["prefix"] + "signature"
    _json_dump(report.to_dict(), os.path.join(ctx["out"], base + ".json"))
    spikes = report.spike_times
    # annotated trace: spike / ADP marker columns
    apex_t = report.adp.get("apex_time")
    with open(os.path.join(ctx["out"], base + "-annotated.csv"), "w", newline="") as f:
        names = traj.state_names or tuple(f"x{i}" for i in range(traj.states.shape[1]))
        f.write("t," + ",".join(names) + ",spike,adp_apex\n")
        sp = set(float(np.round(s, 12)) for s in spikes)
        for i, t in enumerate(traj.times):
            is_spike = any(abs(t - s) < 1e-9 for s in spikes)
            is_apex = apex_t is not None and abs(t - apex_t) < 1e-9
            row = [repr(float(t))] + [repr(float(x)) for x in traj.states[i]]
            row += ["1" if is_spike else "0", "1" if is_apex else "0"]
            f.write(",".join(row) + "\n")
    if ctx["figures"]:
        apex = None
        if report.adp.get("present"):
            apex = (report.adp["apex_time"], report.adp["apex_voltage"])
        figs.render_trace(traj, os.path.join(ctx["out"], base + ".png"),
                          protocol=proto, label=traj.state_names[0],
                          spike_times=spikes, adp_apex=apex,
                          title=ctx["label"] or None)
    lat = report.latency
    return (f"signature: {spikes.size} spikes, latency="
            f"{'none' if lat is None else f'{lat:.3f}'}, "
            f"plateau={report.plateau['present']}, adp={report.adp['present']}")


def _grad_loci(model, box, resolution):
    """Zero contours of dfV/dV and dfV/dn (for transcritical zoom figures)."""
    def dV(V, n):
        h = 1e-4 * (1.0 + np.abs(V))
        return (np.asarray(model.fV(V + h, n), float)
                - np.asarray(model.fV(V - h, n), float)) / (2 * h)

    def dn(V, n):
        h = 1e-6
        return (np.asarray(model.fV(V, n + h), float)
                - np.asarray(model.fV(V, n - h), float)) / (2 * h)

    return {
        "dfV_dV": pp._contour_zero(dV, box, resolution, 1e-6),
        "dfV_dn": pp._contour_zero(dn, box, resolution, 1e-6),
    }


def _phase(ctx, req):
    kind = ctx["kind"]
    _require(kind != "full", "phase analysis applies to planar models")
    params = ctx["params"]
    I = req.get("I")
    z = req.get("z")
    if kind in _HYBRID_KINDS:
        model = build_model(kind, params)
        if z is not None:
            base_fV = model.fV
            model = build_model(kind, params)
            model.fV = lambda V, n, I=None, _z=float(z): base_fV(V, n, I=I, z=_z)
        box = pp.Box.coerce(req.get("box") or DEFAULT_HYBRID_BOX)
        labels = ("v", "w")
    else:
        model = ReducedModel(params)
        box = pp.Box.coerce(req.get("box") or pp.DEFAULT_BOX_REDUCED)
        labels = ("V", "n")
    resolution = int(req.get("resolution", pp.DEFAULT_RESOLUTION))
    ns = pp.extract_nullclines(model, box, resolution, I=I)
    fps = pp.find_fixed_points(model, box, nullclines=ns, I=I)
    manifolds = []
    if req.get("manifolds"):
        for fp in fps:
            if fp.is_saddle:
                for branch in ("stable-plus", "stable-minus",
                               "unstable-plus", "unstable-minus"):
                    try:
                        manifolds.append(pp.shoot_manifold(
                            model, fp, branch, box=box, I=I,
                            known_fixed_points=fps, opts=ctx["opts"]))
                    except HhcalError:
                        continue
    loci = _grad_loci(model, box, min(resolution, 300)) if req.get("loci") else None

    idx = ctx["req_index"]
    base = f"{ctx['prefix']}phase{idx if idx else ''}"
    doc = {
        "box": list(box.as_tuple()),
        "resolution": resolution,
        "I": I,
        "z": z,
        "fixed_points": [fp.to_dict() for fp in fps],
        "v_nullcline": [p.tolist() for p in ns.v_nullcline],
        "n_nullcline": ns.n_nullcline.tolist(),
        "manifolds": [{"branch": m.branch, "arclength": m.arclength,
                       "termination": m.termination,
                       "polyline": m.polyline.tolist()} for m in manifolds],
    }
    _json_dump(doc, os.path.join(ctx["out"], base + ".json"))
    for k, poly in enumerate(ns.v_nullcline):
        _csv_xy(os.path.join(ctx["out"], f"{base}-vnull-{k}.csv"), poly, labels)
    _csv_xy(os.path.join(ctx["out"], f"{base}-nnull.csv"), ns.n_nullcline, labels)
    for m in manifolds:
        _csv_xy(os.path.join(ctx["out"], f"{base}-manifold-{m.branch}.csv"),
                m.polyline, labels)
    trajectory = None
    if req.get("trajectory") and ctx.get("trajectory") is not None:
        trajectory = ctx["trajectory"].states[:, :2]
    if ctx["figures"]:
        figs.render_phase(os.path.join(ctx["out"], base + ".png"),
                          nullclines=ns, fixed_points=fps, manifolds=manifolds,
                          trajectory=trajectory, loci=loci, box=box,
                          labels=labels, title=ctx["label"] or None)
    kinds = ", ".join(fp.kind for fp in fps) or "none"
    return f"phase: {len(fps)} fixed points ({kinds})"


def _bifurcate(ctx, req):
    kind = req.get("kind")
    rng = req.get("range")
    params = ctx["params"]
    tol = req.get("tol")
    if kind == "transcritical":
        _require(ctx["kind"] == "reduced", "transcritical detection runs on the reduced model")
        bp = bif.detect_transcritical(params, **({"tol": tol} if tol else {}))
    elif kind == "hopf":
        _require(ctx["kind"] == "reduced", "hopf detection runs on the reduced model")
        _require(rng, "bifurcate hopf needs a range")
        bp = bif.detect_hopf(params, rng, **({"tol": tol} if tol else {}))
    elif kind == "saddle-node":
        _require(ctx["kind"] == "reduced", "saddle-node detection runs on the reduced model")
        _require(rng, "bifurcate saddle-node needs a range")
        bp = bif.detect_saddle_node(params, rng, **({"tol": tol} if tol else {}))
    elif kind == "saddle-homoclinic":
        _require(ctx["kind"] == "reduced", "saddle-homoclinic detection runs on the reduced model")
        _require(rng, "bifurcate saddle-homoclinic needs a range")
        bp = bif.detect_saddle_homoclinic(params, rng, **({"tol": tol} if tol else {}))
    elif kind == "snlc":
        _require(ctx["kind"] == "reduced", "snlc detection runs on the reduced model")
        _require(rng, "bifurcate snlc needs a range")
        bp = bif.detect_snlc(params, rng, **({"tol": tol} if tol else {}))
    elif kind == "hybrid-homoclinic":
        _require(ctx["kind"] in ("hybrid2", "hybrid3"),
                 "hybrid-homoclinic detection runs on the hybrid model")
        _require(rng, "bifurcate hybrid-homoclinic needs a range")
        bp = bif.detect_hybrid_homoclinic(
            params, rng, reset_point=req.get("reset_point"),
            **({"tol": tol} if tol else {}))
    else:
        raise ValidationError(f"unknown bifurcation kind {kind!r}")
    idx = ctx["req_index"]
    base = f"{ctx['prefix']}bifurcate-{kind}{idx if idx else ''}"
    doc = bp.to_dict() if bp is not None else {"kind": kind, "found": False}
    _json_dump(doc, os.path.join(ctx["out"], base + ".json"))
    ctx.setdefault("bifurcations", []).append(doc)
    if bp is None:
        return f"bifurcate {kind}: not found in range"
    return f"bifurcate {kind}: value={bp.value:.6g} bracket=({bp.bracket[0]:.6g},{bp.bracket[1]:.6g})"


def _normalform(ctx, req):
    _require(ctx["kind"] == "reduced", "normal-form transform runs on the reduced model")
    params = ctx["params"]
    tc = bif.detect_transcritical(params)
    xf = nf.compute_transform(params, tc)
    rep = nf.residual_report(params, xf)
    base = ctx["prefix"] + "normalform"
    doc = {"transform": xf.to_dict(), "residuals": rep}
    _json_dump(doc, os.path.join(ctx["out"], base + ".json"))
    return (f"normalform: alpha={xf.alpha:.5g} discriminant={xf.discriminant:.5g} "
            f"residual slope={rep['loglog_slope_v']:.3f}")


def _robustness(ctx, req):
    cfg = dict(req.get("config") or {})
    comparison = sig.compare_adp_robustness(**cfg)
    base = ctx["prefix"] + "robustness"
    _json_dump(comparison, os.path.join(ctx["out"], base + ".json"))
    if ctx["figures"]:
        figs.render_robustness(os.path.join(ctx["out"], base + ".png"), comparison,
                               title=ctx["label"] or None)
    tc = comparison["transcritical"]["threshold_amplitude"]
    fd = comparison["fold"]["threshold_amplitude"]
    return f"robustness: A*_tc={tc} A*_fold={fd} fold_less_robust={comparison['fold_less_robust']}"


_EXECUTORS = {
    "simulate": _simulate,
    "signature": _signature,
    "phase": _phase,
    "bifurcate": _bifurcate,
    "normalform": _normalform,
    "robustness": _robustness,
}


def _run_variant(sc, variant, out_dir, figures):
    kind, params = _params_for(sc, variant)
    protocol = _protocol_of(sc, variant)
    opts = _options_of(sc)
    label = variant["label"] if variant else ""
    prefix = f"{label}-" if label else ""
    model = build_model(kind, params)
    t_span = tuple(sc.get("t_span") or (0.0, 100.0))
    baseline = protocol.baseline if protocol is not None else 0.0
    if sc.get("s0") is not None:
        s0 = np.asarray(sc["s0"], dtype=float)
    else:
        s0 = rest_state(kind, params, baseline=0.0 if protocol is None else 0.0)
        # protocol baseline is applied through the protocol itself; the rest
        # state is computed at the baseline drive
        if protocol is not None and protocol.baseline != 0.0:
            s0 = rest_state(kind, params, baseline=protocol.baseline)
    ctx = {
        "kind": kind, "params": params, "model": model, "protocol": protocol,
        "opts": opts, "t_span": t_span, "s0": s0, "out": out_dir,
        "prefix": prefix, "label": label, "figures": figures,
        "trajectory": None,
    }
    lines = []
    counts = {}
    for req in sc["requests"]:
        op = req["op"]
        counts[op] = counts.get(op, 0) + 1
        ctx["req_index"] = "" if counts[op] == 1 else f"-{counts[op]}"
        name = f"{label + ':' if label else ''}{op}"
        try:
            msg = _EXECUTORS[op](ctx, req)
        except ValidationError:
            raise
        except HhcalError as e:
            raise RequestFailed(name, e) from e
        lines.append(f"[{name}] {msg}")
    return lines


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_scenario(source, out_dir, jobs: int = 1, figures: bool = None) -> dict:
    """Execute a scenario into ``out_dir`` and return the manifest dict.

    Raises ValidationError for malformed scenarios (CLI exit 2) and
    RequestFailed for numerical failures (CLI exit 3).
    """
    sc = load_scenario(source)
    if figures is None:
        figures = bool(sc.get("figures", True))
    os.makedirs(out_dir, exist_ok=True)
    variants = sc.get("variants") or [None]
    if jobs > 1 and len(variants) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            futures = [ex.submit(_run_variant, sc, v, out_dir, figures)
                       for v in variants]
            results = [f.result() for f in futures]  # deterministic order
    else:
        results = [_run_variant(sc, v, out_dir, figures) for v in variants]
    summary = [line for lines in results for line in lines]
    with open(os.path.join(out_dir, "summary.txt"), "w") as f:
        f.write("\n".join(summary) + "\n")

    files = {}
    for name in sorted(os.listdir(out_dir)):
        if name == "manifest.json":
            continue
        path = os.path.join(out_dir, name)
        if os.path.isfile(path):
            files[name] = sha256_file(path)
    manifest = {"files": files, "scenario": sc}
    _json_dump(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
