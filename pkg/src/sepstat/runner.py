"""Scenario orchestration and JSON report assembly."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import chamber as chm
from . import correlations as cor
from . import scattering as sct
from .bcl import decompose, default_outputs, objectification_violation, pointer_probabilities, signal_coherence
from .hilbert import HilbertSpace, Observable, Operator, StateOperator, VectorState, eig_grouped, partial_trace
from .locality import mass_in
from .models import (
    Model,
    bcl_model,
    default_bcl,
    epr_model,
    fixed_array_model,
    flexible_lattice_model,
    nonideal_model,
    release_model,
    singlet,
)
from .reduction import (
    Gemenge,
    apply_rule,
    build_nonideal_families,
    derive_channels,
    reduce_fixed,
    reduce_flexible,
    reduce_nonideal,
    reduce_release,
)
from .scenario import ScenarioError, mat, to_complex, vec
from .symmetrization import PauliBlockedError, detect_swallow

SCHEMA_VERSION = "1"


class RunError(ValueError):
    """A valid scenario that cannot be simulated (e.g. inadmissible composition)."""


@dataclass(frozen=True)
class Check:
    module: str
    name: str
    residual: float
    bound: float
    relation: str = "<="

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.residual):
            return False
        return bool(self.residual <= self.bound if self.relation == "<=" else self.residual >= self.bound)

    def with_tolerance(self, tol: float | None) -> Check:
        if tol is None or self.relation != "<=":
            return self
        return Check(self.module, self.name, self.residual, tol, self.relation)

    def to_dict(self) -> dict:
        r = float(self.residual)
        return {"module": self.module, "name": self.name, "residual": r if np.isfinite(r) else None, "bound": float(self.bound),
                "relation": self.relation, "pass": self.passed}


def cmatrix(m: np.ndarray) -> list:
    """Complex matrix as row-major nested [re, im] pairs."""
    m = np.asarray(m)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def from_cmatrix(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def gemenge_dict(g: Gemenge, states: bool = True) -> list[dict]:
    out = []
    for b in g.branches:
        d = {"p": float(b.p), "signal": b.signal}
        if states:
            d["state"] = cmatrix(b.state.matrix)
        out.append(d)
    return out


def _maxabs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _initial(spec, space: HilbertSpace, default: np.ndarray) -> VectorState | StateOperator:
    if spec is None:
        return VectorState.normalized(space, default)
    if spec.vector is not None:
        v = vec(spec.vector)
        n = np.linalg.norm(v)
        if abs(n - 1) > 1e-10:
            raise ScenarioError(f"initial.vector: norm is {n:.12g}, expected 1")
        return VectorState(space, v)
    try:
        return StateOperator(space, mat(spec.matrix))
    except ValueError as e:
        raise ScenarioError(f"initial.matrix: {e}") from None


def _as_state(s) -> StateOperator:
    return StateOperator.pure(s) if isinstance(s, VectorState) else s


def _observable(spec, space: HilbertSpace) -> Observable:
    try:
        if spec.matrix is not None:
            return eig_grouped(Operator(space, mat(spec.matrix)), spec.n_groups)
        groups = [(g.value, np.column_stack([vec(v) for v in g.vectors])) for g in spec.groups]
        return Observable.from_groups(space, groups)
    except ValueError as e:
        raise ScenarioError(f"observable: {e}") from None


def _common_gemenge_checks(module: str, g: Gemenge, model: Model, end: StateOperator) -> list[Check]:
    projs = model.classifier.projectors
    return [
        Check(module, "gemenge weights sum to 1", abs(float(g.weights.sum()) - 1), 1e-10),
        Check(module, "branch pointer coherence", max(signal_coherence(b.state, projs) for b in g.branches), 1e-10),
        Check(module, "system marginal matches unitary end state",
              _maxabs(partial_trace(g.flatten(), model.system_factors).matrix,
                      partial_trace(end, model.system_factors).matrix), 1e-10),
    ]


def _rule_check(module: str, model: Model, s: StateOperator, g: Gemenge) -> Check:
    rule = apply_rule(model.fe, (s, None), (model.t_a, None), model.classifier)
    res = 0.0
    for b in g.branches:
        rb = rule.branch(b.signal)
        res = max(res, abs(rb.p - b.p), _maxabs(rb.state.matrix, b.state.matrix))
    res = max(res, float(len(rule.branches) != len(g.branches)))
    return Check(module, "rule orchestrator equals direct reduction", res, 1e-10)


# -- per-kind runners ----------------------------------------------------------
# each returns (result payload, checks)


def run_bcl(sc, ctx) -> tuple[dict, list[Check]]:
    mod = "bcl-measurement"
    if sc.observable is None:
        o, outputs = default_bcl()
    else:
        o = _observable(sc.observable, HilbertSpace.single("S", sc.observable.dim))
        outputs = default_outputs(o)
    if sc.outputs is not None:
        outputs = [np.column_stack([vec(v) for v in grp]) for grp in sc.outputs]
    dflt = np.zeros(o.space.dim, complex)
    dflt[o.offsets()[0]] = dflt[o.offsets()[1] if len(o.groups) > 1 else 0] = 1
    phi = _initial(sc.initial, o.space, dflt)
    model = bcl_model(o, outputs)
    s = _as_state(phi)
    amps = decompose(phi, o)
    ch = derive_channels(model.fe, o, model.t_a, model.labels, ctx["workers"])
    g = reduce_flexible(ch, amps)
    end = model.unitary_end(s)
    pp = pointer_probabilities(end, model.pointer)
    checks = [
        Check(mod, "pointer probabilities equal Born probabilities", _maxabs(pp, amps.probabilities), 1e-12),
        Check(mod, "coupling unitarity", model.fe.coupling.unitarity_residual(), 1e-10),
        Check(mod, "channel traces delta_kl", ch.trace_residual(), 1e-10),
        Check(mod, "branch objectification", max(objectification_violation(b.state, model.pointer) for b in g.branches), 1e-10),
    ]
    checks += _common_gemenge_checks("detector-reduction", g, model, end)
    checks.append(_rule_check("detector-reduction", model, s, g))
    payload = {
        "probabilities": dict(zip(model.labels, map(float, amps.probabilities))),
        "pointer_probabilities": dict(zip(model.labels, map(float, pp))),
        "unreduced_coherence": objectification_violation(end, model.pointer),
        "gemenge": gemenge_dict(g, ctx["states"]),
    }
    return payload, checks


def _detector_run(mod: str, model: Model, phi, ctx, reduce: Callable) -> tuple[Gemenge, StateOperator, list[Check], dict]:
    s = _as_state(phi)
    amps = decompose(phi, model.observable)
    if amps.outside_mass() > 1e-10:
        raise ScenarioError(f"initial: state has weight {amps.outside_mass():.3g} outside the registered subspace")
    ch = derive_channels(model.fe, model.observable, model.t_a, model.labels, ctx["workers"])
    g = reduce(ch, amps)
    try:
        end = model.unitary_end(s)
    except PauliBlockedError as e:
        raise RunError(str(e)) from None
    checks = [Check(mod, "channel traces delta_kl", ch.trace_residual(), 1e-10)]
    checks += _common_gemenge_checks(mod, g, model, end)
    checks.append(_rule_check(mod, model, s, g))
    payload = {
        "probabilities": dict(zip(model.labels, map(float, amps.probabilities))),
        "unreduced_coherence": signal_coherence(end, model.classifier.projectors),
        "gemenge": gemenge_dict(g, ctx["states"]),
    }
    return g, end, checks, payload


def run_flexible(sc, ctx):
    mod = "detector-reduction"
    model = flexible_lattice_model(sc.sites, sc.groups, sc.outputs, sc.detector_site, sc.prep_region, sc.detector_region)
    dflt = np.zeros(sc.sites, complex)
    dflt[sorted({s for g in sc.groups for s in g})] = 1
    phi = _initial(sc.initial, model.observable.space, dflt)
    g, end, checks, payload = _detector_run(mod, model, phi, ctx, reduce_flexible)
    eps = sc.tolerances.swallow_eps
    swallowed = [detect_swallow(b.state, model.regions["D_A"], eps, model.slots) for b in g.branches]
    checks.append(Check(mod, "registered system swallowed in every branch", float(not all(swallowed)), 0.0))
    payload["swallowed"] = all(swallowed)
    return payload, checks


def run_fixed(sc, ctx):
    mod = "detector-reduction"
    model = fixed_array_model(sc.subdetectors, sc.degeneracy, sc.environment)
    dflt = np.zeros(model.observable.space.dim, complex)
    dflt[model.observable.offsets()[:-1]] = 1
    phi = _initial(sc.initial, model.observable.space, dflt)
    g, end, checks, payload = _detector_run(mod, model, phi, ctx, lambda ch, a: reduce_fixed(ch, a, model.detector))
    untouched = 0.0
    for b in g.branches:
        for name, st in b.parts.items():
            if name != "excited":
                untouched = max(untouched, _maxabs(st.matrix, model.detector.sub(name).initial.matrix))
    checks.append(Check(mod, "untouched sub-detectors keep their initial state", untouched, 1e-10))
    if sc.environment:
        payload["environment_weight"] = g.weight_of("E")
    return payload, checks


def run_release(sc, ctx):
    mod = "detector-reduction"
    model = release_model()
    phi = _initial(sc.initial, model.observable.space, np.array([1, 1, 0, 0, 0, 0], complex))
    red = lambda ch, a: reduce_release(ch, a, model.detector, model.fe, model.system_factors, model.slots)  # noqa: E731
    g, end, checks, payload = _detector_run(mod, model, phi, ctx, red)
    worst = 0.0
    released = {}
    for b in g.branches:
        m = model.labels.index(b.signal)
        region = model.detector.release_regions[m]
        worst = max(worst, 1 - mass_in(b.parts["released"], region))
        released[b.signal] = cmatrix(b.parts["released"].matrix) if ctx["states"] else None
    checks.append(Check(mod, "released system has its release status", worst, 1e-9))
    payload["released"] = released
    return payload, checks


def run_nonideal(sc, ctx):
    mod = "detector-reduction"
    if sc.observable is None:
        o, _ = default_bcl()
    else:
        o = _observable(sc.observable, HilbertSpace.single("S", sc.observable.dim))
    if len(sc.efficiencies) != len(o.groups):
        raise ScenarioError(f"efficiencies: expected {len(o.groups)} values, got {len(sc.efficiencies)}")
    model = nonideal_model(sc.efficiencies, o)
    dflt = np.zeros(o.space.dim, complex)
    dflt[o.offsets()[:-1]] = 1
    phi = _initial(sc.initial, o.space, dflt)
    amps = decompose(phi, o)
    fam = build_nonideal_families(model.fe, o, model.pointer, sc.efficiencies)
    g = reduce_nonideal(fam, amps, model.labels)
    r1, r0 = fam.trace_residuals()
    projs = model.classifier.projectors
    # ideal limit on the same pointer space
    ideal = nonideal_model([1.0] * len(o.groups), o)
    fam1 = build_nonideal_families(ideal.fe, o, ideal.pointer, [1.0] * len(o.groups))
    g1 = reduce_nonideal(fam1, amps, ideal.labels)
    gf = reduce_flexible(derive_channels(ideal.fe, o, ideal.t_a, ideal.labels), amps)
    lim = max(max(abs(a.p - b.p), _maxabs(a.state.matrix, b.state.matrix)) for a, b in zip(g1.branches, gf.branches))
    lim = max(lim, float(len(g1.branches) != len(gf.branches)))
    checks = [
        Check(mod, "signal plus silent weights sum to 1", abs(float(g.weights.sum()) - 1), 1e-12),
        Check(mod, "tr[T1_mkl] = delta_kl", r1, 1e-10),
        Check(mod, "tr[T0_mnkl] = (1-eta_m) delta_mn delta_kl", r0, 1e-10),
        Check(mod, "branch pointer coherence", max(signal_coherence(b.state, projs) for b in g.branches), 1e-10),
        Check(mod, "unit efficiency equals the ideal reduction", lim, 1e-10),
    ]
    payload = {
        "probabilities": dict(zip(model.labels, map(float, amps.probabilities))),
        "weights": {b.signal: float(b.p) for b in g.branches},
        "gemenge": gemenge_dict(g, ctx["states"]),
    }
    return payload, checks


def _spin_projector(which: str, sign: int) -> np.ndarray:
    up = np.diag([1.0, 0.0]) if sign > 0 else np.diag([0.0, 1.0])
    return np.kron(np.eye(2), up) if which == "S2" else np.kron(up, np.eye(2))


def run_epr(sc, ctx):
    mod = "detector-reduction"
    model = epr_model()
    phi = _initial(sc.initial, model.observable.space, singlet())
    g, end, checks, payload = _detector_run(mod, model, phi, ctx, lambda ch, a: reduce_fixed(ch, a, model.detector))
    same = 0.0
    for b in g.branches:
        sign = 1 if b.signal.endswith("+") else -1
        s2 = partial_trace(b.state, ["S2"]).matrix
        p_same = s2[0, 0].real if sign > 0 else s2[1, 1].real
        same += float(b.p * p_same)
    checks.append(Check(mod, "S2 spin never equals the detector-1 sign", same, 1e-12))
    payload["same_sign_probability"] = same
    payload["S2_marginal"] = cmatrix(partial_trace(g.flatten(), ["S2"]).matrix)
    return payload, checks


def run_epr4(sc, ctx):
    mod = "composite-correlations"
    model = cor.epr4_model()
    phi = _initial(sc.initial, model.observable.space, singlet())
    g, end, checks, payload = _detector_run(mod, model, phi, ctx, lambda ch, a: reduce_fixed(ch, a, model.detector))
    same = cor.same_sign_probability(g)
    checks.append(Check(mod, "same-sign double signals", same, 1e-12))
    payload["same_sign_probability"] = same
    return payload, checks


def run_hbt(sc, ctx):
    mod = "composite-correlations"
    phi = cor.TwoBosonState(to_complex(sc.a), to_complex(sc.b), to_complex(sc.c))
    model = cor.hbt_model()
    g = cor.reduce_hbt(phi, model, ctx["workers"])
    end = cor.unreduced_end_state(phi, model)
    projs = model.classifier.projectors
    checks = [
        Check(mod, "branch weights equal |a|^2, |b|^2, |c|^2",
              _maxabs([g.weight_of(l) for l in cor.HBT_LABELS], phi.weights), 1e-12),
        Check(mod, "branch signal coherence", max(signal_coherence(b.state, projs) for b in g.branches), 1e-10),
        Check(mod, "reduced and unreduced signal probabilities agree",
              _maxabs([np.trace(p @ end.matrix).real for p in projs],
                      [np.trace(p @ g.flatten().matrix).real for p in projs]), 1e-10),
    ]
    payload = {
        "weights": {l: g.weight_of(l) for l in cor.HBT_LABELS},
        "unreduced_coherence": signal_coherence(end, projs),
        "gemenge": gemenge_dict(g, ctx["states"]),
    }
    try:
        c1 = cor.correlation(phi)
        c2 = cor.correlation_closed_form(phi)
    except ValueError:
        payload["correlation"] = None
    else:
        checks.append(Check(mod, "projector and closed-form correlation agree", abs(c1 - c2), 1e-10))
        payload["correlation"] = {"projectors": c1, "closed_form": c2}
        if ctx["trials"] > 0:
            mc, sampled = cor.sample_correlation(g, ctx["trials"], ctx["seed"], ctx["workers"])
            payload["monte_carlo"] = {"trials": mc.trials, "counts": dict(zip(cor.HBT_LABELS, mc.counts)),
                                      "estimate": mc.estimate, "standard_error": mc.standard_error,
                                      "exact": mc.exact}
            checks.append(Check(mod, "Monte Carlo correlation within 3 standard errors", mc.z, 3.0))
            ctx["samples"] = [(i, s) for i, s in enumerate(sampled)]
    return payload, checks


def _chamber_setup(sc):
    geom = chm.ChamberGeometry(sc.layers, sc.cubes, sc.edge)
    m = geom.transverse
    if sc.initial.plane_wave:
        s1 = chm.plane_wave(geom)
    elif sc.initial.cube is not None:
        s1 = chm.localized(geom, sc.initial.cube)
    else:
        v = vec(sc.initial.vector)
        s1 = StateOperator.pure(VectorState.normalized(geom.space, v))
    v = None
    if sc.propagator is not None:
        v = chm.shift_unitary(m, sc.propagator.shift) if sc.propagator.shift is not None else \
            chm.hopping_unitary(m, sc.propagator.hopping)
    return geom, s1, v


def run_chamber(sc, ctx):
    mod = "chamber-tracks"
    geom, s1, v = _chamber_setup(sc)
    trials = ctx["trials"] or 1000
    summary = chm.sample_tracks(s1, geom, v, trials, ctx["seed"], ctx["workers"])
    g = chm.register_layer(s1, geom, 1)
    ops = [chm.embedded_layer_operator(geom, n) for n in range(1, geom.layers + 1)]
    comm = max((_maxabs(a @ b, b @ a) for a in ops for b in ops), default=0.0)
    checks = [
        Check(mod, "layer weights sum to 1", abs(float(g.weights.sum()) - 1), 1e-10),
        Check(mod, "released states confined to their cube column", float(not chm.branch_confined(g, geom)), 0.0),
        Check(mod, "layer observables commute", comm, 1e-12),
        Check(mod, "cubes pairwise disjoint", float(not geom.check_disjoint()), 0.0),
    ]
    if v is None:
        checks.append(Check(mod, "tracks straight without inter-layer motion", 1 - summary.straight_fraction, 0.0))
    if sc.initial.plane_wave:
        checks.append(Check(mod, "first-layer frequencies uniform (chi-square p)", summary.first_layer_p, 0.01, ">="))
    ctx["tracks"] = summary.samples
    payload = {"tracks": summary.to_dict(), "first_layer": gemenge_dict(g, False)}
    return payload, checks


def run_scattering_kind(sc, ctx):
    mod = "scattering"
    setup = sct.SETUPS[sc.preset]()
    cut = setup.stages.cut if sc.cut is None else sc.cut
    if cut > len(setup.stages.steps):
        raise ScenarioError(f"cut: {cut} outside 0..{len(setup.stages.steps)}")
    eps = sc.tolerances.swallow_eps
    rep = setup.run(cut, eps)
    stages = setup.stages.with_cut(cut)
    rule = sct.rule_for(stages, setup.phi, setup.target, setup.projector)
    same = sct.compare_with_rule(rep, rule)
    cuts = [setup.run(c, eps).end.matrix for c in setup.valid_cuts]
    inv = max(_maxabs(c, cuts[0]) for c in cuts)
    checks = [
        Check(mod, "end state equals the standard unitary result",
              sct.scattering_oracle(stages, setup.phi, setup.target, setup.projector, rep), 1e-10),
        Check(mod, "rule without signals returns the unitary end state",
              _maxabs(rule.branches[0].state.matrix, rep.end.matrix), 1e-10),
        Check(mod, "end state independent of the cut", inv, 1e-10),
        Check(mod, "trace preserved", max(abs(rep.intermediate.trace() - 1), abs(rep.end.trace() - 1)), 1e-10),
        Check(mod, "positivity preserved", max(0.0, -min(float(np.linalg.eigvalsh(s.matrix).min())
                                                        for s in (rep.intermediate, rep.end))), 1e-9),
    ]
    payload = rep.to_dict() | {"preset": sc.preset, "cut": cut, "rule_agrees": same,
                               "valid_cuts": list(setup.valid_cuts)}
    if ctx["states"]:
        payload["end_state"] = cmatrix(rep.end.matrix)
    return payload, checks


RUNNERS = {
    "bcl": run_bcl, "flexible": run_flexible, "fixed": run_fixed, "release": run_release,
    "nonideal": run_nonideal, "epr": run_epr, "epr4": run_epr4, "hbt": run_hbt,
    "chamber": run_chamber, "scattering": run_scattering_kind,
}


@dataclass
class RunResult:
    report: dict
    checks: list[Check]
    samples: list | None = None
    tracks: tuple | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def run(sc, seed: int | None = None, trials: int | None = None, workers: int = 1, timing: bool = False,
        states: bool = True, tolerance: float | None = None) -> RunResult:
    """Run one scenario.  The report is deterministic given (scenario, seed)."""
    seed = sc.seed if seed is None else seed
    trials = sc.trials if trials is None else trials
    ctx = {"seed": seed, "trials": trials, "workers": max(1, workers), "states": states}
    tol = tolerance if tolerance is not None else sc.tolerances.check
    t0 = time.perf_counter()
    try:
        payload, checks = RUNNERS[sc.kind](sc, ctx)
    except (ScenarioError, RunError):
        raise
    except ValueError as e:
        raise RunError(f"{sc.name or sc.kind}: {e}") from None
    checks = [c.with_tolerance(tol) for c in checks]
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": sc.kind,
        "name": sc.name,
        "seed": seed,
        "trials": trials,
        "scenario": sc.model_dump(mode="json"),
        "result": payload,
        "checks": [c.to_dict() for c in checks],
        "passed": all(c.passed for c in checks),
    }
    if timing:
        report["timing"] = {"seconds": time.perf_counter() - t0, "workers": ctx["workers"]}
    return RunResult(report, checks, ctx.get("samples"), ctx.get("tracks"))


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"
