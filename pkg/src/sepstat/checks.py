"""Invariant suite over the built-in presets plus randomized structural checks."""

from __future__ import annotations

import json
from typing import Callable

import numpy as np

from . import correlations as cor
from .bcl import decompose, pointer_probabilities
from .hilbert import (
    HilbertSpace,
    Observable,
    Operator,
    StateOperator,
    VectorState,
    complete_unitary,
    eig_grouped,
    fidelity,
    partial_trace,
    tensor,
)
from .locality import (
    Lattice,
    integral_criterion_residual,
    is_D_local,
    locality_residual,
    mask_operator,
    vanishing_test_functions,
)
from .models import bcl_model
from .runner import SCHEMA_VERSION, Check, dumps, from_cmatrix, run
from .scenario import load_preset
from .symmetrization import (
    PauliBlockedError,
    SpeciesPartition,
    build_projector,
    detect_reseparation,
    map_J,
)

SEED = 20111201

MODULES = (
    "hilbert-core", "locality", "symmetrization", "bcl-measurement", "detector-reduction",
    "composite-correlations", "chamber-tracks", "scattering", "cli-runner",
)


def random_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


def random_density(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    g = rng.normal(size=(n, rank or n)) + 1j * rng.normal(size=(n, rank or n))
    m = g @ g.conj().T
    return m / np.trace(m).real


def random_observable(rng: np.random.Generator, sizes=(2, 2, 2)) -> Observable:
    n = sum(sizes)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    space = HilbertSpace.single("S", n)
    groups, at = [], 0
    for i, s in enumerate(sizes):
        groups.append((float(i + 1), q[:, at:at + s]))
        at += s
    return Observable.from_groups(space, groups)


def born_residual(samples: int = 100, seed: int = SEED) -> float:
    """Max |pointer probability - sum_l |c_nl|^2| over random initial vectors."""
    rng = np.random.default_rng(seed)
    o = random_observable(rng)
    model = bcl_model(o)
    worst = 0.0
    for _ in range(samples):
        phi = VectorState(o.space, random_vector(rng, o.space.dim))
        c = o.basis.conj().T @ phi.amplitudes
        want = [np.sum(np.abs(c[a:b]) ** 2) for a, b in zip(o.offsets()[:-1], o.offsets()[1:])]
        end = model.unitary_end(StateOperator.pure(phi))
        worst = max(worst, float(np.max(np.abs(pointer_probabilities(end, model.pointer) - want))))
        worst = max(worst, float(np.max(np.abs(decompose(phi, o).probabilities - want))))
    return worst


def local_state(rng: np.random.Generator, sites: int, region: list[int], mixed: bool) -> np.ndarray:
    k = len(region)
    sub = random_density(rng, k, None if mixed else 1)
    m = np.zeros((sites, sites), dtype=complex)
    m[np.ix_(region, region)] = sub
    return m


def roundtrip_infidelity(statistics: str, samples: int = 50, seed: int = SEED, mixed: bool = False,
                         sites: int = 6) -> float:
    """1 - min fidelity of the factors recovered from J(T x T') by re-separation."""
    rng = np.random.default_rng(seed)
    lat = Lattice(sites)
    d, dp = list(range(sites // 2)), list(range(sites // 2, sites))
    space = HilbertSpace((("S", sites), ("E", sites)))
    p = build_projector(space, SpeciesPartition.of(statistics, ["S", "E"]))
    s_sp, e_sp = HilbertSpace.single("S", sites), HilbertSpace.single("E", sites)
    worst = 0.0
    for _ in range(samples):
        t = StateOperator(s_sp, local_state(rng, sites, d, mixed))
        tp = StateOperator(e_sp, local_state(rng, sites, dp, mixed))
        pair = detect_reseparation(map_J(t, tp, p), lat.region(d), lat.region(dp), p, 1)
        if pair is None:
            return 1.0
        worst = max(worst, 1 - fidelity(t, pair[0]), 1 - fidelity(tp, pair[1]))
    return worst


def pauli_blocked() -> bool:
    space = HilbertSpace((("S", 3), ("E", 3)))
    p = build_projector(space, SpeciesPartition.of("fermion", ["S", "E"]))
    v = np.zeros((3, 3))
    v[1, 1] = 1
    try:
        map_J(StateOperator(HilbertSpace.single("S", 3), v), StateOperator(HilbertSpace.single("E", 3), v), p)
    except PauliBlockedError:
        return True
    return False


def hbt_closed_form_residual(samples: int = 100, seed: int = SEED) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        a, b, c = random_vector(rng, 3)
        phi = cor.TwoBosonState(a, b, c)
        worst = max(worst, abs(cor.correlation(phi) - cor.correlation_closed_form(phi)))
    return worst


# -- structural suites -----------------------------------------------------------


def _hilbert() -> list[Check]:
    m = "hilbert-core"
    rng = np.random.default_rng(SEED)
    o = random_observable(rng, (1, 2, 3))
    herm = eig_grouped(o.op, 3)
    a = np.linalg.qr(rng.normal(size=(6, 2)) + 1j * rng.normal(size=(6, 2)))[0]
    b = np.linalg.qr(rng.normal(size=(6, 2)) + 1j * rng.normal(size=(6, 2)))[0]
    pairs = [(a[:, i], b[:, i]) for i in range(2)]
    u = complete_unitary(pairs, HilbertSpace.single("S", 6))
    x = StateOperator(HilbertSpace.single("x", 3), random_density(rng, 3))
    y = StateOperator(HilbertSpace.single("y", 4), random_density(rng, 4))
    xy = tensor(x, y)
    return [
        Check(m, "grouped eigen decomposition reconstructs the operator", herm.reconstruction_residual(), 1e-10),
        Check(m, "completed unitary is unitary", u.unitarity_residual(), 1e-10),
        Check(m, "completed unitary honours the partial map", float(np.max(np.abs(u.matrix @ a - b))), 1e-10),
        Check(m, "partial trace recovers tensor factors",
              max(float(np.max(np.abs(partial_trace(xy, ["x"]).matrix - x.matrix))),
                  float(np.max(np.abs(partial_trace(xy, ["y"]).matrix - y.matrix)))), 1e-12),
        Check(m, "state trace", abs(xy.trace() - 1), 1e-10),
    ]


def _locality() -> list[Check]:
    m = "locality"
    rng = np.random.default_rng(SEED)
    lat = Lattice(8)
    d = lat.region([1, 2, 3])
    space = HilbertSpace.single("x", 8)
    a = Operator(space, rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8)))
    masked = mask_operator(a, d)
    fs = vanishing_test_functions(space, d, 10, rng)
    return [
        Check(m, "masked operator is D-local", locality_residual(masked, d), 1e-12),
        Check(m, "D-local kernel annihilates test functions vanishing in D",
              max(integral_criterion_residual(masked, f) for f in fs), 1e-12),
        Check(m, "generic operator is not D-local", float(is_D_local(a, d)), 0.0),
    ]


def _symmetrization() -> list[Check]:
    m = "symmetrization"
    checks = []
    space = HilbertSpace((("a", 3), ("b", 3), ("c", 3)))
    for stat in ("boson", "fermion"):
        p = build_projector(space, SpeciesPartition.of(stat, ["a", "b", "c"]))
        checks.append(Check(m, f"{stat} projector idempotent", p.idempotency_residual(), 1e-10))
        checks.append(Check(m, f"{stat} projector self-adjoint", p.adjointness_residual(), 1e-10))
        for mixed in (False, True):
            kind = "mixed" if mixed else "pure"
            checks.append(Check(m, f"{stat} {kind} J/R round trip infidelity",
                                roundtrip_infidelity(stat, mixed=mixed), 1e-9))
    checks.append(Check(m, "Pauli-blocked composition raises", float(not pauli_blocked()), 0.0))
    return checks


def _bcl() -> list[Check]:
    return [Check("bcl-measurement", "Born probabilities over 100 random vectors", born_residual(), 1e-12)]


def _composite() -> list[Check]:
    return [Check("composite-correlations", "HBT projector vs closed form over 100 random amplitudes",
                  hbt_closed_form_residual(), 1e-10)]


def _cli(workers: int) -> list[Check]:
    m = "cli-runner"
    out = []
    for name in ("chamber", "hbt_c0"):
        sc = load_preset(name)
        one = dumps(run(sc, workers=1).report)
        many = dumps(run(sc, workers=max(2, workers)).report)
        again = dumps(run(sc, workers=1).report)
        out.append(Check(m, f"{name} report bytes independent of threads and reruns",
                         float(one != many or one != again), 0.0))
    rep = run(load_preset("fixed_env")).report
    parsed = json.loads(dumps(rep))
    worst = 0.0
    for b, pb in zip(rep["result"]["gemenge"], parsed["result"]["gemenge"]):
        worst = max(worst, float(np.max(np.abs(from_cmatrix(b["state"]) - from_cmatrix(pb["state"])))))
    out.append(Check(m, "branch states round-trip through JSON", worst, 1e-12))
    return out


PRESETS = {
    "bcl-measurement": ("bcl",),
    "detector-reduction": ("bcl", "flexible", "fixed", "fixed_env", "release", "nonideal", "epr"),
    "composite-correlations": ("hbt", "hbt_c0", "epr4"),
    "chamber-tracks": ("chamber", "chamber_hopping"),
    "scattering": ("scattering_no_entanglement", "scattering_entanglement", "scattering_cavity"),
}

SUITES: dict[str, Callable[[int], list[Check]]] = {
    "hilbert-core": lambda w: _hilbert(),
    "locality": lambda w: _locality(),
    "symmetrization": lambda w: _symmetrization(),
    "bcl-measurement": lambda w: _bcl(),
    "composite-correlations": lambda w: _composite(),
    "cli-runner": _cli,
}


def _preset_checks(name: str, workers: int, module: str | None) -> list[Check]:
    checks = run(load_preset(name), workers=workers, states=False).checks
    return [Check(c.module, f"[{name}] {c.name}", c.residual, c.bound, c.relation)
            for c in checks if module is None or c.module == module]


def check_all(module: str | None = None, tolerance: float | None = None, workers: int = 1) -> dict:
    """Run the invariant suite; failures are recorded, never raised."""
    if module is not None and module not in MODULES:
        raise ValueError(f"unknown module {module!r}; expected one of {', '.join(MODULES)}")
    mods = MODULES if module is None else (module,)
    checks: list[Check] = []
    for mod in mods:
        if mod in SUITES:
            checks += SUITES[mod](workers)
    presets = sorted({p for mod in mods for p in PRESETS.get(mod, ())})
    for name in presets:
        try:
            checks += _preset_checks(name, workers, module)
        except ValueError as e:
            checks.append(Check(module or "cli-runner", f"preset {name} runs: {e}", 1.0, 0.0))
    checks = [c.with_tolerance(tolerance) for c in checks]
    return {
        "schema_version": SCHEMA_VERSION,
        "filter": module,
        "checks": [c.to_dict() for c in checks],
        "passed": all(c.passed for c in checks),
    }
