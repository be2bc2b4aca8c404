"""One test per acceptance criterion, at the stated tolerances."""

import numpy as np

from sepstat import correlations as cor
from sepstat.chamber import ChamberGeometry, plane_wave, sample_tracks
from sepstat.checks import born_residual, check_all, hbt_closed_form_residual, pauli_blocked, roundtrip_infidelity
from sepstat.runner import dumps, run
from sepstat.scattering import SETUPS, compare_with_rule, rule_for, scattering_oracle
from sepstat.scenario import load_preset


def _checks(name, **kw):
    return {c["name"]: c["residual"] for c in run(load_preset(name), states=False, **kw).report["checks"]}


def test_1_born_rule(criterion):
    r = born_residual(100)
    criterion(1, "Born-rule reproducibility", r <= 1e-12, f"max residual {r:.2e} <= 1e-12")


OBJECTIFICATION = {
    "flexible": "branch pointer coherence",
    "fixed": "branch pointer coherence",
    "fixed_env": "branch pointer coherence",
    "release": "branch pointer coherence",
    "nonideal": "branch pointer coherence",
    "epr": "branch pointer coherence",
    "hbt": "branch signal coherence",
    "epr4": "branch pointer coherence",
}


def test_2_objectification(criterion):
    worst = max(_checks(n, trials=0)[key] for n, key in OBJECTIFICATION.items())
    unreduced = min(run(load_preset(n), trials=0, states=False).report["result"]["unreduced_coherence"]
                    for n in ("bcl", "hbt"))
    ok = worst < 1e-10 and unreduced > 0.1
    criterion(2, "objectification", ok, f"branch coherence {worst:.2e} < 1e-10, unreduced {unreduced:.3f} > 0.1")


def test_3_marginal_consistency(criterion):
    worst = max(_checks(n)["system marginal matches unitary end state"] for n in ("flexible", "fixed", "fixed_env"))
    criterion(3, "marginal consistency", worst <= 1e-10, f"max residual {worst:.2e} <= 1e-10")


def test_4_symmetrization_roundtrip(criterion):
    worst = max(roundtrip_infidelity(stat, 50, mixed=mixed) for stat in ("boson", "fermion") for mixed in (False, True))
    blocked = pauli_blocked()
    ok = worst <= 1e-9 and blocked
    criterion(4, "symmetrization round trip", ok, f"1 - fidelity {worst:.2e} <= 1e-9, Pauli-blocked raises {blocked}")


def test_5_hbt_correlation(criterion):
    closed = hbt_closed_form_residual(100)
    c0 = cor.correlation(cor.TwoBosonState(1 / np.sqrt(2), 1 / np.sqrt(2), 0))
    mc = run(load_preset("hbt"), states=False).report["result"]["monte_carlo"]
    z = abs(mc["estimate"] - mc["exact"]) / mc["standard_error"]
    ok = closed <= 1e-10 and abs(c0 + 1) <= 1e-12 and mc["trials"] == 100_000 and z <= 3
    criterion(5, "HBT correlation", ok,
              f"closed form {closed:.2e} <= 1e-10, |C(c=0)+1| {abs(c0 + 1):.2e} <= 1e-12, MC |z| {z:.2f} <= 3")


def test_6_epr(criterion):
    worst, same = 0.0, 0.0
    for name in ("epr", "epr4"):
        res = run(load_preset(name), states=False).report["result"]
        ps = [b["p"] for b in res["gemenge"]]
        worst = max(worst, max(abs(p - 0.5) for p in ps), float(len(ps) != 2))
        same = max(same, res["same_sign_probability"])
    ok = worst <= 1e-12 and same == 0.0
    criterion(6, "EPR", ok, f"|p - 1/2| {worst:.2e} <= 1e-12, same-sign probability {same}")


def test_7_nonideal(criterion):
    sc = load_preset("nonideal")
    res = run(sc, states=False).report
    p = list(res["result"]["probabilities"].values())
    eta = sc.efficiencies
    want = [pi * e for pi, e in zip(p, eta)] + [sum(pi * (1 - e) for pi, e in zip(p, eta))]
    got = list(res["result"]["weights"].values())
    wres = max(max(abs(a - b) for a, b in zip(got, want)), abs(sum(got) - 1))
    ck = {c["name"]: c["residual"] for c in res["checks"]}
    tr = max(ck["tr[T1_mkl] = delta_kl"], ck["tr[T0_mnkl] = (1-eta_m) delta_mn delta_kl"])
    lim = ck["unit efficiency equals the ideal reduction"]
    ok = wres <= 1e-12 and tr <= 1e-10 and lim <= 1e-10
    criterion(7, "non-ideal detector", ok,
              f"weights {wres:.2e} <= 1e-12, A' traces {tr:.2e} <= 1e-10, eta=1 limit {lim:.2e} <= 1e-10")


def test_8_chamber_tracks(criterion):
    g = ChamberGeometry(4, 5, 2)
    s = sample_tracks(plane_wave(g), g, np.eye(g.transverse), 10_000, seed=42)
    every = all(len(set(t.cubes)) == 1 for t in s.samples)
    ok = s.first_layer_p > 0.01 and s.straight_fraction == 1.0 and every and len(s.samples) == 10_000
    criterion(8, "chamber tracks", ok, f"chi-square p {s.first_layer_p:.3f} > 0.01, straight {s.straight_fraction}")


def test_9_scattering(criterion):
    oracle = rule = cut = 0.0
    agrees = True
    for setup in (f() for f in SETUPS.values()):
        rep = setup.run()
        oracle = max(oracle, scattering_oracle(setup.stages, setup.phi, setup.target, setup.projector, rep))
        g = rule_for(setup.stages, setup.phi, setup.target, setup.projector)
        agrees &= len(g.branches) == 1 and compare_with_rule(rep, g)
        rule = max(rule, float(np.max(np.abs(g.branches[0].state.matrix - rep.end.matrix))))
        ends = [setup.run(c).end.matrix for c in setup.valid_cuts]
        agrees &= len(ends) >= 3
        cut = max(cut, max(float(np.max(np.abs(e - ends[0]))) for e in ends))
    ok = oracle <= 1e-10 and agrees and cut <= 1e-10
    criterion(9, "scattering", ok, f"oracle {oracle:.2e}, rule {rule:.2e}, cut {cut:.2e}, all <= 1e-10")


def test_10_determinism(criterion):
    rep = check_all()
    same = True
    for name in ("chamber", "chamber_hopping", "hbt"):
        sc = load_preset(name)
        one = dumps(run(sc, workers=1).report)
        same &= one == dumps(run(sc, workers=4).report) == dumps(run(sc, workers=1).report)
    ok = rep["passed"] and same
    n = len(rep["checks"])
    criterion(10, "determinism", ok, f"check {sum(c['pass'] for c in rep['checks'])}/{n}, byte-identical {same}")
