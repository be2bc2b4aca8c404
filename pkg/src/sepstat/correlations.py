"""Two-boson intensity-correlation model and the four-detector EPR array."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bcl import decompose
from .hilbert import (
    TOL_HERM,
    TOL_TR,
    HilbertSpace,
    Observable,
    Operator,
    StateOperator,
    VectorState,
    complete_unitary,
    tensor_all,
)
from .models import SPIN_DOWN, SPIN_UP, Model, _ket, _proj, _pure, singlet, tensor_vec
from .locality import Lattice
from .reduction import DetectorSpec, Gemenge, SignalClassifier, SubDetector, derive_channels, reduce_fixed, reduce_flexible
from .sampling import sample_branches
from .symmetrization import FormalEvolution, Species, SpeciesPartition, SymmetryProjector, build_projector

SPIN_SPACE = HilbertSpace((("p1", 2), ("p2", 2)))


@dataclass(frozen=True)
class TwoBosonState:
    """``a|++> + b|--> + c|+->`` with ``|+->`` the symmetric combination."""

    a: complex
    b: complex
    c: complex

    def __post_init__(self):
        n = abs(self.a) ** 2 + abs(self.b) ** 2 + abs(self.c) ** 2
        if abs(n - 1) > TOL_TR:
            raise ValueError(f"|a|^2 + |b|^2 + |c|^2 must equal 1, got {n!r}")

    @classmethod
    def normalized(cls, a, b, c) -> TwoBosonState:
        n = np.sqrt(abs(a) ** 2 + abs(b) ** 2 + abs(c) ** 2)
        return cls(a / n, b / n, c / n)

    @property
    def weights(self) -> np.ndarray:
        return np.array([abs(self.a) ** 2, abs(self.b) ** 2, abs(self.c) ** 2])

    def vector(self) -> VectorState:
        pm = (np.kron(SPIN_UP, SPIN_DOWN) + np.kron(SPIN_DOWN, SPIN_UP)) / np.sqrt(2)
        v = self.a * np.kron(SPIN_UP, SPIN_UP) + self.b * np.kron(SPIN_DOWN, SPIN_DOWN) + self.c * pm
        return VectorState(SPIN_SPACE, v)

    def state(self) -> StateOperator:
        return StateOperator.pure(self.vector())


@dataclass(frozen=True)
class SignalProjectors:
    pp: np.ndarray
    mm: np.ndarray
    pm: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    def residuals(self) -> dict[str, float]:
        out = {}
        for name in ("pp", "mm", "pm", "plus", "minus"):
            p = getattr(self, name)
            out[f"{name} idempotent"] = float(np.max(np.abs(p @ p - p)))
            out[f"{name} self-adjoint"] = float(np.max(np.abs(p - p.conj().T)))
        out["P+ = P++ + P+-"] = float(np.max(np.abs(self.plus - self.pp - self.pm)))
        out["P- = P-- + P+-"] = float(np.max(np.abs(self.minus - self.mm - self.pm)))
        out["P+P- = P+-"] = float(np.max(np.abs(self.plus @ self.minus - self.pm)))
        return out


def build_projectors(p1p=None, p1m=None, p2p=None, p2m=None) -> SignalProjectors:
    """Composite projectors from single-particle eigenprojectors (standard spin basis by default)."""
    up, dn = _proj(SPIN_UP), _proj(SPIN_DOWN)
    singles = [np.asarray(x if x is not None else d, dtype=complex) for x, d in ((p1p, up), (p1m, dn), (p2p, up), (p2m, dn))]
    for i in (0, 2):
        pp, pmi = singles[i], singles[i + 1]
        if (np.max(np.abs(pp @ pp - pp)) > TOL_HERM or np.max(np.abs(pmi @ pmi - pmi)) > TOL_HERM
                or np.max(np.abs(pp @ pmi)) > TOL_HERM):
            raise ValueError(f"particle {i // 2 + 1} projectors violate P+P+ = P+, P-P- = P-, P+P- = 0")
    a_p, a_m, b_p, b_m = singles
    pp = np.kron(a_p, b_p)
    mm = np.kron(a_m, b_m)
    pm = np.kron(a_p, b_m) + np.kron(a_m, b_p)
    out = SignalProjectors(pp, mm, pm, pp + pm, mm + pm)
    worst = max(out.residuals().values())
    if worst > TOL_HERM:
        raise ValueError(f"composite projector relations fail (residual {worst:.3e})")
    return out


def correlation(s: StateOperator | TwoBosonState, proj: SignalProjectors | None = None) -> float:
    """Normalised correlation between the +1 and -1 registrations."""
    proj = proj or build_projectors()
    rho = s.state().matrix if isinstance(s, TwoBosonState) else s.matrix
    tp = np.trace(rho @ proj.plus).real
    tm = np.trace(rho @ proj.minus).real
    tpm = np.trace(rho @ proj.plus @ proj.minus).real
    return correlation_from_probabilities(tp, tm, tpm)


def correlation_from_probabilities(p_plus: float, p_minus: float, p_both: float) -> float:
    for p in (p_plus, p_minus):
        if p <= 1e-12 or p >= 1 - 1e-12:
            raise ValueError("correlation undefined: a registration probability is 0 or 1")
    return float((p_both - p_plus * p_minus) / np.sqrt((p_plus - p_plus**2) * (p_minus - p_minus**2)))


def correlation_closed_form(phi: TwoBosonState) -> float:
    a2, b2 = abs(phi.a) ** 2, abs(phi.b) ** 2
    den = (a2 - a2**2) * (b2 - b2**2)
    if den <= 0:
        raise ValueError("correlation undefined: a registration probability is 0 or 1")
    return float(-a2 * b2 / np.sqrt(den))


# detector basis per sub-detector: nothing, particle 1, particle 2, both
D0, D1, D2, D12 = range(4)
HBT_LABELS = ("A+(12)", "A-(12)", "A+(1)A-(2)")


def exchange_operator() -> np.ndarray:
    """Swap the particles and relabel 1 <-> 2 in both detector records."""
    swap = np.zeros((4, 4))
    for i in range(2):
        for j in range(2):
            swap[2 * j + i, 2 * i + j] = 1
    relabel = np.eye(4)[:, [D0, D2, D1, D12]]
    return np.kron(swap, np.kron(relabel, relabel))


def hbt_model() -> Model:
    space = SPIN_SPACE * HilbertSpace((("Dp", 4), ("Dm", 4)))
    x = exchange_operator()
    p = SymmetryProjector(space, SpeciesPartition((Species("boson", "boson", ("p1", "p2")),)), (np.eye(space.dim) + x) / 2)
    e = np.eye(4, dtype=complex)
    uu = np.kron(SPIN_UP, SPIN_UP)
    pm_sym = (np.kron(SPIN_UP, SPIN_DOWN) + np.kron(SPIN_DOWN, SPIN_UP)) / np.sqrt(2)
    o = Observable.from_groups(
        SPIN_SPACE, [(2.0, uu), (-2.0, np.kron(SPIN_DOWN, SPIN_DOWN)), (0.0, pm_sym)]
    )
    idle = np.kron(e[D0], e[D0])
    images = [np.kron(e[D12], e[D0]), np.kron(e[D0], e[D12]), np.kron(e[D1], e[D2])]
    pairs = []
    for g, img in zip(o.groups, images):
        src = p.matrix @ np.kron(g.vectors[:, 0], idle)
        dst = p.matrix @ np.kron(uu, img)
        pairs.append((src / np.linalg.norm(src), dst / np.linalg.norm(dst)))
    u = complete_unitary(pairs, space, within=p.matrix)
    lat = Lattice(3)
    fe = FormalEvolution(u, p, (lat.region([0]), lat.region([1, 2])))
    t_a = _pure(HilbertSpace((("Dp", 4), ("Dm", 4))), idle)
    i_s = np.eye(4)
    sig = [np.kron(i_s, _proj(images[0])), np.kron(i_s, _proj(images[1])),
           np.kron(i_s, _proj(np.kron(e[D1], e[D2])) + _proj(np.kron(e[D2], e[D1])))]
    cls = SignalClassifier(HBT_LABELS, tuple(sig))
    subs = (
        SubDetector("A+", ("Dp",), _pure(HilbertSpace.single("Dp", 4), e[D0]), lat.region([1])),
        SubDetector("A-", ("Dm",), _pure(HilbertSpace.single("Dm", 4), e[D0]), lat.region([2])),
    )
    det = DetectorSpec("fixed", subs, (("A+",), ("A-",), ("A+", "A-")), prep_region=lat.region([0]))
    return Model("hbt", fe, o, t_a, cls, HBT_LABELS, ("p1", "p2"), det)


def reduce_hbt(phi: TwoBosonState, model: Model | None = None, workers: int | None = None) -> Gemenge:
    model = model or hbt_model()
    ch = derive_channels(model.fe, model.observable, model.t_a, model.labels, workers)
    return reduce_flexible(ch, decompose(phi.vector(), model.observable))


def unreduced_end_state(phi: TwoBosonState, model: Model | None = None) -> StateOperator:
    """Unreduced formal end state."""
    model = model or hbt_model()
    return model.unitary_end(phi.state())


def fire_probabilities(rho: StateOperator, model: Model) -> tuple[float, float, float]:
    """P(A+ signals), P(A- signals), P(both signal) read off the detector records."""
    probs = [float(np.trace(pr @ rho.matrix).real) for pr in model.classifier.projectors]
    return probs[0] + probs[2], probs[1] + probs[2], probs[2]


@dataclass(frozen=True)
class MonteCarloCorrelation:
    trials: int
    counts: tuple[int, ...]
    estimate: float
    standard_error: float
    exact: float

    @property
    def z(self) -> float:
        diff = abs(self.estimate - self.exact)
        if self.standard_error == 0:
            # degenerate sampling (e.g. C = -1 exactly): only an exact hit is consistent
            return 0.0 if diff <= 1e-12 else float("inf")
        return diff / self.standard_error


def _c_from_freq(f: np.ndarray) -> float:
    return correlation_from_probabilities(f[0] + f[2], f[1] + f[2], f[2])


def sample_correlation(g: Gemenge, trials: int, seed: int, workers: int = 1) -> tuple[MonteCarloCorrelation, np.ndarray]:
    """Sample signals from the reduced gemenge and estimate C with a
    delta-method standard error."""
    idx = sample_branches(g.weights, trials, seed, workers)
    counts = np.zeros(len(HBT_LABELS), dtype=int)
    labels = g.labels
    for j, c in zip(*np.unique(idx, return_counts=True)):
        counts[HBT_LABELS.index(labels[j])] = c
    f = counts / trials
    est = _c_from_freq(f)
    cov = (np.diag(f) - np.outer(f, f)) / trials
    grad = np.zeros(3)
    h = 1e-6
    for i in range(3):
        up, dn = f.copy(), f.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (_c_from_freq(up) - _c_from_freq(dn)) / (2 * h)
    se = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    w = np.zeros(3)
    for lbl, p in zip(labels, g.weights):
        w[HBT_LABELS.index(lbl)] = p
    exact = _c_from_freq(w)
    sampled = np.array([labels[j] for j in idx])
    return MonteCarloCorrelation(trials, tuple(int(c) for c in counts), est, se, exact), sampled


# -- four sub-detector EPR ------------------------------------------------------


def epr4_model() -> Model:
    """A1+/A1- register S1, A2+/A2- register S2; a channel is a sign pair."""
    s_space = SPIN_SPACE.relabel({"p1": "S1", "p2": "S2"})
    e = np.eye(4, dtype=complex)
    signs = [("+", "+"), ("+", "-"), ("-", "+"), ("-", "-")]
    # value 2*s1 + s2 separates the four sign pairs
    vals = [2 * (1 if a == "+" else -1) + (1 if b == "+" else -1) for a, b in signs]
    o = Observable.from_groups(s_space, [(float(v), e[:, i]) for i, v in enumerate(vals)])
    names = ["A1+", "A1-", "A2+", "A2-"]
    a_space = HilbertSpace(tuple((n.replace("+", "p").replace("-", "m"), 2) for n in names))
    space = s_space * a_space
    ready, fired = _ket(2, 0), _ket(2, 1)

    def record(hit: tuple[str, ...]):
        return tensor_vec([fired if n in hit else ready for n in names])

    touched = [(f"A1{a}", f"A2{b}") for a, b in signs]
    pairs = [(np.kron(e[:, i], record(())), np.kron(e[:, i], record(touched[i]))) for i in range(4)]
    u = complete_unitary(pairs, space)
    fe = FormalEvolution(u, build_projector(space))
    lat = Lattice(5)
    subs = tuple(
        SubDetector(n, (a_space.labels[i],), _pure(HilbertSpace.single(a_space.labels[i], 2), ready), lat.region([i + 1]))
        for i, n in enumerate(names)
    )
    det = DetectorSpec("fixed", subs, tuple(touched), prep_region=lat.region([0]))
    t_a = tensor_all([s.initial for s in subs])
    labels = tuple("&".join(t) for t in touched)
    cls = SignalClassifier(labels, tuple(np.kron(np.eye(4), _proj(record(t))) for t in touched))
    return Model("epr4", fe, o, t_a, cls, labels, ("S1", "S2"), det)


def reduce_epr4(initial: VectorState | Operator | None = None, model: Model | None = None) -> Gemenge:
    model = model or epr4_model()
    if initial is None:
        initial = VectorState(model.observable.space, singlet())
    ch = derive_channels(model.fe, model.observable, model.t_a, model.labels)
    return reduce_fixed(ch, decompose(initial, model.observable), model.detector)


def same_sign_probability(g: Gemenge) -> float:
    return float(sum(b.p for b in g.branches if b.signal in ("A1+&A2+", "A1-&A2-")))
