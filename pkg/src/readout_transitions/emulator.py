"""Monte-Carlo emulation of the rate-measurement pipeline.

Pipeline: herald the prepared level with a first readout, let the qubit
jump stochastically under a rate generator for the drive duration, read it
out again, and assign each readout to a level by its angle in the IQ plane.
:func:`extract_rates` then fits the generator back from the assignment
histograms, closing the loop.

Levels ``0 .. n_levels-1`` are tracked individually; everything above is
lumped into one absorbing state labelled ``"{n_levels}+"``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize
from scipy.special import ndtr

from .rates import DriveSpec, RateEntry, RateSet

SHOT_BLOCK = 1024
#: One-sided 95% likelihood-ratio threshold (half the 90% chi^2_1 quantile).
UPPER_BOUND_DNLL = 1.353


class IdentifiabilityError(RuntimeError):
    """The likelihood is flat along some parameter direction."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


# ------------------------------------------------------------------ generator


@dataclass(frozen=True)
class RateGenerator:
    """Continuous-time Markov generator: ``G[n, m]`` is the rate m -> n."""

    matrix: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        g = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", g)
        if g.shape != (len(self.labels),) * 2:
            raise ValueError("generator shape does not match labels")
        off = g - np.diag(np.diag(g))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be non-negative")
        scale = max(np.abs(g).max(), 1.0)
        if np.any(np.abs(g.sum(axis=0)) > 1e-12 * scale):
            raise ValueError("generator columns must sum to zero")

    @property
    def n_states(self) -> int:
        return len(self.labels)

    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.matrix)


def state_labels(n_levels: int) -> tuple[str, ...]:
    return tuple(str(i) for i in range(n_levels)) + (f"{n_levels}+",)


def build_generator(rates: RateSet, n_levels: int = 4) -> RateGenerator:
    """Generator over levels ``0..n_levels-1`` plus an absorbing lumped top state.

    Rates into any level ``>= n_levels`` feed the lumped state; rates out of
    such levels are dropped.
    """
    n = n_levels + 1
    g = np.zeros((n, n))
    for e in rates:
        if e.rate < 0:
            raise ValueError(f"negative rate {e.initial}->{e.final}")
        if e.initial >= n_levels:
            continue
        f = min(e.final, n_levels)
        if f == e.initial:
            continue
        g[f, e.initial] += e.rate
    g -= np.diag(g.sum(axis=0))
    return RateGenerator(g, state_labels(n_levels))


def expm(a: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Matrix exponential by scaling and squaring of a truncated Taylor series."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    ident = np.eye(n)
    norm = np.abs(a).sum(axis=0).max() if n else 0.0
    if norm == 0:
        return ident
    s = max(0, int(math.ceil(math.log2(norm / 0.5))))
    b = a / 2.0**s
    out = ident.copy()
    term = ident
    for k in range(1, 60):
        term = term @ b / k
        out += term
        if np.abs(term).max() <= rtol * 1e-4 * np.abs(out).max():
            break
    for _ in range(s):
        out = out @ out
    return out


def evolve_populations(g: RateGenerator, p0, t: float) -> np.ndarray:
    """Populations at time ``t`` starting from the distribution ``p0``."""
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (g.n_states,) or np.any(p0 < -1e-12) or abs(p0.sum() - 1) > 1e-9:
        raise ValueError("p0 must be a probability vector over the generator states")
    if t < 0:
        raise ValueError("t must be non-negative")
    p = expm(g.matrix * t) @ p0
    p = np.where(p < 0, 0.0, p)
    return p / p.sum()


def _jump_tables(g: RateGenerator):
    rates = g.exit_rates()
    off = g.matrix - np.diag(np.diag(g.matrix))
    with np.errstate(invalid="ignore", divide="ignore"):
        branch = np.where(rates > 0, off / rates, 0.0)
    cum = np.cumsum(branch, axis=0).T  # cum[m] = cumulative branch ratios out of m
    cum[:, -1] = np.where(rates > 0, 1.0, cum[:, -1])
    return rates, cum


def sample_trajectories(g: RateGenerator, initial, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Gillespie sampling of final states for an array of initial states."""
    state = np.array(initial, dtype=np.int64, copy=True).ravel()
    if duration <= 0 or state.size == 0:
        return state
    rates, cum = _jump_tables(g)
    t = np.zeros(state.size)
    active = rates[state] > 0
    while np.any(active):
        idx = np.nonzero(active)[0]
        r = rates[state[idx]]
        t[idx] += rng.exponential(1.0 / r)
        jump = t[idx] < duration
        jidx = idx[jump]
        u = rng.random(jidx.size)
        state[jidx] = np.argmax(u[:, None] < cum[state[jidx]], axis=1)
        active[idx[~jump]] = False
        active[jidx] = rates[state[jidx]] > 0
    return state


def sample_trajectory(g: RateGenerator, initial: int, duration: float, rng: np.random.Generator) -> int:
    return int(sample_trajectories(g, [initial], duration, rng)[0])


# ------------------------------------------------------------ IQ and readout


@dataclass(frozen=True)
class AssignmentThresholds:
    """Angular state assignment on a circle of blobs placed clockwise.

    State ``s`` has its mean at angle ``theta0 - s * spacing``. The band of
    state 0 starts ``outer`` angular spreads before its mean (counter-
    clockwise side), consecutive bands meet at midpoints, and the last
    (lumped) band takes every remaining angle.
    """

    n_states: int = 5
    radius: float = 1.0
    spacing: float = 2 * math.pi / 6
    theta0: float = math.pi / 2
    separation_ratio: float = 6.0
    outer: float = 4.0

    def __post_init__(self):
        if self.n_states < 2:
            raise ValueError("need at least two states")
        if not 0 < self.spacing * (self.n_states - 1) < 2 * math.pi:
            raise ValueError("blobs do not fit on the circle")
        if not self.separation_ratio > 0:
            raise ValueError("separation_ratio must be positive (inf gives noiseless blobs)")
        if self.outer * self.angular_sigma + (self.n_states - 1) * self.spacing >= 2 * math.pi:
            raise ValueError("outer margin overlaps the last band")

    @property
    def sigma(self) -> float:
        """Radial (isotropic) blob spread: chord between neighbours / ratio."""
        if math.isinf(self.separation_ratio):
            return 0.0
        return 2 * self.radius * math.sin(self.spacing / 2) / self.separation_ratio

    @property
    def angular_sigma(self) -> float:
        return self.sigma / self.radius

    @property
    def mean_angles(self) -> np.ndarray:
        return self.theta0 - self.spacing * np.arange(self.n_states)

    @property
    def start(self) -> float:
        return self.theta0 + self.outer * self.angular_sigma

    @property
    def thresholds(self) -> np.ndarray:
        """Band edges in the clockwise coordinate measured from :attr:`start`."""
        mid = self.outer * self.angular_sigma + self.spacing * (np.arange(self.n_states - 1) + 0.5)
        return np.concatenate([[0.0], mid])

    def threshold_angles(self) -> np.ndarray:
        return self.start - self.thresholds

    def clockwise(self, angle):
        return np.mod(self.start - np.asarray(angle, dtype=float), 2 * math.pi)

    def labels(self) -> tuple[str, ...]:
        return state_labels(self.n_states - 1)

    def confusion_matrix(self) -> np.ndarray:
        """``C[a, s]`` = probability that a blob of state ``s`` is assigned ``a``."""
        n = self.n_states
        if self.sigma == 0:
            return np.eye(n)
        edges = np.concatenate([self.thresholds, [2 * math.pi]])
        rho = self.radius / self.sigma
        c = np.zeros((n, n))
        for s in range(n):
            mu = self.clockwise(self.mean_angles[s])
            for a in range(n):
                lo, hi = edges[a], edges[a + 1]
                c[a, s] = quad(_angular_density, lo, hi, args=(mu, rho), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        return c / c.sum(axis=0)


def _angular_density(u, mu, rho):
    """Density of the polar angle of an isotropic 2D Gaussian (unit sigma) centred at radius rho, angle mu."""
    b = rho * math.cos(u - mu)
    return (
        math.exp(-0.5 * rho * rho) / (2 * math.pi)
        + b * math.exp(-0.5 * (rho * rho - b * b)) * ndtr(b) / math.sqrt(2 * math.pi)
    )


def synthesize_iq(state, thresholds: AssignmentThresholds, rng: np.random.Generator) -> np.ndarray:
    """Complex IQ points drawn around the blob centres of ``state`` (scalar or array)."""
    state = np.asarray(state, dtype=np.int64)
    centre = thresholds.radius * np.exp(1j * thresholds.mean_angles[state])
    sigma = thresholds.sigma
    if sigma == 0:
        return centre.astype(complex)
    noise = rng.standard_normal(state.shape + (2,)) * sigma
    return centre + noise[..., 0] + 1j * noise[..., 1]


def assign_state(iq, thresholds: AssignmentThresholds):
    """Band index for each IQ point; the last index is the lumped state.

    A point exactly on a threshold goes to the lower-index band.
    """
    iq = np.asarray(iq)
    if iq.dtype.kind != "c":
        iq = iq[..., 0] + 1j * iq[..., 1]
    u = thresholds.clockwise(np.angle(iq))
    idx = np.searchsorted(thresholds.thresholds, u, side="left")
    out = np.maximum(idx - 1, 0)
    return out if out.ndim else int(out)


def label_of(index: int, n_states: int) -> str:
    return state_labels(n_states - 1)[index]


# ------------------------------------------------------------- experiments


@dataclass(frozen=True)
class PulseSequence:
    """Herald, drive for each duration, read out.

    ``readout_backaction`` applies the generator for ``readout_time`` during
    both readout windows; it is off by default.
    """

    initial_state: int
    drive_durations: tuple[float, ...]
    drive: DriveSpec | None = None
    readout_time: float = 4e-6
    readout_backaction: bool = False

    def __post_init__(self):
        d = tuple(float(x) for x in self.drive_durations)
        object.__setattr__(self, "drive_durations", d)
        if not d:
            raise ValueError("need at least one duration")
        if any(x < 0 for x in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError("durations must be non-negative and strictly increasing")
        if self.initial_state < 0:
            raise ValueError("initial_state must be >= 0")


@dataclass(frozen=True)
class ShotRecord:
    duration_index: int
    duration: float
    iq: tuple[float, float]
    assigned: str
    truth: str
    initial: int
    heralded: str


@dataclass
class ShotTable:
    """Columnar store of shots; iterating yields :class:`ShotRecord` objects."""

    durations: np.ndarray
    duration_index: np.ndarray
    i: np.ndarray
    q: np.ndarray
    assigned: np.ndarray
    truth: np.ndarray
    initial: np.ndarray
    heralded: np.ndarray
    n_states: int
    thresholds: AssignmentThresholds | None = None

    def __len__(self):
        return self.assigned.size

    def __iter__(self) -> Iterator[ShotRecord]:
        lab = state_labels(self.n_states - 1)
        for k in range(len(self)):
            j = int(self.duration_index[k])
            yield ShotRecord(
                j, float(self.durations[j]), (float(self.i[k]), float(self.q[k])),
                lab[self.assigned[k]], lab[self.truth[k]], int(self.initial[k]), lab[self.heralded[k]],
            )

    @classmethod
    def concatenate(cls, tables: Sequence["ShotTable"]) -> "ShotTable":
        """Stack tables that share one duration grid."""
        first = tables[0]
        for t in tables[1:]:
            if not np.array_equal(t.durations, first.durations) or t.n_states != first.n_states:
                raise ValueError("tables must share durations and state count")
        cat = {k: np.concatenate([getattr(t, k) for t in tables])
               for k in ("duration_index", "i", "q", "assigned", "truth", "initial", "heralded")}
        return cls(first.durations, n_states=first.n_states, thresholds=first.thresholds, **cat)

    @classmethod
    def from_records(cls, records: Sequence[ShotRecord], n_states: int | None = None) -> "ShotTable":
        records = list(records)
        if n_states is None:
            n_states = max(int(r.assigned.rstrip("+")) for r in records) + 1
            n_states = max(n_states, 2)
        lab = {s: k for k, s in enumerate(state_labels(n_states - 1))}
        n_dur = max(r.duration_index for r in records) + 1
        durations = np.zeros(n_dur)
        for r in records:
            durations[r.duration_index] = r.duration
        return cls(
            durations,
            np.array([r.duration_index for r in records]),
            np.array([r.iq[0] for r in records]),
            np.array([r.iq[1] for r in records]),
            np.array([lab[r.assigned] for r in records]),
            np.array([lab[r.truth] for r in records]),
            np.array([r.initial for r in records]),
            np.array([lab[r.heralded] for r in records]),
            n_states,
        )

    def to_csv(self) -> str:
        lab = state_labels(self.n_states - 1)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["duration_s", "i", "q", "assigned", "truth", "initial", "heralded"])
        for k in range(len(self)):
            w.writerow([
                repr(float(self.durations[self.duration_index[k]])), repr(float(self.i[k])), repr(float(self.q[k])),
                lab[self.assigned[k]], lab[self.truth[k]], int(self.initial[k]), lab[self.heralded[k]],
            ])
        return buf.getvalue()

    def counts(self, postselect: bool = True) -> dict[int, np.ndarray]:
        """Per prepared level, an array ``[duration, assigned]`` of shot counts."""
        out = {}
        for init in np.unique(self.initial):
            sel = self.initial == init
            if postselect:
                sel &= self.heralded == init
            c = np.zeros((self.durations.size, self.n_states), dtype=np.int64)
            np.add.at(c, (self.duration_index[sel], self.assigned[sel]), 1)
            out[int(init)] = c
        return out


def _block_rng(seed, initial, dur_idx, block):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(initial), int(dur_idx), int(block)]))


def run_experiment(
    seq: PulseSequence,
    g: RateGenerator,
    thresholds: AssignmentThresholds,
    shots_per_duration: int,
    rng_seed: int,
) -> ShotTable:
    """Synthesize single shots for every drive duration of ``seq``.

    Shots are drawn in fixed blocks of 1024, each with its own random stream
    derived from ``(seed, initial, duration index, block index)``, so the
    output does not depend on how blocks are scheduled.
    """
    if shots_per_duration < 1:
        raise ValueError("shots_per_duration must be >= 1")
    if thresholds.n_states != g.n_states:
        raise ValueError("thresholds and generator disagree on the number of states")
    if seq.initial_state >= g.n_states:
        raise ValueError("initial state not represented in the generator")
    cols = {k: [] for k in ("duration_index", "i", "q", "assigned", "truth", "heralded")}
    for j, dur in enumerate(seq.drive_durations):
        for b, start in enumerate(range(0, shots_per_duration, SHOT_BLOCK)):
            n = min(SHOT_BLOCK, shots_per_duration - start)
            rng = _block_rng(rng_seed, seq.initial_state, j, b)
            state = np.full(n, seq.initial_state, dtype=np.int64)
            if seq.readout_backaction:
                state = sample_trajectories(g, state, seq.readout_time, rng)
            herald = assign_state(synthesize_iq(state, thresholds, rng), thresholds)
            state = sample_trajectories(g, state, dur, rng)
            if seq.readout_backaction:
                state = sample_trajectories(g, state, seq.readout_time, rng)
            iq = synthesize_iq(state, thresholds, rng)
            cols["duration_index"].append(np.full(n, j))
            cols["i"].append(iq.real)
            cols["q"].append(iq.imag)
            cols["assigned"].append(np.atleast_1d(assign_state(iq, thresholds)))
            cols["truth"].append(state)
            cols["heralded"].append(np.atleast_1d(herald))
    arr = {k: np.concatenate(v) for k, v in cols.items()}
    return ShotTable(
        np.array(seq.drive_durations),
        initial=np.full(arr["i"].size, seq.initial_state),
        n_states=g.n_states,
        thresholds=thresholds,
        **arr,
    )


# ----------------------------------------------------------- rate extraction


@dataclass
class FitResult:
    rates: RateSet
    pairs: list[tuple[int, int]]
    estimate: np.ndarray
    stderr: np.ndarray
    upper: np.ndarray
    nll: float
    covariance: np.ndarray | None = field(default=None, repr=False)


def _probabilities(g_mat, durations, init, conf):
    return np.array([conf @ expm(g_mat * t)[:, init] for t in durations])


def _finite_hessian(f, x, h):
    n = x.size
    hess = np.zeros((n, n))
    f0 = f(x)
    for a in range(n):
        for b in range(a, n):
            ea = np.zeros(n)
            eb = np.zeros(n)
            ea[a] = h[a]
            eb[b] = h[b]
            if a == b:
                val = (f(x + ea) - 2 * f0 + f(x - ea)) / h[a] ** 2
            else:
                val = (f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)) / (4 * h[a] * h[b])
            hess[a, b] = hess[b, a] = val
    return hess


def extract_rates_mle(
    records,
    model_levels: int = 4,
    thresholds: AssignmentThresholds | None = None,
    postselect: bool = True,
    pairs: Sequence[tuple[int, int]] | None = None,
) -> FitResult:
    """Maximum-likelihood rates from assignment histograms.

    The model for prepared level ``i`` at duration ``t`` is the multinomial
    with probabilities ``C expm(G t) e_i``, where ``C`` is the analytic
    confusion matrix of ``thresholds`` (identity if none is known). Free
    parameters are the rates out of every prepared level into every other
    state; rates out of unprepared levels are held at zero.

    Estimates that sit on the zero bound are reported as 0 with a one-sided
    95% likelihood-ratio upper bound instead of a standard error.
    """
    table = records if isinstance(records, ShotTable) else ShotTable.from_records(records, model_levels + 1)
    if table.n_states != model_levels + 1:
        raise ValueError("model_levels does not match the recorded state count")
    if np.unique(table.durations).size < 3:
        raise ValueError("at least three distinct durations are needed")
    if thresholds is None:
        thresholds = table.thresholds
    n = table.n_states
    conf = thresholds.confusion_matrix() if thresholds is not None else np.eye(n)
    counts = table.counts(postselect)
    if pairs is None:
        pairs = [(i, f) for i in sorted(counts) for f in range(n) if f != i]
    pairs = list(pairs)
    durations = table.durations
    scale = 1.0 / max(durations.max(), 1e-300)

    def gen(theta):
        g = np.zeros((n, n))
        for (i, f), r in zip(pairs, theta):
            g[f, i] += r * scale
        return g - np.diag(g.sum(axis=0))

    def nll(theta):
        g = gen(theta)
        total = 0.0
        for init, c in counts.items():
            p = _probabilities(g, durations, init, conf)
            total -= np.sum(c * np.log(np.maximum(p, 1e-300)))
        return total

    # start from the short-time linear estimates
    lin = extract_rates_linear(table, postselect=postselect)
    x0 = np.array([max(lin.total(i, f), 0.0) / scale for i, f in pairs]) + 1e-3
    res = minimize(nll, x0, method="L-BFGS-B", bounds=[(0, None)] * len(pairs),
                   options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 2000})
    theta = res.x
    f0 = nll(theta)

    n_shots = sum(int(c.sum()) for c in counts.values())
    step = 1e-4 * np.maximum(np.abs(theta), 1.0 / math.sqrt(max(n_shots, 1)))
    on_bound = theta <= 2 * step
    free = np.nonzero(~on_bound)[0]
    stderr = np.full(len(pairs), np.nan)
    cov = None
    if free.size:
        def sub(x):
            t = theta.copy()
            t[free] = x
            return nll(t)

        hess = _finite_hessian(sub, theta[free], step[free])
        w, v = np.linalg.eigh(hess)
        if w.min() <= 1e-9 * max(abs(w).max(), 1e-300):
            k = free[int(np.argmax(np.abs(v[:, int(np.argmin(w))])))]
            raise IdentifiabilityError(
                f"likelihood is flat along rate {pairs[k][0]}->{pairs[k][1]}", parameter=pairs[k]
            )
        cov = np.linalg.inv(hess)
        stderr[free] = np.sqrt(np.diag(cov)) * scale

    upper = np.full(len(pairs), np.nan)
    for k in np.nonzero(on_bound)[0]:
        def excess(r, k=k):
            t = theta.copy()
            t[k] = r
            return nll(t) - f0 - UPPER_BOUND_DNLL
        hi = 1.0
        while excess(hi) < 0 and hi < 1e12:
            hi *= 4.0
        if excess(hi) < 0:
            raise IdentifiabilityError(
                f"likelihood is flat along rate {pairs[k][0]}->{pairs[k][1]} (no upper bound)", parameter=pairs[k]
            )
        upper[k] = brentq(excess, 0.0, hi, xtol=1e-10) * scale if excess(0.0) < 0 else 0.0

    est = np.where(on_bound, 0.0, theta) * scale
    entries = []
    for k, (i, f) in enumerate(pairs):
        entries.append(RateEntry(
            i, f, float(est[k]), "fit",
            stderr=None if np.isnan(stderr[k]) else float(stderr[k]),
            upper=None if np.isnan(upper[k]) else float(upper[k]),
        ))
    return FitResult(RateSet(tuple(entries)), pairs, est, stderr, upper, f0, cov)


def extract_rates(
    records,
    model_levels: int = 4,
    thresholds: AssignmentThresholds | None = None,
    postselect: bool = True,
) -> RateSet:
    """Rates with standard errors fitted from shot records (see :func:`extract_rates_mle`)."""
    return extract_rates_mle(records, model_levels, thresholds, postselect).rates


def extract_rates_linear(records, model_levels: int = 4, postselect: bool = True) -> RateSet:
    """Short-time estimator: weighted straight-line fit of each outcome fraction versus duration.

    The slope of ``P(assigned f | prepared i)`` is the rate ``i -> f`` when
    ``rate * t_max`` is small. The intercept absorbs assignment errors.
    """
    table = records if isinstance(records, ShotTable) else ShotTable.from_records(records, model_levels + 1)
    t = table.durations
    entries = []
    for init, c in table.counts(postselect).items():
        tot = c.sum(axis=1).astype(float)
        for f in range(table.n_states):
            if f == init:
                continue
            p = c[:, f] / np.maximum(tot, 1)
            var = np.maximum(p * (1 - p), 1.0 / np.maximum(tot, 1)) / np.maximum(tot, 1)
            w = 1.0 / var
            a = np.vstack([np.ones_like(t), t]).T
            cov = np.linalg.inv(a.T @ (w[:, None] * a))
            beta = cov @ (a.T @ (w * p))
            entries.append(RateEntry(init, f, float(max(beta[1], 0.0)), "fit", stderr=float(math.sqrt(cov[1, 1]))))
    return RateSet(tuple(entries))
