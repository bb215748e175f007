"""Resonant features in the (qubit frequency, drive power) plane and rate maps.

Resonances are located on the exact spectrum of a flux-tunable transmon:
the flux axis is sampled on a grid, sign changes of the matching condition
are bracketed and refined with ``brentq``. Qubit frequency is a monotone
function of flux on ``[0, 1/2)``, so each root maps to a unique ``omega_q``.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constants import TWO_PI
from .environment import EnvironmentModel
from .rates import DriveSpec, RateSet, assemble_rate_set
from .spectrum import (
    FluxTunableTransmon,
    SpectrumResult,
    TRANSMON_REGIME_RATIO,
    eigensystem,
    squid_ej,
    stark_shifted_transition,
)

KINDS = ("multiphoton", "sideband", "six_wave", "tls")
RESIDUAL_RTOL = 1e-6


@dataclass(frozen=True)
class ResonanceHit:
    kind: str
    initial: int
    final: int
    n_drive: int
    omega_q_star: float
    delta_omega: float
    residual: float
    forbidden: bool
    flux: float | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "initial": self.initial,
            "final": self.final,
            "n_drive": self.n_drive,
            "omega_q_hz": self.omega_q_star / TWO_PI,
            "delta_omega_hz": self.delta_omega / TWO_PI,
            "residual_hz": self.residual / TWO_PI,
            "forbidden": self.forbidden,
            "flux": self.flux,
        }


def parity_forbidden(initial: int, final: int) -> bool:
    """n photons in and n-1 out transfer an odd number of quanta, so even steps are forbidden."""
    return (final - initial) % 2 == 0


def default_flux_max(device: FluxTunableTransmon) -> float:
    """Largest flux in [0, 1/2) that keeps E_J/E_C at the transmon-regime bound."""
    target = TRANSMON_REGIME_RATIO * device.e_c
    if squid_ej(device.e_j_max, 0.5, device.asymmetry) >= target:
        return 0.5 - 1e-9
    return brentq(lambda f: squid_ej(device.e_j_max, f, device.asymmetry) - target, 0.0, 0.5)


class _FluxSweep:
    """Exact levels of ``device`` sampled on a flux grid, with root refinement."""

    def __init__(self, device, n_levels, flux_range=None, n_grid=600):
        self.device = device
        self.n_levels = n_levels
        lo, hi = flux_range if flux_range is not None else (0.0, default_flux_max(device))
        self.flux = np.linspace(lo, hi, n_grid)
        self.levels = np.array([device.levels(f, n_levels) for f in self.flux])

    def transition(self, i, f):
        return self.levels[:, f] - self.levels[:, i]

    def roots(self, i, f, target):
        """Fluxes where ``omega_{f,i}(flux) == target``."""
        g = self.transition(i, f) - target
        out = []
        for k in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)[0]:
            a, b = self.flux[k], self.flux[k + 1]

            def h(x):
                lv = self.device.levels(x, self.n_levels)
                return lv[f] - lv[i] - target

            ha, hb = h(a), h(b)
            if ha == 0:
                out.append(a)
            elif ha * hb < 0:
                out.append(brentq(h, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))
        return sorted(set(out))


def find_multiphoton_resonances(
    device: FluxTunableTransmon,
    omega_in: float,
    omega_res: float,
    delta_omega: float = 0.0,
    max_level: int = 10,
    max_order: int = 1,
    initials=(0, 1),
    flux_range: tuple[float, float] | None = None,
    n_grid: int = 600,
    _sweep: _FluxSweep | None = None,
) -> list[ResonanceHit]:
    """Solve ``n w_in = w_{f,i}[dw] + (n-1) w_res`` for the qubit frequency.

    Parameters
    ----------
    device : FluxTunableTransmon
    omega_in, omega_res : float
        Drive and readout-resonator frequencies (rad/s).
    delta_omega : float
        Stark shift; level m is shifted by ``-m * delta_omega``.
    max_level : int
        Highest final level considered.
    max_order : int
        Largest number of drive photons ``n`` (1 to 5). ``n = 1`` hits are
        labelled ``multiphoton``; ``n > 1`` are resonator ``sideband`` replicas.

    Returns
    -------
    list of ResonanceHit
        Sorted by (initial, final, n). Parity-forbidden hits are included
        with ``forbidden=True``.
    """
    if not 1 <= max_order <= 5:
        raise ValueError("max_order must lie in 1..5")
    if delta_omega < 0:
        raise ValueError("delta_omega must be >= 0")
    sweep = _sweep or _FluxSweep(device, max_level + 1, flux_range, n_grid)
    hits = []
    for i in initials:
        for f in range(i + 1, max_level + 1):
            for n in range(1, max_order + 1):
                target = n * omega_in - (n - 1) * omega_res + (f - i) * delta_omega
                for x in sweep.roots(i, f, target):
                    lv = device.levels(x, max_level + 1)
                    resid = n * omega_in - (lv[f] - lv[i] - (f - i) * delta_omega) - (n - 1) * omega_res
                    hits.append(
                        ResonanceHit(
                            kind="multiphoton" if n == 1 else "sideband",
                            initial=i,
                            final=f,
                            n_drive=n,
                            omega_q_star=float(lv[1] - lv[0]),
                            delta_omega=delta_omega,
                            residual=float(resid),
                            forbidden=parity_forbidden(i, f),
                            flux=float(x),
                        )
                    )
    return hits


def sideband_spacing(
    device: FluxTunableTransmon,
    omega_in: float,
    omega_res: float,
    transition: tuple[int, int] = (1, 8),
    delta_omega: float = 0.0,
    order: int = 1,
    flux_range=None,
) -> float:
    """Qubit-frequency distance between the ``order`` and ``order + 1`` replicas.

    Signed: positive when the higher replica sits at larger ``omega_q``, which
    is the case for ``omega_in > omega_res``.
    """
    i, f = transition
    if omega_in == omega_res:
        return 0.0
    hits = find_multiphoton_resonances(
        device, omega_in, omega_res, delta_omega, max_level=f, max_order=order + 1,
        initials=(i,), flux_range=flux_range,
    )
    by_n = {}
    for h in hits:
        if h.final == f:
            by_n.setdefault(h.n_drive, []).append(h.omega_q_star)
    if order not in by_n or order + 1 not in by_n:
        raise ValueError(f"fewer than two sideband roots for transition {transition}")
    a = max(by_n[order])
    b = min(by_n[order + 1], key=lambda w: abs(w - a))
    return b - a


def tls_lines(
    omega_tls: float,
    transition: tuple[int, int],
    delta_omega_grid,
    device: FluxTunableTransmon,
    flux_range=None,
) -> list[tuple[float, float]]:
    """Points ``(omega_q, dw)`` where ``omega_{n,m}[dw] = omega_tls``."""
    m, n = sorted(transition)
    if m == n:
        raise ValueError("transition needs two distinct levels")
    sweep = _FluxSweep(device, n + 1, flux_range)
    pts = []
    for dw in np.atleast_1d(np.asarray(delta_omega_grid, dtype=float)):
        for x in sweep.roots(m, n, omega_tls + (n - m) * dw):
            pts.append((device.qubit_frequency(x), float(dw)))
    return pts


def six_wave_line(
    omega_s: float,
    spec: SpectrumResult,
    delta_omega_grid,
    initial: int = 1,
    final: int = 3,
    n_photons: int = 3,
) -> list[tuple[float, float]]:
    """Drive frequency satisfying ``n w_in = w_{f,i}[dw] + w_s`` for each ``dw``."""
    out = []
    for dw in np.atleast_1d(np.asarray(delta_omega_grid, dtype=float)):
        w = (stark_shifted_transition(spec, initial, final, float(dw)) + omega_s) / n_photons
        out.append((float(w), float(dw)))
    return out


# ------------------------------------------------------------------ rate maps


@dataclass(frozen=True)
class ScanSetup:
    """Everything a rate-map cell needs besides its grid coordinates."""

    device: FluxTunableTransmon
    env: EnvironmentModel
    omega_in: float
    temperature: float = 0.016
    gamma_down_0: float = 5.0
    n_levels: int = 12
    two_photon: bool = False
    two_out: bool = False
    max_level: int = 10
    max_order: int = 3
    feature_tolerance: float | None = None

    @property
    def tolerance(self) -> float:
        if self.feature_tolerance is not None:
            return self.feature_tolerance
        widths = [self.env.readout.kappa] + [d.width for d in self.env.tls] + [x.width for x in self.env.mixing]
        return max(widths)


@dataclass
class RateMap:
    omega_q: np.ndarray
    delta_omega: np.ndarray
    cells: list = field(default_factory=list)  # [iq][idw] -> RateSet | None
    errors: dict = field(default_factory=dict)  # (iq, idw) -> message
    on_feature: np.ndarray | None = None
    annotations: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("omega_q", "delta_omega"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.size > 1 and not np.all(np.diff(a) > 0):
                raise ValueError(f"{name} grid must be strictly increasing")
            setattr(self, name, a)
        if self.on_feature is None:
            self.on_feature = np.zeros((self.omega_q.size, self.delta_omega.size), dtype=bool)

    @property
    def n_cells(self) -> int:
        return self.omega_q.size * self.delta_omega.size

    @property
    def success_fraction(self) -> float:
        return 1.0 if self.n_cells == 0 else 1.0 - len(self.errors) / self.n_cells

    def cell(self, iq: int, idw: int) -> RateSet | None:
        return self.cells[iq][idw]

    def rows(self):
        for iq, wq in enumerate(self.omega_q):
            for idw, dw in enumerate(self.delta_omega):
                rs = self.cells[iq][idw]
                if rs is None:
                    continue
                for e in rs:
                    yield (wq / TWO_PI, dw / TWO_PI, e.initial, e.final, e.rate, e.mechanism)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["omega_q_hz", "delta_omega_hz", "initial", "final", "rate_hz", "mechanism"])
        for r in self.rows():
            w.writerow([repr(float(r[0])), repr(float(r[1])), r[2], r[3], repr(float(r[4])), r[5]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "omega_q_hz": (self.omega_q / TWO_PI).tolist(),
            "delta_omega_hz": (self.delta_omega / TWO_PI).tolist(),
            "cells": [
                [None if rs is None else rs.to_dict()["rates"] for rs in row] for row in self.cells
            ],
            "errors": [{"iq": k[0], "idw": k[1], "message": v} for k, v in sorted(self.errors.items())],
            "on_feature": self.on_feature.astype(int).tolist(),
            "annotations": [h.to_dict() for h in self.annotations],
        }


def _cell_on_feature(setup: ScanSetup, spec: SpectrumResult, dw: float) -> bool:
    tol = setup.tolerance
    w_in = setup.omega_in
    w_res = setup.env.readout.omega_res
    top = min(setup.max_level, spec.n_levels - 1)
    for i in (0, 1):
        for f in range(i + 1, top + 1):
            if parity_forbidden(i, f):
                continue
            wfi = stark_shifted_transition(spec, i, f, dw)
            for n in range(1, setup.max_order + 1):
                if abs(n * w_in - wfi - (n - 1) * w_res) <= tol:
                    return True
    for d in setup.env.tls:
        for lo, hi in ((0, 1), (1, 2)):
            if abs(stark_shifted_transition(spec, lo, hi, dw) - d.omega_tls) <= max(tol, d.width):
                return True
    for x in setup.env.mixing:
        if x.final < spec.n_levels:
            det = x.n_photons * w_in - stark_shifted_transition(spec, x.initial, x.final, dw) - x.omega_s
            if abs(det) <= max(tol, x.width):
                return True
    return False


def _evaluate_row(args):
    setup, wq, dws = args
    out = []
    try:
        flux = setup.device.flux_for_qubit_frequency(wq)
        spec = eigensystem(
            setup.device.params(flux),
            n_cut=max(setup.device.n_cut, setup.n_levels + 10),
            n_levels=setup.n_levels,
        )
    except Exception as exc:  # whole row fails together
        msg = f"{type(exc).__name__}: {exc}"
        return [(None, msg, False)] * len(dws)
    drive = DriveSpec(setup.omega_in, 0.0)
    for dw in dws:
        try:
            rs = assemble_rate_set(
                spec, setup.env, drive.with_delta(dw), setup.temperature, setup.gamma_down_0,
                two_photon=setup.two_photon, two_out=setup.two_out,
            )
            out.append((rs, None, _cell_on_feature(setup, spec, dw)))
        except Exception as exc:
            out.append((None, f"{type(exc).__name__}: {exc}", False))
    return out


def build_rate_map(
    setup: ScanSetup,
    omega_q_grid,
    delta_omega_grid,
    workers: int = 1,
    annotate: bool = True,
) -> RateMap:
    """Evaluate :func:`assemble_rate_set` on every grid cell and annotate features.

    Rows of constant ``omega_q`` are independent tasks; with ``workers > 1``
    they run in a process pool and are gathered in grid order, so the map is
    identical for any worker count. Per-cell failures are recorded in
    ``RateMap.errors`` and leave that cell as ``None``.
    """
    wq = np.asarray(omega_q_grid, dtype=float).ravel()
    dws = np.asarray(delta_omega_grid, dtype=float).ravel()
    rmap = RateMap(wq, dws)
    if wq.size == 0 or dws.size == 0:
        rmap.cells = [[] for _ in wq]
        return rmap

    tasks = [(setup, float(w), [float(d) for d in dws]) for w in wq]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_row, tasks))
    else:
        results = [_evaluate_row(t) for t in tasks]

    rmap.cells = [[r[0] for r in row] for row in results]
    for iq, row in enumerate(results):
        for idw, (_, err, hit) in enumerate(row):
            if err is not None:
                rmap.errors[(iq, idw)] = err
            rmap.on_feature[iq, idw] = hit

    if annotate:
        sweep = _FluxSweep(setup.device, setup.max_level + 1)
        lo, hi = wq.min(), wq.max()
        for dw in dws:
            hits = find_multiphoton_resonances(
                setup.device, setup.omega_in, setup.env.readout.omega_res, float(dw),
                max_level=setup.max_level, max_order=setup.max_order, _sweep=sweep,
            )
            rmap.annotations += [h for h in hits if lo <= h.omega_q_star <= hi]
    return rmap
