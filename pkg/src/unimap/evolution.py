"""State-vector evolution, diagnostics, measurement emulation, and protocols.

A distribution F on the grid is carried by the amplitude vector
psi_a = sqrt(F(x_a) dx), normalized to one. Iterating a unitarized
propagator on psi emulates iterating the map on F. Diagnostics per step:

    <x>     = sum_a x_a |psi_a|^2
    gamma_k = sum_a exp(i pi kappa a) |psi_a|^2      (a = 1..N, index phase)
    Gamma_k = |gamma_k|^2
    std_x   = sqrt(<x^2> - <x>^2)

Gamma grows while the distribution localizes and falls once finite-size
artifacts scatter it again; its first local maximum marks the onset of
spurious echos and bounds the trustable horizon.

Measurement emulation draws cell indices with probability |psi_a|^2 using a
counter-based generator (Philox), so every estimate is reproducible from its
seed alone, independent of platform or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import basis as basis_mod
from .basis import SPATIAL, BasisSpec
from .errors import DomainError, KindError, NoPeaksError, StageError, WidthError
from .propagator import UNITARIZED, PropagatorMatrix

DEFAULT_KAPPA = 0.1
DEFAULT_GAUSSIAN_WIDTH_CELLS = 8  # in units of dx; must stay >= 3 (WidthError limit)

_ECHO_SIG = 1e-9  # minimum Gamma drop that counts as a real decrease (exact mode)


@dataclass(frozen=True)
class StateVector:
    """Unit-norm complex amplitudes on a basis."""

    amplitudes: np.ndarray
    basis: BasisSpec

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex)
        if a.shape != (self.basis.N,):
            raise ValueError(f"amplitudes must have shape ({self.basis.N},)")
        nrm = np.linalg.norm(a)
        if abs(nrm - 1.0) > 1e-10:
            raise ValueError(f"state norm {nrm!r} is not 1 within 1e-10")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)


@dataclass(frozen=True)
class InitSpec:
    kind: str  # "gaussian" | "flat" | "delta_cell"
    center: Optional[float] = None
    width: Optional[float] = None


@dataclass(frozen=True)
class MeasurementConfig:
    M: int
    seed: int
    kappa: float = DEFAULT_KAPPA


@dataclass(frozen=True)
class SampledEstimates:
    """Monte-Carlo estimates from three independent measurement batches."""

    mean_x: float
    stderr_mean_x: float
    re_gamma: float
    stderr_re_gamma: float
    im_gamma: float
    stderr_im_gamma: float
    Gamma: float
    stderr_Gamma: float
    M: int


@dataclass
class DiagnosticsSeries:
    """Per-iteration diagnostics; sampled columns present only when enabled."""

    t: np.ndarray
    mean_x: np.ndarray
    gamma: np.ndarray
    Gamma: np.ndarray
    std_x: np.ndarray
    norm: np.ndarray
    sampled_mean_x: Optional[np.ndarray] = None
    sampled_Gamma: Optional[np.ndarray] = None
    stderr_mean_x: Optional[np.ndarray] = None
    stderr_Gamma: Optional[np.ndarray] = None
    states: Optional[list] = None

    CSV_HEADER = ("t,mean_x,re_gamma,im_gamma,Gamma,std_x,norm,"
                  "sampled_mean_x,sampled_Gamma,stderr_mean_x")

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.CSV_HEADER + "\n")
            for i, t in enumerate(self.t):
                cells = [
                    str(int(t)),
                    f"{self.mean_x[i]:.17g}",
                    f"{self.gamma[i].real:.17g}",
                    f"{self.gamma[i].imag:.17g}",
                    f"{self.Gamma[i]:.17g}",
                    f"{self.std_x[i]:.17g}",
                    f"{self.norm[i]:.17g}",
                ]
                if self.sampled_mean_x is not None:
                    cells += [
                        f"{self.sampled_mean_x[i]:.17g}",
                        f"{self.sampled_Gamma[i]:.17g}",
                        f"{self.stderr_mean_x[i]:.17g}",
                    ]
                else:
                    cells += ["", "", ""]
                f.write(",".join(cells) + "\n")


@dataclass
class EchoReport:
    t_c: Optional[int]
    trace: DiagnosticsSeries
    verdict: str  # "echo_found" | "monotone_within_horizon" | "degenerate"


# ---------------------------------------------------------------------------
# initialization and pointwise diagnostics

def init_state(init: InitSpec, basis: BasisSpec) -> StateVector:
    """Build the amplitude vector of an initial distribution on the grid."""
    if basis.kind != SPATIAL:
        raise KindError("states are initialized on the spatial basis")
    N = basis.N
    dx = basis.dx
    if init.kind == "flat":
        amp = np.full(N, 1.0 / math.sqrt(N), dtype=complex)
        return StateVector(amplitudes=amp, basis=basis)

    if init.center is None:
        raise ValueError(f"init kind {init.kind!r} needs a center")
    lo, hi = basis.domain
    if not (lo <= init.center <= hi):
        raise DomainError(f"init center {init.center!r} outside domain {basis.domain}")
    cell_of, _ = basis_mod.grid_coords(basis)

    if init.kind == "delta_cell":
        amp = np.zeros(N, dtype=complex)
        amp[cell_of(init.center) - 1] = 1.0
        return StateVector(amplitudes=amp, basis=basis)

    if init.kind == "gaussian":
        if init.width is None:
            raise ValueError("gaussian init needs a width")
        if init.width < 3 * dx:
            raise WidthError(
                f"gaussian width {init.width!r} is below 3 dx = {3 * dx!r}"
            )
        xs = basis_mod.centers(basis)
        F = np.exp(-((xs - init.center) ** 2) / (2.0 * init.width**2))
        amp = np.sqrt(F * dx).astype(complex)
        amp /= np.linalg.norm(amp)
        return StateVector(amplitudes=amp, basis=basis)

    raise ValueError(f"unknown init kind {init.kind!r}")


def default_init(basis: BasisSpec, center: float) -> InitSpec:
    """Gaussian of the default width (8 cells) centered at `center`."""
    return InitSpec(kind="gaussian", center=center,
                    width=DEFAULT_GAUSSIAN_WIDTH_CELLS * basis.dx)


def _require_spatial(psi: StateVector) -> None:
    if psi.basis.kind != SPATIAL:
        raise KindError("diagnostic expectations are defined on the spatial basis")


def expectation_x(psi: StateVector) -> float:
    _require_spatial(psi)
    p2 = np.abs(psi.amplitudes) ** 2
    return float(np.dot(basis_mod.centers(psi.basis), p2))


def gamma_kappa(psi: StateVector, kappa: float) -> complex:
    """High-harmonic phase average sum_a exp(i pi kappa a) |psi_a|^2."""
    _require_spatial(psi)
    p2 = np.abs(psi.amplitudes) ** 2
    a = np.arange(1, psi.basis.N + 1)
    return complex(np.sum(np.exp(1j * np.pi * kappa * a) * p2))


def std_x(psi: StateVector) -> float:
    _require_spatial(psi)
    p2 = np.abs(psi.amplitudes) ** 2
    xs = basis_mod.centers(psi.basis)
    mean = float(np.dot(xs, p2))
    return math.sqrt(max(float(np.dot(xs * xs, p2)) - mean * mean, 0.0))


# ---------------------------------------------------------------------------
# measurement emulation

def _draw_cells(p2: np.ndarray, M: int, seed: int, stream: int) -> np.ndarray:
    """M iid cell indices (0-based) with probabilities p2, Philox stream."""
    rng = np.random.Generator(np.random.Philox(key=[seed, stream]))
    cum = np.cumsum(p2)
    cum /= cum[-1]
    u = rng.random(M)
    return np.minimum(np.searchsorted(cum, u, side="right"), len(p2) - 1)


def _mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    if np.all(samples == samples[0]):  # e.g. a one-cell state: exact, no error
        return float(samples[0]), 0.0
    m = float(np.mean(samples))
    if len(samples) < 2:
        return m, 0.0
    return m, float(np.std(samples, ddof=1) / math.sqrt(len(samples)))


def sample_measurements(psi: StateVector, cfg: MeasurementConfig) -> SampledEstimates:
    """Estimate <x> and gamma_kappa from Born-rule samples.

    Three independent batches of cfg.M draws each feed the three observables
    (x, cos(pi kappa a), sin(pi kappa a)); the real and imaginary parts of
    gamma are therefore separately measured quantities, as they would be on
    hardware. Identical seeds give bitwise identical estimates.
    """
    _require_spatial(psi)
    if cfg.M < 1:
        raise ValueError("measurement count M must be at least 1")
    p2 = np.abs(psi.amplitudes) ** 2
    xs = basis_mod.centers(psi.basis)

    ix = _draw_cells(p2, cfg.M, cfg.seed, 0)
    mean_x, se_x = _mean_stderr(xs[ix])

    ic = _draw_cells(p2, cfg.M, cfg.seed, 1)
    re, se_re = _mean_stderr(np.cos(np.pi * cfg.kappa * (ic + 1)))

    isn = _draw_cells(p2, cfg.M, cfg.seed, 2)
    im, se_im = _mean_stderr(np.sin(np.pi * cfg.kappa * (isn + 1)))

    G = re * re + im * im
    se_G = math.sqrt((2 * re * se_re) ** 2 + (2 * im * se_im) ** 2)
    return SampledEstimates(mean_x=mean_x, stderr_mean_x=se_x,
                            re_gamma=re, stderr_re_gamma=se_re,
                            im_gamma=im, stderr_im_gamma=se_im,
                            Gamma=G, stderr_Gamma=se_G, M=cfg.M)


# ---------------------------------------------------------------------------
# evolution

def _diag_row(amp: np.ndarray, xs: np.ndarray, a_idx: np.ndarray, kappa: float):
    p2 = np.abs(amp) ** 2
    mean = float(np.dot(xs, p2))
    g = complex(np.sum(np.exp(1j * np.pi * kappa * a_idx) * p2))
    sd = math.sqrt(max(float(np.dot(xs * xs, p2)) - mean * mean, 0.0))
    return mean, g, abs(g) ** 2, sd, float(np.linalg.norm(amp))


def evolve(U: PropagatorMatrix, psi0: StateVector, T: int,
           kappa: float = DEFAULT_KAPPA,
           measurement: Optional[MeasurementConfig] = None,
           keep_states: bool = False) -> DiagnosticsSeries:
    """Apply U to psi0 T times, recording diagnostics at t = 0..T.

    Requires a unitarized propagator on a spatial basis. When a measurement
    config is given, sampled estimates are recorded at every step with the
    per-step seed cfg.seed + t.
    """
    if U.stage != UNITARIZED:
        raise StageError(f"evolve needs a unitarized propagator, got {U.stage_label()}")
    if U.basis.kind != SPATIAL:
        raise KindError("evolution diagnostics are defined on the spatial basis")
    if psi0.basis != U.basis:
        raise ValueError("state and propagator bases differ")

    xs = basis_mod.centers(U.basis)
    a_idx = np.arange(1, U.basis.N + 1)
    amp = np.array(psi0.amplitudes, dtype=complex)

    rows = []
    sampled = [] if measurement is not None else None
    states = [] if keep_states else None
    for t in range(T + 1):
        rows.append((t, *_diag_row(amp, xs, a_idx, kappa)))
        if keep_states:
            states.append(amp.copy())
        if measurement is not None:
            est = sample_measurements(
                StateVector(amplitudes=amp / np.linalg.norm(amp), basis=U.basis),
                replace(measurement, seed=measurement.seed + t, kappa=kappa),
            )
            sampled.append(est)
        if t < T:
            amp = U.entries @ amp

    series = DiagnosticsSeries(
        t=np.array([r[0] for r in rows], dtype=int),
        mean_x=np.array([r[1] for r in rows]),
        gamma=np.array([r[2] for r in rows]),
        Gamma=np.array([r[3] for r in rows]),
        std_x=np.array([r[4] for r in rows]),
        norm=np.array([r[5] for r in rows]),
        states=states,
    )
    if sampled is not None:
        series.sampled_mean_x = np.array([e.mean_x for e in sampled])
        series.sampled_Gamma = np.array([e.Gamma for e in sampled])
        series.stderr_mean_x = np.array([e.stderr_mean_x for e in sampled])
        series.stderr_Gamma = np.array([e.stderr_Gamma for e in sampled])
    return series


# ---------------------------------------------------------------------------
# protocols

def find_echo_time(U: PropagatorMatrix, psi0: StateVector, cfg: MeasurementConfig,
                   horizon: int, sampled: bool = False) -> EchoReport:
    """Locate the first local maximum of Gamma_kappa(t).

    The probe starts with the bracket t1 = 1, t2 = 2, t3 = 0 and expands
    upward one step at a time while Gamma keeps growing, spending at most
    `horizon` Gamma evaluations; expanding from the bottom also certifies
    that the maximum found is the first one. Verdicts:

      echo_found               a significant local maximum at t_c
      monotone_within_horizon  no maximum inside the probe budget
      degenerate               Gamma constant over every probe (within two
                               standard errors in sampled mode, exactly in
                               exact mode)

    In exact mode the full state is available, so Gamma is evaluated from it
    directly; sampled mode estimates Gamma per step as on hardware, with the
    per-step seed cfg.seed + t.
    """
    if horizon < 3:
        raise ValueError("horizon must allow at least 3 evaluations")
    if U.stage != UNITARIZED:
        raise StageError(f"echo scan needs a unitarized propagator, got {U.stage_label()}")
    if U.basis.kind != SPATIAL:
        raise KindError("echo scan is defined on the spatial basis")
    if psi0.basis != U.basis:
        raise ValueError("state and propagator bases differ")

    xs = basis_mod.centers(U.basis)
    a_idx = np.arange(1, U.basis.N + 1)
    amp = np.array(psi0.amplitudes, dtype=complex)

    rows = []
    estimates = []
    G: list[float] = []
    Gerr: list[float] = []
    t_c = None
    # probe order 1, 2, 0 collapses to a scan from t = 0; each further step
    # extends the bracket upward until the growth of Gamma breaks
    for t in range(horizon):
        rows.append((t, *_diag_row(amp, xs, a_idx, kappa=cfg.kappa)))
        if sampled:
            est = sample_measurements(
                StateVector(amplitudes=amp / np.linalg.norm(amp), basis=U.basis),
                replace(cfg, seed=cfg.seed + t),
            )
            estimates.append(est)
            G.append(est.Gamma)
            Gerr.append(est.stderr_Gamma)
        else:
            G.append(rows[-1][3])
        if len(G) >= 3:
            tm = len(G) - 2
            sig = 2.0 * (Gerr[tm] + Gerr[tm + 1]) if sampled else _ECHO_SIG
            if G[tm] >= G[tm - 1] and G[tm] > G[tm + 1] + sig:
                t_c = tm
                break
        if t < horizon - 1:
            amp = U.entries @ amp

    trace = DiagnosticsSeries(
        t=np.array([r[0] for r in rows], dtype=int),
        mean_x=np.array([r[1] for r in rows]),
        gamma=np.array([r[2] for r in rows]),
        Gamma=np.array([r[3] for r in rows]),
        std_x=np.array([r[4] for r in rows]),
        norm=np.array([r[5] for r in rows]),
    )
    if sampled:
        trace.sampled_mean_x = np.array([e.mean_x for e in estimates])
        trace.sampled_Gamma = np.array([e.Gamma for e in estimates])
        trace.stderr_mean_x = np.array([e.stderr_mean_x for e in estimates])
        trace.stderr_Gamma = np.array([e.stderr_Gamma for e in estimates])

    if t_c is not None:
        return EchoReport(t_c=t_c, trace=trace, verdict="echo_found")
    Garr = np.array(G)
    if sampled:
        constant = float(Garr.max() - Garr.min()) <= 2.0 * float(np.max(Gerr))
    else:
        constant = bool(np.all(Garr == Garr[0]))
    if constant:
        return EchoReport(t_c=None, trace=trace, verdict="degenerate")
    return EchoReport(t_c=None, trace=trace, verdict="monotone_within_horizon")


def find_attractors(U: PropagatorMatrix, cfg: MeasurementConfig,
                    horizon: int) -> list[tuple[float, float]]:
    """Locate attracting fixed points from a flat start.

    Runs the echo scan from the flat distribution, evolves to the moment of
    maximal localization, measures cfg.M cell indices, and extracts peaks
    from the histogram. A peak must be a local maximum of the 5-cell
    smoothed histogram above 3x the flat background, at least 5 cells away
    from any taller accepted peak, and at least 20% of the tallest peak
    (smaller structure is treated as echo debris). Peak positions are
    refined on the raw histogram; widths are full width at half maximum.

    Returns (location, width) pairs sorted by location; raises NoPeaksError
    when the histogram is consistent with flat.
    """
    flat = init_state(InitSpec(kind="flat"), U.basis)
    echo = find_echo_time(U, flat, cfg, horizon)
    t_sample = echo.t_c if echo.verdict == "echo_found" else int(echo.trace.t[-1])

    amp = np.array(flat.amplitudes, dtype=complex)
    for _ in range(t_sample):
        amp = U.entries @ amp
    p2 = np.abs(amp) ** 2

    N = U.basis.N
    dx = U.basis.dx
    xs = basis_mod.centers(U.basis)
    idx = _draw_cells(p2, cfg.M, cfg.seed, 3)
    hist = np.bincount(idx, minlength=N).astype(float)

    background = cfg.M / N
    kernel = np.ones(5) / 5.0
    smooth = np.convolve(hist, kernel, mode="same")

    candidates = []
    for c in range(N):
        lo, hi = max(0, c - 2), min(N, c + 3)
        window = smooth[lo:hi]
        if smooth[c] > 3.0 * background and smooth[c] == window.max():
            if not candidates or c - candidates[-1] > 1:  # plateau: keep leftmost
                candidates.append(c)

    accepted: list[int] = []
    for c in sorted(candidates, key=lambda c: -smooth[c]):
        if all(abs(c - p) >= 5 for p in accepted):
            accepted.append(c)
    if accepted:
        top = max(smooth[c] for c in accepted)
        accepted = [c for c in accepted if smooth[c] >= 0.2 * top]
    if not accepted:
        raise NoPeaksError(
            f"no histogram peak above 3x flat background after t={t_sample}"
        )

    peaks: list[tuple[float, float]] = []
    for c in accepted:
        lo, hi = max(0, c - 2), min(N, c + 3)
        c_raw = lo + int(np.argmax(hist[lo:hi]))
        half = hist[c_raw] / 2.0
        left = c_raw
        while left > 0 and hist[left - 1] >= half:
            left -= 1
        right = c_raw
        while right < N - 1 and hist[right + 1] >= half:
            right += 1
        peaks.append((float(xs[c_raw]), (right - left + 1) * dx))
    peaks.sort()
    return peaks
