"""Solver-comparison metrics: gap curves, survival, PAR-k, calibrated time.

The three gap measures share one shape: 1 when the two quantities disagree
in sign (or one is unknown), otherwise their difference over the larger
magnitude, so every value lands in [0, 1] and curves from different
instances can be averaged meaningfully.  Time is measured either on the wall
or with a calibrated clock that continuously re-times a fixed small solve on
a separate thread, converting elapsed wall time into "how many calibration
solves would have fit", which cancels machine speed and background load.
"""

from __future__ import annotations

import threading
import time
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

GAP_EPS = 1e-12
EVALUATION_SEEDS = (1, 2, 3, 4, 5)


def primal_gap(p, p_star, eps=GAP_EPS):
    """Distance of the incumbent from the best known objective, in [0, 1].

    +inf (no assignment known) and sign mismatch both give 1; otherwise
    (p - p_star) / max(|p|, |p_star|, eps).
    """
    if not np.isfinite(p):
        return 1.0
    if p * p_star < 0:
        return 1.0
    return float((p - p_star) / max(abs(p), abs(p_star), eps))


def dual_gap(d, p_star, eps=GAP_EPS):
    """Distance of the proved bound from the best known objective, in [0, 1]."""
    if not np.isfinite(d):
        return 1.0
    if d * p_star < 0:
        return 1.0
    return float((p_star - d) / max(abs(d), abs(p_star), eps))


def primal_dual_gap(p, d, eps=GAP_EPS):
    """Distance between incumbent and proved bound, in [0, 1]."""
    if not (np.isfinite(p) and np.isfinite(d)):
        return 1.0
    if d * p < 0:
        return 1.0
    return float((p - d) / max(abs(d), abs(p), eps))


GAP_KINDS = ("primal", "dual", "primal_dual")


@dataclass
class GapCurve:
    """A right-continuous step function of time; holds its value until the
    next breakpoint."""

    breakpoints: list            # [(time, value)], times strictly increasing
    kind: str = "primal"

    def __post_init__(self):
        times = [t for t, _ in self.breakpoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("breakpoint times must be strictly increasing")

    def value_at(self, t):
        idx = bisect_right([bt for bt, _ in self.breakpoints], t)
        if idx == 0:
            return 1.0
        return self.breakpoints[idx - 1][1]

    @property
    def times(self):
        return [t for t, _ in self.breakpoints]


def build_gap_curve(event_log, p_star=None, kind="primal"):
    """The gap-over-time step curve of one solve.

    ``event_log`` rows are (elapsed, primal, dual).  If the run finds a
    better primal bound than the supplied ``p_star`` (or none is supplied),
    the best bound seen replaces it and every earlier gap is recomputed
    against the new value.  An empty log is the constant curve at 1.
    """
    if kind not in GAP_KINDS:
        raise ValueError(f"unknown curve kind {kind!r}")
    if not event_log:
        return GapCurve([(0.0, 1.0)], kind=kind)

    best_in_run = min((p for _, p, _ in event_log if np.isfinite(p)),
                      default=np.inf)
    if p_star is None:
        p_star = best_in_run
    else:
        p_star = min(p_star, best_in_run)

    points = []
    for t, p, d in event_log:
        if kind == "primal":
            gap = primal_gap(p, p_star)
        elif kind == "dual":
            gap = dual_gap(d, p_star)
        else:
            gap = primal_dual_gap(p, d)
        points.append((float(t), float(gap)))

    merged = [] if points and points[0][0] == 0.0 else [(0.0, 1.0)]
    for t, gap in points:
        if merged and merged[-1][0] == t:
            merged[-1] = (t, gap)      # same instant: the later event wins
        else:
            merged.append((t, gap))
    return GapCurve(merged, kind=kind)


def average_curve(curves):
    """Pointwise mean over the union of all breakpoint times."""
    if not curves:
        raise ValueError("no curves to average")
    kinds = {c.kind for c in curves}
    if len(kinds) > 1:
        raise ValueError(f"mixed curve kinds: {kinds}")
    times = sorted({t for c in curves for t in c.times})
    points = [(t, float(np.mean([c.value_at(t) for c in curves])))
              for t in times]
    return GapCurve(points, kind=kinds.pop())


def survival(curves, target_gap):
    """Fraction of curves at or below the target gap, as a step function."""
    if not curves:
        raise ValueError("no curves")
    times = sorted({t for c in curves for t in c.times})
    points = [(t, sum(c.value_at(t) <= target_gap for c in curves)
               / len(curves)) for t in times]
    return GapCurve(points, kind="survival")


def time_to_target(curve, target_gap, time_limit=np.inf):
    """First breakpoint time at which the curve is within target, or None."""
    for t, value in curve.breakpoints:
        if t > time_limit:
            return None
        if value <= target_gap:
            return t
    return None


def par_k(results, time_limit=10000.0, k=10, target_gap=0.0):
    """Penalized average runtime: timeouts count as k times the limit.

    ``results`` may mix plain times-to-target (None or +inf = timeout) and
    GapCurve objects, which are reduced with ``time_to_target`` first.
    """
    if len(results) == 0:
        raise ValueError("no results")
    times = []
    for r in results:
        t = time_to_target(r, target_gap, time_limit) \
            if isinstance(r, GapCurve) else r
        solved = t is not None and np.isfinite(t) and t <= time_limit
        times.append(float(t) if solved else k * time_limit)
    return float(np.mean(times))


# -- calibrated time -------------------------------------------------------------


@dataclass
class CalibrationConfig:
    """How to measure machine speed: which solve, how often, how precisely."""

    instance: object = None              # defaults to the bundled fixed MIP
    k_min: int = 3
    k_max: int = 30
    confidence_z: float = 1.96           # 95% normal interval
    rel_half_width: float = 0.05         # stop when CI half-width <= 5% of mean
    reference_solve_seconds: float | None = None   # None: first local measure
    measure_interval: float = 0.25       # seconds between measurement rounds

    def __post_init__(self):
        if self.k_min > self.k_max:
            raise ValueError("k_min must not exceed k_max")
        if self.k_min < 2:
            raise ValueError("need at least two samples for an interval")


def _default_solve():
    from .bnb import solve
    from .generators import calibration_instance

    solve(calibration_instance())


class CalibratedClock:
    """Time in reference-machine seconds, measured by repeated solves.

    A dedicated thread re-times the calibration solve every
    ``measure_interval`` seconds: each round solves it K times, K grown
    adaptively within [k_min, k_max] until the 95% confidence half-width of
    the mean speed (speed = 1 / solve seconds) is within ``rel_half_width``
    of the mean.  Elapsed calibrated time integrates the piecewise-constant
    speed over wall time and multiplies by ``reference_solve_seconds``.  The
    instance is itself a zero-argument clock callable, so it plugs directly
    into the solver.  If calibration fails the clock falls back to the wall,
    with ``wall_fallback`` set so downstream reports can flag it.
    """

    def __init__(self, config=None, solve_fn=None, timer=time.perf_counter):
        self.config = config or CalibrationConfig()
        self._solve = solve_fn or _default_solve
        self._timer = timer
        self._samples = []               # (wall timestamp, mean speed)
        self.rounds = []                 # (k_used, mean_speed, half_width)
        self.wall_fallback = False
        self.reference_solve_seconds = self.config.reference_solve_seconds
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = None
        self._start_time = None

    # -- measurement --

    def measure_speed(self):
        """One adaptive round; returns mean speed in solves per second."""
        speeds = []
        while True:
            t0 = self._timer()
            self._solve()
            dt = self._timer() - t0
            if dt <= 0:
                raise RuntimeError("calibration solve finished in zero time")
            speeds.append(1.0 / dt)
            n = len(speeds)
            if n >= self.config.k_min:
                mean = float(np.mean(speeds))
                half = (self.config.confidence_z
                        * float(np.std(speeds, ddof=1)) / np.sqrt(n))
                if half <= self.config.rel_half_width * mean \
                        or n >= self.config.k_max:
                    self.rounds.append((n, mean, half))
                    return mean

    def sample_once(self):
        """Run one measurement round now and fold it into the speed model."""
        try:
            speed = self.measure_speed()
        except Exception:
            self.wall_fallback = True
            return
        with self._lock:
            if self.reference_solve_seconds is None:
                # local machine becomes the reference: calibrated == wall here
                self.reference_solve_seconds = 1.0 / speed
            self._samples.append((self._timer(), speed))

    def _run(self):
        while not self._stop.wait(self.config.measure_interval):
            self.sample_once()

    # -- lifecycle --

    def start(self, background=True):
        """Take the first sample; with ``background``, keep sampling on the
        dedicated thread until stop()."""
        if self._thread is not None:
            return self
        if self._start_time is None:
            self._start_time = self._timer()
        self.sample_once()               # synchronous first sample
        if background:
            self._stop.clear()
            self._thread = threading.Thread(target=self._run, daemon=True)
            self._thread.start()
        return self

    def stop(self):
        if self._thread is not None:
            self._stop.set()
            self._thread.join()
            self._thread = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- reading the clock --

    def elapsed(self):
        """Calibrated seconds since start(), in reference-machine units."""
        if self._start_time is None:
            raise RuntimeError("clock not started")
        now = self._timer()
        with self._lock:
            samples = list(self._samples)
            reference = self.reference_solve_seconds
        if self.wall_fallback and not samples:
            return now - self._start_time
        total = 0.0
        # the first measured speed applies retroactively from start()
        t_prev = self._start_time
        speed_prev = samples[0][1]
        for ts, speed in samples:
            if ts > t_prev:
                total += speed_prev * (min(ts, now) - t_prev)
                t_prev = min(ts, now)
            speed_prev = speed
        if now > t_prev:
            total += speed_prev * (now - t_prev)
        return total * reference

    def __call__(self):
        return self.elapsed()


# -- plots ------------------------------------------------------------------------


def plot_curves(curves, labels, path, title="", xlabel="seconds",
                ylabel="gap", log_log=True):
    """Write the step curves to an SVG; log-log axes by default."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    for curve, label in zip(curves, labels):
        times = [t for t, _ in curve.breakpoints]
        values = [v for _, v in curve.breakpoints]
        if log_log:
            # log axes cannot show t = 0; nudge onto the smallest positive tick
            times = [max(t, 1e-6) for t in times]
            values = [max(v, 1e-12) for v in values]
        ax.step(times, values, where="post", label=label)
    if log_log:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return str(path)
