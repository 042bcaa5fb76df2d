"""Pupil-diameter preprocessing and the aggregated-dilation cognitive-load
metric.

The processing order is fixed: blink correction, outlier rejection (Hampel),
display-light-reflex compensation, subtractive baseline correction, symbolic
(SAX) latency alignment, and finally per-phase dilation aggregation. Each
stage records itself in the trace's stage log so the order is auditable, and
each stage is idempotent on its own output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .errors import InsufficientBaselineError, UnusableTraceError

NOMINAL_RATE_HZ = 90.0

# Blink gaps inside this duration window are reconstructed by linear
# interpolation; anything longer or shorter stays missing and is flagged.
BLINK_MIN_MS = 400.0
BLINK_MAX_MS = 600.0

BASELINE_SAMPLES = 90

HAMPEL_SCALE = 1.4826  # MAD -> sigma under a normal model


@dataclass(frozen=True)
class PupilTrace:
    """A pupil-diameter time series with per-frame display color aggregates.

    ``diameter_mm`` uses NaN for missing samples (blinks / dropouts).
    ``frame_rgb`` holds the display frame's mean R, G, B in [0, 255] per
    sample. ``stages`` logs the processing steps applied, in order.
    """

    timestamps_ms: np.ndarray
    diameter_mm: np.ndarray
    frame_rgb: np.ndarray | None = None
    stages: tuple[str, ...] = ()
    flagged_runs: tuple[tuple[int, int], ...] = ()  # inclusive index ranges
    warnings: tuple[str, ...] = ()
    light_reflex_fit: tuple[float, float, float] | None = None  # (a, b, c)

    def __post_init__(self):
        t = np.asarray(self.timestamps_ms, dtype=float)
        d = np.asarray(self.diameter_mm, dtype=float)
        if t.shape != d.shape:
            raise ValueError("timestamps and diameters must have equal length")
        if t.size >= 2 and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps_ms", t)
        object.__setattr__(self, "diameter_mm", d)
        if self.frame_rgb is not None:
            rgb = np.asarray(self.frame_rgb, dtype=float)
            if rgb.shape != (t.size, 3):
                raise ValueError("frame_rgb must be (n, 3)")
            object.__setattr__(self, "frame_rgb", rgb)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.diameter_mm)

    def __len__(self) -> int:
        return int(self.timestamps_ms.size)


def _missing_runs(valid: np.ndarray):
    """Inclusive (start, end) index ranges of consecutive missing samples."""
    runs = []
    start = None
    for i, ok in enumerate(valid):
        if not ok and start is None:
            start = i
        elif ok and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(valid) - 1))
    return runs


def correct_blinks(trace: PupilTrace, *, min_gap_ms: float = BLINK_MIN_MS,
                   max_gap_ms: float = BLINK_MAX_MS) -> PupilTrace:
    """Reconstruct blink gaps by linear interpolation.

    A gap's duration is the span between its flanking valid samples. Gaps
    inside [min, max] ms get straight-line fills between those flanks; gaps
    outside the window, or touching either end of the trace, are flagged
    invalid and left missing. A trace with no valid samples at all is
    unusable.
    """
    valid = trace.valid
    if not valid.any():
        raise UnusableTraceError("pupil trace has no valid samples")

    t = trace.timestamps_ms
    d = trace.diameter_mm.copy()
    flagged = list(trace.flagged_runs)
    for start, end in _missing_runs(valid):
        if start == 0 or end == len(trace) - 1:
            flagged.append((start, end))
            continue
        t0, t1 = t[start - 1], t[end + 1]
        duration = t1 - t0
        if min_gap_ms <= duration <= max_gap_ms:
            d0, d1 = d[start - 1], d[end + 1]
            for i in range(start, end + 1):
                frac = (t[i] - t0) / (t1 - t0)
                d[i] = d0 + frac * (d1 - d0)
        else:
            flagged.append((start, end))
    return replace(trace, diameter_mm=d,
                   stages=trace.stages + ("blink_correction",),
                   flagged_runs=tuple(sorted(set(flagged))))


def hampel_filter(trace_or_values, window: int = 15,
                  n_sigma: float = 3.0):
    """Sliding-window outlier rejection.

    Each sample farther than n_sigma * 1.4826 * MAD from its window median
    (half-width ``window``, truncated at the edges, missing samples ignored)
    is replaced by that median. Accepts a PupilTrace or a bare array.
    """
    if window < 1:
        raise ValueError("window half-width must be >= 1")
    if isinstance(trace_or_values, PupilTrace):
        values = trace_or_values.diameter_mm
    else:
        values = np.asarray(trace_or_values, dtype=float)

    out = values.copy()
    n = values.size
    for i in range(n):
        if not math.isfinite(values[i]):
            continue
        lo = max(0, i - window)
        hi = min(n, i + window + 1)
        win = values[lo:hi]
        win = win[np.isfinite(win)]
        if win.size < 2:
            continue
        med = float(np.median(win))
        mad = float(np.median(np.abs(win - med)))
        if abs(values[i] - med) > n_sigma * HAMPEL_SCALE * mad:
            out[i] = med

    if isinstance(trace_or_values, PupilTrace):
        return replace(trace_or_values, diameter_mm=out,
                       stages=trace_or_values.stages + ("hampel",))
    return out


def frame_luminance(r, g, b):
    """Perceived display luminance from channel values in [0, 255]:
    sqrt(0.299 R^2 + 0.587 G^2 + 0.114 B^2) per pixel, averaged over the
    frame when arrays are given."""
    r = np.asarray(r, dtype=float)
    g = np.asarray(g, dtype=float)
    b = np.asarray(b, dtype=float)
    lum = np.sqrt(0.299 * r * r + 0.587 * g * g + 0.114 * b * b)
    return float(np.mean(lum))


def luminance_series(trace: PupilTrace) -> np.ndarray:
    """Per-sample luminance from the trace's frame RGB aggregates."""
    if trace.frame_rgb is None:
        raise ValueError("trace carries no frame RGB data")
    rgb = trace.frame_rgb
    return np.sqrt(0.299 * rgb[:, 0] ** 2 + 0.587 * rgb[:, 1] ** 2
                   + 0.114 * rgb[:, 2] ** 2)


def _sse_at(lum: np.ndarray, d: np.ndarray, c: float):
    basis = np.exp(-c * lum)
    A = np.column_stack([np.ones_like(lum), basis])
    coef, *_ = np.linalg.lstsq(A, d, rcond=None)
    resid = d - A @ coef
    return float(resid @ resid), float(coef[0]), float(coef[1])


def _fit_light_component(lum: np.ndarray, d: np.ndarray):
    """Least-squares fit of d ~ a + b*exp(-c*L): a deterministic grid over
    the decay rate (closed-form (a, b) at each node) followed by a
    golden-section refinement around the best node."""
    span = float(np.max(lum) - np.min(lum))
    if span < 1e-9:
        # constant luminance: the component degenerates to a constant
        return float(np.mean(d)), 0.0, 0.0

    grid = np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 60)])
    sses = [_sse_at(lum, d, c)[0] for c in grid]
    k = int(np.argmin(sses))
    lo = grid[max(0, k - 1)]
    hi = grid[min(len(grid) - 1, k + 1)]
    if hi <= lo:
        hi = lo + 1e-4

    # golden-section refinement; fixed iteration count keeps it deterministic
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1 = _sse_at(lum, d, x1)[0]
    f2 = _sse_at(lum, d, x2)[0]
    for _ in range(48):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = _sse_at(lum, d, x1)[0]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = _sse_at(lum, d, x2)[0]
    candidates = [(sses[k], grid[k]), (f1, x1), (f2, x2)]
    best_sse, best_c = min(candidates)
    _, a, b = _sse_at(lum, d, best_c)
    return a, b, float(best_c)


def compensate_light_reflex(trace: PupilTrace,
                            luminance: np.ndarray | None = None) -> PupilTrace:
    """Remove the display-driven pupil component.

    Fits d_lum(L) = a + b*exp(-c*L) to the valid samples by least squares and
    subtracts it, leaving the load-driven variation. Constant luminance
    degenerates to subtracting the mean. A trace that was already compensated
    reuses its stored fit, making the stage idempotent. Fit failure passes
    the trace through with a warning flag.
    """
    if len(trace) == 0:
        raise UnusableTraceError("cannot compensate an empty trace")
    lum = luminance_series(trace) if luminance is None else np.asarray(luminance, float)
    if lum.shape != trace.timestamps_ms.shape:
        raise ValueError("luminance trace must align with the samples")

    valid = trace.valid
    if valid.sum() < 3:
        return replace(trace, warnings=trace.warnings + ("light_reflex_skipped",),
                       stages=trace.stages + ("light_reflex",))

    if trace.light_reflex_fit is not None:
        # already compensated: the stored model's residual correction is zero
        return replace(trace, stages=trace.stages + ("light_reflex",))

    try:
        a, b, c = _fit_light_component(lum[valid], trace.diameter_mm[valid])
    except np.linalg.LinAlgError:
        return replace(trace, warnings=trace.warnings + ("light_reflex_fit_failed",),
                       stages=trace.stages + ("light_reflex",))
    component = a + b * np.exp(-c * lum)
    if not np.all(np.isfinite(component)):
        return replace(trace, warnings=trace.warnings + ("light_reflex_fit_failed",),
                       stages=trace.stages + ("light_reflex",))
    d = trace.diameter_mm.copy()
    d[valid] = d[valid] - component[valid]
    return replace(trace, diameter_mm=d,
                   stages=trace.stages + ("light_reflex",),
                   light_reflex_fit=(a, b, c))


def baseline_correct(trace: PupilTrace,
                     n_baseline: int = BASELINE_SAMPLES) -> PupilTrace:
    """Subtract the mean of the first ``n_baseline`` valid samples from the
    whole series. Fewer valid samples than that is an error."""
    valid_idx = np.flatnonzero(trace.valid)
    if valid_idx.size < n_baseline:
        raise InsufficientBaselineError(
            f"need {n_baseline} valid samples for the baseline, "
            f"have {valid_idx.size}")
    baseline = float(np.mean(trace.diameter_mm[valid_idx[:n_baseline]]))
    return replace(trace, diameter_mm=trace.diameter_mm - baseline,
                   stages=trace.stages + ("baseline",))


# ---------------------------------------------------------------------------
# SAX alignment

def sax_breakpoints(alphabet_size: int) -> np.ndarray:
    """Standard-normal quantile breakpoints splitting the line into
    ``alphabet_size`` equiprobable bins."""
    if alphabet_size < 2:
        raise ValueError("alphabet size must be >= 2")
    return norm.ppf(np.arange(1, alphabet_size) / alphabet_size)


def sax_symbolize(values: np.ndarray, word_length: int,
                  alphabet_size: int = 4) -> np.ndarray:
    """Z-normalize, reduce to ``word_length`` segment means (PAA), and
    discretize against Gaussian breakpoints. Returns symbol indices."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    n = values.size
    if n < word_length:
        raise ValueError(f"series of {n} samples is shorter than word length "
                         f"{word_length}")
    std = float(np.std(values))
    z = np.zeros(n) if std < 1e-12 else (values - float(np.mean(values))) / std
    # piecewise aggregate: segment i covers [i*n/w, (i+1)*n/w)
    edges = (np.arange(word_length + 1) * n) // word_length
    paa = np.array([z[edges[i]:edges[i + 1]].mean() for i in range(word_length)])
    return np.searchsorted(sax_breakpoints(alphabet_size), paa, side="right")


@dataclass(frozen=True)
class SaxAlignment:
    symbols: np.ndarray
    template_symbols: np.ndarray
    offset_samples: int
    samples_per_segment: int


def sax_align(values: np.ndarray, template: np.ndarray, word_length: int,
              alphabet_size: int = 4, max_lag: int | None = None) -> SaxAlignment:
    """Symbolize both series and find the lag (in samples) at which the
    series best matches the template, via cross-correlation of mean-centered
    symbol sequences. Positive offset: the series trails the template."""
    values = np.asarray(values, dtype=float)
    template = np.asarray(template, dtype=float)
    sym_a = sax_symbolize(values, word_length, alphabet_size).astype(float)
    sym_b = sax_symbolize(template, word_length, alphabet_size).astype(float)
    seg = max(1, len(values) // word_length)

    center = (alphabet_size - 1) / 2.0
    a = sym_a - center
    b = sym_b - center
    w = len(a)
    lag_cap = w - 1 if max_lag is None else max(0, int(max_lag) // seg)

    best_lag, best_score = 0, -math.inf
    for lag in range(-lag_cap, lag_cap + 1):
        if lag >= 0:
            x, y = a[lag:], b[:w - lag]
        else:
            x, y = a[:w + lag], b[-lag:]
        if x.size == 0:
            continue
        score = float(x @ y) / x.size
        if (score > best_score + 1e-12
                or (abs(score - best_score) <= 1e-12
                    and (abs(lag) < abs(best_lag)
                         or (abs(lag) == abs(best_lag) and lag < best_lag)))):
            best_score, best_lag = score, lag
    return SaxAlignment(symbols=sym_a.astype(int),
                        template_symbols=sym_b.astype(int),
                        offset_samples=best_lag * seg,
                        samples_per_segment=seg)


# ---------------------------------------------------------------------------
# aggregated dilation

def aggregate_dilation(values) -> float:
    """Total dilation across the frames where the pupil dilated: the sum of
    positive baseline-corrected values. Below-baseline frames contribute
    nothing."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    return float(np.sum(values[values > 0.0]))


def aggregate_dilation_by_phase(trace: PupilTrace,
                                phases: dict[str, tuple[float, float]]) -> dict[str, float]:
    """Aggregate dilation per [start_ms, end_ms) phase window."""
    out = {}
    t = trace.timestamps_ms
    for name, (start_ms, end_ms) in phases.items():
        mask = (t >= start_ms) & (t < end_ms)
        out[name] = aggregate_dilation(trace.diameter_mm[mask])
    return out


# ---------------------------------------------------------------------------
# the full chain

PIPELINE_STAGES = ("blink_correction", "hampel", "light_reflex", "baseline",
                   "sax_align", "aggregate")


@dataclass(frozen=True)
class PupilPipelineResult:
    trace: PupilTrace
    stages: tuple[str, ...]
    dilation_by_phase: dict[str, float]
    alignment: SaxAlignment | None
    warnings: tuple[str, ...] = field(default_factory=tuple)


def run_pupil_pipeline(trace: PupilTrace,
                       phases: dict[str, tuple[float, float]], *,
                       hampel_window: int = 15, hampel_sigma: float = 3.0,
                       sax_word_length: int | None = None,
                       sax_alphabet: int = 4,
                       sax_template: np.ndarray | None = None) -> PupilPipelineResult:
    """Run the fixed preprocessing order and aggregate dilation per phase.

    The SAX step aligns against the display-luminance series (or a caller
    template) and shifts the phase windows by the recovered latency offset.
    """
    trace = correct_blinks(trace)
    trace = hampel_filter(trace, window=hampel_window, n_sigma=hampel_sigma)
    trace = compensate_light_reflex(trace)
    trace = baseline_correct(trace)

    alignment = None
    offset_ms = 0.0
    word = sax_word_length or max(4, len(trace) // 16)
    template = sax_template
    if template is None and trace.frame_rgb is not None:
        template = luminance_series(trace)
    if template is not None and len(trace) >= word:
        filled = np.nan_to_num(trace.diameter_mm, nan=0.0)
        alignment = sax_align(filled, template, word, sax_alphabet)
        if len(trace) >= 2:
            period = float(np.median(np.diff(trace.timestamps_ms)))
            offset_ms = alignment.offset_samples * period
    trace = replace(trace, stages=trace.stages + ("sax_align",))

    shifted = {name: (s + offset_ms, e + offset_ms)
               for name, (s, e) in phases.items()}
    dilation = aggregate_dilation_by_phase(trace, shifted)
    trace = replace(trace, stages=trace.stages + ("aggregate",))
    return PupilPipelineResult(trace=trace, stages=trace.stages,
                               dilation_by_phase=dilation,
                               alignment=alignment, warnings=trace.warnings)
