"""Post-hoc metrics: perception deltas, per-trial performance summaries, and
paired condition comparisons in the standard six-row table layout."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .delays import ConditionSpec
from .pupil import PupilTrace, run_pupil_pipeline
from .session import TrialLog

ALPHA = 0.05

# canonical pairwise comparison order for the report tables
CONDITION_ORDER = ("control", "anchoring", "asynchronous", "synchronous")
COMPARISON_PAIRS = (
    ("control", "anchoring"),
    ("control", "asynchronous"),
    ("control", "synchronous"),
    ("anchoring", "asynchronous"),
    ("anchoring", "synchronous"),
    ("asynchronous", "synchronous"),
)

PICKUP_PHASE_S = 20.0
DROPOFF_PHASE_S = 20.0


@dataclass(frozen=True)
class PerceptionReport:
    """Reported vs actual delays (ms) and their signed differences."""

    delay_vp: float
    delay_va: float
    delay_hp: float
    delay_ha: float
    gap_p: float
    gap_a: float

    @property
    def delta_v(self) -> float:
        return self.delay_vp - self.delay_va

    @property
    def delta_h(self) -> float:
        return self.delay_hp - self.delay_ha

    @property
    def delta_gap(self) -> float:
        return self.gap_p - self.gap_a


def perception_deltas(perceived: tuple[float, float, float],
                      actual: tuple[float, float, float]) -> PerceptionReport:
    """Signed perception errors from (visual, haptic, gap) ms triples.
    Negative values mean the operator under-estimated the delay."""
    for v in (*perceived, *actual):
        if v < 0:
            raise ValueError("delay values must be >= 0")
    return PerceptionReport(delay_vp=float(perceived[0]), delay_va=float(actual[0]),
                            delay_hp=float(perceived[1]), delay_ha=float(actual[1]),
                            gap_p=float(perceived[2]), gap_a=float(actual[2]))


def actual_gap_ms(condition: ConditionSpec) -> float:
    """The actual visuomotor gap is the absolute visual/haptic delay split."""
    return float(abs(condition.visual_delay_ms - condition.haptic_delay_ms))


# ---------------------------------------------------------------------------
# per-trial metrics

@dataclass
class MetricsReport:
    trial_id: str
    condition: str
    visual_delay_ms: int
    seed: int
    placement_accuracy_m: dict[str, float] = field(default_factory=dict)
    time_on_task_s: dict[str, float] = field(default_factory=dict)
    total_time_on_task_s: float = 0.0
    mean_placement_accuracy_m: float = 0.0
    delta_v_ms: float | None = None
    delta_h_ms: float | None = None
    delta_gap_ms: float | None = None
    dilation_pickup: float | None = None
    dilation_dropoff: float | None = None
    tlx_total: float | None = None
    tlx_confidence: float | None = None
    tlx_frustration: float | None = None
    warnings: tuple[str, ...] = ()


def metrics_from_log(log: TrialLog) -> MetricsReport:
    """Score one trial: per-cube placement accuracy and grab-to-drop time,
    perception deltas when reported, and per-phase aggregated dilation from
    the pupil trace."""
    import json

    cond = log.config.condition
    report = MetricsReport(trial_id=log.config.trial_id,
                           condition=cond.kind.value,
                           visual_delay_ms=cond.visual_delay_ms,
                           seed=log.config.seed)

    first_grasp: dict[str, int] = {}
    last_drop: dict[str, int] = {}
    for ev in log.event_rows:
        if ev.kind == "grasp" and ev.subject not in first_grasp:
            first_grasp[ev.subject] = ev.time_ms
        elif ev.kind == "placement":
            last_drop[ev.subject] = ev.time_ms
            details = json.loads(ev.details) if ev.details else {}
            if "accuracy_m" in details:
                report.placement_accuracy_m[ev.subject] = details["accuracy_m"]

    for cube, t_drop in last_drop.items():
        t_grab = first_grasp.get(cube)
        if t_grab is not None and t_drop >= t_grab:
            report.time_on_task_s[cube] = (t_drop - t_grab) / 1000.0
    report.total_time_on_task_s = float(sum(report.time_on_task_s.values()))
    if report.placement_accuracy_m:
        report.mean_placement_accuracy_m = float(
            np.mean(list(report.placement_accuracy_m.values())))

    post = log.posttrial
    if post.get("perceived_visual_ms") is not None:
        perceived = (post["perceived_visual_ms"],
                     post.get("perceived_haptic_ms") or 0.0,
                     post.get("perceived_gap_ms") or 0.0)
        actual = (float(cond.visual_delay_ms), float(cond.haptic_delay_ms),
                  actual_gap_ms(cond))
        deltas = perception_deltas(perceived, actual)
        report.delta_v_ms = deltas.delta_v
        report.delta_h_ms = deltas.delta_h
        report.delta_gap_ms = deltas.delta_gap
    report.tlx_total = post.get("tlx_total")
    report.tlx_confidence = post.get("tlx_confidence")
    report.tlx_frustration = post.get("tlx_frustration")

    if log.pupil_rows and first_grasp and last_drop:
        t = np.array([r.time_ms for r in log.pupil_rows], dtype=float)
        d = np.array([np.nan if r.diameter_mm is None else r.diameter_mm
                      for r in log.pupil_rows])
        rgb = np.array([r.frame_rgb for r in log.pupil_rows], dtype=float)
        trace = PupilTrace(t, d, frame_rgb=rgb)
        pickup_start = min(first_grasp.values())
        dropoff_end = max(last_drop.values())
        phases = {
            "pickup": (float(pickup_start),
                       float(pickup_start + PICKUP_PHASE_S * 1000.0)),
            "dropoff": (float(dropoff_end - DROPOFF_PHASE_S * 1000.0),
                        float(dropoff_end)),
        }
        try:
            result = run_pupil_pipeline(trace, phases)
            report.dilation_pickup = result.dilation_by_phase["pickup"]
            report.dilation_dropoff = result.dilation_by_phase["dropoff"]
            report.warnings = result.warnings
        except Exception as exc:  # noqa: BLE001 - surface, don't fail scoring
            report.warnings = (f"pupil_pipeline_failed: {exc}",)
    return report


# ---------------------------------------------------------------------------
# paired condition comparisons

@dataclass(frozen=True)
class ComparisonRow:
    pair: tuple[str, str]
    direction: str  # "Smaller" | "Larger" | "No Difference"
    p_value: float
    n: int

    def label(self) -> str:
        a, b = self.pair
        return f"{a.capitalize()} vs {b.capitalize()}"


def compare_conditions(groups: dict[str, list[float]], *,
                       method: str = "wilcoxon",
                       alpha: float = ALPHA) -> list[ComparisonRow]:
    """Paired two-sided tests over every canonical condition pair present.

    Values must be paired (same subjects/seeds, equal lengths). ``Smaller``
    means the first condition of the pair has the smaller values. Identical
    groups report p = 1.0 and no difference.
    """
    if len(groups) < 2:
        raise ValueError("need at least two condition groups")
    sizes = {len(v) for v in groups.values()}
    if len(sizes) != 1:
        raise ValueError(f"groups are not paired: sizes {sorted(sizes)}")
    n = sizes.pop()
    if n == 0:
        raise ValueError("groups are empty")
    if method not in ("wilcoxon", "ttest"):
        raise ValueError(f"unknown method {method!r}")

    rows = []
    for a, b in COMPARISON_PAIRS:
        if a not in groups or b not in groups:
            continue
        xs = np.asarray(groups[a], dtype=float)
        ys = np.asarray(groups[b], dtype=float)
        diff = xs - ys
        if np.all(diff == 0.0):
            rows.append(ComparisonRow((a, b), "No Difference", 1.0, n))
            continue
        with warnings.catch_warnings():
            # near-identical paired differences are routine for scripted
            # trials; the sign statistics stay valid
            warnings.simplefilter("ignore", RuntimeWarning)
            if method == "wilcoxon":
                stat = stats.wilcoxon(xs, ys, zero_method="wilcox")
                p = float(stat.pvalue)
            else:
                p = float(stats.ttest_rel(xs, ys).pvalue)
        if p < alpha:
            direction = "Smaller" if float(np.median(diff)) < 0 else "Larger"
            if float(np.median(diff)) == 0.0:
                direction = "Smaller" if float(np.mean(diff)) < 0 else "Larger"
        else:
            direction = "No Difference"
        rows.append(ComparisonRow((a, b), direction, p, n))
    return rows


def format_comparison_table(metric_rows: dict[str, list[ComparisonRow]]) -> str:
    """Text table: one row per condition pair, one column per metric."""
    metrics = list(metric_rows)
    pairs = []
    for rows in metric_rows.values():
        for r in rows:
            if r.pair not in pairs:
                pairs.append(r.pair)
    header = ["Condition Comparison"] + metrics
    lines = []
    table_rows = []
    for pair in pairs:
        cells = [f"{pair[0].capitalize()} vs {pair[1].capitalize()}"]
        for m in metrics:
            row = next((r for r in metric_rows[m] if r.pair == pair), None)
            cells.append("-" if row is None
                         else f"{row.direction} (p={row.p_value:.3g})")
        table_rows.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in table_rows)) if table_rows else len(h)
              for i, h in enumerate(header)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for cells in table_rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


def build_report(reports: list[MetricsReport]) -> str:
    """Assemble the full analysis report: per-trial metrics plus the paired
    comparison tables, pairing trials across conditions by seed."""
    lines = ["# Trial metrics", ""]
    for r in sorted(reports, key=lambda r: (r.condition, r.visual_delay_ms, r.seed)):
        lines.append(
            f"{r.trial_id}: condition={r.condition}-{r.visual_delay_ms} seed={r.seed} "
            f"ToT={r.total_time_on_task_s:.3f}s PA={r.mean_placement_accuracy_m:.4f}m "
            f"dv={_fmt_opt(r.delta_v_ms)} dh={_fmt_opt(r.delta_h_ms)} "
            f"dgap={_fmt_opt(r.delta_gap_ms)} "
            f"D_pickup={_fmt_opt(r.dilation_pickup)} D_dropoff={_fmt_opt(r.dilation_dropoff)}")
    lines.append("")

    by_condition: dict[str, dict[int, list[MetricsReport]]] = {}
    for r in reports:
        by_condition.setdefault(r.condition, {}).setdefault(r.seed, []).append(r)
    common_seeds = None
    for cond, by_seed in by_condition.items():
        seeds = set(by_seed)
        common_seeds = seeds if common_seeds is None else (common_seeds & seeds)
    if common_seeds and len(by_condition) >= 2:
        seeds = sorted(common_seeds)

        def grouped(metric):
            out = {}
            for cond, by_seed in by_condition.items():
                vals = []
                for s in seeds:
                    trials = by_seed[s]
                    vals.append(float(np.mean([getattr(t, metric) for t in trials
                                               if getattr(t, metric) is not None])))
                out[cond] = vals
            return out

        tables = {}
        for name, metric in (("Placement Accuracy", "mean_placement_accuracy_m"),
                             ("Time on Task", "total_time_on_task_s"),
                             ("Visual Perception", "delta_v_ms"),
                             ("Pick Up Cognitive Load", "dilation_pickup"),
                             ("Drop Off Cognitive Load", "dilation_dropoff")):
            try:
                tables[name] = compare_conditions(grouped(metric))
            except (ValueError, TypeError):
                continue
        if tables:
            lines.append("# Paired condition comparisons "
                         f"(n={len(seeds)} seeds per condition)")
            lines.append("")
            lines.append(format_comparison_table(tables))
    return "\n".join(lines)


def _fmt_opt(v) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def write_report(reports: list[MetricsReport], directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "report.txt"
    path.write_text(build_report(reports))
    return path
