"""Report serialization, rendering, and reference-pattern comparison.

Report files are canonical JSON (sorted keys, two-space indent, trailing
newline) keyed by protocol, so emit -> parse -> emit is byte-identical.
Charts are standalone SVG: textual, diffable, no plotting dependency.
"""

from __future__ import annotations

import csv
import io
import json
import xml.etree.ElementTree as ElementTree
from dataclasses import dataclass

from .ablation import AblationResult, TrivialityReport
from .errors import ReportError
from .model import LayerAddress


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def report_to_dict(report: TrivialityReport) -> dict:
    return {
        "baseline": report.baseline,
        "dataset": report.dataset,
        "fingerprint": report.fingerprint,
        "metric": report.metric,
        "results": [
            {
                "ablated": r.ablated,
                "addresses": [str(a) for a in r.addresses],
                "delta": r.delta,
                "trivial": r.trivial,
            }
            for r in report.results
        ],
        "seed": report.seed,
        "task": report.task,
        "tau": report.tau,
    }


def report_from_dict(protocol: str, d: dict) -> TrivialityReport:
    try:
        results = [
            AblationResult(
                addresses=[LayerAddress.parse(a) for a in r["addresses"]],
                ablated=float(r["ablated"]),
                delta=float(r["delta"]),
                trivial=bool(r["trivial"]),
            )
            for r in d["results"]
        ]
        return TrivialityReport(
            fingerprint=str(d["fingerprint"]),
            task=str(d["task"]),
            metric=str(d["metric"]),
            baseline=float(d["baseline"]),
            tau=float(d["tau"]),
            protocol=protocol,
            results=results,
            seed=int(d["seed"]),
            dataset=dict(d["dataset"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ReportError(f"malformed report section {protocol!r}: {e!r}") from None


def dumps_reports(reports: dict[str, TrivialityReport]) -> str:
    payload = {proto: report_to_dict(rep) for proto, rep in reports.items()}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_reports(reports: dict[str, TrivialityReport], path) -> None:
    with open(path, "w") as f:
        f.write(dumps_reports(reports))


def loads_reports(text: str) -> dict[str, TrivialityReport]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ReportError(f"report is not valid JSON: {e}") from None
    if not isinstance(payload, dict) or not payload:
        raise ReportError("report file must map protocol names to reports")
    out = {}
    for proto, d in payload.items():
        if proto not in ("e1", "e2", "e3", "custom"):
            raise ReportError(f"unknown protocol key {proto!r}")
        if not isinstance(d, dict):
            raise ReportError(f"report section {proto!r} must be an object")
        out[proto] = report_from_dict(proto, d)
    return out


def read_reports(path) -> dict[str, TrivialityReport]:
    with open(path) as f:
        return loads_reports(f.read())


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def result_labels(report: TrivialityReport) -> list[str]:
    """Row labels: single addresses for E1, layer-block names for E2/E3."""
    if report.protocol == "e2":
        return [f"block {i + 1}" for i in range(len(report.results))]
    if report.protocol == "e3":
        return [f"block {i + 2}" for i in range(len(report.results))]
    labels = []
    for r in report.results:
        labels.append("+".join(str(a) for a in r.addresses) if r.addresses else "(none)")
    return labels


def render_text(reports: dict[str, TrivialityReport]) -> str:
    lines = []
    for proto in sorted(reports):
        rep = reports[proto]
        lines.append(
            f"[{proto}] task={rep.task} metric={rep.metric} "
            f"baseline={rep.baseline:.4f} tau={rep.tau}"
        )
        width = max((len(l) for l in result_labels(rep)), default=8)
        lines.append(f"  {'target':<{width}}  {'ablated':>8}  {'delta':>8}  verdict")
        for label, r in zip(result_labels(rep), rep.results):
            verdict = "trivial" if r.trivial else "non-trivial"
            lines.append(
                f"  {label:<{width}}  {r.ablated:>8.4f}  {r.delta:>+8.4f}  {verdict}"
            )
        lines.append("")
    return "\n".join(lines)


def render_csv(reports: dict[str, TrivialityReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["protocol", "label", "addresses", "baseline", "ablated", "delta", "trivial"])
    for proto in sorted(reports):
        rep = reports[proto]
        for label, r in zip(result_labels(rep), rep.results):
            w.writerow([
                proto,
                label,
                ";".join(str(a) for a in r.addresses),
                f"{rep.baseline:.6f}",
                f"{r.ablated:.6f}",
                f"{r.delta:.6f}",
                "true" if r.trivial else "false",
            ])
    return buf.getvalue()


_BAR_W = 26
_BAR_GAP = 8
_PLOT_H = 120
_MARGIN_L = 46
_MARGIN_TOP = 28
_LABEL_H = 86
_SECTION_GAP = 18


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(reports: dict[str, TrivialityReport]) -> str:
    """Bar chart of the ablated metric per target, one panel per protocol,
    with a dashed rule at the baseline."""
    panels = []
    max_bars = max(len(rep.results) for rep in reports.values())
    width = _MARGIN_L + max(max_bars, 1) * (_BAR_W + _BAR_GAP) + 30
    y0 = 0
    for proto in sorted(reports):
        rep = reports[proto]
        top = y0 + _MARGIN_TOP
        parts = [
            f'<text x="{_MARGIN_L}" y="{y0 + 16}" font-size="12" '
            f'font-family="monospace">{_esc(proto)}: {_esc(rep.metric)} after zeroing '
            f'(baseline {rep.baseline:.3f})</text>'
        ]
        # axis and ticks
        parts.append(
            f'<line x1="{_MARGIN_L}" y1="{top}" x2="{_MARGIN_L}" '
            f'y2="{top + _PLOT_H}" stroke="#333"/>'
        )
        for frac in (0.0, 0.5, 1.0):
            y = top + _PLOT_H * (1 - frac)
            parts.append(
                f'<text x="{_MARGIN_L - 6}" y="{y + 4}" font-size="9" '
                f'text-anchor="end" font-family="monospace">{frac:.1f}</text>'
            )
            parts.append(
                f'<line x1="{_MARGIN_L - 3}" y1="{y}" x2="{_MARGIN_L}" y2="{y}" stroke="#333"/>'
            )
        for i, (label, r) in enumerate(zip(result_labels(rep), rep.results)):
            x = _MARGIN_L + _BAR_GAP + i * (_BAR_W + _BAR_GAP)
            v = min(max(r.ablated, 0.0), 1.0)
            h = _PLOT_H * v
            color = "#9aa0a6" if r.trivial else "#c0392b"
            parts.append(
                f'<rect x="{x}" y="{top + _PLOT_H - h:.2f}" width="{_BAR_W}" '
                f'height="{h:.2f}" fill="{color}"/>'
            )
            parts.append(
                f'<text x="{x + _BAR_W / 2:.1f}" y="{top + _PLOT_H + 10}" font-size="8" '
                f'font-family="monospace" text-anchor="end" '
                f'transform="rotate(-45 {x + _BAR_W / 2:.1f} {top + _PLOT_H + 10})">'
                f"{_esc(label)}</text>"
            )
        yb = top + _PLOT_H * (1 - min(max(rep.baseline, 0.0), 1.0))
        parts.append(
            f'<line x1="{_MARGIN_L}" y1="{yb:.2f}" x2="{width - 10}" y2="{yb:.2f}" '
            f'stroke="#2c3e50" stroke-dasharray="5 3"/>'
        )
        panels.append("\n".join(parts))
        y0 = top + _PLOT_H + _LABEL_H + _SECTION_GAP
    height = y0
    body = "\n".join(panels)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n{body}\n</svg>\n'
    )


def validate_svg(text: str) -> None:
    """Parse the markup back; raises ReportError if it is not well-formed."""
    try:
        root = ElementTree.fromstring(text)
    except ElementTree.ParseError as e:
        raise ReportError(f"generated SVG is not well-formed: {e}") from None
    if not root.tag.endswith("svg"):
        raise ReportError(f"unexpected root element {root.tag!r}")


# ---------------------------------------------------------------------------
# embedded reference patterns
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferencePattern:
    """Metric-per-layer-block values from the original full-scale sweeps,
    kept for qualitative (trivial / non-trivial) comparison only. Desk runs
    are never expected to match them numerically."""

    source: str
    metric: str
    baseline: float
    rows: tuple[tuple[str, float], ...]
    protocol: str


REFERENCE_PATTERNS: dict[str, ReferencePattern] = {
    "cifar10-e2": ReferencePattern(
        source="ResNet34 / CIFAR-10, blockwise zeroing keeping each block's first unit",
        metric="accuracy",
        baseline=0.84,
        rows=(("block 1", 0.51), ("block 2", 0.61), ("block 3", 0.83), ("block 4", 0.84)),
        protocol="e2",
    ),
    "cifar10-e3": ReferencePattern(
        source="ResNet34 / CIFAR-10, projection-shortcut zeroing",
        metric="accuracy",
        baseline=0.84,
        rows=(("block 2", 0.28), ("block 3", 0.33), ("block 4", 0.16)),
        protocol="e3",
    ),
    "t1-e2": ReferencePattern(
        source="PSPNet-ResNet34 / T1, blockwise zeroing keeping each block's first unit",
        metric="dice",
        baseline=0.87,
        rows=(("block 1", 0.82), ("block 2", 0.86), ("block 3", 0.82), ("block 4", 0.00)),
        protocol="e2",
    ),
    "t1-e3": ReferencePattern(
        source="PSPNet-ResNet34 / T1, projection-shortcut zeroing",
        metric="dice",
        baseline=0.87,
        rows=(("block 2", 0.00), ("block 3", 0.00), ("block 4", 0.00)),
        protocol="e3",
    ),
}


def compare_to_reference(report: TrivialityReport, ref: ReferencePattern):
    """Side-by-side desk vs reference verdicts at the report's tau.

    A position matches when both columns agree on trivial vs non-trivial.
    Returns (rows, all_match); each row is
    (label, desk_ablated, desk_trivial, ref_value, ref_trivial, match).
    """
    if len(report.results) != len(ref.rows):
        raise ReportError(
            f"report has {len(report.results)} results but reference "
            f"{len(ref.rows)} rows; compare needs matching layer-block counts"
        )
    rows = []
    all_match = True
    for r, (label, ref_value) in zip(report.results, ref.rows):
        ref_trivial = abs(ref.baseline - ref_value) <= report.tau
        match = r.trivial == ref_trivial
        all_match &= match
        rows.append((label, r.ablated, r.trivial, ref_value, ref_trivial, match))
    return rows, all_match


def render_comparison(report: TrivialityReport, ref_id: str) -> str:
    ref = REFERENCE_PATTERNS.get(ref_id)
    if ref is None:
        raise ReportError(
            f"unknown reference {ref_id!r}; available: {sorted(REFERENCE_PATTERNS)}"
        )
    rows, all_match = compare_to_reference(report, ref)
    lines = [
        f"comparison against {ref_id} ({ref.source})",
        f"desk baseline {report.baseline:.4f} vs reference baseline {ref.baseline:.2f}; "
        f"tau {report.tau}",
        f"  {'position':<10} {'desk':>7} {'verdict':<12} {'ref':>6} {'verdict':<12} match",
    ]
    for label, desk, desk_triv, refv, ref_triv, match in rows:
        lines.append(
            f"  {label:<10} {desk:>7.4f} "
            f"{('trivial' if desk_triv else 'non-trivial'):<12} {refv:>6.2f} "
            f"{('trivial' if ref_triv else 'non-trivial'):<12} "
            f"{'yes' if match else 'NO'}"
        )
    lines.append(f"qualitative match: {'yes' if all_match else 'no'}")
    return "\n".join(lines) + "\n"
