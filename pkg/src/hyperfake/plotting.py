"""Hand-rolled SVG figures: ROC curves and training history.

Plain text SVG keeps the outputs dependency-free, deterministic and
diffable in tests. Coordinates map through `map_point` with the module
constants below, so tests can predict exact polyline vertices.
"""

from __future__ import annotations

MARGIN = 60.0
PLOT_W = 520.0
PLOT_H = 400.0
WIDTH = int(PLOT_W + 2 * MARGIN)
HEIGHT = int(PLOT_H + 2 * MARGIN)

_COLORS = ("#c0392b", "#2980b9", "#27ae60")


def map_point(x: float, y: float, xlim: tuple[float, float], ylim: tuple[float, float]):
    """Data coordinates -> SVG pixel coordinates (y axis flipped)."""
    x0, x1 = xlim
    y0, y1 = ylim
    px = MARGIN + (x - x0) / (x1 - x0) * PLOT_W
    py = MARGIN + (1.0 - (y - y0) / (y1 - y0)) * PLOT_H
    return px, py


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _polyline(points, xlim, ylim, color: str, dashed: bool = False) -> str:
    coords = " ".join(
        f"{_fmt(px)},{_fmt(py)}" for px, py in (map_point(x, y, xlim, ylim) for x, y in points)
    )
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} '
        f'points="{coords}" />'
    )


def _frame(title: str, xlabel: str, ylabel: str, xlim, ylim, n_ticks: int = 5) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white" />',
        f'<text x="{WIDTH / 2:.0f}" y="30" text-anchor="middle" font-size="16">{title}</text>',
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12:.0f}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="18" y="{HEIGHT / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {HEIGHT / 2:.0f})">{ylabel}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT_W}" height="{PLOT_H}" '
        f'fill="none" stroke="black" />',
    ]
    for i in range(n_ticks + 1):
        fx = xlim[0] + (xlim[1] - xlim[0]) * i / n_ticks
        fy = ylim[0] + (ylim[1] - ylim[0]) * i / n_ticks
        px, _ = map_point(fx, ylim[0], xlim, ylim)
        _, py = map_point(xlim[0], fy, xlim, ylim)
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{MARGIN + PLOT_H:.0f}" x2="{_fmt(px)}" '
            f'y2="{MARGIN + PLOT_H + 5:.0f}" stroke="black" />'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{MARGIN + PLOT_H + 20:.0f}" text-anchor="middle" '
            f'font-size="10">{fx:.2g}</text>'
        )
        parts.append(
            f'<line x1="{MARGIN - 5:.0f}" y1="{_fmt(py)}" x2="{MARGIN:.0f}" '
            f'y2="{_fmt(py)}" stroke="black" />'
        )
        parts.append(
            f'<text x="{MARGIN - 10:.0f}" y="{_fmt(py)}" text-anchor="end" '
            f'font-size="10">{fy:.2g}</text>'
        )
    return parts


def roc_svg(roc_points: list[dict], auc_value: float | None = None) -> str:
    xlim = ylim = (0.0, 1.0)
    title = "ROC curve" if auc_value is None else f"ROC curve (AUC = {auc_value:.4f})"
    parts = _frame(title, "false positive rate", "true positive rate", xlim, ylim)
    parts.append(_polyline([(0.0, 0.0), (1.0, 1.0)], xlim, ylim, "#999999", dashed=True))
    pts = [(p["fpr"], p["tpr"]) for p in roc_points]
    parts.append(_polyline(pts, xlim, ylim, _COLORS[0]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def history_svg(history: list[dict]) -> str:
    epochs = [rec["epoch"] for rec in history]
    xlim = (float(min(epochs)), float(max(max(epochs), min(epochs) + 1)))
    series = [
        ("train_loss", "train loss"),
        ("train_acc", "train accuracy"),
        ("val_acc", "val accuracy"),
    ]
    all_vals = [rec[key] for key, _ in series for rec in history if rec[key] == rec[key]]
    hi = max(1.0, max(all_vals))
    ylim = (0.0, hi)
    parts = _frame("training history", "epoch", "value", xlim, ylim)
    for (key, label), color in zip(series, _COLORS):
        pts = [(rec["epoch"], rec[key]) for rec in history if rec[key] == rec[key]]
        if not pts:
            continue
        parts.append(_polyline(pts, xlim, ylim, color))
        parts.append(
            f'<text x="{MARGIN + 10:.0f}" y="{MARGIN + 16 + 14 * series.index((key, label)):.0f}" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
