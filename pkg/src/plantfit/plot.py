"""Precision-recall curves as standalone SVG files, written by hand."""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, MARGIN = 480, 400, 50
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def read_pr_csv(path) -> List[Tuple[float, float]]:
    """``(recall, precision)`` pairs from a ``rank,recall,precision`` file."""
    curve = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#") or line.startswith("rank"):
            continue
        _, r, p = line.split(",")
        curve.append((float(r), float(p)))
    return curve


def _xy(r, p):
    x = MARGIN + r * (WIDTH - 2 * MARGIN)
    y = HEIGHT - MARGIN - p * (HEIGHT - 2 * MARGIN)
    return x, y


def _path(curve) -> str:
    pts = [_xy(r, p) for r, p in curve]
    return "M " + " L ".join(f"{x:.2f},{y:.2f}" for x, y in pts)


def pr_svg(curves: Dict[str, Sequence], title: str = "", header: Optional[str] = None) -> str:
    """One SVG document drawing every named curve on shared unit axes."""
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    if header:
        out.append(f"<!-- {escape(header)} -->")
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">'
    )
    out.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    for t in np.linspace(0, 1, 6):
        x0, y0 = _xy(t, 0)
        x1, y1 = _xy(0, t)
        out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0:.2f}" y2="{MARGIN}" stroke="#ddd"/>')
        out.append(f'<line x1="{MARGIN}" y1="{y1:.2f}" x2="{WIDTH - MARGIN}" y2="{y1:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{x0:.2f}" y="{y0 + 15:.2f}" text-anchor="middle">{t:.1f}</text>')
        out.append(f'<text x="{MARGIN - 6}" y="{y1 + 4:.2f}" text-anchor="end">{t:.1f}</text>')
    ox, oy = _xy(0, 0)
    out.append(
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" '
        'fill="none" stroke="black"/>'
    )
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle">recall</text>')
    out.append(
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 14 {HEIGHT / 2})">precision</text>'
    )
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="{MARGIN - 18}" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for i, (name, curve) in enumerate(curves.items()):
        color = PALETTE[i % len(PALETTE)]
        if curve:
            out.append(f'<path d="{_path(curve)}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN + 14 + 14 * i
        out.append(f'<line x1="{WIDTH - MARGIN - 120}" y1="{ly - 4}" x2="{WIDTH - MARGIN - 104}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 100}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_directory(src: Path, dst: Path, header: Optional[str] = None) -> List[Path]:
    """Draw every PR CSV under ``src`` (or ``src/pr``) and an overlay of the ``*_all`` curves."""
    src, dst = Path(src), Path(dst)
    if (src / "pr").is_dir():
        src = src / "pr"
    files = sorted(src.glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no PR curve CSV files in {src}")
    dst.mkdir(parents=True, exist_ok=True)
    written = []
    overlay = {}
    for f in files:
        curve = read_pr_csv(f)
        svg = dst / (f.stem + ".svg")
        svg.write_text(pr_svg({f.stem: curve}, f.stem, header), encoding="utf-8")
        written.append(svg)
        if f.stem.endswith("_all") and "_excl" not in f.stem:
            overlay[f.stem[: -len("_all")]] = curve
    if overlay:
        svg = dst / "overall.svg"
        svg.write_text(pr_svg(overlay, "all cases", header), encoding="utf-8")
        written.append(svg)
    return written
