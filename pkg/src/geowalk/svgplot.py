"""Minimal SVG histogram with an overlaid standard normal density."""
from __future__ import annotations

import math

import numpy as np


def histogram_svg(z, notes=(), bins: int = 48, lo: float = -4.0, hi: float = 4.0, width=640, height=400) -> str:
    z = np.asarray(z, dtype=float)
    counts, edges = np.histogram(np.clip(z, lo, hi), bins=bins, range=(lo, hi))
    binw = edges[1] - edges[0]
    dens = counts / max(len(z), 1) / binw
    ymax = max(float(dens.max()) if len(dens) else 0.0, 1 / math.sqrt(2 * math.pi)) * 1.1
    pad = 40
    W, H = width - 2 * pad, height - 2 * pad

    def X(v):
        return pad + (v - lo) / (hi - lo) * W

    def Y(v):
        return pad + H - v / ymax * H

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    for c, e in zip(dens, edges[:-1]):
        out.append(f'<rect x="{X(e):.2f}" y="{Y(c):.2f}" width="{W * binw / (hi - lo):.2f}" '
                   f'height="{pad + H - Y(c):.2f}" fill="#9ab" stroke="#567"/>')
    xs = np.linspace(lo, hi, 200)
    pts = " ".join(f"{X(x):.2f},{Y(math.exp(-x * x / 2) / math.sqrt(2 * math.pi)):.2f}" for x in xs)
    out.append(f'<polyline points="{pts}" fill="none" stroke="#c33" stroke-width="2"/>')
    out.append(f'<line x1="{pad}" y1="{pad + H}" x2="{pad + W}" y2="{pad + H}" stroke="black"/>')
    for t in range(int(lo), int(hi) + 1):
        out.append(f'<text x="{X(t):.2f}" y="{pad + H + 15}" font-size="10" text-anchor="middle">{t}</text>')
    for i, s in enumerate(notes):
        out.append(f'<text x="{pad + 5}" y="{pad + 14 + 14 * i}" font-size="12">{s}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
