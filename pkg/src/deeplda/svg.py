"""Minimal, timestamp-free SVG scatter plots for 2-D embeddings."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def stratified_indices(y: np.ndarray, cap: int) -> np.ndarray:
    """At most ``cap`` indices, allocated to classes in proportion to their counts."""
    n = y.shape[0]
    if n <= cap:
        return np.arange(n)
    classes, counts = np.unique(y, return_counts=True)
    quota = np.floor(cap * counts / n).astype(int)
    # hand the rounding remainder to the largest fractional parts
    rem = cap - quota.sum()
    frac = cap * counts / n - quota
    for k in np.argsort(-frac, kind="stable")[:rem]:
        quota[k] += 1
    picked = []
    for c, q in zip(classes, quota):
        idx = np.flatnonzero(y == c)
        picked.append(idx[np.linspace(0, idx.size - 1, q).round().astype(int)] if q else idx[:0])
    return np.sort(np.concatenate(picked))


def scatter_svg(z, y, means=None, cap: int = 2000, title: str = "", size: int = 480) -> str:
    """Render points as ``<circle>`` elements (one per plotted point); means as crosses."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y)
    keep = stratified_indices(y, cap)
    pts = z[keep]
    labels = y[keep]
    allpts = pts if means is None else np.vstack([pts, np.asarray(means, dtype=float)])
    lo = allpts.min(axis=0) if allpts.size else np.zeros(2)
    hi = allpts.max(axis=0) if allpts.size else np.ones(2)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    pad = 20

    def px(p):
        x = pad + (p[0] - lo[0]) / span[0] * (size - 2 * pad)
        yy = size - pad - (p[1] - lo[1]) / span[1] * (size - 2 * pad)
        return x, yy

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
    ]
    for p, c in zip(pts, labels):
        x, yy = px(p)
        out.append(f'<circle cx="{x:.2f}" cy="{yy:.2f}" r="1.5" fill="{PALETTE[int(c) % len(PALETTE)]}"/>')
    if means is not None:
        for k, m in enumerate(np.asarray(means, dtype=float)):
            x, yy = px(m)
            out.append(
                f'<path d="M{x - 6:.2f},{yy - 6:.2f} L{x + 6:.2f},{yy + 6:.2f} M{x - 6:.2f},{yy + 6:.2f} '
                f'L{x + 6:.2f},{yy - 6:.2f}" stroke="black" stroke-width="2"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"
