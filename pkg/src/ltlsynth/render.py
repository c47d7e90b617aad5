"""Arrow diagrams of product policies on grid MDPs, as text or SVG."""
from __future__ import annotations

from typing import Mapping, Optional
from xml.sax.saxutils import escape

from .mdp import LabeledMDP
from .product import eps_target, is_eps

ARROWS = {"up": "^", "down": "v", "left": "<", "right": ">", "rest": "o", "stay": "o"}
SVG_DIRS = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}
CELL = 48


def _grid_cells(m: LabeledMDP) -> Optional[dict]:
    """``{state: (x, y)}`` when every state id is of the form ``x_y``, else None."""
    cells = {}
    for s in m.states:
        parts = str(s).split("_")
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            return None
        cells[s] = (int(parts[0]), int(parts[1]))
    return cells


def _resolved(choice: Mapping, s, q):
    """Action actually executed at ``(s, q)``, following one epsilon jump."""
    a = choice.get((s, q))
    if a is not None and is_eps(a):
        q2 = eps_target(a)
        return choice.get((s, q2)), q2
    return a, q


def _memories(choice: Mapping, provenance: Mapping) -> list:
    seen = []
    for (s, q), how in sorted(provenance.items(), key=lambda kv: (str(kv[0][1]), str(kv[0][0]))):
        if how == "from-delta" and q not in seen:
            seen.append(q)
    return seen


def render_text(choice: Mapping, provenance: Mapping, m: LabeledMDP) -> str:
    """One arrow grid per automaton state the policy actually visits.

    Cells show the executed action (after any jump); ``.`` marks cells the
    policy never reaches in that memory state, and labels are listed below.
    """
    cells = _grid_cells(m)
    lines = []
    if cells is None:
        lines.append(f"{'state':>10} {'memory':>8}  action")
        for (s, q), a in sorted(choice.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
            if provenance.get((s, q)) == "from-delta":
                lines.append(f"{str(s):>10} {str(q):>8}  {a}")
        return "\n".join(lines) + "\n"
    width = max(x for x, _ in cells.values()) + 1
    height = max(y for _, y in cells.values()) + 1
    at = {xy: s for s, xy in cells.items()}
    for q in _memories(choice, provenance):
        lines.append(f"memory {q}")
        for y in reversed(range(height)):
            row = []
            for x in range(width):
                s = at.get((x, y))
                if s is None or provenance.get((s, q)) != "from-delta":
                    row.append(".")
                    continue
                a, _ = _resolved(choice, s, q)
                row.append(ARROWS.get(a, "?"))
            lines.append(" ".join(row))
        lines.append("")
    marks = [f"{prop}@{s}" for s in m.states for prop in sorted(m.labels[s])]
    if marks:
        lines.append("labels: " + ", ".join(marks))
    return "\n".join(lines) + "\n"


def render_svg(choice: Mapping, provenance: Mapping, m: LabeledMDP) -> str:
    """Side-by-side grids, one per visited memory state, with arrows and labels."""
    cells = _grid_cells(m)
    if cells is None:
        body = escape(render_text(choice, provenance, m))
        rows = body.splitlines()
        h = 16 * (len(rows) + 1)
        texts = "".join(f'<text x="8" y="{16 * (i + 1)}" font-family="monospace" font-size="12">{r}</text>'
                        for i, r in enumerate(rows))
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="480" height="{h}">{texts}</svg>\n'
    width = max(x for x, _ in cells.values()) + 1
    height = max(y for _, y in cells.values()) + 1
    memories = _memories(choice, provenance)
    panel = width * CELL + CELL
    parts = []
    for k, q in enumerate(memories):
        ox = k * panel + CELL // 2
        oy = CELL
        parts.append(f'<text x="{ox}" y="{oy - 12}" font-family="sans-serif" font-size="14">memory {escape(str(q))}</text>')
        for s, (x, y) in sorted(cells.items(), key=lambda kv: kv[1]):
            cx = ox + x * CELL
            cy = oy + (height - 1 - y) * CELL
            parts.append(f'<rect x="{cx}" y="{cy}" width="{CELL}" height="{CELL}" fill="white" stroke="black"/>')
            label = ",".join(sorted(m.labels[s]))
            if label:
                parts.append(f'<text x="{cx + 3}" y="{cy + 12}" font-family="sans-serif" font-size="10">'
                             f'{escape(label)}</text>')
            if provenance.get((s, q)) != "from-delta":
                continue
            a, _ = _resolved(choice, s, q)
            mx, my = cx + CELL / 2, cy + CELL / 2
            if a in SVG_DIRS:
                dx, dy = SVG_DIRS[a]
                ex, ey = mx + dx * CELL * 0.35, my + dy * CELL * 0.35
                parts.append(f'<line x1="{mx}" y1="{my}" x2="{ex}" y2="{ey}" stroke="black" stroke-width="2" '
                             f'marker-end="url(#head)"/>')
            else:
                parts.append(f'<circle cx="{mx}" cy="{my}" r="4" fill="black"/>')
    w = max(1, len(memories)) * panel
    h = height * CELL + 2 * CELL
    defs = ('<defs><marker id="head" markerWidth="8" markerHeight="8" refX="6" refY="4" orient="auto">'
            '<path d="M0,0 L8,4 L0,8 z"/></marker></defs>')
    return f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">{defs}{"".join(parts)}</svg>\n'
