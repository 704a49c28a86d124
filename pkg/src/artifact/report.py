"""Plain-text and matplotlib renderings of lifting reports."""

from __future__ import annotations

import os
import tempfile
from typing import Iterable, Sequence

from .compose import combinable_sets
from .lift import LiftCell, LiftReport
from .spec import show_set


def _mark(v) -> str:
    if v is None:
        return "-"
    return "pass" if v.safe else "FAIL"


def cell_note(c: LiftCell) -> str:
    """Flags an independent-but-not-liftable cell so the two are never read as one claim."""
    notes = []
    if c.independent and not c.holds:
        notes.append("independent, not liftable")
    if not c.holds:
        who = [v.attacker for v in (c.independence, c.nesting, c.crssp)
               if v is not None and not v.safe and v.attacker]
        if who:
            notes.append(f"falsifier {who[0]}")
    return "; ".join(notes)


def render_lift(rep: LiftReport) -> str:
    head = ("sources", "SI", "indep", "trapped", "nesting", "crssp", "lifts", "note")
    rows = [head, ("", "DECIDED", "OBSERVED", "OBSERVED", "OBSERVED", "OBSERVED", "", "")]
    for c in rep.cells:
        rows.append((show_set(c.sources), "pass" if c.si.safe else "FAIL", _mark(c.independence),
                     "pass" if c.trapped else "FAIL", _mark(c.nesting), _mark(c.crssp),
                     "yes" if c.holds else "no", cell_note(c)))
    widths = [max(len(r[k]) for r in rows) for k in range(len(head) - 1)]
    lines = [f"pass {rep.pass_id}  base {rep.base}  omega {rep.omega}  corpus {rep.members} members"]
    for r in rows:
        lines.append("  ".join(x.ljust(w) for x, w in zip(r, widths)) + "  " + r[-1])
    lines.append("strongest: " + (", ".join(show_set(s) for s in rep.strongest) or "none"))
    return "\n".join(lines).rstrip() + "\n"


def render_matrix(reports: Sequence[LiftReport]) -> str:
    """One row per pass, one column per combinable set: L lifted, * strongest, x fails, . n/a."""
    sets = combinable_sets()
    names = [show_set(s) for s in sets]
    w = max(len(r.pass_id) for r in reports)
    lines = [" " * w + "  " + " ".join(names)]
    for r in reports:
        by = {c.sources: c for c in r.cells}
        strong = set(r.strongest)
        cells = []
        for s, n in zip(sets, names):
            c = by.get(s)
            m = "." if c is None else ("*" if s in strong else ("L" if c.holds else "x"))
            cells.append(m.center(len(n)))
        lines.append(r.pass_id.ljust(w) + "  " + " ".join(cells))
    return "\n".join(lines) + "\n"


def write_atomic(path: str, data: str | bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def plot_matrix(reports: Sequence[LiftReport], path: str) -> str:
    """Heatmap of the lifting lattice; strongest sets are starred.  Returns ``path``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import ListedColormap

    sets = combinable_sets()
    grid = []
    for r in reports:
        by = {c.sources: c for c in r.cells}
        grid.append([0 if s not in by else (2 if by[s].holds else 1) for s in sets])

    cmap = ListedColormap(["#e6e6e6", "#d7301f", "#41ab5d"])
    fig, ax = plt.subplots(figsize=(0.42 * len(sets) + 2.0, 0.42 * len(reports) + 1.6))
    ax.imshow(grid, cmap=cmap, vmin=0, vmax=2, aspect="auto")
    for i, r in enumerate(reports):
        for s in r.strongest:
            ax.text(sets.index(s), i, "*", ha="center", va="center", fontsize=12, color="black")
    ax.set_xticks(range(len(sets)))
    ax.set_xticklabels([show_set(s) for s in sets], rotation=70, ha="right", fontsize=7)
    ax.set_yticks(range(len(reports)))
    ax.set_yticklabels([r.pass_id for r in reports], fontsize=8)
    ax.set_xticks([x - 0.5 for x in range(1, len(sets))], minor=True)
    ax.set_yticks([y - 0.5 for y in range(1, len(reports))], minor=True)
    ax.grid(which="minor", color="white", linewidth=1)
    ax.tick_params(which="minor", length=0)
    ax.set_title(f"lifted security (green), fails (red), not a superset of the base (grey); "
                 f"* strongest, omega={reports[0].omega}", fontsize=8)
    fig.tight_layout()
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.splitext(path)[1] or ".png")
    os.close(fd)
    # pinned metadata keeps the png byte-identical across runs
    fig.savefig(tmp, dpi=120, metadata={"Software": None})
    plt.close(fig)
    os.chmod(tmp, 0o644)
    os.replace(tmp, path)
    return path


def figure_path(out: str) -> str:
    return os.path.splitext(out)[0] + ".png"


def strongest_table(reports: Iterable[LiftReport]) -> dict[str, list[str]]:
    return {r.pass_id: [show_set(s) for s in r.strongest] for r in reports}
