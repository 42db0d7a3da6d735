"""Turn exported effect grids and importance tables into PNG figures.

Consumes only the fit output directory layout: ``effects/index.json`` plus
the per-component CSVs next to it, and ``importance.csv`` at the top level.
Nothing here imports the fitting library; a directory produced on another
machine renders the same.
"""
import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

KINDS = ("mains", "pairs", "importance")


class RenderError(Exception):
    """Missing or inconsistent export inputs; maps to exit code 1."""


@dataclass(frozen=True)
class PlotSpec:
    """One render request.

    ``components`` filters by identity: a main is its feature name, a pair
    is ``"a:b"``. None renders everything of the requested kind; an empty
    tuple is an error rather than a silent no-op.
    """

    in_dir: Path
    out_dir: Path
    kind: str
    components: tuple[str, ...] | None = None


def _read_rows(path: Path) -> list[list[str]]:
    if not path.is_file():
        raise RenderError(f"missing export file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise RenderError(f"export file has no data rows: {path}")
    return rows[1:]


def _load_index(effects_dir: Path) -> dict:
    index_path = effects_dir / "index.json"
    if not index_path.is_file():
        raise RenderError(f"missing export index: {index_path}")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as e:
        raise RenderError(f"unreadable export index {index_path}: {e}") from e
    if not isinstance(index.get("components"), list):
        raise RenderError(f"export index {index_path} lists no components")
    return index


def _identity(comp: dict) -> str:
    if comp.get("kind") == "pair":
        return ":".join(comp["names"])
    return comp["name"]


def _select(index: dict, kind: str, components: tuple[str, ...] | None) -> list[dict]:
    want_kind = "main" if kind == "mains" else "pair"
    available = [c for c in index["components"] if c.get("kind") == want_kind]
    if components is None:
        if not available:
            raise RenderError(f"export index lists no {want_kind} components")
        return available
    if not components:
        raise RenderError("empty component list")
    by_id = {_identity(c): c for c in available}
    missing = [name for name in components if name not in by_id]
    if missing:
        raise RenderError(
            f"components not in export index: {', '.join(sorted(missing))}"
        )
    return [by_id[name] for name in components]


def _render_main(comp: dict, effects_dir: Path, out_dir: Path) -> dict:
    rows = _read_rows(effects_dir / comp["file"])
    xs = [float(r[0]) for r in rows]
    ys = [float(r[1]) for r in rows]
    name = comp["name"]

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, color="tab:blue")
    ax.axhline(0.0, color="gray", lw=0.6)
    ax.set_xlabel(name)
    ax.set_ylabel("effect")
    ax.set_title(f"main effect: {name}")
    fig.tight_layout()
    out = out_dir / (Path(comp["file"]).stem + ".png")
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return {"component": name, "path": out, "curves": 1, "labels": []}


def _render_pair(comp: dict, effects_dir: Path, out_dir: Path) -> dict:
    nj, nk = comp["names"]
    rows = _read_rows(effects_dir / comp["slices_file"])
    # rows come in one block per quantile slice, ordered by x_j inside each
    slices: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for r in rows:
        slices.setdefault((r[1], r[2]), []).append((float(r[0]), float(r[3])))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = []
    for (q, cut), pts in slices.items():
        label = f"{nk} = {float(cut):.3g} (q={float(q):g})"
        labels.append(label)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=label)
    ax.axhline(0.0, color="gray", lw=0.6)
    ax.set_xlabel(nj)
    ax.set_ylabel("effect")
    ax.set_title(f"interaction: {nj}:{nk}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    stem = comp["slices_file"]
    stem = stem[: -len("_slices.csv")] if stem.endswith("_slices.csv") else Path(stem).stem
    out = out_dir / (stem + ".png")
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return {
        "component": f"{nj}:{nk}", "path": out,
        "curves": len(slices), "labels": labels,
    }


def _render_importance(in_dir: Path, out_dir: Path) -> dict:
    rows = _read_rows(in_dir / "importance.csv")
    names = [r[1] for r in rows]
    values = [float(r[2]) for r in rows]
    colors = ["tab:orange" if r[0] == "pair" else "tab:blue" for r in rows]

    height = max(2.5, 0.28 * len(rows) + 1.2)
    fig, ax = plt.subplots(figsize=(6, height))
    pos = range(len(rows))
    ax.barh(pos, values, color=colors)
    ax.set_yticks(pos, names, fontsize=7)
    ax.invert_yaxis()  # CSV is sorted descending; keep the largest on top
    ax.set_xlabel("importance")
    ax.set_title("component importance")
    fig.tight_layout()
    out = out_dir / "importance.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return {"component": "importance", "path": out, "curves": len(rows),
            "labels": names}


def render(spec: PlotSpec) -> list[dict]:
    """Write the requested figures; returns one record per file.

    Each record holds the component identity, the output path, the number
    of curves or bars drawn, and their legend labels. Inputs are only ever
    opened for reading.
    """
    if spec.kind not in KINDS:
        raise RenderError(f"unknown figure kind {spec.kind!r}")
    in_dir = Path(spec.in_dir)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if spec.kind == "importance":
        return [_render_importance(in_dir, out_dir)]

    effects_dir = in_dir / "effects"
    index = _load_index(effects_dir)
    chosen = _select(index, spec.kind, spec.components)
    if spec.kind == "mains":
        return [_render_main(c, effects_dir, out_dir) for c in chosen]
    return [_render_pair(c, effects_dir, out_dir) for c in chosen]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mbgam-plots",
        description="Render PNG figures from a fit's effect exports.",
    )
    p.add_argument("--in", dest="in_dir", required=True,
                   help="fit output directory (holds effects/ and importance.csv)")
    p.add_argument("--out", dest="out_dir", required=True,
                   help="directory for the PNG files")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--components", nargs="+", default=None,
                   help="render only these (feature name or a:b pair name)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = PlotSpec(
        in_dir=Path(args.in_dir),
        out_dir=Path(args.out_dir),
        kind=args.kind,
        components=tuple(args.components) if args.components is not None else None,
    )
    try:
        records = render(spec)
    except RenderError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for rec in records:
        print(rec["path"])
    print(f"wrote {len(records)} figure(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
