"""Render evaluation and training artifacts into Markdown and HTML summaries."""

from __future__ import annotations

import base64
import html
import json
import logging
from pathlib import Path

import numpy as np

from .errors import StageError

log = logging.getLogger(__name__)


def _fmt(v, digits: int = 4) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def _plots(eval_dir: Path, train_dir: Path | None, out_dir: Path) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; report will have no figures")
        return []
    paths = []
    dens = eval_dir / "density.csv"
    if dens.exists():
        grid = np.loadtxt(dens, delimiter=",", ndmin=2)
        meta = json.loads((eval_dir / "density.json").read_text())
        vmax = meta["vmax"]
        fig, ax = plt.subplots(figsize=(5, 4.5))
        im = ax.imshow(grid, origin="lower", extent=[0, vmax, 0, vmax], cmap="viridis",
                       aspect="equal")
        ax.plot([0, vmax], [0, vmax], "w--", lw=0.8)
        ax.set_xlabel("log1p predicted radiance")
        ax.set_ylabel("log1p true radiance")
        fig.colorbar(im, ax=ax, label="log10(1 + count)")
        p = out_dir / "density.png"
        fig.savefig(p, dpi=100, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)
    if train_dir is not None and (train_dir / "losses.csv").exists():
        from .train import read_loss_log

        L = read_loss_log(train_dir / "losses.csv")
        fig, axes = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        axes[0].plot(L["iteration"], L["loss_nce"], lw=0.6)
        axes[0].set_ylabel("PatchNCE")
        axes[1].plot(L["iteration"], L["loss_gan_g"], lw=0.6, label="G")
        axes[1].plot(L["iteration"], L["loss_gan_d"], lw=0.6, label="D")
        axes[1].set_ylabel("LSGAN")
        axes[1].set_xlabel("iteration")
        axes[1].legend()
        p = out_dir / "losses.png"
        fig.savefig(p, dpi=100, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)
    return paths


def _table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def build_markdown(report: dict, figures: list[Path]) -> str:
    out = [f"# Evaluation summary: {report['method']}", "",
           f"{report['n_patches']} patches, {report['n_pixels']} pixels.", ""]
    keys = [("R²", "r_squared"), ("Pearson r", "pearson_r"), ("Spearman ρ", "spearman_rho"),
            ("CCC", "ccc"), ("MAE", "mae"), ("RMSE", "rmse"), ("SSIM mean", "ssim_mean"),
            ("SSIM std", "ssim_std")]
    out += ["## Agreement", "", _table(["metric", "value"], [[k, _fmt(report[v])] for k, v in keys]), ""]
    out += ["## Errors by truth radiance", "",
            _table(["range", "pixels", "MAE", "RMSE", "R²"],
                   [[r["range"], str(r["pixel_count"]), _fmt(r["mae"]), _fmt(r["rmse"]), _fmt(r["r2"])]
                    for r in report["stratified"]]), ""]
    if report.get("per_method"):
        out += ["## Methods", "",
                _table(["method", "R²", "r", "ρ", "CCC", "MAE", "RMSE", "SSIM"],
                       [[m["method"]] + [_fmt(m[k]) for k in ("r_squared", "pearson_r",
                                                              "spearman_rho", "ccc", "mae", "rmse",
                                                              "ssim_mean")]
                        for m in report["per_method"]]), ""]
    for f in figures:
        out += [f"![{f.stem}]({f.name})", ""]
    return "\n".join(out)


def build_html(markdown: str, figures: list[Path]) -> str:
    """Small self-contained HTML page; tables are rendered, figures inlined as base64."""
    body = []
    in_table = False
    for line in markdown.splitlines():
        if line.startswith("|"):
            cells = [c.strip() for c in line.strip("|").split("|")]
            if all(set(c) <= {"-"} for c in cells):
                continue
            if not in_table:
                body.append("<table>")
                in_table = True
            body.append("<tr>" + "".join(f"<td>{html.escape(c)}</td>" for c in cells) + "</tr>")
            continue
        if in_table:
            body.append("</table>")
            in_table = False
        if line.startswith("## "):
            body.append(f"<h2>{html.escape(line[3:])}</h2>")
        elif line.startswith("# "):
            body.append(f"<h1>{html.escape(line[2:])}</h1>")
        elif line.startswith("!["):
            continue
        elif line:
            body.append(f"<p>{html.escape(line)}</p>")
    if in_table:
        body.append("</table>")
    for f in figures:
        data = base64.b64encode(f.read_bytes()).decode()
        body.append(f'<img alt="{f.stem}" src="data:image/png;base64,{data}">')
    style = "table{border-collapse:collapse}td{border:1px solid #999;padding:2px 6px}"
    return (f"<!DOCTYPE html><html><head><meta charset='utf-8'><style>{style}</style></head>"
            f"<body>{''.join(body)}</body></html>\n")


def render_report(eval_dir, out_dir, train_dir=None) -> tuple[Path, Path]:
    eval_dir, out_dir = Path(eval_dir), Path(out_dir)
    rp = eval_dir / "report.json"
    if not rp.exists():
        raise StageError(f"no report.json in {eval_dir}; run the eval stage first")
    report = json.loads(rp.read_text())
    out_dir.mkdir(parents=True, exist_ok=True)
    figures = _plots(eval_dir, Path(train_dir) if train_dir else None, out_dir)
    md = build_markdown(report, figures)
    md_path, html_path = out_dir / "report.md", out_dir / "report.html"
    md_path.write_text(md + "\n")
    html_path.write_text(build_html(md, figures))
    return md_path, html_path
