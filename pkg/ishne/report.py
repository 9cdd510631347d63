# ishne/report.py
# Charts and a one-document PDF summary of a training run.

import logging
from datetime import datetime
from io import BytesIO
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import mm
from reportlab.platypus import (
    Image as RLImage,
    Paragraph,
    SimpleDocTemplate,
    Spacer,
    Table,
    TableStyle,
)

from .metrics import as_percent

logger = logging.getLogger(__name__)

ACCENT = "#0F7A61"
PALETTE = ["#6fbf73", "#f5a623", "#6fb0d9", "#c86f9b", "#8c7ae6"]


# ---------------- Charting helpers ----------------
def plot_history(history_frame, filename):
    """Train/val loss and validation Micro-F1 per epoch."""
    plt.close("all")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(history_frame["epoch"], history_frame["train_loss"], label="train", color=PALETTE[2])
    ax1.plot(history_frame["epoch"], history_frame["val_loss"], label="val", color=PALETTE[1])
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("cross-entropy")
    ax1.legend(frameon=False, fontsize=8)
    ax2.plot(history_frame["epoch"], 100 * history_frame["val_microF1"], color=PALETTE[0])
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val Micro-F1 (%)")
    ax2.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(filename, dpi=150)
    plt.close(fig)


def plot_beta(beta, names, filename):
    plt.close("all")
    fig, ax = plt.subplots(figsize=(6, 2.6))
    vals = [float(b) for b in beta]
    bars = ax.bar(names, vals, color=PALETTE[: len(names)])
    ax.set_ylim(0, 1)
    ax.set_ylabel("beta")
    ax.set_title("Meta-path weights", fontsize=10)
    for bar, v in zip(bars, vals):
        ax.text(
            bar.get_x() + bar.get_width() / 2,
            v + 0.02,
            f"{v:.3f}",
            ha="center",
            va="bottom",
            fontsize=8,
        )
    fig.tight_layout()
    fig.savefig(filename, dpi=150)
    plt.close(fig)


def make_charts(run_dir, history_frame, beta, names):
    """Write history.png / beta.png; a failing chart is logged and skipped."""
    run_dir = Path(run_dir)
    made = {}
    try:
        plot_history(history_frame, run_dir / "history.png")
        made["history"] = run_dir / "history.png"
    except Exception:
        logger.exception("History chart failed")
    try:
        plot_beta(beta, names, run_dir / "beta.png")
        made["beta"] = run_dir / "beta.png"
    except Exception:
        logger.exception("Beta chart failed")
    return made


# ---------------- PDF ----------------
def _styles():
    styles = getSampleStyleSheet()
    styles.add(ParagraphStyle(name="IS_Title", fontName="Helvetica-Bold", fontSize=16, leading=20, spaceAfter=6))
    styles.add(
        ParagraphStyle(
            name="IS_Heading",
            fontName="Helvetica-Bold",
            fontSize=12,
            leading=14,
            spaceBefore=8,
            spaceAfter=4,
            textColor=colors.HexColor(ACCENT),
        )
    )
    styles.add(ParagraphStyle(name="IS_Body", fontName="Helvetica", fontSize=10, leading=13))
    return styles


def _table(rows):
    t = Table(rows, hAlign="LEFT")
    t.setStyle(
        TableStyle(
            [
                ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                ("FONTSIZE", (0, 0), (-1, -1), 9),
                ("LINEBELOW", (0, 0), (-1, 0), 0.5, colors.HexColor(ACCENT)),
                ("BOTTOMPADDING", (0, 0), (-1, -1), 3),
            ]
        )
    )
    return t


def run_report_pdf(manifest, charts, filename):
    """Config, meta-path weights, metrics and charts of one run. Returns the path or None."""
    try:
        buf = BytesIO()
        doc = SimpleDocTemplate(
            buf,
            pagesize=A4,
            leftMargin=18 * mm,
            rightMargin=18 * mm,
            topMargin=18 * mm,
            bottomMargin=18 * mm,
        )
        styles = _styles()
        flow = [
            Paragraph("ISHNE training run", styles["IS_Title"]),
            Paragraph(
                f"Generated {datetime.now().strftime('%Y-%m-%d %H:%M')} | seed {manifest.get('seed')}",
                styles["IS_Body"],
            ),
            Spacer(1, 6),
            Paragraph("Data", styles["IS_Heading"]),
            Paragraph(
                f"Graph: {manifest.get('dataset')}<br/>Meta-paths: {', '.join(manifest.get('metapaths', []))}",
                styles["IS_Body"],
            ),
        ]
        split = manifest.get("split", {})
        if split:
            flow.append(_table([["train", "val", "test"], [split.get("train"), split.get("val"), split.get("test")]]))

        flow.append(Paragraph("Meta-path weights", styles["IS_Heading"]))
        beta = manifest.get("beta", {})
        flow.append(_table([["meta-path", "beta"]] + [[k, f"{v:.4f}"] for k, v in beta.items()]))

        flow.append(Paragraph("Metrics (%)", styles["IS_Heading"]))
        rows = [["split", "Micro-F1", "Macro-F1"]]
        for part, vals in manifest.get("metrics", {}).items():
            rows.append([part, as_percent(vals["micro_f1"]), as_percent(vals["macro_f1"])])
        flow.append(_table(rows))

        flow.append(Paragraph("Configuration", styles["IS_Heading"]))
        cfg_rows = [["key", "value"]] + [[k, str(v)] for k, v in manifest.get("train_config", {}).items()]
        flow.append(_table(cfg_rows))

        for key in ("history", "beta"):
            path = charts.get(key)
            if path and Path(path).exists():
                flow.append(Spacer(1, 8))
                width = 170 * mm if key == "history" else 120 * mm
                flow.append(RLImage(str(path), width=width, height=width * 0.36 if key == "history" else width * 0.43))
        doc.build(flow)
        Path(filename).write_bytes(buf.getvalue())
        return Path(filename)
    except Exception:
        logger.exception("PDF report build failed")
        return None
