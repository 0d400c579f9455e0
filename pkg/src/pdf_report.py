from __future__ import annotations

from datetime import datetime, timezone
from io import BytesIO
from typing import Iterable, List

import matplotlib.pyplot as plt
from reportlab.lib import colors  # type: ignore[import]
from reportlab.lib.pagesizes import letter  # type: ignore[import]
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet  # type: ignore[import]
from reportlab.lib.units import inch  # type: ignore[import]
from reportlab.platypus import (  # type: ignore[import]
    Image,
    ListFlowable,
    ListItem,
    PageBreak,
    Paragraph,
    SimpleDocTemplate,
    Spacer,
    Table,
    TableStyle,
)

from .data_models import CombinedDecision, EvaluationResult, TestResult
from .plots import draw_km_vpc, draw_percentile_bands, draw_qq, draw_wormplot
from .utils import figure_to_png_bytes

HEADER_COLOUR = colors.HexColor("#4a90e2")


def _styled_table(data: List[List[str]]) -> Table:
    table = Table(data, hAlign="LEFT")
    table.setStyle(
        TableStyle(
            [
                ("BACKGROUND", (0, 0), (-1, 0), HEADER_COLOUR),
                ("TEXTCOLOR", (0, 0), (-1, 0), colors.white),
                ("ALIGN", (1, 1), (-1, -1), "CENTER"),
                ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                ("BOTTOMPADDING", (0, 0), (-1, 0), 10),
                ("BACKGROUND", (0, 1), (-1, -1), colors.whitesmoke),
                ("GRID", (0, 0), (-1, -1), 0.5, colors.grey),
            ]
        )
    )
    return table


def _test_table(tests: Iterable[tuple[str, TestResult]]) -> Table:
    data: List[List[str]] = [["Component", "Method", "n", "Statistic", "p-value"]]
    for name, result in tests:
        data.append([name, result.method.value, str(result.n), f"{result.statistic:.4g}", f"{result.p_value:.4g}"])
    return _styled_table(data)


def _decision_table(decisions: Iterable[CombinedDecision]) -> Table:
    data: List[List[str]] = [["Procedure", "Threshold", "Min p", "Driving component", "Decision"]]
    for decision in decisions:
        data.append(
            [
                decision.name,
                f"{decision.threshold:.5f}",
                f"{decision.components[decision.driving_component]:.4g}",
                decision.driving_component,
                "reject" if decision.reject else "do not reject",
            ]
        )
    return _styled_table(data)


def _build_image(figure) -> Image:
    buffer = figure_to_png_bytes(figure)
    plt.close(figure)
    return Image(buffer, width=6.5 * inch, height=3.5 * inch)


def generate_pdf_report(result: EvaluationResult) -> BytesIO:
    report = result.report
    buffer = BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=letter, topMargin=0.75 * inch, bottomMargin=0.75 * inch)
    styles = getSampleStyleSheet()
    title_style = styles["Title"]
    subtitle_style = styles["Heading2"]
    body_style = styles["BodyText"]
    bullet_style = ParagraphStyle("Bullets", parent=body_style, bulletIndent=12, leftIndent=18)

    story: List = []
    story.append(Paragraph(f"Joint Model Evaluation: {report.model_name}", title_style))
    story.append(Paragraph(f"Generated on {datetime.now(timezone.utc):%Y-%m-%d %H:%M UTC}", body_style))
    story.append(Spacer(1, 0.2 * inch))

    story.append(Paragraph("Overview", subtitle_style))
    story.append(
        _styled_table(
            [
                ["Subjects", "Observations", "Replicates (K)", "Master seed"],
                [str(report.n_subjects), str(report.n_observations), str(report.k), str(report.master_seed)],
            ]
        )
    )
    story.append(Spacer(1, 0.2 * inch))

    story.append(Paragraph("Combined Decisions", subtitle_style))
    story.append(_decision_table([report.global_decision, report.ks_decision]))
    story.append(Spacer(1, 0.2 * inch))

    story.append(Paragraph("Elementary Tests", subtitle_style))
    story.append(_test_table(sorted(report.tests.items())))
    story.append(Spacer(1, 0.2 * inch))

    story.append(Paragraph("Residual Flags", subtitle_style))
    flag_items = [
        f"Excluded (no surviving replicates): {len(report.excluded)}",
        f"Low support: {report.low_support}",
        f"Clamped: {report.clamped}",
        f"Imputed TTE pd: {report.imputed}",
        f"Wormplot points outside their band: {report.worm_outside}",
        f"Percentiles outside their prediction interval: {report.bands_outside}",
    ]
    story.append(ListFlowable([ListItem(Paragraph(item, bullet_style)) for item in flag_items], bulletType="bullet"))
    if report.excluded:
        excluded = ", ".join(f"{sid} at day {time:g}" for sid, time in report.excluded)
        story.append(Paragraph(f"Excluded observations: {excluded}", body_style))

    story.append(PageBreak())
    story.append(Paragraph("npd Percentile Bands", subtitle_style))
    story.append(_build_image(draw_percentile_bands(result.bands)))
    story.append(Spacer(1, 0.2 * inch))
    story.append(Paragraph("TTE Wormplot", subtitle_style))
    story.append(_build_image(draw_wormplot(result.wormplot)))

    story.append(PageBreak())
    if result.km_vpc is not None:
        story.append(Paragraph("Kaplan-Meier VPC", subtitle_style))
        story.append(_build_image(draw_km_vpc(result.km_vpc)))
        story.append(Spacer(1, 0.2 * inch))
    story.append(Paragraph("TTE npd QQ Plot", subtitle_style))
    qq_figure = draw_qq(result.qq_tte)
    buffer_png = figure_to_png_bytes(qq_figure)
    plt.close(qq_figure)
    story.append(Image(buffer_png, width=4.0 * inch, height=4.0 * inch))

    doc.build(story)
    buffer.seek(0)
    return buffer
