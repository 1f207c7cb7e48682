"""
Multi-Format Export for ESP Lab results
Supports: CSV, JSON, Excel, PDF
"""

import csv
import json
import logging
from datetime import datetime
from pathlib import Path

from esplab.errors import InvalidInput

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json", "xlsx", "pdf")


def _cell(value):
    if isinstance(value, float):
        return repr(float(value))
    return "" if value is None else value


class ExportFormats:
    """Write a result table and its summary in several formats"""

    def __init__(self, title, header, rows, summary=None):
        self.title = title
        self.header = list(header)
        self.rows = [list(row) for row in rows]
        self.summary = dict(summary or {})

    def export(self, filename, fmt=None):
        """Export by explicit format or file extension; returns the file actually written"""
        fmt = (fmt or Path(filename).suffix.lstrip(".") or "csv").lower()
        if fmt == "csv":
            return self.export_csv(filename)
        if fmt == "json":
            return self.export_json(filename)
        if fmt in ("xlsx", "excel"):
            return self.export_excel(filename)
        if fmt == "pdf":
            return self.export_pdf(filename)
        raise InvalidInput(f"unknown export format {fmt!r} (supported: {', '.join(FORMATS)})")

    def export_csv(self, filename):
        """Export to CSV"""
        with open(filename, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(self.header)
            for row in self.rows:
                writer.writerow([_cell(v) for v in row])
        logger.info("Exported %d rows to CSV %s", len(self.rows), filename)
        return str(filename)

    def export_json(self, filename):
        """Export to JSON"""
        with open(filename, "w", encoding="utf-8") as f:
            json.dump({
                "title": self.title,
                "summary": self.summary,
                "columns": self.header,
                "rows": self.rows,
            }, f, indent=2)
        logger.info("Exported %d rows to JSON %s", len(self.rows), filename)
        return str(filename)

    def _fallback_csv(self, filename, library):
        target = str(Path(filename).with_suffix(".csv"))
        logger.warning("%s export requires '%s'; falling back to CSV export at %s",
                       Path(filename).suffix, library, target)
        return self.export_csv(target)

    def export_excel(self, filename):
        """Export to Excel"""
        try:
            from openpyxl import Workbook
            from openpyxl.styles import Alignment, Font, PatternFill
        except ImportError:
            return self._fallback_csv(filename, "openpyxl")

        wb = Workbook()
        ws = wb.active
        ws.title = self.title[:31]
        ws.append(self.header)

        # Style headers
        header_fill = PatternFill(start_color="2196F3", end_color="2196F3", fill_type="solid")
        header_font = Font(bold=True, color="FFFFFF")
        for cell in ws[1]:
            cell.fill = header_fill
            cell.font = header_font
            cell.alignment = Alignment(horizontal="center")

        for row in self.rows:
            ws.append(["" if v is None else v for v in row])

        # Auto-size columns
        for column in ws.columns:
            max_length = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
            ws.column_dimensions[column[0].column_letter].width = min(max_length + 2, 50)

        summary = wb.create_sheet("Summary")
        summary.append(["Quantity", "Value"])
        for key, value in self.summary.items():
            summary.append([key, value if isinstance(value, (int, float, str)) else json.dumps(value)])
        for cell in summary[1]:
            cell.fill = header_fill
            cell.font = header_font

        wb.save(filename)
        logger.info("Exported %d rows to Excel %s", len(self.rows), filename)
        return str(filename)

    def export_pdf(self, filename):
        """Export to PDF"""
        try:
            from reportlab.lib import colors
            from reportlab.lib.enums import TA_CENTER
            from reportlab.lib.pagesizes import letter
            from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
            from reportlab.lib.units import inch
            from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle
        except ImportError:
            return self._fallback_csv(filename, "reportlab")

        doc = SimpleDocTemplate(str(filename), pagesize=letter)
        styles = getSampleStyleSheet()
        title_style = ParagraphStyle(
            "ReportTitle",
            parent=styles["Heading1"],
            fontSize=20,
            textColor=colors.HexColor("#2196F3"),
            spaceAfter=20,
            alignment=TA_CENTER,
        )
        story = [
            Paragraph(self.title, title_style),
            Paragraph(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}", styles["Normal"]),
            Spacer(1, 0.3 * inch),
        ]

        if self.summary:
            story.append(Paragraph("Summary", styles["Heading2"]))
            summary_rows = [["Quantity", "Value"]] + [[k, Paragraph(str(v), styles["Normal"])]
                                                      for k, v in self.summary.items()]
            table = Table(summary_rows, colWidths=[2 * inch, 4.5 * inch])
            table.setStyle(TableStyle([
                ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor("#2196F3")),
                ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
                ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                ("VALIGN", (0, 0), (-1, -1), "TOP"),
                ("GRID", (0, 0), (-1, -1), 1, colors.black),
            ]))
            story += [table, Spacer(1, 0.3 * inch)]

        if self.rows:
            story.append(Paragraph("Results", styles["Heading2"]))
            body = [self.header] + [[f"{v:.6g}" if isinstance(v, float) else _cell(v) for v in row]
                                    for row in self.rows]
            table = Table(body, repeatRows=1)
            table.setStyle(TableStyle([
                ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor("#E3F2FD")),
                ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                ("FONTSIZE", (0, 0), (-1, -1), 8),
                ("ALIGN", (0, 0), (-1, -1), "RIGHT"),
                ("GRID", (0, 0), (-1, -1), 0.5, colors.grey),
            ]))
            story.append(table)

        doc.build(story)
        logger.info("Exported report to PDF %s", filename)
        return str(filename)
