"""Comparison tables in the layout of the published results table:
model, average MAE, parameter count, then the ten physical parameters."""
from __future__ import annotations

import csv
import io

import numpy as np

from .physics import PARAM_NAMES
from .training import MaeReport

CSV_HEADER = ["model", "average_mae", "param_count", *PARAM_NAMES]
_MD_NAMES = ["L", "R_L", "C", "R_C", "R_dson", "R_1", "R_2", "R_3", "V_in", "V_F"]


def markdown_header() -> str:
    cols = ["Model", "Average MAE", "# Param", *_MD_NAMES]
    return "| " + " | ".join(cols) + " |\n|" + "---|" * len(cols)


def markdown_row(name: str, report: MaeReport) -> str:
    cells = [name, f"{report.average:.1f}", f"{report.param_count:,}"]
    cells += [f"{v:.1f}" for v in report.per_param]
    return "| " + " | ".join(cells) + " |"


def markdown_table(rows) -> str:
    """``rows`` is an iterable of ``(name, MaeReport)``."""
    return "\n".join([markdown_header()] + [markdown_row(n, r) for n, r in rows]) + "\n"


def csv_row(name: str, report: MaeReport) -> list[str]:
    return [name, f"{report.average:.17g}", str(report.param_count),
            *(f"{v:.17g}" for v in report.per_param)]


def csv_text(rows, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_HEADER)
    for name, rep in rows:
        w.writerow(csv_row(name, rep))
    return buf.getvalue()


def read_report_csv(path) -> list[tuple[str, MaeReport]]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            per = np.array([float(rec[n]) for n in PARAM_NAMES])
            rows.append((rec["model"], MaeReport(per, int(rec["param_count"]))))
    return rows
