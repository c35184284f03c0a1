"""CSV tables and log-log convergence plots for an :class:`ErrorReport`."""

from __future__ import annotations

import csv
import io
import math

from glocal.harness.runner import COLUMNS

HEADER = ("level,param,H,h,dt,e0_global,ord_e0_global,e1_global,ord_e1_global,"
          "e0_defect,ord_e0_defect,e1_defect,ord_e1_defect,e_hmm,eta_K,seconds")


def _num(x, fmt):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(x, fmt)


def report_rows(report, include_seconds=True):
    orders = {c: report.orders(c) for c in COLUMNS}
    rows = []
    for i, lv in enumerate(report.levels):
        row = [str(lv.level), _num(lv.param, ".10g"), _num(lv.H, ".10g"), _num(lv.h, ".10g"),
               _num(lv.dt, ".10g")]
        for c in COLUMNS:
            row.append(_num(lv.errors.get(c), ".6e"))
            row.append(_num(orders[c][i], ".4f"))
        row += [_num(lv.e_hmm, ".6e"), _num(lv.eta_K, ".6f"),
                _num(lv.seconds, ".3f") if include_seconds else ""]
        rows.append(row)
    return rows


def csv_text(report, include_seconds=True):
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(report_rows(report, include_seconds))
    return buf.getvalue()


def write_plot(report, path):
    """Log-log plot of every error column against the sweep parameter."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "glocal"

    fig, ax = plt.subplots(figsize=(5, 4))
    params = []
    for c in COLUMNS:
        pts = report.column(c)
        if pts:
            p, e = zip(*pts)
            params = p
            ax.loglog(p, e, marker="o", label=c)
    if params:
        p0, p1 = params[0], params[-1]
        top = max(e for c in COLUMNS for _, e in report.column(c))
        ax.loglog([p0, p1], [top, top * p1 / p0], "k--", label="slope 1")
    ax.set_xlabel(report.axis)
    ax.set_ylabel("relative error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)


def emit_outputs(report, csv_path, svg_path=None, include_seconds=True):
    """Write the CSV table and, when ``svg_path`` is given, the plot.

    ``include_seconds=False`` blanks the timing column so repeated runs
    produce byte-identical files.
    """
    text = csv_text(report, include_seconds)
    try:
        with open(csv_path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {csv_path}: {exc}") from exc
    if svg_path is not None:
        try:
            write_plot(report, svg_path)
        except OSError as exc:
            raise OSError(f"cannot write {svg_path}: {exc}") from exc
    return text


def read_csv_columns(path):
    """Read a table written by :func:`emit_outputs` as a list of dicts."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
