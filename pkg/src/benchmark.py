"""
Benchmark reports - tab-delimited tables built from collected samples

Formatting only: every function here is a pure function of the samples it is
given, so the same sample set always produces byte-identical files.

    keygen_table        keys-and-certificate time over N runs
    cpu_table           CPU utilization per packet rate
    latency_table       per-size RTT summary + regression line
    ecall_table         mean ECALL durations per frame size
    attestation_table   enrollment stage timings
"""

from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence, Union

from src.enrollment import STAGE_LABELS, EnrollmentSession
from src.logger import get_logger
from src.sdn_harness import BenchmarkReport, CpuSample, EcallProfile, stage_summaries
from src.statistics import summarize

logger = get_logger(__name__)

KEYGEN_ROWS = ("Mean", "Variance", "1st Quartile", "Median", "3rd Quartile")
LATENCY_COLUMNS = ("size_bytes", "mean_us", "variance", "q1_us", "median_us", "q3_us",
                   "excluded_count", "lower_whisker_us", "upper_whisker_us")
REGRESSION_COLUMNS = ("intercept_us", "slope_ns_per_byte", "residual_us")
ECALL_COLUMNS = ("Size (b)", "read", "write", "get_state", "get_error", "Total enclave access")
ATTESTATION_COLUMNS = ("Stage", "Mean", "Variance", "Median")

# trace name -> report column
ECALL_NAMES = {
    "ecall_ssl_read": "read",
    "ecall_ssl_write": "write",
    "ecall_ssl_get_state": "get_state",
    "ecall_ssl_get_error": "get_error",
}

REPORT_FILES = {
    "keygen": "keygen.tsv",
    "cpu": "cpu_utilization.tsv",
    "latency": "latency.tsv",
    "ecall": "ecall_trace.tsv",
    "attestation": "attestation.tsv",
}


def _row(*cells) -> str:
    return "\t".join(cells) + "\n"


def _num(value: float, digits: int = 6) -> str:
    return f"{value:.{digits}f}"


def keygen_table(init_seconds: Sequence[float]) -> str:
    """Rows Mean / Variance / quartiles of library_init time, in seconds."""
    summary = summarize(init_seconds)
    values = (summary.mean, summary.variance, summary.q1, summary.median, summary.q3)
    out = _row("Statistic", "Time (s)")
    for label, value in zip(KEYGEN_ROWS, values):
        out += _row(label, _num(value, 6 if label != "Variance" else 8))
    return out


def cpu_table(samples: Sequence[CpuSample]) -> str:
    out = _row("Packet Rate", "CPU utilization")
    for sample in samples:
        out += _row(f"{sample.rate_pps:g}", f"{sample.utilization_pct:.1f}%")
    return out


def latency_table(report: BenchmarkReport) -> str:
    out = _row(*LATENCY_COLUMNS)
    for row in report.rows:
        s = row.summary
        if s is None:
            out += _row(str(row.size), *(["nan"] * 5), str(row.excluded), "nan", "nan")
            continue
        out += _row(str(row.size), _num(s.mean, 3), _num(s.variance, 3), _num(s.q1, 3),
                    _num(s.median, 3), _num(s.q3, 3), str(row.excluded),
                    _num(s.lower_whisker, 3), _num(s.upper_whisker, 3))
    out += "\n" + _row(*REGRESSION_COLUMNS)
    if report.fit is None:
        out += _row("nan", "nan", "nan")
    else:
        out += _row(_num(report.fit.intercept, 3), _num(report.slope_ns_per_byte, 3),
                    _num(report.fit.residual_rms, 3))
    return out


def ecall_table(profiles: Sequence[EcallProfile]) -> str:
    """
    Mean duration per call of each traced ECALL, in milliseconds, plus the
    total time spent inside the compartment per forwarded frame.
    """
    out = _row(*ECALL_COLUMNS)
    for profile in profiles:
        durations: Dict[str, List[float]] = defaultdict(list)
        for record in profile.records:
            column = ECALL_NAMES.get(record.ecall)
            if column is not None:
                durations[column].append(record.seconds)
        cells = [str(profile.size)]
        total = 0.0
        for column in ECALL_COLUMNS[1:-1]:
            values = durations.get(column, [])
            total += sum(values)
            cells.append(_num(1000.0 * sum(values) / len(values), 4) if values else "nan")
        per_frame = 1000.0 * total / profile.frames if profile.frames else float("nan")
        cells.append(_num(per_frame, 4))
        out += _row(*cells)
    return out


def attestation_table(sessions: Sequence[EnrollmentSession]) -> str:
    """Stage / Mean / Variance / Median, in seconds."""
    summaries = stage_summaries(sessions)
    out = _row(*ATTESTATION_COLUMNS)
    for stage, label in STAGE_LABELS.items():
        s = summaries.get(stage)
        if s is None:
            continue
        out += _row(label, _num(s.mean), _num(s.variance, 8), _num(s.median))
    return out


def write_reports(report_dir: Union[str, Path], tables: Dict[str, str]) -> List[Path]:
    """Write each table to REPORT_DIR; returns the written paths."""
    directory = Path(report_dir)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in tables.items():
        path = directory / REPORT_FILES.get(name, f"{name}.tsv")
        path.write_text(text, encoding="utf-8")
        written.append(path)
        logger.info("wrote %s", path)
    return written
