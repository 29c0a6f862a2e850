"""
Tests for the report tables. Every table is a pure function of its samples,
so these pin exact strings.
"""

import pytest

from src.benchmark import (
    attestation_table,
    cpu_table,
    ecall_table,
    keygen_table,
    latency_table,
    write_reports,
)
from src.enclave_tls import TraceRecord
from src.enrollment import EnrollmentSession, SessionState
from src.sdn_harness import CpuSample, EcallProfile, build_report, summarize_size


def lines(table):
    return [line.split("\t") for line in table.splitlines()]


@pytest.mark.unit
def test_keygen_table():
    assert lines(keygen_table([1.0, 2.0, 3.0, 4.0])) == [
        ["Statistic", "Time (s)"],
        ["Mean", "2.500000"],
        ["Variance", "1.66666667"],
        ["1st Quartile", "1.750000"],
        ["Median", "2.500000"],
        ["3rd Quartile", "3.250000"],
    ]


@pytest.mark.unit
def test_cpu_table():
    table = cpu_table([CpuSample(500, 12.34), CpuSample(2000, 80.0)])
    assert lines(table) == [["Packet Rate", "CPU utilization"], ["500", "12.3%"], ["2000", "80.0%"]]


@pytest.mark.unit
def test_latency_table_rows_and_regression():
    rows = [
        summarize_size(64, [100.0, 200.0, 300.0, 4000.0], cutoff_ms=2.5),
        summarize_size(128, [300.0, 400.0], cutoff_ms=2.5),
        summarize_size(256, [5000.0], cutoff_ms=2.5),
    ]
    report = build_report(rows, rate_pps=500, count=4, cutoff_ms=2.5)
    table = lines(latency_table(report))

    assert table[0][0] == "size_bytes"
    assert table[1][:2] == ["64", "200.000"]
    assert table[1][6] == "1"
    assert table[2][:2] == ["128", "350.000"]
    assert table[3] == ["256", "nan", "nan", "nan", "nan", "nan", "1", "nan", "nan"]
    assert table[-2] == ["intercept_us", "slope_ns_per_byte", "residual_us"]
    assert table[-1] == ["50.000", "2343.750", "0.000"]


@pytest.mark.unit
def test_latency_table_without_fit():
    report = build_report([summarize_size(64, [100.0], cutoff_ms=2.5)], 500, 1, 2.5)
    assert report.fit is None
    assert report.slope_ns_per_byte is None
    assert lines(latency_table(report))[-1] == ["nan", "nan", "nan"]


@pytest.mark.unit
def test_ecall_table_means_and_total():
    profile = EcallProfile(size=64, frames=2, records=[
        TraceRecord("ecall_ssl_read", 0.001, 82),
        TraceRecord("ecall_ssl_read", 0.003),
        TraceRecord("ecall_ssl_write", 0.002, 82),
        TraceRecord("ecall_ssl_get_state", 0.0005),
        TraceRecord("ecall_ssl_shutdown", 1.0),
    ])
    table = lines(ecall_table([profile]))
    assert table[0] == ["Size (b)", "read", "write", "get_state", "get_error", "Total enclave access"]
    assert table[1] == ["64", "2.0000", "2.0000", "0.5000", "nan", "3.2500"]


@pytest.mark.unit
def test_attestation_table():
    def finished(tpm, total):
        return EnrollmentSession(common_name="vnf", state=SessionState.ENROLLED, timings={
            "nonce": 0.01, "tpm_quote": tpm, "key_generation": 0.5, "csr_signing": 0.02, "total": total})

    table = lines(attestation_table([finished(0.1, 1.0), finished(0.3, 2.0)]))
    assert table[0] == ["Stage", "Mean", "Variance", "Median"]
    assert [row[0] for row in table[1:]] == ["TPM quote", "Key generation", "CSR signing",
                                             "Total attestation time"]
    assert table[1] == ["TPM quote", "0.200000", "0.02000000", "0.200000"]
    assert table[4] == ["Total attestation time", "1.500000", "0.50000000", "1.500000"]


@pytest.mark.unit
def test_write_reports(tmp_path):
    written = write_reports(tmp_path / "reports", {"keygen": "a\n", "latency": "b\n", "extra": "c\n"})
    assert [p.name for p in written] == ["keygen.tsv", "latency.tsv", "extra.tsv"]
    assert (tmp_path / "reports" / "latency.tsv").read_text(encoding="utf-8") == "b\n"
