"""
CA Admin API - the operator-facing HTTP listener of the extended CA

Switches and VNFs enroll over the binary CA protocol with attestation. The
controller can't (it isn't measured), so an operator gets its certificate
here instead. Bind this to loopback; there is no authentication of its own.

Endpoints:
    GET  /                         service info
    GET  /health                   liveness
    GET  /root-certificate         root certificate (PEM)
    POST /controller-certificates  CSR (PEM) -> server+client certificate (PEM)
    GET  /stats                    issued / rejected counts, live nonces
"""

from typing import Dict

from cryptography.hazmat.primitives import serialization
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from src.extended_ca import CaRejection, ExtendedCA
from src.logger import get_logger

logger = get_logger(__name__)

API_VERSION = "1.0.0"


class ControllerCsrRequest(BaseModel):
    """What an operator posts to get a controller certificate."""
    csr_pem: str = Field(min_length=1)


class CertificateResponse(BaseModel):
    certificate_pem: str
    serial: str
    not_after: str


class HealthResponse(BaseModel):
    status: str
    message: str
    issued: int
    live_nonces: int


class StatsResponse(BaseModel):
    issued: int
    rejections: Dict[str, int]
    live_nonces: int


def create_admin_app(ca: ExtendedCA) -> FastAPI:
    """
    Build the admin app around one running CA.

    Args:
        ca: The ExtendedCA whose root signs controller certificates
    """
    app = FastAPI(
        title="trustplane CA admin API",
        description="Operator endpoints of the attestation-gated CA",
        version=API_VERSION,
    )

    @app.get("/", response_model=Dict[str, str])
    async def root():
        return {
            "name": "trustplane CA admin API",
            "version": API_VERSION,
            "docs": "/docs",
            "health": "/health",
        }

    @app.get("/health", response_model=HealthResponse)
    async def health_check():
        stats = ca.stats()
        return HealthResponse(
            status="healthy",
            message="CA is issuing",
            issued=stats["issued"],
            live_nonces=stats["live_nonces"],
        )

    @app.get("/root-certificate", response_class=PlainTextResponse)
    async def root_certificate():
        pem = ca.root_certificate().public_bytes(serialization.Encoding.PEM)
        return PlainTextResponse(pem.decode("ascii"), media_type="application/x-pem-file")

    @app.post("/controller-certificates", response_model=CertificateResponse)
    async def issue_controller_certificate(request: ControllerCsrRequest):
        try:
            certificate = ca.issue_controller_certificate(request.csr_pem.encode("utf-8"))
        except CaRejection as e:
            raise HTTPException(status_code=422, detail=f"{e.reason.name}: {e.detail}")
        return CertificateResponse(
            certificate_pem=certificate.public_bytes(serialization.Encoding.PEM).decode("ascii"),
            serial=f"{certificate.serial_number:x}",
            not_after=certificate.not_valid_after_utc.isoformat(),
        )

    @app.get("/stats", response_model=StatsResponse)
    async def stats():
        return StatsResponse(**ca.stats())

    return app
