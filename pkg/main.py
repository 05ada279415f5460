"""
Ledger simulator — FastAPI backend.

Runs scenarios of the netted multi-shard ledger, generates random scenarios
and re-validates recorded traces.  Operators work with scenario files and
traces; every endpoint is a thin wrapper over ``services``.
"""

from __future__ import annotations

import logging
import os
from contextlib import asynccontextmanager
from typing import Any

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException, Query, UploadFile
from fastapi.middleware.cors import CORSMiddleware

from models.schemas import GenerateRequest, ScenarioConfig, VerifyReport
from services.ledger import StructuralError
from services.scenario import ScenarioError, gen_scenario, parse_scenario, validate_scenario
from services.simulator import run, verify_trace
from services.trace_store import iter_records

load_dotenv()

# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s  %(levelname)-8s  %(name)s  %(message)s",
)
logger = logging.getLogger("ledger_sim")

# ---------------------------------------------------------------------------
# Configuration (from environment variables)
# ---------------------------------------------------------------------------

ALLOWED_ORIGINS = os.getenv("ALLOWED_ORIGINS", "http://localhost:3000").split(",")
SIM_MAX_SLOTS = int(os.getenv("SIM_MAX_SLOTS", "5000"))
SIM_MAX_TRANSFERS = int(os.getenv("SIM_MAX_TRANSFERS", "20000"))

VERSION = "0.1.0"

_ALLOWED_SCENARIO_EXTENSIONS = {".json"}
_ALLOWED_TRACE_EXTENSIONS = {".jsonl", ".json", ".txt"}


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info(
        "Starting ledger simulator (max %d slots, %d transfers per run)",
        SIM_MAX_SLOTS, SIM_MAX_TRANSFERS,
    )
    yield
    logger.info("Shutting down ledger simulator")


# ---------------------------------------------------------------------------
# FastAPI app
# ---------------------------------------------------------------------------

app = FastAPI(
    title="Ledger Simulator",
    description="Deterministic multi-shard netted-balance ledger simulator",
    version=VERSION,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ===================================================================
# Health check
# ===================================================================

@app.get("/health", tags=["System"])
@app.get("/api/health", tags=["System"])
async def health_check():
    return {
        "status": "ok",
        "service": "ledger-sim",
        "version": VERSION,
        "limits": {"slots": SIM_MAX_SLOTS, "transfers": SIM_MAX_TRANSFERS},
    }


# ===================================================================
# Simulation
# ===================================================================

def _check_limits(config: ScenarioConfig) -> None:
    if config.slots > SIM_MAX_SLOTS:
        raise HTTPException(status_code=413, detail=f"slots {config.slots} exceeds limit {SIM_MAX_SLOTS}")
    if len(config.transfers) > SIM_MAX_TRANSFERS:
        raise HTTPException(
            status_code=413,
            detail=f"{len(config.transfers)} transfers exceeds limit {SIM_MAX_TRANSFERS}",
        )


def _simulate(config: ScenarioConfig, audit_every_slot: bool) -> dict[str, Any]:
    _check_limits(config)
    try:
        report, exit_code, trace = run(config, audit_every_slot=audit_every_slot)
    except StructuralError as exc:
        raise HTTPException(status_code=422, detail=f"Structural fault: {exc}")
    return {
        "audit": report.model_dump(mode="json", by_alias=True),
        "exit_code": exit_code,
        "trace_records": trace.count,
    }


def _validate_upload_extension(filename: str | None, allowed: set[str]) -> str:
    """Validate file extension and return the lowercased extension. Raises 400 on failure."""
    if not filename:
        raise HTTPException(status_code=400, detail="No filename provided")
    ext = os.path.splitext(filename)[1].lower()
    if ext not in allowed:
        raise HTTPException(status_code=400, detail=f"Supported formats: {', '.join(sorted(allowed))}")
    return ext


async def _read_upload(file: UploadFile) -> bytes:
    content = await file.read()
    if len(content) == 0:
        raise HTTPException(status_code=400, detail="Uploaded file is empty")
    return content


@app.post("/api/simulate", tags=["Simulation"])
async def simulate(
    config: ScenarioConfig,
    audit_every_slot: bool = Query(False, description="Run the full audit after every slot"),
):
    """
    Run a scenario to completion and return its audit report.

    The body is validated by pydantic first; cross-field checks (genesis
    balance, endpoint ranges, injection targets) return 400 with the
    scenario error code.
    """
    try:
        validate_scenario(config)
    except ScenarioError as exc:
        raise HTTPException(status_code=400, detail={"code": exc.code, "field": exc.field, "message": str(exc)})
    logger.info("Simulating %d shards x %d EEs for %d slots", config.shards, config.ees, config.slots)
    return _simulate(config, audit_every_slot)


@app.post("/api/upload/scenario", tags=["Simulation"])
async def upload_scenario(file: UploadFile, audit_every_slot: bool = Query(False)):
    """Upload a scenario JSON file and run it."""
    _validate_upload_extension(file.filename, _ALLOWED_SCENARIO_EXTENSIONS)
    content = await _read_upload(file)
    try:
        config = parse_scenario(content)
    except ScenarioError as exc:
        raise HTTPException(status_code=400, detail={"code": exc.code, "field": exc.field, "message": str(exc)})
    logger.info("Uploaded scenario %s: %d transfers", file.filename, len(config.transfers))
    return _simulate(config, audit_every_slot)


@app.post("/api/scenarios/generate", tags=["Scenarios"], response_model=ScenarioConfig)
async def generate_scenario(request: GenerateRequest):
    """Seeded random scenario; the same parameters always yield the same scenario."""
    if request.transfers > SIM_MAX_TRANSFERS:
        raise HTTPException(
            status_code=413,
            detail=f"{request.transfers} transfers exceeds limit {SIM_MAX_TRANSFERS}",
        )
    try:
        return gen_scenario(request)
    except ScenarioError as exc:
        raise HTTPException(status_code=400, detail={"code": exc.code, "field": exc.field, "message": str(exc)})


# ===================================================================
# Trace verification
# ===================================================================

@app.post("/api/verify-trace", tags=["Traces"], response_model=VerifyReport)
async def verify_trace_upload(file: UploadFile):
    """Re-validate every accepted block of an uploaded JSONL trace."""
    _validate_upload_extension(file.filename, _ALLOWED_TRACE_EXTENSIONS)
    content = await _read_upload(file)
    try:
        records = list(iter_records(content.decode("utf-8").splitlines()))
        return verify_trace(records)
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail="Trace is not UTF-8 text")
    except ScenarioError as exc:
        raise HTTPException(status_code=400, detail={"code": exc.code, "field": exc.field, "message": str(exc)})
    except StructuralError as exc:
        raise HTTPException(status_code=422, detail=str(exc))


# ===================================================================
# Entry-point
# ===================================================================

if __name__ == "__main__":
    import uvicorn

    port = int(os.environ.get("PORT", 8000))
    uvicorn.run(app, host="0.0.0.0", port=port)
