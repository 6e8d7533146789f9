import json
from typing import Optional

import structlog
from fastapi import APIRouter, File, Form, HTTPException, Request, UploadFile
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field, ValidationError
from slowapi import Limiter
from slowapi.util import get_remote_address

from app.config import settings
from app.services.adversary import AdversaryConfig
from app.services.campaign import CampaignConfig, CampaignReport, run_campaign
from app.services.generator import generate
from app.services.harness import RunMode, RunReport, run
from app.services.pagestore import SealingKey
from app.services.script import parse_script, render_script


logger = structlog.get_logger()

# initialize rate limiter
limiter = Limiter(key_func=get_remote_address)

router = APIRouter(prefix="/api/v1", tags=["runs"])


class RunRequest(BaseModel):
    """request model for the run endpoint"""
    script: str = Field(..., max_length=settings.MAX_SCRIPT_LENGTH, description="workload script text")
    mode: RunMode = Field(default=RunMode.BENIGN, description="benign, adv or unprotected")
    seed: int = Field(default=settings.DEFAULT_SEED, description="seed for key derivation and the adversary")
    adversary: Optional[AdversaryConfig] = Field(default=None, description="adversary configuration")
    strict_abort: bool = Field(default=settings.STRICT_ABORT)


class GenerateRequest(BaseModel):
    seed: int = settings.DEFAULT_SEED
    length: int = Field(default=settings.CORPUS_LENGTH, ge=1, le=10000)
    invalid_fraction: float = Field(default=settings.INVALID_FRACTION, ge=0.0, le=1.0)


def _sealing_key() -> Optional[SealingKey]:
    if settings.SEALING_KEY is None:
        return None
    return SealingKey.from_hex(settings.SEALING_KEY.get_secret_value())


def _run(text: str, mode: RunMode, seed: int, adversary: Optional[AdversaryConfig], strict_abort: bool) -> RunReport:
    # ScriptError and HarnessError are mapped to 400 by the app handlers
    return run(
        parse_script(text),
        backend_spec="memory",
        mode=mode,
        adversary=adversary,
        seed=seed,
        strict_abort=strict_abort,
        key=_sealing_key(),
        capacity=settings.PAGE_POOL_CAPACITY,
        mmap_base=settings.MMAP_BASE,
        check_good=settings.CHECK_GOOD_STATE,
    )


@router.post("/run", response_model=RunReport)
@limiter.limit(settings.RATE_LIMIT)
async def run_script(request: Request, run_request: RunRequest):
    """
    run a script against the in-memory backend

    the report carries every call with its code, payload and ledger slice
    """
    report = _run(run_request.script, run_request.mode, run_request.seed,
                  run_request.adversary, run_request.strict_abort)
    logger.info("run served", mode=report.mode.value, status=report.summary.status)
    return report


@router.post("/run/upload", response_model=RunReport)
@limiter.limit(settings.RATE_LIMIT)
async def run_uploaded_script(
    request: Request,
    file: UploadFile = File(...),
    mode: RunMode = Form(RunMode.BENIGN),
    seed: int = Form(settings.DEFAULT_SEED),
    adversary: Optional[str] = Form(None),
):
    """same as /run with the script as a multipart upload and the adversary as a json string"""
    raw = await file.read()
    if len(raw) > settings.MAX_SCRIPT_LENGTH:
        raise HTTPException(status_code=413, detail={"success": False, "error": "script too long"})
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail={"success": False, "error": "script is not utf-8"})

    cfg = None
    if adversary:
        try:
            cfg = AdversaryConfig.model_validate_json(adversary)
        except ValidationError as e:
            raise HTTPException(status_code=422, detail={"success": False, "error": "bad adversary config",
                                                         "detail": json.loads(e.json(include_url=False))})
    return _run(text, mode, seed, cfg, settings.STRICT_ABORT)


@router.post("/generate", response_class=PlainTextResponse)
@limiter.limit(settings.RATE_LIMIT)
async def generate_script(request: Request, gen_request: GenerateRequest):
    script = generate(gen_request.seed, gen_request.length, invalid_fraction=gen_request.invalid_fraction,
                      capacity=settings.PAGE_POOL_CAPACITY)
    return render_script(script, header=f"seed={gen_request.seed} length={gen_request.length}")


@router.post("/campaign", response_model=CampaignReport)
@limiter.limit(settings.RATE_LIMIT)
async def run_fault_campaign(request: Request, config: CampaignConfig):
    """
    differential fault-injection campaign

    blocking and proportional to scripts x strategies; keep corpora small here
    and use the cli for full runs
    """
    report = run_campaign(config)
    logger.info("campaign served", scripts=report.scripts, accepted=report.accepted)
    return report
