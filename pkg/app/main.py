import structlog
from contextlib import asynccontextmanager
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from slowapi.errors import RateLimitExceeded

from app.config import configure_logging, settings
from app.routers import health, runs
from app.services.harness import HarnessError
from app.services.script import ScriptError


# setup structured logging
configure_logging(settings.LOG_LEVEL)
logger = structlog.get_logger()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    startup and shutdown events
    """
    logger.info(
        "besfs monitor started",
        environment=settings.ENVIRONMENT,
        capacity=settings.PAGE_POOL_CAPACITY,
        keyed=settings.SEALING_KEY is not None,
    )

    yield

    logger.info("shutting down besfs monitor")


# create fastapi app
app = FastAPI(
    title="BesFS Integrity Monitor",
    lifespan=lifespan
)

# add rate limiter state
app.state.limiter = runs.limiter

# cors middleware - allow all origins for dev
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=False,
    allow_methods=["*"],
    allow_headers=["*"],
)


# exception handlers
@app.exception_handler(ScriptError)
async def script_error_handler(request: Request, exc: ScriptError):
    """
    scripts that do not parse are the caller's fault, report the line
    """
    logger.warning("script rejected", line=exc.line, path=request.url.path)
    return JSONResponse(
        status_code=400,
        content={
            "success": False,
            "error": "script does not parse",
            "line": exc.line,
            "detail": exc.message
        }
    )


@app.exception_handler(HarnessError)
async def harness_error_handler(request: Request, exc: HarnessError):
    logger.warning("run could not be set up", error=str(exc))
    return JSONResponse(
        status_code=400,
        content={"success": False, "error": str(exc)}
    )


@app.exception_handler(RateLimitExceeded)
async def rate_limit_handler(request: Request, exc: RateLimitExceeded):
    """
    handle rate limit exceeded errors
    """
    logger.warning("rate limit exceeded", path=request.url.path)
    return JSONResponse(
        status_code=429,
        content={
            "success": False,
            "error": "rate limit exceeded",
            "detail": str(exc.detail)
        }
    )


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """
    global exception handler - fail closed on unexpected errors
    """
    logger.error("unhandled exception", error=str(exc), path=request.url.path)
    return JSONResponse(
        status_code=500,
        content={
            "success": False,
            "error": "internal server error",
            "detail": "an unexpected error occurred"
        }
    )


# include routers
app.include_router(health.router)
app.include_router(runs.router)
