from fastapi import APIRouter

from app import __version__
from app.config import settings

router = APIRouter()


@router.get("/health")
async def health_check():
    """
    liveness plus the monitor defaults this instance runs with
    """
    return {
        "status": "healthy",
        "version": __version__,
        "page_pool_capacity": settings.PAGE_POOL_CAPACITY,
        "strict_abort": settings.STRICT_ABORT,
    }
