"""
Elastic Trie Monitor - FastAPI Application
Collector service: launch runs, receive and dump reported prefixes
"""

from contextlib import asynccontextmanager
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
import time
from datetime import datetime

from backend import __version__
from backend.api.routes import runs_router
from backend.config import configure_logging, get_settings
from backend.services.simulation import get_registry

settings = get_settings()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Set up logging on startup and release runs on shutdown."""
    configure_logging(settings.log_level)
    print(f"✅ Elastic Trie Monitor collector ready (reports under {settings.report_dir})")
    yield
    get_registry().clear()
    print("👋 Shutting down Elastic Trie Monitor")


app = FastAPI(
    lifespan=lifespan,
    title="Elastic Trie Monitor",
    description="Hierarchical heavy hitter, superspreader and change detection over packet traces",
    version=__version__,
    docs_url="/api/docs",
    redoc_url="/api/redoc"
)

ALLOWED_ORIGINS = settings.allowed_origins.split(",")

app.add_middleware(
    CORSMiddleware,
    allow_origins=ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# Request timing middleware
@app.middleware("http")
async def add_timing_header(request: Request, call_next):
    start_time = time.time()
    response = await call_next(request)
    process_time = time.time() - start_time
    response.headers["X-Process-Time"] = str(round(process_time * 1000, 2)) + "ms"
    return response


app.include_router(runs_router)


@app.get("/health")
async def health_check():
    """Health check endpoint for monitoring."""
    return {
        "status": "healthy",
        "service": "elastic-trie-monitor",
        "version": __version__,
        "timestamp": datetime.utcnow().isoformat(),
        "runs": len(get_registry().list()),
    }


@app.get("/api")
async def api_info():
    """Get API information."""
    return {
        "name": "Elastic Trie Monitor API",
        "version": __version__,
        "description": "Collector for trie digests and simulation reports",
        "endpoints": {
            "runs": "POST /api/runs",
            "list": "GET /api/runs",
            "summary": "GET /api/runs/{run_id}",
            "events": "GET /api/runs/{run_id}/events?kind=&limit=",
            "scores": "GET /api/runs/{run_id}/scores?relax=",
        },
        "documentation": {
            "swagger": "/api/docs",
            "redoc": "/api/redoc"
        }
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host=settings.host, port=settings.port)
