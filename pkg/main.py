"""
FastAPI application for the nonlocal lab.
"""

import time
from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app.api.v1.experiments_router import router as experiments_router
from app.config.logger import Logger
from app.config.settings import settings
from app.schemas.base import ErrorResponseSchema
from app.services.experiment_registry import ExperimentRegistry
from app.services.experiment_runner import code_version

# Setup logging
Logger.setup_root_logger()
logger = Logger.get_logger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager."""
    logger.info("Starting nonlocal lab...")
    logger.info(f"Environment: {settings.environment}")
    logger.info(f"Artifacts: {settings.output_dir}")
    logger.info(f"Experiments: {ExperimentRegistry.get_instance().get_experiment_count()}")

    yield

    logger.info("Shutting down nonlocal lab...")


app = FastAPI(
    title="Nonlocal Lab",
    description="Numerical laboratory for parabolic integro-differential equations",
    version=code_version(),
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(experiments_router, prefix="/api/v1/experiments", tags=["experiments"])


@app.get("/")
async def root():
    """Root endpoint."""
    return {
        "message": "Nonlocal lab",
        "version": code_version(),
        "docs": "/docs",
        "health": "/api/v1/experiments/health",
    }


@app.exception_handler(HTTPException)
async def http_exception_handler(request: Request, exc: HTTPException):
    detail = exc.detail if isinstance(exc.detail, dict) else {"message": str(exc.detail)}
    body = ErrorResponseSchema(
        error=detail.get("error", "HTTPError"),
        message=detail.get("message"),
        details=detail.get("details"),
    )
    return JSONResponse(status_code=exc.status_code, content=body.model_dump())


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """Global exception handler."""
    logger.error(f"Unhandled exception: {exc}")
    body = ErrorResponseSchema(error="Internal server error", message="See the server log for details")
    return JSONResponse(status_code=500, content=body.model_dump())


@app.middleware("http")
async def add_process_time_header(request: Request, call_next):
    """Add processing time header to responses."""
    start_time = time.time()
    response = await call_next(request)
    response.headers["X-Process-Time"] = str(time.time() - start_time)
    return response


if __name__ == "__main__":
    logger.info("Starting server...")
    uvicorn.run(
        "main:app",
        host=settings.api_host,
        port=settings.api_port,
        reload=settings.debug,
        log_level=settings.log_level.lower(),
    )
