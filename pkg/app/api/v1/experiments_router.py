"""
FastAPI router for experiment endpoints.
"""

import time
from typing import List

from fastapi import APIRouter, HTTPException, status
from fastapi.concurrency import run_in_threadpool

from app.config.logger import Logger
from app.config.settings import settings
from app.lab.exceptions import ConfigError, HypothesisViolation, LabError
from app.schemas.base import HealthCheckResponse, SuccessResponseSchema
from app.schemas.experiments import ExperimentInfo, RunManifest, RunRequest
from app.services.experiment_registry import ExperimentRegistry
from app.services.experiment_runner import code_version, run_experiment
from app.services.spec_factory import SpecFactory

router = APIRouter()
logger = Logger.get_logger(__name__)


@router.get(
    "/",
    response_model=SuccessResponseSchema[List[ExperimentInfo]],
    status_code=status.HTTP_200_OK,
    summary="List experiments",
    description="Registered experiment ids with their module group and a one-line description",
)
async def list_experiments():
    try:
        listing = ExperimentRegistry.get_instance().listing()
        return SuccessResponseSchema(data=listing, message=f"{len(listing)} experiments registered")
    except Exception as e:
        logger.error(f"Error listing experiments: {e}")
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="Failed to list experiments",
        )


@router.post(
    "/run",
    response_model=SuccessResponseSchema[RunManifest],
    status_code=status.HTTP_200_OK,
    summary="Run an experiment",
    description="Validate a config tree, run the experiment and return its manifest",
)
async def run(request: RunRequest):
    """Same run service as the CLI; a failed hard check still returns the manifest with exit_code 1."""
    try:
        config = SpecFactory.from_dict(request.config, source="request body")
        logger.info(f"Processing run request for '{config.experiment}'")
        manifest = await run_in_threadpool(run_experiment, config, request.out, request.strict)
        message = "All hard checks passed" if manifest.exit_code == 0 else "Some hard checks failed"
        return SuccessResponseSchema(data=manifest, message=message)
    except ConfigError as e:
        logger.error(f"Invalid run config: {e.message}")
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.to_dict())
    except HypothesisViolation as e:
        logger.error(f"Strict run rejected: {e.message}")
        raise HTTPException(status_code=status.HTTP_409_CONFLICT, detail=e.to_dict())
    except LabError as e:
        logger.error(f"Experiment failed: {e.message}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=e.to_dict())
    except Exception as e:
        logger.error(f"Error in run endpoint: {e}")
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="Internal server error",
        )


@router.get(
    "/health",
    response_model=SuccessResponseSchema[HealthCheckResponse],
    status_code=status.HTTP_200_OK,
    summary="Health check",
    description="Check if the lab service is healthy",
)
async def health_check():
    try:
        health = HealthCheckResponse(
            version=code_version(),
            environment=settings.environment,
            timestamp=time.strftime("%Y-%m-%d %H:%M:%S"),
            experiments=ExperimentRegistry.get_instance().get_experiment_count(),
        )
        return SuccessResponseSchema(data=health, message="Service is healthy")
    except Exception as e:
        logger.error(f"Health check failed: {e}")
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="Service is unhealthy",
        )
