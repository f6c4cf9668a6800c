"""
Collector API Routes
Launch simulation runs and dump their reported prefixes and scores.
"""

from typing import Dict, List, Optional

from fastapi import APIRouter, HTTPException, Query, status
from pydantic import BaseModel

from backend.config import RunConfig
from backend.core.errors import ClockError, ConfigError, TraceFormatError
from backend.core.events import EventKind
from backend.services.simulation import RunReport, get_registry

router = APIRouter(prefix="/api/runs", tags=["Runs"])


# ============ Request/Response Models ============

class RunSummaryResponse(BaseModel):
    run_id: str
    mode: str
    report_hash: str
    relax: int
    recall: float
    precision: float
    events: int
    summary: Dict
    files: Dict[str, str] = {}


class RunListItem(BaseModel):
    run_id: str
    mode: str
    report_hash: str
    events: int


class EventResponse(BaseModel):
    kind: str
    prefix: str
    volume: int
    ts: int
    window_start: int
    seq: int
    counter: Optional[int] = None


class ScoreResponse(BaseModel):
    window: int
    relax: int
    recall: float
    precision: float
    reported: int
    truth: int


def _summary(report: RunReport) -> RunSummaryResponse:
    relax = report.summary["headline_relax"]
    headline = report.scores(relax)
    return RunSummaryResponse(
        run_id=report.run_id,
        mode=report.summary["mode"],
        report_hash=report.report_hash,
        relax=relax,
        recall=headline["recall"],
        precision=headline["precision"],
        events=len(report.digests),
        summary=report.summary,
        files=report.files,
    )


def _require_run(run_id: str) -> RunReport:
    report = get_registry().get(run_id)
    if report is None:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Unknown run {run_id}")
    return report


# ============ Endpoints ============

@router.post("", response_model=RunSummaryResponse, status_code=status.HTTP_201_CREATED)
def create_run(config: RunConfig):
    """Run a configuration to completion and keep its report."""
    try:
        report = get_registry().submit(config)
    except (ConfigError, ClockError) as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
    except TraceFormatError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))
    return _summary(report)


@router.get("", response_model=List[RunListItem])
def list_runs():
    return [
        RunListItem(run_id=r.run_id, mode=r.summary["mode"], report_hash=r.report_hash, events=len(r.digests))
        for r in get_registry().list()
    ]


@router.get("/{run_id}", response_model=RunSummaryResponse)
def get_run(run_id: str):
    return _summary(_require_run(run_id))


@router.get("/{run_id}/events", response_model=List[EventResponse])
def get_events(
    run_id: str,
    kind: Optional[EventKind] = Query(default=None),
    limit: int = Query(default=1000, ge=1, le=100_000),
):
    """Reported digests in emission order, optionally filtered by kind."""
    report = _require_run(run_id)
    return [digest.to_dict() for digest in report.reported(kind)[:limit]]


@router.get("/{run_id}/scores", response_model=List[ScoreResponse])
def get_scores(run_id: str, relax: Optional[int] = Query(default=None, ge=0, le=32)):
    report = _require_run(run_id)
    return [
        ScoreResponse(window=row.window, relax=row.relax, recall=row.recall, precision=row.precision,
                      reported=row.reported, truth=row.truth)
        for row in report.window_scores
        if relax is None or row.relax == relax
    ]
