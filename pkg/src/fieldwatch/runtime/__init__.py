"""Live pipeline: sources, staged session runner, recording, broadcast."""

from .fps import FpsMeter
from .session import (
    InvalidTransition,
    PipelineService,
    RunConfig,
    SessionStatus,
    run_session,
)
from .sources import SceneObject, SyntheticScene, SyntheticSource, build_source

__all__ = [
    "FpsMeter",
    "InvalidTransition",
    "PipelineService",
    "RunConfig",
    "SceneObject",
    "SessionStatus",
    "SyntheticScene",
    "SyntheticSource",
    "build_source",
    "run_session",
]
