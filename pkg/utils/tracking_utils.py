# utils/tracking_utils.py
import logging
import os
from contextlib import contextmanager
from typing import Dict, Iterable, Iterator, Optional

import mlflow

from config import CODE_VERSION

logger = logging.getLogger(__name__)

EXPERIMENT_NAME = "noodlesoup"


@contextmanager
def tracked_run(enabled: bool, run_name: str, params: Dict[str, object]) -> Iterator[Optional[str]]:
    """
    Opens an mlflow run when tracking is enabled and yields its id (None otherwise).
    MLFLOW_TRACKING_URI selects the store; the default is ./mlruns.
    """
    if not enabled:
        yield None
        return
    uri = os.getenv("MLFLOW_TRACKING_URI")
    if uri:
        mlflow.set_tracking_uri(uri)
    mlflow.set_experiment(EXPERIMENT_NAME)
    with mlflow.start_run(run_name=run_name) as run:
        mlflow.set_tag("code_version", CODE_VERSION)
        mlflow.log_params({k: str(v) for k, v in params.items()})
        logger.info(f"Tracking run {run.info.run_id} in experiment '{EXPERIMENT_NAME}'")
        yield run.info.run_id


def log_metrics(enabled: bool, metrics: Dict[str, float], step: Optional[int] = None) -> None:
    if not enabled:
        return
    finite = {k: float(v) for k, v in metrics.items() if v is not None and v == v and abs(v) != float("inf")}
    mlflow.log_metrics(finite, step=step)


def log_artifacts(enabled: bool, paths: Iterable[str]) -> None:
    if not enabled:
        return
    for path in paths:
        mlflow.log_artifact(path)
