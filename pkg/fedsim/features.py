import os

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured


def threads():
    """
    Number of worker threads used for client steps within a round.
    0 means clients train serially.
    """
    value = getattr(settings, "FEDSIM_THREADS", os.environ.get("FEDSIM_THREADS") or 0)
    try:
        return max(int(value), 0)
    except (TypeError, ValueError) as exc:
        raise ImproperlyConfigured(f"FEDSIM_THREADS must be an integer, got {value!r}") from exc


def output_dir():
    """
    The directory experiment artifacts are written to when a config
    does not name one
    """
    return getattr(settings, "FEDSIM_OUTPUT_DIR", "fedsim-output")


def label_column():
    """
    The CSV column holding the attack label
    """
    return getattr(settings, "FEDSIM_LABEL_COLUMN", "label")


def checkpoints():
    """
    True if a checkpoint file is written after every round
    """
    return getattr(settings, "FEDSIM_CHECKPOINTS", False)


def eval_batch_size():
    """
    Rows evaluated per forward pass when scoring the global model
    """
    return getattr(settings, "FEDSIM_EVAL_BATCH_SIZE", 4096)
