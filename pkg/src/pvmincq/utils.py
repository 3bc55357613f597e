"""Common utilities for pvmincq."""

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import yaml
from tqdm import tqdm

# Environment variable naming the default output directory of the CLI.
OUTPUT_DIR_ENV = "PVMINCQ_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "results"


class PVMinCqError(Exception):
    """Base class for every error raised by the pipeline."""


def pp(item: dict) -> None:
    """Pretty print a dict."""
    print(json.dumps(item, indent=2, sort_keys=True, default=to_jsonable))


def to_jsonable(value):
    """`json.dumps` fallback for numpy scalars, arrays and dataclass-like objects."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(item) -> str:
    return json.dumps(item, indent=2, sort_keys=True, default=to_jsonable)


def write_atomic(path: Path, text: str) -> None:
    """Write `text` to `path` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_yaml(path) -> dict:
    with open(path, "r") as f:
        loaded = yaml.safe_load(f)
    return loaded or {}


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)


class NullProgressBar:
    def __init__(self, *args, **kwargs):
        self.n = 0
        self.total = kwargs.get("total", 0)

    def update(self, value):
        self.n += value

    def close(self):
        pass


def progress_bar(total: int, desc: str, show_progress: bool = False):
    return (
        tqdm(total=total, unit="job", desc=desc)
        if show_progress
        else NullProgressBar(total=total)
    )
