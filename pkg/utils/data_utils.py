# utils/data_utils.py
import csv
import gzip
import json
import logging
import os
import pickle
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
from pydantic import BaseModel

from config import CODE_VERSION, CSV_SCHEMA_VERSION
from models.excursion import Excursion
from models.lattice import Configuration, SiteSet
from utils.excursion_utils import decode_excursion, encode_excursion

logger = logging.getLogger(__name__)

RECORD_LENGTH = 4  # bytes of the length prefix in excursion record files


class OutputPathError(OSError):
    """Raised when the output directory cannot be created or written."""


def run_header(config_hash: str, seed: int) -> Dict[str, Any]:
    return {"config_sha256": config_hash, "seed": seed, "code_version": CODE_VERSION, "schema": CSV_SCHEMA_VERSION}


def ensure_dir(data_dir: str) -> str:
    try:
        os.makedirs(data_dir, exist_ok=True)
    except OSError as e:
        raise OutputPathError(f"cannot create output directory {data_dir!r}: {e}") from e
    if not os.access(data_dir, os.W_OK):
        raise OutputPathError(f"output directory {data_dir!r} is not writable")
    return data_dir


def _cell(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return " ".join(map(str, value))
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    return value


def save_rows_to_csv(
    rows: List[Dict[str, Any]], columns: List[str], filename: str, header: Optional[Dict[str, Any]] = None
) -> str:
    """
    Writes rows with a fixed column list. The first line is `# ` followed by the
    run header as compact JSON, so the file stays readable by csv tools that skip comments.
    """
    with open(filename, mode="w", newline="", encoding="utf-8") as file:
        if header is not None:
            file.write("# " + json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        writer = csv.DictWriter(file, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows({k: _cell(v) for k, v in row.items()} for row in rows)
    logger.info(f"Saved {len(rows)} rows to '{filename}'")
    return filename


def load_csv_rows(filename: str) -> List[Dict[str, str]]:
    with open(filename, newline="", encoding="utf-8") as file:
        lines = [line for line in file if not line.startswith("# ")]
    return list(csv.DictReader(lines))


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return _jsonable(value.model_dump())
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def save_json(payload: Any, filename: str, header: Optional[Dict[str, Any]] = None) -> str:
    body = {"header": header, "result": _jsonable(payload)} if header is not None else _jsonable(payload)
    with open(filename, "w", encoding="utf-8") as f:
        json.dump(body, f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info(f"Saved JSON summary to '{filename}'")
    return filename


def save_to_gzipped_pickle(obj: Any, filename: str, data_dir: str = "data") -> str:
    """Dumps any object (full samples or coupling records) to data_dir/filename.pkl.gz."""
    ensure_dir(data_dir)
    if not filename.endswith(".pkl.gz"):
        filename += ".pkl.gz"
    full_output_path = os.path.join(data_dir, filename)
    with gzip.open(full_output_path, "wb") as f:
        pickle.dump(obj, f, protocol=pickle.HIGHEST_PROTOCOL)
    logger.info(f"Dumped {type(obj).__name__} to '{full_output_path}'")
    return full_output_path


def load_gzipped_pickle(path: str) -> Any:
    with gzip.open(path, "rb") as f:
        return pickle.load(f)


# --- Site sets ---

def save_site_set(sites: SiteSet, filename: str) -> str:
    with open(filename, "w", encoding="utf-8") as f:
        for point in sites:
            f.write(" ".join(str(c) for c in point) + "\n")
    return filename


def load_site_set(filename: str) -> SiteSet:
    with open(filename, encoding="utf-8") as f:
        points = [tuple(int(c) for c in line.split()) for line in f if line.strip()]
    return SiteSet.from_points(points)


# --- Excursion records ---

def save_excursions(excursions: Iterable[Excursion], d: int, filename: str) -> int:
    """Length-prefixed binary records; excursions without a path are skipped."""
    written = 0
    with open(filename, "wb") as f:
        for exc in excursions:
            if exc.path is None:
                continue
            record = encode_excursion(exc, d)
            f.write(len(record).to_bytes(RECORD_LENGTH, "little"))
            f.write(record)
            written += 1
    logger.info(f"Saved {written} excursion records to '{filename}'")
    return written


def load_excursions(filename: str, cfg: Configuration) -> List[Excursion]:
    out = []
    with open(filename, "rb") as f:
        while prefix := f.read(RECORD_LENGTH):
            size = int.from_bytes(prefix, "little")
            out.append(decode_excursion(f.read(size), cfg))
    return out
