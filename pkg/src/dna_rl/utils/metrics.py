"""Metric sinks: one JSON object per line plus a long-format CSV

Events never carry wall-clock fields, so two runs with the same seed write
byte-identical files.
"""
import csv
import json
import logging
import math
import os

import numpy as np

from .config_manager import config

log = logging.getLogger(__name__)

CSV_FIELDS = ["event", "iteration", "interactions", "phase", "metric", "value"]
INDEX_KEYS = ("event", "iteration", "interactions", "phase")


def to_plain(value):
    """numpy scalars and arrays to plain Python values"""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {k: to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    return value


def dumps_event(record):
    return json.dumps({k: to_plain(v) for k, v in record.items()}, sort_keys=True)


def format_value(value):
    """Text form used in CSV cells; repr keeps floats exact"""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Writes events to ``metrics.jsonl`` and ``metrics.csv`` under ``out_dir``

    Args:
        out_dir (str): run output directory, created if missing
        jsonl_name (str, optional): defaults to config's metrics file name
        csv_name (str, optional): defaults to config's CSV file name
    """

    def __init__(self, out_dir, jsonl_name=None, csv_name=None):
        os.makedirs(out_dir, exist_ok=True)
        self.jsonl_path = os.path.join(out_dir, jsonl_name or config.get_metrics_filename())
        self.csv_path = os.path.join(out_dir, csv_name or config.get_metrics_csv_filename())
        self._jsonl = open(self.jsonl_path, "w", encoding="utf-8", newline="\n")
        self._csv_file = open(self.csv_path, "w", encoding="utf-8", newline="")
        self._csv = csv.DictWriter(self._csv_file, fieldnames=CSV_FIELDS, lineterminator="\n")
        self._csv.writeheader()
        self.count = 0

    def write(self, event, iteration=None, interactions=None, phase=None, **values):
        """Append one event

        Numeric values each become a CSV row; every value goes to JSON.
        """
        record = {"event": event}
        for key, value in (("iteration", iteration), ("interactions", interactions), ("phase", phase)):
            if value is not None:
                record[key] = value
        record.update(values)
        self._jsonl.write(dumps_event(record) + "\n")

        for metric in sorted(values):
            value = to_plain(values[metric])
            if value is None or isinstance(value, (str, list, dict)):
                continue
            self._csv.writerow(
                {
                    "event": event,
                    "iteration": "" if iteration is None else iteration,
                    "interactions": "" if interactions is None else interactions,
                    "phase": phase or "",
                    "metric": metric,
                    "value": format_value(value),
                }
            )
        self.count += 1

    def flush(self):
        self._jsonl.flush()
        self._csv_file.flush()

    def close(self):
        if not self._jsonl.closed:
            self._jsonl.close()
            self._csv_file.close()
            log.debug("Wrote %s events to %s", self.count, self.jsonl_path)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class NullWriter:
    """Drop-in sink that discards events"""

    count = 0

    def write(self, event, **kwargs):
        pass

    def flush(self):
        pass

    def close(self):
        pass


def read_events(path):
    """Load a JSON-lines stream into a list of dicts

    Raises:
        FileNotFoundError: ``path`` does not exist
    """
    events = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events


def write_table(path, fieldnames, rows):
    """Write ``rows`` (dicts) as CSV with a fixed column order"""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k, "")) for k in fieldnames})


def _cell(value):
    value = to_plain(value)
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return format_value(value)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(to_plain(obj), indent=2, sort_keys=True) + "\n")
