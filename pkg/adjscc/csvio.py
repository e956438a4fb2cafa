# -*- coding: utf-8 -*-
"""
CSV output. Every file starts with optional ``#`` comment lines (generation
time, reduction settings), then the mandatory header row. Floats carry six
significant digits.
"""
import csv
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

PathLike = Union[str, Path]


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def timestamp_comment() -> str:
    now = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return f"generated_at={now}"


def comment_lines(comments: Sequence[str], timestamp: bool) -> List[str]:
    lines = [timestamp_comment()] if timestamp else []
    return lines + list(comments)


class CsvLog:
    """
    Append-only CSV: the file is truncated and given its header on creation,
    then every :meth:`append` adds one flushed row.
    """

    def __init__(
        self,
        path: PathLike,
        header: Sequence[str],
        comments: Sequence[str] = (),
        timestamp: bool = True,
    ):
        self.path = Path(path)
        self.header = list(header)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as f:
            for line in comment_lines(comments, timestamp):
                f.write(f"# {line}\n")
            csv.writer(f, lineterminator="\n").writerow(self.header)

    def append(self, row: Sequence[Any]) -> None:
        if len(row) != len(self.header):
            raise ValueError(
                f"row has {len(row)} fields, header has {len(self.header)}"
            )
        with open(self.path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(
                [format_value(v) for v in row]
            )


def write_csv(
    path: PathLike,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    comments: Sequence[str] = (),
    timestamp: bool = True,
) -> Path:
    log = CsvLog(path, header, comments=comments, timestamp=timestamp)
    for row in rows:
        log.append(row)
    return log.path


def read_csv(path: PathLike) -> List[List[str]]:
    """Header row and data rows, comment lines skipped."""
    with open(path, newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return [row for row in csv.reader(lines)]
