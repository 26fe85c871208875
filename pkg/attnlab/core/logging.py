"""
Logging setup and line-delimited record output
"""

import json
import logging
import os
import sys
from typing import Any, Dict, Optional, TextIO

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Configure the root logger for stderr and an optional log file"""

    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir)
        handlers.append(logging.FileHandler(log_file, mode="w"))

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        datefmt=DATE_FORMAT,
        handlers=handlers,
        force=True,
    )


class JsonlWriter:
    """Append JSON records, one per line, to a stream"""

    def __init__(self, stream: TextIO):
        self.stream = stream
        self.count = 0

    def write(self, record: Dict[str, Any]) -> None:
        self.stream.write(json.dumps(record, sort_keys=False) + "\n")
        self.count += 1

    def flush(self) -> None:
        self.stream.flush()
