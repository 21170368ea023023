"""
Tests for logging setup and the ordered thread pool.
"""

import pytest

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import json
import logging
import time

from app.log import JsonLinesFormatter, setup_logging
from app.parallel import chunked, parallel_map, resolve_threads


def test_json_lines_formatter_keeps_extras():
    record = logging.LogRecord("app.pipeline", logging.INFO, __file__, 1, "stage %s done", ("graph",), None)
    record.stage = "graph"
    payload = json.loads(JsonLinesFormatter().format(record))
    assert payload["msg"] == "stage graph done"
    assert payload["level"] == "INFO"
    assert payload["logger"] == "app.pipeline"
    assert payload["stage"] == "graph"


def test_setup_logging_levels():
    setup_logging(verbose=True)
    root = logging.getLogger()
    assert root.level == logging.DEBUG
    assert isinstance(root.handlers[0].formatter, JsonLinesFormatter)
    setup_logging(verbose=False, level="warning")
    assert root.level == logging.WARNING
    assert len(root.handlers) == 1
    setup_logging()


def test_resolve_threads():
    assert resolve_threads(3) == 3
    assert resolve_threads(0) >= 1
    assert resolve_threads(None) == resolve_threads(0)


def test_chunked_preserves_order():
    chunks = chunked(range(10), 3)
    assert [list(c) for c in chunks] == [[0, 1, 2, 3], [4, 5, 6], [7, 8, 9]]
    assert chunked([], 4) == [[]]
    assert len(chunked(range(2), 8)) == 2


def test_parallel_map_keeps_input_order():
    def slow_square(x):
        time.sleep(0.001 * (10 - x))
        return x * x

    assert parallel_map(slow_square, range(10), threads=4) == [x * x for x in range(10)]
    assert parallel_map(slow_square, range(10), threads=1) == [x * x for x in range(10)]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
