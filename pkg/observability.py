"""
Structured run logging for pathweight experiments
Every entry is one JSON object per line; the CSV output never sees any of it
"""
import logging
import json
import time
import uuid
from datetime import datetime, timezone
from typing import Dict, Any, Optional, List
from dataclasses import dataclass, asdict
from enum import Enum
import os

from config import LOG_DIR, LOG_LEVEL

class EventType(Enum):
    EXPERIMENT_START = "experiment_start"
    SWEEP_ROW = "sweep_row"
    ASSERTION = "assertion"
    EXPERIMENT_END = "experiment_end"
    CONFIG_ERROR = "config_error"
    NUMERICAL_ERROR = "numerical_error"

@dataclass
class LogEntry:
    """Structured log entry for a run"""
    timestamp: str
    level: str
    event_type: str
    component: str
    run_id: str
    message: str
    data: Optional[Dict[str, Any]]
    error_details: Optional[Dict[str, Any]]
    performance_metrics: Optional[Dict[str, Any]]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

class RunLogger:
    """JSON-lines logger with in-memory run metrics"""

    def __init__(self, name: str = "pathweight", log_level: str = "INFO",
                 log_dir: Optional[str] = None):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))
        self.log_dir = log_dir
        self.run_id = uuid.uuid4().hex[:12]

        if not self.logger.handlers:
            self._setup_handlers()

        self.metrics = {
            'rows_emitted': 0,
            'assertions_failed': 0,
            'config_errors': 0,
            'numerical_errors': 0,
            'row_wall_times_ms': [],
        }
        self.entries: List[LogEntry] = []
        self.max_entries = 10000
        self.start_time = time.time()

    def _setup_handlers(self):
        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
        self.logger.addHandler(console_handler)
        # the root logger has its own console handler
        self.logger.propagate = False

        if self.log_dir:
            os.makedirs(self.log_dir, exist_ok=True)
            json_formatter = logging.Formatter('%(message)s')

            run_handler = logging.FileHandler(os.path.join(self.log_dir, "run.log"))
            run_handler.setLevel(logging.INFO)
            run_handler.setFormatter(json_formatter)

            error_handler = logging.FileHandler(os.path.join(self.log_dir, "errors.log"))
            error_handler.setLevel(logging.ERROR)
            error_handler.setFormatter(json_formatter)

            self.logger.addHandler(run_handler)
            self.logger.addHandler(error_handler)

    def new_run(self) -> str:
        """Start a fresh run id and reset the per-run metrics"""
        self.run_id = uuid.uuid4().hex[:12]
        self.metrics['rows_emitted'] = 0
        self.metrics['assertions_failed'] = 0
        self.metrics['row_wall_times_ms'] = []
        self.start_time = time.time()
        return self.run_id

    def log_experiment_start(self, experiment: str, config: Dict[str, Any]):
        self._log_entry(self._entry(
            "INFO", EventType.EXPERIMENT_START, "harness",
            f"Experiment start: {experiment}", data={"experiment": experiment, "config": config},
        ))

    def log_sweep_row(self, experiment: str, swept_value: float, estimate: float,
                      stderr: float, wall_time_ms: int, flags: Optional[List[str]] = None):
        self._log_entry(self._entry(
            "WARNING" if flags else "INFO", EventType.SWEEP_ROW, "harness",
            f"{experiment} row {swept_value:g}: r={estimate:.6g} +/- {stderr:.2g}",
            data={"swept_value": swept_value, "estimate": estimate, "stderr": stderr, "flags": flags or []},
            performance_metrics={"wall_time_ms": wall_time_ms},
        ))
        self.metrics['rows_emitted'] += 1
        self.metrics['row_wall_times_ms'].append(wall_time_ms)

    def log_assertion(self, name: str, passed: bool, detail: Optional[str] = None):
        self._log_entry(self._entry(
            "INFO" if passed else "WARNING", EventType.ASSERTION, "harness",
            f"Assertion {name}: {'passed' if passed else 'FAILED'}",
            data={"name": name, "passed": passed, "detail": detail},
        ))
        if not passed:
            self.metrics['assertions_failed'] += 1

    def log_experiment_end(self, experiment: str, runtime_ms: int, output_files: List[str]):
        self._log_entry(self._entry(
            "INFO", EventType.EXPERIMENT_END, "harness",
            f"Experiment end: {experiment} in {runtime_ms} ms",
            data={"experiment": experiment, "outputs": output_files},
            performance_metrics={"runtime_ms": runtime_ms},
        ))

    def log_config_error(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        self._log_entry(self._entry(
            "ERROR", EventType.CONFIG_ERROR, "config",
            f"Config error: {error_message}", data=None, error_details=details,
        ))
        self.metrics['config_errors'] += 1

    def log_numerical_error(self, error_type: str, error_message: str,
                            details: Optional[Dict[str, Any]] = None):
        self._log_entry(self._entry(
            "ERROR", EventType.NUMERICAL_ERROR, "numerics",
            f"Numerical error: {error_message}", data={"error_type": error_type},
            error_details=details,
        ))
        self.metrics['numerical_errors'] += 1

    def _entry(self, level: str, event_type: EventType, component: str, message: str,
               data: Optional[Dict[str, Any]] = None, error_details: Optional[Dict[str, Any]] = None,
               performance_metrics: Optional[Dict[str, Any]] = None) -> LogEntry:
        return LogEntry(
            timestamp=datetime.now(timezone.utc).isoformat(),
            level=level,
            event_type=event_type.value,
            component=component,
            run_id=self.run_id,
            message=message,
            data=data,
            error_details=error_details,
            performance_metrics=performance_metrics,
        )

    def _log_entry(self, entry: LogEntry):
        self.entries.append(entry)
        if len(self.entries) > self.max_entries:
            self.entries = self.entries[-self.max_entries:]

        line = json.dumps(entry.to_dict(), default=str)
        self.logger.log(getattr(logging, entry.level), line)

    def get_metrics(self) -> Dict[str, Any]:
        walls = self.metrics['row_wall_times_ms']
        return {
            **self.metrics,
            'average_row_ms': sum(walls) / len(walls) if walls else 0,
            'uptime_seconds': time.time() - self.start_time,
        }

    def get_entries(self, event_type: Optional[str] = None, limit: int = 100) -> List[LogEntry]:
        filtered = self.entries
        if event_type:
            filtered = [entry for entry in filtered if entry.event_type == event_type]
        return filtered[-limit:]

# Global instance
run_logger = RunLogger(log_level=LOG_LEVEL, log_dir=LOG_DIR)

# Convenience functions
def log_assertion(name: str, passed: bool, detail: Optional[str] = None):
    run_logger.log_assertion(name, passed, detail)

def get_metrics() -> Dict[str, Any]:
    return run_logger.get_metrics()
