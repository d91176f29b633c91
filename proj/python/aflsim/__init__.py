"""Anarchic federated learning simulator: AFA-CD / AFA-CS training protocols
under configurable arrival processes, staleness models and local-step policies.
"""

try:
    from ._core import (  # type: ignore[attr-defined]
        METRICS_CSV_HEADER,
        __version__,
        check_conditions,
        run_file,
        run_preset,
        run_text,
        step_stats,
    )
except ImportError:  # in-tree builds put _core next to the package, not inside it
    from _core import (  # type: ignore[no-redef]
        METRICS_CSV_HEADER,
        __version__,
        check_conditions,
        run_file,
        run_preset,
        run_text,
        step_stats,
    )

__all__ = [
    "METRICS_CSV_HEADER",
    "__version__",
    "check_conditions",
    "run_file",
    "run_preset",
    "run_text",
    "step_stats",
]
