"""Query-guided global instance-search tracker.

The heavy lifting lives in the compiled ``_globaltrack`` extension; this
package re-exports its public surface. When running from a source checkout
without an installed wheel, the extension is picked up from a sibling CMake
build tree if one is on ``sys.path``.
"""

try:
    from ._globaltrack import (
        Box,
        Model,
        config_keys,
        evaluate,
        generate_synthetic,
        iou,
        write_results_file,
    )
except ImportError:  # pragma: no cover - source-tree fallback
    from _globaltrack import (
        Box,
        Model,
        config_keys,
        evaluate,
        generate_synthetic,
        iou,
        write_results_file,
    )

__all__ = [
    "Box",
    "Model",
    "config_keys",
    "evaluate",
    "generate_synthetic",
    "iou",
    "write_results_file",
]
