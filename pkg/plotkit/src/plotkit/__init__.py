"""plotkit: offline figures from fusionloc benchmark CSVs and power maps."""

__version__ = "0.1.0"

from .figures import (
    FigureSpec,
    PowerMapFile,
    SchemaError,
    plot,
    read_aggregate_csv,
    read_power_map,
)

__all__ = [
    "FigureSpec",
    "PowerMapFile",
    "SchemaError",
    "plot",
    "read_aggregate_csv",
    "read_power_map",
]
