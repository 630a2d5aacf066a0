from seal.ingest.adapters import (
    AdapterError,
    SourceAdapterConfig,
    ToolbenchRaw,
    normalize_type,
    parse_benchmark,
    read_toolbench,
    toolbench_function_name,
)
from seal.ingest.filters import (
    FilterStats,
    avg_apis_per_query,
    filter_multistep,
    is_multistep,
    sanitize_toolbench,
)

__all__ = [
    "AdapterError",
    "FilterStats",
    "SourceAdapterConfig",
    "ToolbenchRaw",
    "avg_apis_per_query",
    "filter_multistep",
    "is_multistep",
    "normalize_type",
    "parse_benchmark",
    "read_toolbench",
    "sanitize_toolbench",
    "toolbench_function_name",
]
