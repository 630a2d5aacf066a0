from seal.simulator.core import (
    MALFORMED,
    MAX_ATTEMPTS,
    UNAVAILABLE,
    MalformedOutput,
    SimCache,
    SimRequest,
    SimResponse,
    Simulator,
    UnknownApi,
    api_info,
    parse_sim_output,
    render_prompt,
    sim_cache_key,
)
from seal.simulator.server import SimulatorServer, serve_http, start_background

__all__ = [
    "MALFORMED",
    "MAX_ATTEMPTS",
    "UNAVAILABLE",
    "MalformedOutput",
    "SimCache",
    "SimRequest",
    "SimResponse",
    "Simulator",
    "SimulatorServer",
    "UnknownApi",
    "api_info",
    "parse_sim_output",
    "render_prompt",
    "serve_http",
    "sim_cache_key",
    "start_background",
]
