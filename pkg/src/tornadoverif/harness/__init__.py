"""Agent interaction loop: tools, sessions, prompts and endpoints."""

from tornadoverif.harness.endpoints import (
    AgentEndpoint,
    ChatCompletionsEndpoint,
    FunctionEndpoint,
    HttpEndpoint,
    ScriptedEndpoint,
    SubprocessEndpoint,
    parse_endpoint_spec,
)
from tornadoverif.harness.prompts import PromptSet, bytes_over_four
from tornadoverif.harness.session import HarnessConfig, Session, Terminal, replay_transcript, run_session
from tornadoverif.harness.tools import TOOL_NAMES, TOOL_SCHEMAS, ToolCall, ToolResult, nearest_station, tool_schemas

__all__ = [
    "AgentEndpoint", "ChatCompletionsEndpoint", "FunctionEndpoint", "HttpEndpoint", "ScriptedEndpoint",
    "SubprocessEndpoint", "parse_endpoint_spec", "PromptSet", "bytes_over_four", "HarnessConfig", "Session",
    "Terminal", "replay_transcript", "run_session", "TOOL_NAMES", "TOOL_SCHEMAS", "ToolCall", "ToolResult",
    "nearest_station", "tool_schemas",
]
