"""One forecast day of agent interaction: state, dispatch rules, the turn loop and replay.

Transcript messages use one neutral shape::

    {"role": "system" | "user" | "assistant" | "tool",
     "content": [{"type": "text", "text": ...},
                 {"type": "image", "media_type": "image/png", "path": ...}],
     "tool_calls": [{"id", "name", "arguments"}],   # assistant only
     "tool_call_id": ..., "result": {...}}         # tool only

Images are stored by path; base64 bytes are attached only on the way out to
an endpoint when ``image_mode`` is ``"base64"``.
"""

from __future__ import annotations

import copy
import dataclasses
import datetime as dt
import enum
import logging
from dataclasses import dataclass, field
from typing import Any

from tornadoverif.datastore import ArchiveIndex, PredictionDocument, validate_prediction
from tornadoverif.errors import EndpointError
from tornadoverif.geometry import DEFAULT_EPS_AREA
from tornadoverif.geoproj import GRID211, LambertConfig
from tornadoverif.harness import tools as T
from tornadoverif.harness.prompts import PromptSet, SizeEstimator, bytes_over_four

logger = logging.getLogger(__name__)


class Terminal(str, enum.Enum):
    SUBMITTED = "submitted"
    MAX_TURNS = "max_turns"
    AGENT_ERROR = "agent_error"


@dataclass
class HarnessConfig:
    quota: int = 50
    max_turns: int = 100
    agent_name: str = "Forecaster"
    image_mode: str = "base64"  # or "path"
    context_limit: int | None = None
    eps_area: float = DEFAULT_EPS_AREA
    projection: LambertConfig = GRID211
    prompts: PromptSet = field(default_factory=PromptSet.default)
    size_estimator: SizeEstimator = bytes_over_four

    def __post_init__(self):
        if self.quota < 0 or self.max_turns < 1:
            raise ValueError("quota must be >= 0 and max_turns >= 1")
        if self.image_mode not in ("base64", "path"):
            raise ValueError(f"image_mode must be 'base64' or 'path', not {self.image_mode!r}")


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


@dataclass
class Session:
    date: dt.date
    index: ArchiveIndex
    config: HarnessConfig = field(default_factory=HarnessConfig)
    quota_used: int = 0
    messages: list = field(default_factory=list)
    assistant_turns: int = 0
    tool_calls: int = 0
    sounding_attempts: int = 0
    terminal: Terminal | None = None
    error: str | None = None
    prediction: PredictionDocument | None = None
    usage_notes: list = field(default_factory=list)
    total_tokens: int = 0
    _pending: tuple = field(default=(0, ""), init=False, repr=False)

    def __post_init__(self):
        self._dispatcher = T.Dispatcher(self.index)
        if not self.messages:
            c = self.config
            self.messages.append({"role": "system", "content": [text_part(
                c.prompts.render_system(self.date, c.quota, c.agent_name))]})
            self.messages.append({"role": "user", "content": [text_part(
                c.prompts.render_first_user(self.date, c.quota, c.agent_name))]})

    # --- state ---

    @property
    def is_open(self) -> bool:
        return self.terminal is None

    @property
    def quota_remaining(self) -> int:
        return self.config.quota - self.quota_used

    def _append(self, msg: dict) -> None:
        self.messages.append(msg)

    def finish(self, state: Terminal, error: str | None = None) -> None:
        if self.terminal is None:
            self.terminal = state
            self.error = error

    # --- dispatch ---

    def dispatch(self, call: T.ToolCall) -> T.ToolResult:
        """Run one tool call; always returns exactly one result."""
        self.tool_calls += 1
        try:
            result = self._dispatch(call)
        except T.ArgError as exc:
            result = T.ToolResult(call.id, call.name, f"Error: {exc}", error=T.ARGUMENT_ERROR)
        self._append({"role": "tool", "tool_call_id": call.id, "name": call.name,
                      "content": self._content(result), "result": result.to_dict()})
        return result

    def _content(self, r: T.ToolResult) -> list:
        parts = [text_part(r.text)]
        if r.image is not None:
            parts.append(r.image.part("path"))
        return parts

    def _dispatch(self, call: T.ToolCall) -> T.ToolResult:
        if not self.is_open:
            return T.ToolResult(call.id, call.name, "Error: the forecast day is already complete; "
                                "no further tool calls are accepted.", error=T.SESSION_COMPLETE)
        if call.name not in T.TOOL_NAMES:
            return T.ToolResult(call.id, call.name, f"Error: unknown tool '{call.name}'. Available: "
                                + ", ".join(T.TOOL_NAMES), error=T.UNKNOWN_TOOL)
        args = T.decode_arguments(call.arguments)
        if call.name == T.LIST_MAPS:
            names = self._dispatcher.list_map_types()
            text = "Available map types:\n" + "\n".join(names) if names else "No map types are available."
            return T.ToolResult(call.id, call.name, text)
        if call.name == T.REQUEST_MAP:
            return self._request_map(call, args)
        if call.name == T.REQUEST_SOUNDING:
            return self._request_sounding(call, args)
        return self._submit(call, args)

    def _request_map(self, call, args) -> T.ToolResult:
        name = T._need(args, "map_type_directory")
        if not isinstance(name, str):
            raise T.ArgError("map_type_directory must be a string")
        hour = T._hour(args)
        path, why = self._dispatcher.map_asset(name, hour)
        if path is None:
            return T.ToolResult(call.id, call.name, f"Error: map not found. {why}", error=T.MAP_NOT_FOUND)
        return T.ToolResult(call.id, call.name, f"Map '{name}' at forecast hour {hour}.", T.ImageRef(str(path)))

    def _request_sounding(self, call, args) -> T.ToolResult:
        lat = T._number(args, "latitude", 90.0)
        lon = T._number(args, "longitude", 180.0)
        hour = T._hour(args)
        self.sounding_attempts += 1
        if self.quota_remaining <= 0:
            return T.ToolResult(call.id, call.name, f"Error: quota exceeded. All {self.config.quota} "
                                "soundings for today have been used.", error=T.QUOTA_EXCEEDED,
                                quota_remaining=0)
        self.quota_used += 1
        left = self.quota_remaining
        if not self.index.stations:
            return T.ToolResult(call.id, call.name, f"Error: sounding generation error. No stations are "
                                f"available. {left} sounding(s) left.", error=T.SOUNDING_ERROR,
                                quota_remaining=left)
        st, dist = self._dispatcher.nearest(lat, lon)
        path = self.index.sounding_asset(st.id, hour)
        if path is None or not path.is_file():
            return T.ToolResult(call.id, call.name, f"Error: sounding generation error for station {st.id} "
                                f"at forecast hour {hour}. {left} sounding(s) left.", error=T.SOUNDING_ERROR,
                                quota_remaining=left)
        text = (f"Sounding for station {st.id} ({st.coord.lat:.2f}, {st.coord.lon:.2f}), {dist:.1f} km from "
                f"the requested point, forecast hour {hour}. {left} sounding(s) left today.")
        return T.ToolResult(call.id, call.name, text, T.ImageRef(str(path)), quota_remaining=left)

    def _submit(self, call, args) -> T.ToolResult:
        text = T._need(args, "prediction_geojson")
        if not isinstance(text, str):
            raise T.ArgError("prediction_geojson must be a string holding the FeatureCollection")
        doc = validate_prediction(text, self.config.projection, self.config.eps_area, self.date)
        self.prediction = doc
        self.finish(Terminal.SUBMITTED)
        if doc.accepted:
            msg = f"Prediction received with maximum level {doc.pred_max.label}. The forecast day is complete."
            return T.ToolResult(call.id, call.name, msg, terminal=True)
        errs = "; ".join(str(i) for i in doc.report.errors[:20])
        return T.ToolResult(call.id, call.name, f"Prediction rejected ({errs}). The forecast day is complete.",
                            error=T.INVALID_PREDICTION, terminal=True)

    # --- wire ---

    def request(self) -> dict:
        """Conversation state for the endpoint, with images and the size note attached."""
        msgs = copy.deepcopy(self.messages)
        if self.config.image_mode == "base64":
            for m in msgs:
                for k, part in enumerate(m.get("content", [])):
                    if part.get("type") == "image":
                        m["content"][k] = T.ImageRef(part["path"], part["media_type"]).part("base64")
        est = self.config.size_estimator
        prompt_tokens = est(msgs)
        note = self.config.prompts.render_token_usage(prompt_tokens, self.total_tokens + prompt_tokens,
                                                      self.config.context_limit)
        msgs.append({"role": "user", "content": [text_part(note)]})
        self._pending = (prompt_tokens, note)
        return {"messages": msgs, "tools": T.tool_schemas(self.config.quota)}

    def accept_reply(self, reply: Any) -> list[T.ToolCall]:
        """Record an assistant reply; returns its tool calls (possibly none)."""
        prompt_tokens, note = self._pending
        self.usage_notes.append(note)
        if not isinstance(reply, dict):
            raise EndpointError(f"endpoint reply must be a JSON object, got {type(reply).__name__}")
        raw_calls = reply.get("tool_calls") or []
        text = reply.get("text")
        if not isinstance(raw_calls, list) or (text is not None and not isinstance(text, str)):
            raise EndpointError("endpoint reply has malformed 'tool_calls' or 'text'")
        if not raw_calls and text is None:
            raise EndpointError("endpoint reply has neither tool calls nor text")
        calls = []
        for k, c in enumerate(raw_calls):
            if not isinstance(c, dict) or not isinstance(c.get("name"), str):
                raise EndpointError(f"tool call {k} lacks a name")
            cid = c.get("id") if isinstance(c.get("id"), str) and c.get("id") else f"call_{self.assistant_turns}_{k}"
            calls.append(T.ToolCall(cid, c["name"], c.get("arguments", {})))
        self.assistant_turns += 1
        msg = {"role": "assistant", "content": [text_part(text)] if text else []}
        if calls:
            msg["tool_calls"] = [c.to_dict() for c in calls]
        self._append(msg)
        self.total_tokens += prompt_tokens + self.config.size_estimator(msg)
        return calls

    # --- summaries ---

    @property
    def sounding_requests(self) -> int:
        return self.quota_used

    def stats(self) -> dict:
        return {"assistant_turns": self.assistant_turns, "tool_calls": self.tool_calls,
                "sounding_requests": self.quota_used, "sounding_attempts": self.sounding_attempts,
                "quota_total": self.config.quota}

    def results(self) -> list[T.ToolResult]:
        return [T.ToolResult.from_dict(m["result"]) for m in self.messages if m["role"] == "tool"]

    def transcript(self) -> dict:
        return {"date": self.date.isoformat(), "agent_name": self.config.agent_name,
                "quota_total": self.config.quota, "max_turns": self.config.max_turns,
                "terminal": self.terminal.value if self.terminal else None, "error": self.error,
                "stats": self.stats(), "usage_notes": list(self.usage_notes), "messages": self.messages}


def run_session(endpoint, index: ArchiveIndex, date: dt.date | None = None,
                config: HarnessConfig | None = None) -> Session:
    """Drive the loop until submission, the turn limit, or an endpoint failure."""
    config = config or HarnessConfig()
    s = Session(date or index.date, index, config)
    nudge = config.prompts.nudge.strip()
    while s.is_open:
        if s.assistant_turns >= config.max_turns:
            s.finish(Terminal.MAX_TURNS, f"no submission after {config.max_turns} assistant turns")
            break
        try:
            reply = endpoint.respond(s.request())
            calls = s.accept_reply(reply)
        except EndpointError as exc:
            logger.warning("%s: endpoint failure: %s", s.date, exc)
            s.finish(Terminal.AGENT_ERROR, str(exc))
            break
        if not calls:
            s._append({"role": "user", "content": [text_part(nudge)]})
            continue
        for c in calls:
            s.dispatch(c)
    logger.info("%s: session %s after %d turns, %d tool calls, %d soundings", s.date,
                s.terminal.value, s.assistant_turns, s.tool_calls, s.quota_used)
    return s


def replay_transcript(transcript: dict, index: ArchiveIndex, config: HarnessConfig | None = None
                      ) -> tuple[Session, list[str]]:
    """Re-dispatch every recorded tool call; returns the new session and any mismatches."""
    config = config or HarnessConfig()
    if transcript.get("quota_total") is not None:
        config = dataclasses.replace(config, quota=int(transcript["quota_total"]))
    s = Session(dt.date.fromisoformat(transcript["date"]), index, config)
    recorded = [m["result"] for m in transcript["messages"] if m.get("role") == "tool"]
    calls = [c for m in transcript["messages"] if m.get("role") == "assistant" for c in m.get("tool_calls", [])]
    mismatches = []
    if len(calls) != len(recorded):
        mismatches.append(f"{len(recorded)} recorded results for {len(calls)} tool calls")
    k = 0
    for m in transcript["messages"]:
        if m.get("role") != "assistant":
            continue
        s.assistant_turns += 1
        for c in m.get("tool_calls", []):
            got = s.dispatch(T.ToolCall.from_dict(c)).to_dict()
            want = recorded[k] if k < len(recorded) else None
            k += 1
            if got != want:
                mismatches.append(f"call {c['id']} ({c['name']}): recorded {want!r}, replayed {got!r}")
    return s, mismatches
