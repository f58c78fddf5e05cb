"""Agent endpoints.

Every endpoint exposes ``respond(request) -> reply`` where ``request`` is
``{"messages": [...], "tools": [...]}`` in the session's neutral shape and
``reply`` is ``{"tool_calls": [{"id", "name", "arguments"}], "text": ...}``.
Endpoint faults are raised as :class:`EndpointError`.
"""

from __future__ import annotations

import json
import logging
import os
import selectors
import shlex
import subprocess
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from tornadoverif.errors import ArgumentError, EndpointError

logger = logging.getLogger(__name__)


class AgentEndpoint(Protocol):
    def respond(self, request: dict) -> dict: ...


class ScriptedEndpoint:
    """Replays a fixed list of replies; ``loop`` repeats the list instead of failing at the end."""

    def __init__(self, steps: Sequence[dict], loop: bool = False):
        self.steps = list(steps)
        self.loop = loop
        self.calls = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedEndpoint":
        doc = json.loads(Path(path).read_text())
        if isinstance(doc, list):
            return cls(doc)
        return cls(doc["steps"], bool(doc.get("loop", False)))

    def respond(self, request: dict) -> dict:
        if not self.steps or (self.calls >= len(self.steps) and not self.loop):
            raise EndpointError(f"script exhausted after {self.calls} replies")
        step = self.steps[self.calls % len(self.steps)]
        self.calls += 1
        return json.loads(json.dumps(step))


class FunctionEndpoint:
    """Wraps ``policy(request, turn) -> reply``; handy for adversarial test agents."""

    def __init__(self, policy: Callable[[dict, int], dict]):
        self.policy = policy
        self.turn = 0

    def respond(self, request: dict) -> dict:
        reply = self.policy(request, self.turn)
        self.turn += 1
        return reply


def _decode_reply(text: str, where: str) -> dict:
    try:
        reply = json.loads(text)
    except ValueError as exc:
        raise EndpointError(f"{where}: reply is not JSON ({exc})") from exc
    if not isinstance(reply, dict):
        raise EndpointError(f"{where}: reply must be a JSON object")
    return reply


class SubprocessEndpoint:
    """Child process speaking one JSON object per line on stdin/stdout."""

    def __init__(self, argv: Sequence[str], timeout: float = 300.0, cwd=None):
        self.argv = list(argv)
        self.timeout = timeout
        self.cwd = cwd
        self.proc: subprocess.Popen | None = None

    def _start(self):
        try:
            self.proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         text=True, bufsize=1, cwd=self.cwd)
        except OSError as exc:
            raise EndpointError(f"cannot start {self.argv[0]}: {exc}") from exc

    def respond(self, request: dict) -> dict:
        if self.proc is None:
            self._start()
        p = self.proc
        try:
            p.stdin.write(json.dumps(request) + "\n")
            p.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EndpointError(f"agent process closed its input: {exc}") from exc
        sel = selectors.DefaultSelector()
        sel.register(p.stdout, selectors.EVENT_READ)
        ready = sel.select(self.timeout)
        sel.close()
        if not ready:
            self.close()
            raise EndpointError(f"agent process gave no reply within {self.timeout:g} s")
        line = p.stdout.readline()
        if not line:
            raise EndpointError(f"agent process exited (code {p.poll()})")
        return _decode_reply(line, "agent process")

    def close(self):
        if self.proc is not None:
            if self.proc.stdin:
                self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
            self.proc = None


class HttpEndpoint:
    """POSTs the native request shape to ``url`` and expects the native reply shape."""

    def __init__(self, url: str, timeout: float = 300.0, headers: dict | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.url = url
        self.client = httpx.Client(timeout=timeout, headers=headers or {}, transport=transport)

    def respond(self, request: dict) -> dict:
        try:
            r = self.client.post(self.url, json=request)
            r.raise_for_status()
        except httpx.HTTPError as exc:
            raise EndpointError(f"{self.url}: {exc}") from exc
        return _decode_reply(r.text, self.url)


# --- chat-completions bridge --------------------------------------------------------

def _text_of(parts) -> str:
    return "\n".join(p["text"] for p in parts if p.get("type") == "text")


def _image_parts(parts) -> list[dict]:
    out = []
    for p in parts:
        if p.get("type") == "image":
            if "data" not in p:
                raise EndpointError("chat-completions bridge needs image_mode 'base64'")
            out.append({"type": "image_url", "image_url": {"url": f"data:{p['media_type']};base64,{p['data']}"}})
    return out


def to_chat_completions(request: dict, model: str) -> dict:
    """Native request to an OpenAI-style chat-completions body.

    Tool messages cannot carry images there, so a tool result's image follows
    it as a separate user message.
    """
    msgs = []
    for m in request["messages"]:
        role, parts = m["role"], m.get("content", [])
        if role == "system":
            msgs.append({"role": "system", "content": _text_of(parts)})
        elif role == "user":
            imgs = _image_parts(parts)
            content = [{"type": "text", "text": _text_of(parts)}] + imgs if imgs else _text_of(parts)
            msgs.append({"role": "user", "content": content})
        elif role == "assistant":
            out = {"role": "assistant", "content": _text_of(parts) or None}
            if m.get("tool_calls"):
                out["tool_calls"] = [{"id": c["id"], "type": "function", "function": {
                    "name": c["name"],
                    "arguments": c["arguments"] if isinstance(c["arguments"], str) else json.dumps(c["arguments"]),
                }} for c in m["tool_calls"]]
            msgs.append(out)
        elif role == "tool":
            msgs.append({"role": "tool", "tool_call_id": m["tool_call_id"], "content": _text_of(parts)})
            imgs = _image_parts(parts)
            if imgs:
                msgs.append({"role": "user", "content": [
                    {"type": "text", "text": f"Image returned by tool call {m['tool_call_id']}."}] + imgs})
    tools = [{"type": "function", "function": {"name": t["name"], "description": t["description"],
                                               "parameters": t["parameters"]}} for t in request["tools"]]
    return {"model": model, "messages": msgs, "tools": tools}


def from_chat_completions(body: dict) -> dict:
    try:
        msg = body["choices"][0]["message"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointError("chat-completions reply has no choices[0].message") from exc
    calls = []
    for c in msg.get("tool_calls") or []:
        try:
            calls.append({"id": c["id"], "name": c["function"]["name"], "arguments": c["function"]["arguments"]})
        except (KeyError, TypeError) as exc:
            raise EndpointError("malformed tool call in chat-completions reply") from exc
    reply: dict = {"tool_calls": calls}
    if msg.get("content"):
        reply["text"] = msg["content"] if isinstance(msg["content"], str) else json.dumps(msg["content"])
    elif not calls:
        reply["text"] = ""
    return reply


class ChatCompletionsEndpoint:
    """Bridge to a commercial chat-completions HTTP API."""

    def __init__(self, model: str, base_url: str = "https://api.openai.com/v1", api_key: str | None = None,
                 timeout: float = 600.0, transport: httpx.BaseTransport | None = None, extra: dict | None = None):
        self.model = model
        self.url = base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.extra = extra or {}

    def respond(self, request: dict) -> dict:
        body = {**to_chat_completions(request, self.model), **self.extra}
        try:
            r = self.client.post(self.url, json=body)
            r.raise_for_status()
        except httpx.HTTPError as exc:
            raise EndpointError(f"{self.url}: {exc}") from exc
        return from_chat_completions(_decode_reply(r.text, self.url))


def parse_endpoint_spec(spec: str, timeout: float = 600.0) -> AgentEndpoint:
    """``script:FILE``, ``http:URL``, ``cmd:COMMAND`` or ``openai:MODEL``.

    ``openai:`` reads ``OPENAI_API_KEY`` and optionally ``OPENAI_BASE_URL``.
    """
    kind, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise ArgumentError(f"endpoint spec {spec!r} must look like KIND:VALUE")
    if kind == "script":
        return ScriptedEndpoint.from_file(rest)
    if kind in ("http", "https"):
        url = spec if rest.startswith("//") else rest
        return HttpEndpoint(url, timeout)
    if kind == "cmd":
        return SubprocessEndpoint(shlex.split(rest), timeout)
    if kind == "openai":
        return ChatCompletionsEndpoint(rest, os.environ.get("OPENAI_BASE_URL", "https://api.openai.com/v1"),
                                       os.environ.get("OPENAI_API_KEY"), timeout)
    raise ArgumentError(f"unknown endpoint kind {kind!r}; use script, http, cmd or openai")


def close_endpoint(endpoint) -> None:
    close = getattr(endpoint, "close", None)
    if callable(close):
        close()
