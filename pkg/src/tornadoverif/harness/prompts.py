"""Prompt templates and the per-turn context-size note."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from importlib import resources
from typing import Callable

TEMPLATE_NAMES = ("system", "first_user", "token_usage", "nudge")


def load_template(name: str) -> str:
    return resources.files("tornadoverif.harness").joinpath("templates", f"{name}.txt").read_text()


def bytes_over_four(obj) -> int:
    """Default size estimator: serialized UTF-8 bytes divided by four."""
    text = obj if isinstance(obj, str) else json.dumps(obj, sort_keys=True)
    return len(text.encode()) // 4


@dataclass(frozen=True)
class PromptSet:
    system: str
    first_user: str
    token_usage: str
    nudge: str

    @classmethod
    def default(cls) -> "PromptSet":
        return cls(*(load_template(n) for n in TEMPLATE_NAMES))

    @classmethod
    def from_dir(cls, path) -> "PromptSet":
        """Override any subset of templates with ``<name>.txt`` files from ``path``."""
        from pathlib import Path

        base = cls.default()
        texts = {}
        for n in TEMPLATE_NAMES:
            f = Path(path) / f"{n}.txt"
            texts[n] = f.read_text() if f.is_file() else getattr(base, n)
        return cls(**texts)

    def fields(self, date: dt.date, quota: int, agent_name: str) -> dict:
        return {"agent_name": agent_name, "date": date.isoformat(),
                "next_date": (date + dt.timedelta(days=1)).isoformat(), "quota": quota}

    def render_system(self, date: dt.date, quota: int, agent_name: str) -> str:
        return self.system.format(**self.fields(date, quota, agent_name)).strip()

    def render_first_user(self, date: dt.date, quota: int, agent_name: str) -> str:
        return self.first_user.format(**self.fields(date, quota, agent_name)).strip()

    def render_token_usage(self, prompt_tokens: int, total_tokens: int, context_limit: int | None) -> str:
        note = f" The context limit is {context_limit} tokens." if context_limit else ""
        return self.token_usage.format(prompt_tokens=prompt_tokens, total_tokens=total_tokens,
                                       context_note=note).strip()


SizeEstimator = Callable[[object], int]
