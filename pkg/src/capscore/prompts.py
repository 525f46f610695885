"""Prompt template loading and placeholder substitution.

Templates ship as package data and can be overridden by pointing a config
at a custom templates directory. Substitution is literal string
replacement: the templates contain JSON braces, so printf-style
formatting would mangle them.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import TemplateNotFound

DECOMPOSITION = "decomposition"
MATCHING = "matching"
VERIFICATION = "verification"

CAPTION_SLOT = "{Caption Here}"
PRED_UNITS_SLOT = "{set of units for generated caption}"
ORACLE_UNITS_SLOT = "{set of units for human-written caption}"
REFERENCE_SLOT = "{reference caption}"
UNITS_SLOT = "{primitive information units}"


@lru_cache(maxsize=None)
def _packaged(name: str) -> str:
    ref = resources.files("capscore").joinpath(f"templates/{name}.txt")
    if not ref.is_file():
        raise TemplateNotFound(f"no packaged template named {name!r}")
    return ref.read_text(encoding="utf-8")


def load_template(template_id: str, templates_dir: Optional[str] = None) -> str:
    """Resolve a template id to its text, preferring an override directory."""
    if templates_dir is not None:
        path = Path(templates_dir) / f"{template_id}.txt"
        if path.is_file():
            return path.read_text(encoding="utf-8")
        raise TemplateNotFound(f"no template {template_id!r} under {templates_dir}")
    return _packaged(template_id)


def render(template: str, slots: dict[str, str]) -> str:
    """Replace each placeholder token with its value, verbatim."""
    out = template
    for slot, value in slots.items():
        if slot not in out:
            raise TemplateNotFound(f"template is missing expected slot {slot!r}")
        out = out.replace(slot, value)
    return out


def prompt_pool(path: Optional[str] = None) -> list[str]:
    """Captioning prompts used for candidate generation and PPO rollouts.

    Defaults to the packaged pool; a file override takes one prompt per line.
    """
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        text = _packaged("ppo_prompts")
    return [line.strip() for line in text.splitlines() if line.strip()]
