# predinvent/src/prompt_templates.py
"""Versioned prompt templates under prompts/, with guarded loading and field substitution."""
import os
import re
from typing import Dict

from .logging_config import get_logger

log = get_logger(__name__)

PROMPT_DIR = os.path.join(os.path.dirname(__file__), "..", "prompts")
MAX_PROMPT_FILE_SIZE_BYTES = 10 * 1024
PLACEHOLDER_REGEX = re.compile(r"\b(TODO|lorem ipsum|PLACEHOLDER|FIXME)\b", re.IGNORECASE)
FIELD_REGEX = re.compile(r"\{([a-z_]+)\}")

DEFAULT_PROMPTS: Dict[str, str] = {
    "system_context.txt": (
        "You help a robot learn symbolic abstractions of its continuous skills. "
        "Answer only with the requested PDDL or proposal blocks."
    ),
    "partial_domain.txt": (
        "Complete this PDDL domain. Declare the predicates the actions need and fill in every "
        "precondition and effect.\n\n{partial_pddl}\n\nDemonstrated action sequences:\n{demo_digest}"
    ),
    "propose_effects.txt": (
        "Domain:\n{partial_pddl}\n\nHistory:\n{history}\n\n{focus}\n"
        "Reply with up to {batch_size} blocks of the form "
        "(proposal (predicate NAME TYPE ...) (effect ACTION add|delete PARAM-INDEX ...) ...)"
    ),
}


def load_prompt(file_name: str, default_prompt: str = None) -> str:
    """Prompt text from prompts/``file_name``; falls back to the built-in default on any problem."""
    if default_prompt is None:
        default_prompt = DEFAULT_PROMPTS.get(file_name, "")
    file_path = os.path.join(PROMPT_DIR, file_name)
    try:
        if not os.path.exists(file_path):
            log.warning("Prompt file not found; using the built-in default.", path=file_path)
            return default_prompt
        file_size = os.path.getsize(file_path)
        if file_size > MAX_PROMPT_FILE_SIZE_BYTES:
            log.warning("Prompt file exceeds size limit; using the built-in default.", path=file_path,
                        size=file_size, limit=MAX_PROMPT_FILE_SIZE_BYTES)
            return default_prompt
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                content = f.read().strip()
        except UnicodeDecodeError as ude:
            log.warning("Prompt file is not valid UTF-8; using the built-in default.", path=file_path,
                        error_str=str(ude))
            return default_prompt
        if not content:
            log.warning("Prompt file is empty; using the built-in default.", path=file_path)
            return default_prompt
        if PLACEHOLDER_REGEX.search(content):
            log.warning("Prompt file contains placeholder tokens; using the built-in default.", path=file_path)
            return default_prompt
        return content
    except OSError as e:
        log.error("Unexpected error loading prompt; using the built-in default.", path=file_path, error_str=str(e))
        return default_prompt


def render(file_name: str, **fields: object) -> str:
    """Substitutes ``{name}`` fields; unknown fields in the template are left as they are."""
    template = load_prompt(file_name)
    return FIELD_REGEX.sub(lambda m: str(fields[m.group(1)]) if m.group(1) in fields else m.group(0), template)
