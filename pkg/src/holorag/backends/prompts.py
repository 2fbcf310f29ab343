"""Prompt template loading and rendering.

Templates are versioned text artifacts shipped with the package, one per
prompt role.  Placeholders are replaced literally (no format-string parsing),
so document text containing braces cannot break rendering.
"""

from functools import lru_cache
from importlib import resources

from .base import GenerationRequest, PromptRole


@lru_cache(maxsize=None)
def load_template(role: PromptRole) -> str:
    """Read the template text for a role from the packaged template files."""
    name = f"{PromptRole(role).value}.txt"
    return (resources.files("holorag.backends") / "templates" / name).read_text("utf-8")


def render_context(request: GenerationRequest) -> str:
    """One "[doc_id] text" line per context document."""
    lines = []
    for ref in request.context_docs:
        body = ref.text if ref.text is not None else (ref.image or "")
        lines.append(f"[{ref.doc_id}] {body}".rstrip())
    return "\n".join(lines)


def render_prompt(request: GenerationRequest) -> str:
    """Fill a role template with the request's query, context, and prior."""
    text = load_template(request.prompt_role)
    text = text.replace("{query}", request.query)
    text = text.replace("{context}", render_context(request))
    text = text.replace("{prior}", request.prior or "(none)")
    return text
