from .base import (
    DOC_READING_ROLES,
    DocRef,
    GenerationRequest,
    GenerationResult,
    ModelBackend,
    PromptRole,
    SufficiencyVerdict,
    parse_verdict,
    sufficiency_probe,
)
from .http import HttpBackend, resolve_api_key
from .mock import MockBackend
from .prompts import load_template, render_prompt

__all__ = [
    "DOC_READING_ROLES",
    "DocRef",
    "GenerationRequest",
    "GenerationResult",
    "HttpBackend",
    "MockBackend",
    "ModelBackend",
    "PromptRole",
    "SufficiencyVerdict",
    "load_template",
    "parse_verdict",
    "render_prompt",
    "resolve_api_key",
    "sufficiency_probe",
]
