"""Stories, alignment transforms and text templates."""
from __future__ import annotations

from .stories import (
    Alignment,
    Binding,
    Story,
    StoryError,
    apply_variant,
    get_story,
    load_pools,
    load_registry,
    stories_for,
    transform_alignment,
)
from .templates import (
    STEP_RE,
    format_percent,
    graph_edge_text,
    parse_data_text,
    quantize,
    query_formula,
    render_data_sentence,
    render_data_text,
    render_explanation,
    render_graph_text,
    render_question,
)

__all__ = [
    "Alignment",
    "Binding",
    "STEP_RE",
    "Story",
    "StoryError",
    "apply_variant",
    "format_percent",
    "get_story",
    "graph_edge_text",
    "load_pools",
    "load_registry",
    "parse_data_text",
    "quantize",
    "query_formula",
    "render_data_sentence",
    "render_data_text",
    "render_explanation",
    "render_graph_text",
    "render_question",
    "stories_for",
    "transform_alignment",
]
