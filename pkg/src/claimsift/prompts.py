"""Prompt construction and response parsing for the two annotation tasks.

The templates are fixed strings with three fill slots ([CLAIM], [POST],
[USER]). The bracketed tokens in the trailing format instruction ([stance],
[veracity], [reason]) are part of the instruction itself and are never
substituted.
"""

from __future__ import annotations

import re
from typing import Sequence

from .corpus import Claim, Post
from .errors import ParseError
from .labels import (
    STANCE_NAMES,
    normalize_stance,
    normalize_veracity,
)

STANCE_TEMPLATE = (
    "There is a claim [CLAIM] and I will give you its corresponding conversation "
    "thread on Twitter. The conversation thread consists of a sequence of posts "
    "and each post [POST] is written by a user [USER]. Please decide the stance "
    "expressed by each post towards the claim and explain why, and the stance can "
    "be one of the following labels: Support, Deny, Question, and Comment. "
    "Please follow the format: Stance: [stance], Reason:[reason]."
)

VERACITY_TEMPLATE = (
    "There is a claim [CLAIM], I will give you its related posts, each expressing "
    "a stance toward this claim. Please determine the veracity of the claim, "
    "categorizing it as 'True Rumor,' 'False Rumor,' 'Unverified Rumor,' or "
    "'Non-Rumor,' and explain your reasoning. "
    "Please follows the format: Veracity: [veracity], Reason: [reason]."
)

NO_POSTS_LINE = "No responding posts retained."


def build_stance_prompt(claim: Claim, post: Post) -> str:
    """Stance prompt for one post of a claim's thread."""
    return (
        STANCE_TEMPLATE.replace("[CLAIM]", claim.text)
        .replace("[POST]", post.text)
        .replace("[USER]", post.author)
    )


def _post_lines(retained: Sequence[tuple[Post, str]]) -> str:
    lines = []
    for k, (post, stance) in enumerate(retained, start=1):
        lines.append(f"Post {k} (Stance: {STANCE_NAMES[stance]}): {post.text}")
    return "\n".join(lines)


def build_veracity_prompt(claim: Claim, retained: Sequence[tuple[Post, str]]) -> str:
    """Veracity prompt listing retained posts with their stance labels.

    Posts appear in selection order. An empty retained set produces an
    explicit no-posts line rather than an empty section.
    """
    head = VERACITY_TEMPLATE.replace("[CLAIM]", claim.text)
    if not retained:
        return f"{head}\n\n{NO_POSTS_LINE}"
    return f"{head}\n\nResponding posts, in selection order:\n{_post_lines(retained)}"


def build_veracity_pretrain_prompt(claim: Claim) -> str:
    """Veracity prompt over the raw thread, no stance labels (warm-up data)."""
    head = VERACITY_TEMPLATE.replace("[CLAIM]", claim.text)
    if not claim.posts:
        return f"{head}\n\n{NO_POSTS_LINE}"
    lines = "\n".join(
        f"Post {k}: {post.text}" for k, post in enumerate(claim.posts, start=1)
    )
    return f"{head}\n\nResponding posts:\n{lines}"


_STANCE_KEYED = re.compile(
    r"\bstance\b\s*[:\-]?\s*[\[\('\"]*\s*([A-Za-z]+)", re.IGNORECASE
)
_STANCE_BARE = re.compile(
    r"^\s*[\[\('\"]*\s*(support|deny|question|comment)\b", re.IGNORECASE
)
_VERACITY_KEYED = re.compile(
    r"\bveracity\b\s*[:\-]?\s*[\[\('\"]*\s*"
    r"((?:non|true|false|unverified)[\s\-_]*rumou?r|true|false|unverified|non)",
    re.IGNORECASE,
)
_VERACITY_BARE = re.compile(
    r"^\s*[\[\('\"]*\s*((?:non|true|false|unverified)[\s\-_]*rumou?r)\b",
    re.IGNORECASE,
)
_REASON = re.compile(r"\breason\b\s*[:\-]?\s*(.*)", re.IGNORECASE | re.DOTALL)


def _extract_reason(text: str) -> str:
    m = _REASON.search(text)
    return m.group(1).strip() if m else ""


def parse_stance_response(text: str) -> tuple[str, str]:
    """Extract (stance label, reason) from a model response.

    Matching is case-insensitive and tolerant of brackets, quotes, and
    trailing prose. A missing Reason section yields an empty reason. No
    recognizable label raises ParseError carrying the raw text.
    """
    m = _STANCE_KEYED.search(text) or _STANCE_BARE.search(text)
    label = normalize_stance(m.group(1)) if m else None
    if label is None:
        raise ParseError("no recognizable stance label", raw=text)
    return label, _extract_reason(text)


def parse_veracity_response(text: str) -> tuple[str, str]:
    """Extract (veracity label, reason) from a model response.

    Same tolerance rules as stance parsing; multi-word labels may use
    spaces, hyphens, or underscores and either rumor spelling.
    """
    m = _VERACITY_KEYED.search(text) or _VERACITY_BARE.search(text)
    label = None
    if m:
        token = re.sub(r"[\s\-_]+", " ", m.group(1)).strip()
        token = re.sub(r"rumour", "rumor", token, flags=re.IGNORECASE)
        label = normalize_veracity(token)
    if label is None:
        raise ParseError("no recognizable veracity label", raw=text)
    return label, _extract_reason(text)
