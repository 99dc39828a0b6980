"""Flat key=value config text: the format used by CLI config files and
checkpoint snapshots. One ``key=value`` pair per line; blank lines and
lines starting with ``#`` are ignored. Values stay strings here; callers
coerce them."""

from __future__ import annotations

__all__ = ["parse_kv_text", "format_kv", "load_kv_file", "parse_levels", "parse_widths"]


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def format_kv(mapping: dict[str, str]) -> str:
    return "".join(f"{k}={mapping[k]}\n" for k in sorted(mapping))


def load_kv_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


def parse_levels(text: str) -> tuple[int, ...]:
    """Parse levels like ``"1,2,3"`` or ``"3"``."""
    try:
        levels = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise ValueError(f"bad levels {text!r}: expected comma-separated integers") from exc
    if not levels:
        raise ValueError("at least one level is required")
    return levels


def parse_widths(text: str) -> tuple[int, ...]:
    widths = tuple(int(part) for part in str(text).split(",") if part.strip())
    if not widths:
        raise ValueError("at least one stage width is required")
    return widths
