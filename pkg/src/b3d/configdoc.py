"""Plain-text configuration documents.

The format is a flat key-value tree: one ``dotted.key = value`` pair per
line, ``#`` comments, blank lines ignored. Values are stored as strings;
typed accessors convert on read and raise :class:`ConfigError` naming the
offending key. Dumping sorts keys so documents are byte-stable.
"""

from __future__ import annotations

from .errors import ConfigError


def parse(text: str) -> dict[str, str]:
    """Parse a config document into an ordered ``{key: value}`` mapping."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def dump(doc: dict[str, str]) -> str:
    """Render a mapping as a config document (keys sorted, newline-terminated)."""
    lines = [f"{key} = {doc[key]}" for key in sorted(doc)]
    return "\n".join(lines) + "\n" if lines else ""


def load_path(path) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid UTF-8: {exc}") from None


def get_str(doc: dict[str, str], key: str, default: str | None = None) -> str:
    if key in doc:
        return doc[key]
    if default is not None:
        return default
    raise ConfigError(f"missing config key {key!r}")


def get_int(doc: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in doc:
        if default is not None:
            return default
        raise ConfigError(f"missing config key {key!r}")
    try:
        return int(doc[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected integer, got {doc[key]!r}") from None


def get_float(doc: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in doc:
        if default is not None:
            return default
        raise ConfigError(f"missing config key {key!r}")
    try:
        return float(doc[key])
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected number, got {doc[key]!r}") from None


def get_bool(doc: dict[str, str], key: str, default: bool | None = None) -> bool:
    if key not in doc:
        if default is not None:
            return default
        raise ConfigError(f"missing config key {key!r}")
    value = doc[key].lower()
    if value in ("true", "1", "yes", "on"):
        return True
    if value in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: expected boolean, got {doc[key]!r}")


def subtree(doc: dict[str, str], prefix: str) -> dict[str, str]:
    """All entries under ``prefix.`` with the prefix stripped."""
    dot = prefix + "."
    return {k[len(dot):]: v for k, v in doc.items() if k.startswith(dot)}


def format_float(x: float) -> str:
    """Shortest representation that round-trips through ``float()``."""
    return repr(float(x))
