"""Shared reader/writer for the versioned, checksummed text formats.

A section file is UTF-8 text: a ``<magic> v<version>`` first line, then
``[section]`` headers each followed by their lines, and a final
``checksum=sha256:<hex>`` line computed over everything before it.  Floats
are written with :func:`format_float` (17 significant digits) so numeric
round-trips are exact.
"""

from __future__ import annotations

import hashlib

from .errors import ModelChecksumError, ModelFormatError, ModelVersionError


def format_float(value: float) -> str:
    """Shortest decimal that round-trips the exact float64 value."""
    return repr(float(value))


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def render(magic: str, version: int, sections: list[tuple[str, list[str]]]) -> str:
    """Serialize sections (ordered) with header and trailing checksum."""
    lines = [f"{magic} v{version}"]
    for name, body in sections:
        lines.append(f"[{name}]")
        lines.extend(body)
    payload = "\n".join(lines) + "\n"
    return payload + f"checksum=sha256:{_digest(payload)}\n"


def parse(text: str, magic: str, expected_version: int) -> dict[str, list[str]]:
    """Validate header, version, and checksum; return section bodies by name."""
    lines = text.splitlines()
    if not lines:
        raise ModelFormatError(f"empty {magic} file")
    last = lines[-1]
    if not last.startswith("checksum=sha256:"):
        raise ModelFormatError(f"{magic} file is truncated (missing checksum line)")
    stated = last[len("checksum=sha256:"):].strip()
    payload = "\n".join(lines[:-1]) + "\n"
    actual = _digest(payload)
    if stated != actual:
        raise ModelChecksumError(
            f"{magic} file checksum mismatch (stated {stated[:12]}..., actual {actual[:12]}...)"
        )
    header = lines[0].split()
    if len(header) != 2 or header[0] != magic or not header[1].startswith("v"):
        raise ModelFormatError(f"not a {magic} file (header {lines[0]!r})")
    try:
        version = int(header[1][1:])
    except ValueError:
        raise ModelVersionError(f"unparseable version tag {header[1]!r}") from None
    if version != expected_version:
        raise ModelVersionError(
            f"unsupported {magic} version {version} (this build reads v{expected_version})"
        )
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in lines[1:-1]:
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            if name in sections:
                raise ModelFormatError(f"duplicate section [{name}]")
            current = sections.setdefault(name, [])
        elif current is not None:
            current.append(line)
        elif line.strip():
            raise ModelFormatError(f"content before first section: {line!r}")
    return sections


def parse_kv(body: list[str], where: str) -> dict[str, str]:
    """Parse ``key=value`` lines of one section."""
    out: dict[str, str] = {}
    for line in body:
        if not line.strip():
            continue
        if "=" not in line:
            raise ModelFormatError(f"malformed line in [{where}]: {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
