"""Shared pieces of the text model-file family.

Every model file starts with ``vigilance-model <family> <version>`` followed
by a ``meta`` line holding one-line JSON (config, label map, feature schema,
optional standardizer). Family-specific body lines follow and the file ends
with ``end``.
"""

from __future__ import annotations

import json
import os

from .errors import ModelFormatError, VersionError

MAGIC = "vigilance-model"


def model_meta(model_kind: str, config: dict, label_map, feature_names, schema_id, **extra) -> str:
    meta = {"kind": model_kind, "config": config, "label_map": label_map,
            "feature_names": list(feature_names), "schema_id": schema_id}
    meta.update(extra)
    return json.dumps(meta, sort_keys=True)


def read_header(lines: list[str], family: str, path) -> int:
    if not lines:
        raise ModelFormatError(f"{path}: empty model file")
    parts = lines[0].split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise ModelFormatError(f"{path}: not a {MAGIC} file")
    if parts[1] != family:
        raise ModelFormatError(f"{path}: model family is {parts[1]!r}, expected {family!r}")
    try:
        version = int(parts[2])
    except ValueError:
        raise VersionError(f"{path}: bad version tag {parts[2]!r}") from None
    return version


def model_family(path: str | os.PathLike) -> str:
    with open(path) as fh:
        parts = fh.readline().split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise ModelFormatError(f"{path}: not a {MAGIC} file")
    return parts[1]


def read_meta(lines: list[str], path) -> dict:
    if len(lines) < 2 or not lines[1].startswith("meta "):
        raise ModelFormatError(f"{path}: missing meta line")
    try:
        return json.loads(lines[1][5:])
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: malformed meta line ({exc})") from None


def float_line(tag: str, values) -> str:
    return " ".join([tag] + [repr(float(v)) for v in values])


def parse_floats(line: str, tag: str, n: int | None, path, where: str) -> list[float]:
    parts = line.split()
    if not parts or parts[0] != tag:
        raise ModelFormatError(f"{path}: {where}: expected '{tag}' line")
    try:
        vals = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {where}: {exc}") from None
    if n is not None and len(vals) != n:
        raise ModelFormatError(f"{path}: {where}: expected {n} values, got {len(vals)}")
    return vals


def check_version(version: int, supported, family: str, path) -> None:
    if version not in supported:
        raise VersionError(
            f"{path}: unsupported {family} model version {version}; supported versions: "
            f"{', '.join(map(str, supported))}"
        )
