"""Run reports: deterministic rows, CSV / JSON-lines serialization.

Data rows are a pure function of (config, seeds): reruns produce
byte-identical files.  Wall time is kept on the object for logging but
never serialized into the data.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1


def _cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_cell(x) for x in v)
    return str(v)


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if hasattr(v, "item"):  # numpy scalar
        return v.item()
    return v


@dataclass
class RunReport:
    command: str
    columns: list[str]
    config: dict
    rows: list[dict]
    aggregate: dict
    invariant_violations: int = 0
    checks_failed: list[str] = field(default_factory=list)
    wall_time: float = 0.0  # logged, never serialized

    @property
    def schema_name(self) -> str:
        return f"{self.command}-v{SCHEMA_VERSION}"

    def schema_hash(self) -> str:
        blob = (self.schema_name + "|" + ",".join(self.columns)).encode()
        return hashlib.sha256(blob).hexdigest()[:8]

    @property
    def ok(self) -> bool:
        return self.invariant_violations == 0 and not self.checks_failed

    def to_csv(self) -> str:
        lines = [f"# schema={self.schema_name} hash={self.schema_hash()}"]
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_cell(row.get(c, "")) for c in self.columns))
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        def dump(obj) -> str:
            return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))

        lines = [
            dump({"record": "replica", **{c: row.get(c) for c in self.columns}})
            for row in self.rows
        ]
        lines.append(
            dump(
                {
                    "record": "aggregate",
                    "schema": self.schema_name,
                    "schema_hash": self.schema_hash(),
                    "config": self.config,
                    "invariant_violations": self.invariant_violations,
                    "checks_failed": self.checks_failed,
                    **self.aggregate,
                }
            )
        )
        return "\n".join(lines) + "\n"

    def serialize(self, fmt: str) -> str:
        return self.to_csv() if fmt == "csv" else self.to_jsonl()

    def write(self, path: str, fmt: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize(fmt))
