"""Builtin benchmark functions with known error regions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from ..detect import Label
from ..expr import FunctionDef, Interval, parse_file
from ..measure import Region

REPAIRABLE = "repairable"
NEGATIVE_CONTROL = "negative-control"
CASE_STUDY = "case-study"


@dataclass(frozen=True)
class CorpusEntry:
    function: FunctionDef
    kind: str
    expected: Label
    peak: tuple[float, ...]
    region: Region
    search_box: tuple[Interval, ...]
    expansion: str | None
    notes: str = ""
    twin: FunctionDef | None = None

    @property
    def name(self) -> str:
        return self.function.name

    @property
    def repairable(self) -> bool:
        return self.kind == REPAIRABLE


def _read(name: str) -> str:
    return resources.files(__package__).joinpath("data", name).read_text(encoding="utf-8")


def load_manifest() -> dict:
    return json.loads(_read("manifest.json"))


@lru_cache(maxsize=1)
def builtin_corpus() -> tuple[CorpusEntry, ...]:
    entries = []
    for raw in load_manifest()["entries"]:
        defs = {f.name: f for f in parse_file(_read(raw["file"]))}
        f = defs[raw["name"]]
        reg = raw["region"]
        var = f.param_names.index(reg["var"])
        region = Region(var, float(reg["midpoint"]), float(reg["radius"]), tuple(float(v) for v in reg["base"]))
        entries.append(
            CorpusEntry(
                function=f,
                kind=raw["kind"],
                expected=Label(raw["expected"]),
                peak=tuple(float(v) for v in raw["peak"]),
                region=region,
                search_box=tuple(Interval(float(lo), float(hi)) for lo, hi in raw["search_box"]),
                expansion=raw.get("expansion"),
                notes=raw.get("notes", ""),
                twin=defs.get(raw["twin"]) if raw.get("twin") else None,
            )
        )
    return tuple(entries)


def corpus_entry(name: str) -> CorpusEntry:
    for entry in builtin_corpus():
        if entry.name == name:
            return entry
    raise KeyError(name)


def corpus_source(entry: CorpusEntry) -> str:
    for raw in load_manifest()["entries"]:
        if raw["name"] == entry.name:
            return _read(raw["file"])
    raise KeyError(entry.name)


__all__ = [
    "CASE_STUDY",
    "NEGATIVE_CONTROL",
    "REPAIRABLE",
    "CorpusEntry",
    "builtin_corpus",
    "corpus_entry",
    "corpus_source",
    "load_manifest",
]
