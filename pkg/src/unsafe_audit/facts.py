"""Language-neutral facts model for one crate, plus its JSON interchange format.

The model captures what the downstream graph and audit stages need: functions
and methods with their unsafety markers, structs with field visibility and
constructors, traits with their implementations, and per-call-site argument
provenance. A facts document can be produced by the bundled Rust frontend
(``unsafe_audit.extract``) or supplied directly as JSON by another frontend.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, IO

from .errors import SchemaViolation, VersionMismatch

FACTS_VERSION = "1"


class FnKind(str, Enum):
    FREE_FUNCTION = "free_function"
    STATIC_METHOD = "static_method"
    DYNAMIC_METHOD = "dynamic_method"
    TRAIT_METHOD_DECL = "trait_method_decl"
    TRAIT_METHOD_IMPL = "trait_method_impl"


class Visibility(str, Enum):
    PUBLIC = "public"
    CRATE_VISIBLE = "crate_visible"
    MODULE_PRIVATE = "module_private"


# Wider scope = larger rank; the least-visible field decides literal access.
_VIS_RANK = {
    Visibility.MODULE_PRIVATE: 0,
    Visibility.CRATE_VISIBLE: 1,
    Visibility.PUBLIC: 2,
}


def least_visible(visibilities: list[Visibility]) -> Visibility:
    if not visibilities:
        return Visibility.PUBLIC
    return min(visibilities, key=lambda v: _VIS_RANK[v])


class ArgSource(str, Enum):
    GLOBAL_OR_STATIC_VAR = "global_or_static_var"
    HARDCODED_LITERAL = "hardcoded_literal"
    FIXED_VALUE_FN = "fixed_value_fn"
    CALLER_PARAM = "caller_param"
    LOCAL_COMPUTED = "local_computed"


class CalleeKind(str, Enum):
    DIRECT_PATH = "direct_path"
    TRAIT_GENERIC_METHOD = "trait_generic_method"
    FUNCTION_PARAM = "function_param"


# Reserved path prefixes for unsafe operations that are not function calls
# (raw-pointer dereference, static-mut access). They resolve to opaque graph
# nodes so the audit-unit machinery treats them uniformly with calls.
PSEUDO_DEREF = "<ptr_deref>"
PSEUDO_STATIC_MUT = "<static_mut:"
PSEUDO_FN_PARAM = "<fn_param:"


def is_pseudo_path(path: str) -> bool:
    return path.startswith("<")


def is_static_mut_path(path: str) -> bool:
    return path.startswith(PSEUDO_STATIC_MUT)


@dataclass
class ArgFlow:
    """Provenance of one argument of an unsafe call site."""

    source: ArgSource
    validated_by_branch_or_assert: bool = False


@dataclass
class CalleeRef:
    kind: CalleeKind
    path: str = ""           # direct_path: resolved id or external path
    trait_path: str = ""     # trait_generic_method
    method: str = ""         # trait_generic_method
    param: str = ""          # function_param: parameter or field name
    signature: str = ""      # function_param: textual fn signature

    def describe(self) -> str:
        if self.kind is CalleeKind.DIRECT_PATH:
            return self.path
        if self.kind is CalleeKind.TRAIT_GENERIC_METHOD:
            return f"{self.trait_path}::{self.method}"
        return f"fn-param {self.param}: {self.signature}"


@dataclass
class CallSiteFact:
    caller_id: str
    callee_ref: CalleeRef
    callee_is_unsafe: bool
    inside_unsafe_block: bool
    arg_flows: list[ArgFlow] = field(default_factory=list)


@dataclass
class FunctionFact:
    id: str
    name: str
    owner: str | None
    kind: FnKind
    declared_unsafe: bool
    contains_unsafe_block: bool
    visibility: Visibility
    params: list[tuple[str, str]] = field(default_factory=list)
    returns: str = "()"
    is_constructor: bool = False
    safety_doc: str | None = None
    call_sites: list[CallSiteFact] = field(default_factory=list)

    @property
    def has_receiver(self) -> bool:
        return self.kind is FnKind.DYNAMIC_METHOD

    def value_params(self) -> list[tuple[str, str]]:
        """Parameters excluding the receiver."""
        if self.has_receiver and self.params:
            return self.params[1:]
        return list(self.params)


@dataclass
class StructFact:
    type_path: str
    fields: list[tuple[str, str, Visibility]] = field(default_factory=list)
    constructor_ids: list[str] = field(default_factory=list)
    literal_constructible_from: Visibility = Visibility.PUBLIC


@dataclass
class TraitFact:
    trait_path: str
    method_decls: list[str] = field(default_factory=list)
    # (implementing type path, {decl id -> impl id}); a default-bodied decl is
    # recorded as a self-implementation entry keyed by the trait path itself.
    impls: list[tuple[str, dict[str, str]]] = field(default_factory=list)


@dataclass
class CrateFacts:
    crate_name: str
    functions: list[FunctionFact] = field(default_factory=list)
    structs: list[StructFact] = field(default_factory=list)
    traits: list[TraitFact] = field(default_factory=list)


class FactsIndex:
    """Lookup helper over a CrateFacts model.

    Resolution is exact by id first, then by unique ``::``-boundary suffix.
    """

    def __init__(self, facts: CrateFacts) -> None:
        self.facts = facts
        self.by_id: dict[str, FunctionFact] = {f.id: f for f in facts.functions}
        self.structs_by_path: dict[str, StructFact] = {
            s.type_path: s for s in facts.structs
        }
        self.traits_by_path: dict[str, TraitFact] = {
            t.trait_path: t for t in facts.traits
        }
        self._suffixes: dict[str, list[str]] = {}
        for fid in self.by_id:
            segs = fid.split("::")
            for i in range(len(segs)):
                self._suffixes.setdefault("::".join(segs[i:]), []).append(fid)
        self.fns_by_owner: dict[str, list[FunctionFact]] = {}
        for f in facts.functions:
            if f.owner:
                self.fns_by_owner.setdefault(f.owner, []).append(f)

    def resolve_function(self, path: str) -> FunctionFact | None:
        if path in self.by_id:
            return self.by_id[path]
        hits = self._suffixes.get(path, [])
        if len(hits) == 1:
            return self.by_id[hits[0]]
        return None

    def resolve_struct(self, path: str) -> StructFact | None:
        if path in self.structs_by_path:
            return self.structs_by_path[path]
        hits = [
            s for p, s in self.structs_by_path.items()
            if p.endswith("::" + path)
        ]
        if len(hits) == 1:
            return hits[0]
        return None

    def resolve_trait(self, path: str) -> TraitFact | None:
        if path in self.traits_by_path:
            return self.traits_by_path[path]
        hits = [
            t for p, t in self.traits_by_path.items()
            if p.endswith("::" + path)
        ]
        if len(hits) == 1:
            return hits[0]
        return None

    def trait_decl_has_default_body(self, trait: TraitFact, decl_id: str) -> bool:
        for type_path, mapping in trait.impls:
            if type_path == trait.trait_path and decl_id in mapping:
                return True
        return False


# ---------------------------------------------------------------------------
# Safety annotations
# ---------------------------------------------------------------------------

_HEADING_RE = re.compile(r"^\s*#+\s*(?P<word>[A-Za-z]+)\s*:?\s*(?P<rest>.*)$")
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_EDGE_PUNCT = ".,;:!?\"'()[]{}- \t"


def normalize_tag(raw: str) -> str:
    """Lowercase, collapse whitespace, strip edge punctuation."""
    tag = re.sub(r"\s+", " ", raw).strip().lower()
    return tag.strip(_EDGE_PUNCT)


def _parse_heading_tags(doc: str | None, heading: str) -> frozenset[str] | None:
    """Collect normalized tags under a markdown-style doc heading.

    Returns None (Absent) when the heading does not occur. Content spans from
    the heading line (inline text after the colon counts) to the next heading.
    Each bullet or sentence yields one tag.
    """
    if not doc:
        return None
    lines = doc.splitlines()
    collected: list[str] = []
    in_section = False
    found = False
    for line in lines:
        m = _HEADING_RE.match(line)
        if m:
            if m.group("word").lower() == heading:
                in_section = True
                found = True
                rest = m.group("rest").strip()
                if rest:
                    collected.append(rest)
            else:
                in_section = False
            continue
        if in_section:
            collected.append(line)
    if not found:
        return None
    tags: set[str] = set()
    for chunk in collected:
        text = chunk.strip()
        if text.startswith(("-", "*")):
            text = text[1:].strip()
        for sentence in _SENTENCE_SPLIT.split(text):
            tag = normalize_tag(sentence)
            if tag:
                tags.add(tag)
    return frozenset(tags)


def parse_safety_annotation(doc: str | None) -> frozenset[str] | None:
    """Required-safety tags from a ``# Safety`` doc heading, or None if absent."""
    return _parse_heading_tags(doc, "safety")


def parse_verifies_annotation(doc: str | None) -> frozenset[str] | None:
    """Verified-safety tags from a ``# Verifies`` doc heading, or None if absent."""
    return _parse_heading_tags(doc, "verifies")


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------


def _callee_ref_to_json(ref: CalleeRef) -> dict[str, Any]:
    if ref.kind is CalleeKind.DIRECT_PATH:
        return {"kind": ref.kind.value, "path": ref.path}
    if ref.kind is CalleeKind.TRAIT_GENERIC_METHOD:
        return {
            "kind": ref.kind.value,
            "trait_path": ref.trait_path,
            "method": ref.method,
        }
    return {
        "kind": ref.kind.value,
        "param": ref.param,
        "signature": ref.signature,
    }


def facts_to_json_dict(facts: CrateFacts) -> dict[str, Any]:
    return {
        "facts_version": FACTS_VERSION,
        "crate_name": facts.crate_name,
        "functions": [
            {
                "id": f.id,
                "name": f.name,
                "owner": f.owner,
                "kind": f.kind.value,
                "declared_unsafe": f.declared_unsafe,
                "contains_unsafe_block": f.contains_unsafe_block,
                "visibility": f.visibility.value,
                "params": [{"name": n, "type": t} for n, t in f.params],
                "returns": f.returns,
                "is_constructor": f.is_constructor,
                "safety_doc": f.safety_doc,
                "call_sites": [
                    {
                        "caller_id": s.caller_id,
                        "callee_ref": _callee_ref_to_json(s.callee_ref),
                        "callee_is_unsafe": s.callee_is_unsafe,
                        "inside_unsafe_block": s.inside_unsafe_block,
                        "arg_flows": [
                            {
                                "source": a.source.value,
                                "validated_by_branch_or_assert":
                                    a.validated_by_branch_or_assert,
                            }
                            for a in s.arg_flows
                        ],
                    }
                    for s in f.call_sites
                ],
            }
            for f in sorted(facts.functions, key=lambda f: f.id)
        ],
        "structs": [
            {
                "type_path": s.type_path,
                "fields": [
                    {"name": n, "type": t, "visibility": v.value}
                    for n, t, v in s.fields
                ],
                "constructor_ids": sorted(s.constructor_ids),
                "literal_constructible_from": s.literal_constructible_from.value,
            }
            for s in sorted(facts.structs, key=lambda s: s.type_path)
        ],
        "traits": [
            {
                "trait_path": t.trait_path,
                "method_decls": sorted(t.method_decls),
                "impls": [
                    {
                        "type_path": tp,
                        "methods": {k: mapping[k] for k in sorted(mapping)},
                    }
                    for tp, mapping in sorted(t.impls, key=lambda e: e[0])
                ],
            }
            for t in sorted(facts.traits, key=lambda t: t.trait_path)
        ],
    }


def save_facts_json(facts: CrateFacts) -> str:
    """Serialize to deterministic, key-sorted JSON text."""
    doc = facts_to_json_dict(facts)
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _want(obj: Any, key: str, typ: type | tuple, path: str) -> Any:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "expected object")
    if key not in obj:
        raise SchemaViolation(f"{path}/{key}", "missing required key")
    val = obj[key]
    if typ is not None and not isinstance(val, typ):
        raise SchemaViolation(f"{path}/{key}", f"expected {typ}")
    return val


def _enum(enum_cls: type[Enum], raw: Any, path: str) -> Any:
    try:
        return enum_cls(raw)
    except (ValueError, TypeError):
        allowed = ", ".join(e.value for e in enum_cls)  # type: ignore[attr-defined]
        raise SchemaViolation(path, f"expected one of: {allowed}") from None


def _callee_ref_from_json(obj: Any, path: str) -> CalleeRef:
    kind = _enum(CalleeKind, _want(obj, "kind", str, path), f"{path}/kind")
    if kind is CalleeKind.DIRECT_PATH:
        return CalleeRef(kind=kind, path=_want(obj, "path", str, path))
    if kind is CalleeKind.TRAIT_GENERIC_METHOD:
        return CalleeRef(
            kind=kind,
            trait_path=_want(obj, "trait_path", str, path),
            method=_want(obj, "method", str, path),
        )
    return CalleeRef(
        kind=kind,
        param=_want(obj, "param", str, path),
        signature=_want(obj, "signature", str, path),
    )


def facts_from_json_dict(doc: Any) -> CrateFacts:
    if not isinstance(doc, dict):
        raise SchemaViolation("/", "document must be an object")
    version = _want(doc, "facts_version", str, "")
    if version != FACTS_VERSION:
        raise VersionMismatch(
            f"unsupported facts_version {version!r}, expected {FACTS_VERSION!r}"
        )
    crate_name = _want(doc, "crate_name", str, "")
    functions: list[FunctionFact] = []
    raw_fns = _want(doc, "functions", list, "")
    for i, rf in enumerate(raw_fns):
        p = f"/functions/{i}"
        params: list[tuple[str, str]] = []
        for j, rp in enumerate(_want(rf, "params", list, p)):
            pp = f"{p}/params/{j}"
            params.append((_want(rp, "name", str, pp), _want(rp, "type", str, pp)))
        sites: list[CallSiteFact] = []
        for j, rs in enumerate(_want(rf, "call_sites", list, p)):
            sp = f"{p}/call_sites/{j}"
            flows = [
                ArgFlow(
                    source=_enum(
                        ArgSource,
                        _want(ra, "source", str, f"{sp}/arg_flows/{k}"),
                        f"{sp}/arg_flows/{k}/source",
                    ),
                    validated_by_branch_or_assert=_want(
                        ra, "validated_by_branch_or_assert", bool,
                        f"{sp}/arg_flows/{k}",
                    ),
                )
                for k, ra in enumerate(_want(rs, "arg_flows", list, sp))
            ]
            sites.append(
                CallSiteFact(
                    caller_id=_want(rs, "caller_id", str, sp),
                    callee_ref=_callee_ref_from_json(
                        _want(rs, "callee_ref", dict, sp), f"{sp}/callee_ref"
                    ),
                    callee_is_unsafe=_want(rs, "callee_is_unsafe", bool, sp),
                    inside_unsafe_block=_want(rs, "inside_unsafe_block", bool, sp),
                    arg_flows=flows,
                )
            )
        owner = rf.get("owner") if isinstance(rf, dict) else None
        if owner is not None and not isinstance(owner, str):
            raise SchemaViolation(f"{p}/owner", "expected string or null")
        safety_doc = rf.get("safety_doc")
        if safety_doc is not None and not isinstance(safety_doc, str):
            raise SchemaViolation(f"{p}/safety_doc", "expected string or null")
        functions.append(
            FunctionFact(
                id=_want(rf, "id", str, p),
                name=_want(rf, "name", str, p),
                owner=owner,
                kind=_enum(FnKind, _want(rf, "kind", str, p), f"{p}/kind"),
                declared_unsafe=_want(rf, "declared_unsafe", bool, p),
                contains_unsafe_block=_want(rf, "contains_unsafe_block", bool, p),
                visibility=_enum(
                    Visibility, _want(rf, "visibility", str, p), f"{p}/visibility"
                ),
                params=params,
                returns=_want(rf, "returns", str, p),
                is_constructor=_want(rf, "is_constructor", bool, p),
                safety_doc=safety_doc,
                call_sites=sites,
            )
        )
    structs: list[StructFact] = []
    for i, rs in enumerate(_want(doc, "structs", list, "")):
        p = f"/structs/{i}"
        fields = [
            (
                _want(rf, "name", str, f"{p}/fields/{j}"),
                _want(rf, "type", str, f"{p}/fields/{j}"),
                _enum(
                    Visibility,
                    _want(rf, "visibility", str, f"{p}/fields/{j}"),
                    f"{p}/fields/{j}/visibility",
                ),
            )
            for j, rf in enumerate(_want(rs, "fields", list, p))
        ]
        ctor_ids = _want(rs, "constructor_ids", list, p)
        for j, c in enumerate(ctor_ids):
            if not isinstance(c, str):
                raise SchemaViolation(f"{p}/constructor_ids/{j}", "expected string")
        structs.append(
            StructFact(
                type_path=_want(rs, "type_path", str, p),
                fields=fields,
                constructor_ids=list(ctor_ids),
                literal_constructible_from=_enum(
                    Visibility,
                    _want(rs, "literal_constructible_from", str, p),
                    f"{p}/literal_constructible_from",
                ),
            )
        )
    traits: list[TraitFact] = []
    for i, rt in enumerate(_want(doc, "traits", list, "")):
        p = f"/traits/{i}"
        decls = _want(rt, "method_decls", list, p)
        for j, d in enumerate(decls):
            if not isinstance(d, str):
                raise SchemaViolation(f"{p}/method_decls/{j}", "expected string")
        impls: list[tuple[str, dict[str, str]]] = []
        for j, ri in enumerate(_want(rt, "impls", list, p)):
            ip = f"{p}/impls/{j}"
            mapping = _want(ri, "methods", dict, ip)
            for k, v in mapping.items():
                if not isinstance(k, str) or not isinstance(v, str):
                    raise SchemaViolation(f"{ip}/methods", "expected string map")
            impls.append((_want(ri, "type_path", str, ip), dict(mapping)))
        traits.append(
            TraitFact(
                trait_path=_want(rt, "trait_path", str, p),
                method_decls=list(decls),
                impls=impls,
            )
        )
    facts = CrateFacts(
        crate_name=crate_name, functions=functions, structs=structs, traits=traits
    )
    _check_references(facts)
    return facts


def _check_references(facts: CrateFacts) -> None:
    ids = {f.id for f in facts.functions}
    type_paths = {s.type_path for s in facts.structs} | {
        t.trait_path for t in facts.traits
    }
    for i, f in enumerate(facts.functions):
        if f.owner and f.owner not in type_paths:
            # Owners may name types the frontend saw only through impl blocks;
            # accept them but insist call-site caller ids are coherent.
            pass
        for j, s in enumerate(f.call_sites):
            if s.caller_id != f.id:
                raise SchemaViolation(
                    f"/functions/{i}/call_sites/{j}/caller_id",
                    "caller_id must match the enclosing function id",
                )
    for i, s in enumerate(facts.structs):
        for j, cid in enumerate(s.constructor_ids):
            if cid not in ids:
                raise SchemaViolation(
                    f"/structs/{i}/constructor_ids/{j}",
                    f"unknown function id {cid!r}",
                )


def load_facts_json(source: str | bytes | Path | IO[str]) -> CrateFacts:
    """Load a facts document from JSON text, a path, or a text stream."""
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        text = source.read()
    else:
        raise TypeError(f"unsupported facts source: {type(source)!r}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("/", f"invalid JSON: {exc}") from exc
    return facts_from_json_dict(doc)
