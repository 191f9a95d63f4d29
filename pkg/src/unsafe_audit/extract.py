"""Rust source frontend: parse a crate tree into the CrateFacts model.

This is a pragmatic scanner, not a full Rust parser. It tokenizes source
text, recognizes item structure (modules, structs, traits, impls, functions,
statics), and walks function bodies to record unsafe operations:

* calls whose callee is declared unsafe (resolved in-crate, trait-generic,
  function-parameter, or external),
* raw-pointer dereferences,
* reads/writes of mutable statics.

Non-call unsafe operations are recorded as call sites against reserved
pseudo-paths so the graph stages treat them uniformly. Unparsable files are
skipped with a warning and never abort extraction. Macros other than the
assert family are treated as opaque; call sites inside them are skipped.

Known simplifications: no type inference (method receivers resolve through
``self``, typed parameters, and struct fields only), no trait-solver
resolution, no macro expansion.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NoSourceFiles, RootNotFound
from .facts import (
    ArgFlow,
    ArgSource,
    CalleeKind,
    CalleeRef,
    CallSiteFact,
    CrateFacts,
    FnKind,
    FunctionFact,
    PSEUDO_DEREF,
    PSEUDO_FN_PARAM,
    PSEUDO_STATIC_MUT,
    StructFact,
    TraitFact,
    Visibility,
    least_visible,
)

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_PUNCT3 = ("..=", "<<=", ">>=", "...")
_PUNCT2 = (
    "::", "->", "=>", "..", "&&", "||", "==", "!=", "<=", ">=",
    "+=", "-=", "*=", "/=", "%=", "^=", "&=", "|=", "<<", ">>",
)

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass
class Tok:
    kind: str  # ident | num | str | char | lifetime | punct | doc
    text: str
    line: int


class TokenizeError(Exception):
    pass


def tokenize(text: str) -> list[Tok]:
    toks: list[Tok] = []
    i = 0
    n = len(text)
    line = 1
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            continue
        if text.startswith("///", i):
            j = text.find("\n", i)
            j = n if j < 0 else j
            toks.append(Tok("doc", text[i + 3:j].rstrip(), line))
            i = j
            continue
        if text.startswith("//", i):  # includes //! inner docs
            j = text.find("\n", i)
            i = n if j < 0 else j
            continue
        if text.startswith("/*", i):
            depth = 1
            j = i + 2
            while j < n and depth:
                if text.startswith("/*", j):
                    depth += 1
                    j += 2
                elif text.startswith("*/", j):
                    depth -= 1
                    j += 2
                else:
                    if text[j] == "\n":
                        line += 1
                    j += 1
            i = j
            continue
        if c == '"' or text.startswith(('r"', 'r#"'), i) or text.startswith('b"', i):
            start = i
            if c in "rb":
                i += 1
                hashes = 0
                while i < n and text[i] == "#":
                    hashes += 1
                    i += 1
                if i < n and text[i] == '"':
                    i += 1
                    closer = '"' + "#" * hashes
                    j = text.find(closer, i)
                    if j < 0:
                        raise TokenizeError(f"unterminated raw string at line {line}")
                    i = j + len(closer)
                    toks.append(Tok("str", text[start:i], line))
                    line += text.count("\n", start, i)
                    continue
                i = start  # not a raw string after all
                c = text[i]
            i += 1
            while i < n:
                if text[i] == "\\":
                    i += 2
                    continue
                if text[i] == '"':
                    i += 1
                    break
                if text[i] == "\n":
                    line += 1
                i += 1
            toks.append(Tok("str", text[start:i], line))
            continue
        if c == "'":
            m = IDENT_RE.match(text, i + 1)
            if m and (m.end() >= n or text[m.end()] != "'"):
                toks.append(Tok("lifetime", text[i:m.end()], line))
                i = m.end()
                continue
            # char literal
            j = i + 1
            if j < n and text[j] == "\\":
                j += 2
            else:
                j += 1
            while j < n and text[j] != "'":
                j += 1
            j += 1
            toks.append(Tok("char", text[i:j], line))
            i = j
            continue
        if c.isdigit():
            j = i
            while j < n and (text[j].isalnum() or text[j] in "._"):
                # stop before range operator 1..2
                if text[j] == "." and text.startswith("..", j):
                    break
                j += 1
            toks.append(Tok("num", text[i:j], line))
            i = j
            continue
        m = IDENT_RE.match(text, i)
        if m:
            toks.append(Tok("ident", m.group(), line))
            i = m.end()
            continue
        matched = False
        for p in _PUNCT3:
            if text.startswith(p, i):
                toks.append(Tok("punct", p, line))
                i += len(p)
                matched = True
                break
        if matched:
            continue
        for p in _PUNCT2:
            if text.startswith(p, i):
                toks.append(Tok("punct", p, line))
                i += len(p)
                matched = True
                break
        if matched:
            continue
        toks.append(Tok("punct", c, line))
        i += 1
    return toks


_NO_SPACE_BEFORE = {")", "]", ">", ",", ";", "::", ".", "!", "?"}
_NO_SPACE_AFTER = {"(", "[", "<", "::", ".", "&", "*", "!", "#"}


def join_tokens(toks: list[Tok] | list[str]) -> str:
    """Readable single-line rendering of a token span."""
    out: list[str] = []
    prev = ""
    for t in toks:
        text = t if isinstance(t, str) else t.text
        if not out:
            out.append(text)
        elif prev in _NO_SPACE_AFTER or text in _NO_SPACE_BEFORE:
            out.append(text)
        else:
            out.append(" " + text)
        prev = text
    return "".join(out)


def squash(text: str) -> str:
    return re.sub(r"\s+", "", text)


def normalize_signature(sig: str) -> str:
    """Whitespace-free signature form used for fn-parameter callee matching."""
    s = squash(sig)
    if "->" not in s:
        s += "->()"
    return s


# ---------------------------------------------------------------------------
# Raw items collected per file
# ---------------------------------------------------------------------------


@dataclass
class RawFn:
    module: str
    name: str
    visibility: Visibility
    declared_unsafe: bool
    params: list[tuple[str, str]]
    returns: str
    has_receiver: bool
    doc: str | None
    body: list[Tok] | None  # None for bodiless declarations
    owner_text: str | None = None  # impl/trait target as written
    trait_text: str | None = None  # trait being implemented, if any
    in_trait_decl: bool = False
    bounds: dict[str, str] = field(default_factory=dict)
    line: int = 0
    # linked later
    fact: FunctionFact | None = None


@dataclass
class RawStruct:
    module: str
    name: str
    visibility: Visibility
    fields: list[tuple[str, str, Visibility]]


@dataclass
class RawStatic:
    module: str
    name: str
    mutable: bool  # True for static mut; False for const / immutable static


# ---------------------------------------------------------------------------
# Item parser
# ---------------------------------------------------------------------------

_SKIP_HEADS = {"use", "type", "extern", "macro_rules", "enum", "union"}


class FileParser:
    def __init__(self, toks: list[Tok], module: str, file_label: str) -> None:
        self.toks = toks
        self.i = 0
        self.module = module
        self.file_label = file_label
        self.fns: list[RawFn] = []
        self.structs: list[RawStruct] = []
        self.traits: list[tuple[str, str, list[RawFn]]] = []  # (module, name, fns)
        self.statics: list[RawStatic] = []
        self.warnings: list[str] = []

    # -- token helpers -----------------------------------------------------

    def peek(self, k: int = 0) -> Tok | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def eat(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def skip_balanced(self, open_ch: str, close_ch: str) -> list[Tok]:
        """Consume a balanced bracket group including delimiters."""
        assert self.at(open_ch)
        depth = 0
        out: list[Tok] = []
        while self.i < len(self.toks):
            t = self.eat()
            out.append(t)
            if t.text == open_ch:
                depth += 1
            elif t.text == close_ch:
                depth -= 1
                if depth == 0:
                    return out
        return out

    def skip_generics(self) -> None:
        """Skip a <...> group; >> closes two levels."""
        if not self.at("<"):
            return
        depth = 0
        while self.i < len(self.toks):
            t = self.eat()
            if t.text == "<":
                depth += 1
            elif t.text == ">":
                depth -= 1
            elif t.text == ">>":
                depth -= 2
            if depth <= 0:
                return

    def capture_generics(self) -> list[Tok]:
        if not self.at("<"):
            return []
        start = self.i
        self.skip_generics()
        return self.toks[start:self.i]

    def skip_to_semi_or_block(self) -> None:
        while self.i < len(self.toks):
            t = self.peek()
            if t is None:
                return
            if t.text == ";":
                self.eat()
                return
            if t.text == "{":
                self.skip_balanced("{", "}")
                return
            self.eat()

    # -- item parsing --------------------------------------------------------

    def parse_items(self, module: str, end: int) -> None:
        doc_lines: list[str] = []
        while self.i < end:
            t = self.peek()
            if t is None:
                return
            if t.kind == "doc":
                doc_lines.append(t.text)
                self.eat()
                continue
            if t.text == "#":
                self.eat()
                if self.at("!"):
                    self.eat()
                if self.at("["):
                    self.skip_balanced("[", "]")
                continue
            if t.text == "}":
                self.eat()
                return
            if t.text == ";":
                self.eat()
                doc_lines = []
                continue
            doc = "\n".join(doc_lines) if doc_lines else None
            doc_lines = []
            self.parse_one_item(module, doc)

    def parse_one_item(self, module: str, doc: str | None) -> None:
        vis = self._parse_visibility()
        declared_unsafe = False
        while True:
            t = self.peek()
            if t is None:
                return
            if t.text in ("const", "async"):
                # `const fn` / `const NAME: ...` disambiguation
                nxt = self.peek(1)
                if t.text == "const" and not (
                    nxt and nxt.text in ("fn", "unsafe", "async", "extern")
                ):
                    self.eat()
                    name = self.eat().text if self.peek() else ""
                    self.statics.append(RawStatic(module, name, mutable=False))
                    self.skip_to_semi_or_block()
                    return
                self.eat()
                continue
            if t.text == "unsafe":
                declared_unsafe = True
                self.eat()
                continue
            if t.text == "extern":
                self.eat()
                if self.peek() and self.peek().kind == "str":
                    self.eat()
                if self.at("{"):  # foreign block: opaque
                    self.skip_balanced("{", "}")
                    return
                if self.at("crate"):
                    self.skip_to_semi_or_block()
                    return
                continue
            break
        t = self.peek()
        if t is None:
            return
        head = t.text
        if head == "fn":
            fn = self._parse_fn(module, vis, declared_unsafe, doc)
            if fn is not None:
                self.fns.append(fn)
            return
        if head == "mod":
            self.eat()
            name_tok = self.peek()
            name = name_tok.text if name_tok else "_"
            self.eat()
            if self.at(";"):
                self.eat()  # file modules are discovered by the tree walk
                return
            if self.at("{"):
                self.eat()
                sub = f"{module}::{name}"
                self.parse_items(sub, len(self.toks))
            return
        if head == "struct":
            self.eat()
            name = self.eat().text
            self.skip_generics()
            fields: list[tuple[str, str, Visibility]] = []
            if self.at("("):
                group = self.skip_balanced("(", ")")
                fields = self._tuple_fields(group[1:-1])
                if self.at(";"):
                    self.eat()
            elif self.at("{"):
                group = self.skip_balanced("{", "}")
                fields = self._named_fields(group[1:-1])
            elif self.at(";"):
                self.eat()
            self.structs.append(RawStruct(module, name, vis, fields))
            return
        if head == "trait":
            self.eat()
            name = self.eat().text
            self.skip_generics()
            while self.i < len(self.toks) and not self.at("{"):
                self.eat()
            trait_fns: list[RawFn] = []
            if self.at("{"):
                end_idx = self._matching_brace(self.i)
                self.eat()
                trait_fns = self._parse_member_fns(
                    module, end_idx, owner_text=name, trait_text=None,
                    in_trait_decl=True, impl_bounds={},
                )
            self.traits.append((module, name, trait_fns))
            self.fns.extend(trait_fns)
            return
        if head == "impl":
            self.eat()
            impl_generics = self.capture_generics()
            header: list[Tok] = []
            while self.i < len(self.toks) and not self.at("{"):
                header.append(self.eat())
            trait_text: str | None = None
            type_toks = header
            for k, tok in enumerate(header):
                if tok.text == "for":
                    trait_text = join_tokens(header[:k])
                    type_toks = header[k + 1:]
                    break
            owner_text = join_tokens(type_toks)
            bounds = _parse_bounds(impl_generics)
            if self.at("{"):
                end_idx = self._matching_brace(self.i)
                self.eat()
                member_fns = self._parse_member_fns(
                    module, end_idx, owner_text=owner_text,
                    trait_text=trait_text, in_trait_decl=False,
                    impl_bounds=bounds,
                )
                self.fns.extend(member_fns)
            return
        if head == "static":
            self.eat()
            mutable = False
            if self.at("mut"):
                mutable = True
                self.eat()
            name_tok = self.peek()
            if name_tok is not None and name_tok.kind == "ident":
                self.statics.append(RawStatic(module, name_tok.text, mutable))
            self.skip_to_semi_or_block()
            return
        if head in _SKIP_HEADS or head == "macro_rules":
            self.eat()
            if head == "macro_rules" and self.at("!"):
                self.eat()
                if self.peek() and self.peek().kind == "ident":
                    self.eat()
            if head in ("enum", "union"):
                # consume name + generics then the body
                if self.peek() and self.peek().kind == "ident":
                    self.eat()
                self.skip_generics()
            self.skip_to_semi_or_block()
            return
        # Unknown construct: resynchronize at the next item boundary.
        self.warnings.append(
            f"{self.file_label}:{t.line}: skipped unrecognized item near {t.text!r}"
        )
        self.eat()
        self.skip_to_semi_or_block()

    def _matching_brace(self, open_idx: int) -> int:
        depth = 0
        for j in range(open_idx, len(self.toks)):
            txt = self.toks[j].text
            if txt == "{":
                depth += 1
            elif txt == "}":
                depth -= 1
                if depth == 0:
                    return j
        return len(self.toks) - 1

    def _parse_member_fns(
        self,
        module: str,
        end_idx: int,
        owner_text: str | None,
        trait_text: str | None,
        in_trait_decl: bool,
        impl_bounds: dict[str, str],
    ) -> list[RawFn]:
        fns: list[RawFn] = []
        doc_lines: list[str] = []
        while self.i < end_idx:
            t = self.peek()
            if t is None:
                break
            if t.kind == "doc":
                doc_lines.append(t.text)
                self.eat()
                continue
            if t.text == "#":
                self.eat()
                if self.at("!"):
                    self.eat()
                if self.at("["):
                    self.skip_balanced("[", "]")
                continue
            vis = self._parse_visibility()
            declared_unsafe = False
            skip = False
            while True:
                t2 = self.peek()
                if t2 is None:
                    skip = True
                    break
                if t2.text in ("const", "async", "default"):
                    nxt = self.peek(1)
                    if t2.text == "const" and not (
                        nxt and nxt.text in ("fn", "unsafe", "async", "extern")
                    ):
                        self.eat()
                        self.skip_to_semi_or_block()
                        skip = True
                        break
                    self.eat()
                    continue
                if t2.text == "unsafe":
                    declared_unsafe = True
                    self.eat()
                    continue
                if t2.text == "extern":
                    self.eat()
                    if self.peek() and self.peek().kind == "str":
                        self.eat()
                    continue
                break
            if skip:
                doc_lines = []
                continue
            if self.at("fn"):
                doc = "\n".join(doc_lines) if doc_lines else None
                doc_lines = []
                fn = self._parse_fn(module, vis, declared_unsafe, doc)
                if fn is not None:
                    fn.owner_text = owner_text
                    fn.trait_text = trait_text
                    fn.in_trait_decl = in_trait_decl
                    fn.bounds.update(impl_bounds)
                    fns.append(fn)
                continue
            if self.at("}"):
                self.eat()
                break
            doc_lines = []
            self.eat()
            if self.at("{"):
                self.skip_balanced("{", "}")
        if self.i <= end_idx < len(self.toks) and self.toks[end_idx].text == "}":
            # ensure the closing brace of the impl/trait block is consumed
            while self.i <= end_idx:
                self.eat()
        return fns

    def _parse_fn(
        self,
        module: str,
        vis: Visibility,
        declared_unsafe: bool,
        doc: str | None,
    ) -> RawFn | None:
        assert self.at("fn")
        line = self.peek().line
        self.eat()
        name_tok = self.peek()
        if name_tok is None or name_tok.kind != "ident":
            self.warnings.append(f"{self.file_label}:{line}: fn without a name")
            self.skip_to_semi_or_block()
            return None
        name = self.eat().text
        generics = self.capture_generics()
        bounds = _parse_bounds(generics)
        if not self.at("("):
            self.warnings.append(
                f"{self.file_label}:{line}: fn {name} without parameter list"
            )
            self.skip_to_semi_or_block()
            return None
        group = self.skip_balanced("(", ")")
        params, has_receiver = _parse_params(group[1:-1])
        returns = "()"
        if self.at("->"):
            self.eat()
            ret_toks: list[Tok] = []
            depth = 0
            while self.i < len(self.toks):
                t = self.peek()
                if t is None:
                    break
                if depth == 0 and t.text in ("{", ";", "where"):
                    break
                if t.text in ("(", "[", "<"):
                    depth += 1
                elif t.text in (")", "]", ">"):
                    depth -= 1
                elif t.text == ">>":
                    depth -= 2
                ret_toks.append(self.eat())
            returns = join_tokens(ret_toks) or "()"
        if self.at("where"):
            while self.i < len(self.toks) and not self.at("{") and not self.at(";"):
                self.eat()
        body: list[Tok] | None = None
        if self.at("{"):
            group = self.skip_balanced("{", "}")
            body = group[1:-1]
        elif self.at(";"):
            self.eat()
        return RawFn(
            module=module,
            name=name,
            visibility=vis,
            declared_unsafe=declared_unsafe,
            params=params,
            returns=returns,
            has_receiver=has_receiver,
            doc=doc,
            body=body,
            bounds=bounds,
            line=line,
        )

    def _parse_visibility(self) -> Visibility:
        if not self.at("pub"):
            return Visibility.MODULE_PRIVATE
        self.eat()
        if self.at("("):
            group = self.skip_balanced("(", ")")
            inner = join_tokens(group[1:-1])
            if inner.startswith(("crate", "super", "in")):
                return Visibility.CRATE_VISIBLE
            return Visibility.CRATE_VISIBLE
        return Visibility.PUBLIC

    def _named_fields(self, toks: list[Tok]) -> list[tuple[str, str, Visibility]]:
        fields: list[tuple[str, str, Visibility]] = []
        for part in _split_top_level(toks, ","):
            if not part:
                continue
            j = 0
            vis = Visibility.MODULE_PRIVATE
            if part[j].text == "pub":
                vis = Visibility.PUBLIC
                j += 1
                if j < len(part) and part[j].text == "(":
                    depth = 0
                    while j < len(part):
                        if part[j].text == "(":
                            depth += 1
                        elif part[j].text == ")":
                            depth -= 1
                            if depth == 0:
                                j += 1
                                break
                        j += 1
                    vis = Visibility.CRATE_VISIBLE
            if j + 1 >= len(part) or part[j + 1].text != ":":
                continue
            name = part[j].text
            type_text = join_tokens(part[j + 2:])
            fields.append((name, type_text, vis))
        return fields

    def _tuple_fields(self, toks: list[Tok]) -> list[tuple[str, str, Visibility]]:
        fields: list[tuple[str, str, Visibility]] = []
        for idx, part in enumerate(_split_top_level(toks, ",")):
            if not part:
                continue
            j = 0
            vis = Visibility.MODULE_PRIVATE
            if part[j].text == "pub":
                vis = Visibility.PUBLIC
                j += 1
                if j < len(part) and part[j].text == "(":
                    depth = 0
                    while j < len(part):
                        if part[j].text == "(":
                            depth += 1
                        elif part[j].text == ")":
                            depth -= 1
                            if depth == 0:
                                j += 1
                                break
                        j += 1
                    vis = Visibility.CRATE_VISIBLE
            fields.append((str(idx), join_tokens(part[j:]), vis))
        return fields


def _split_top_level(toks: list[Tok], sep: str) -> list[list[Tok]]:
    parts: list[list[Tok]] = [[]]
    depth = 0
    angle = 0
    for t in toks:
        txt = t.text
        if txt in ("(", "[", "{"):
            depth += 1
        elif txt in (")", "]", "}"):
            depth -= 1
        elif txt == "<":
            angle += 1
        elif txt == ">":
            angle = max(0, angle - 1)
        elif txt == ">>":
            angle = max(0, angle - 2)
        if txt == sep and depth == 0 and angle == 0:
            parts.append([])
        else:
            parts[-1].append(t)
    return parts


def _parse_params(toks: list[Tok]) -> tuple[list[tuple[str, str]], bool]:
    params: list[tuple[str, str]] = []
    has_receiver = False
    for k, part in enumerate(_split_top_level(toks, ",")):
        if not part:
            continue
        texts = [t.text for t in part]
        if k == 0 and "self" in texts[:4]:
            has_receiver = True
            params.append(("self", join_tokens(part)))
            continue
        j = 0
        if texts[j] == "mut":
            j += 1
        if j < len(part) and part[j].kind == "ident":
            name = part[j].text
        else:
            name = f"_arg{k}"
        colon = None
        depth = 0
        for m in range(j, len(part)):
            txt = part[m].text
            if txt in ("(", "[", "<"):
                depth += 1
            elif txt in (")", "]", ">"):
                depth -= 1
            elif txt == ":" and depth == 0:
                colon = m
                break
        type_text = join_tokens(part[colon + 1:]) if colon is not None else "_"
        if colon is not None and colon > j:
            name = f"_arg{k}" if part[j].kind != "ident" else part[j].text
        params.append((name, type_text))
    return params, has_receiver


def _parse_bounds(generic_toks: list[Tok]) -> dict[str, str]:
    """Map generic parameter name to its first trait bound, textually."""
    if not generic_toks:
        return {}
    inner = generic_toks[1:-1] if generic_toks and generic_toks[0].text == "<" else generic_toks
    bounds: dict[str, str] = {}
    for part in _split_top_level(inner, ","):
        if not part or part[0].kind != "ident":
            continue
        name = part[0].text
        if len(part) >= 3 and part[1].text == ":":
            bound_toks: list[Tok] = []
            for t in part[2:]:
                if t.text in ("+", ","):
                    break
                bound_toks.append(t)
            bound = join_tokens(bound_toks)
            bound = re.sub(r"<.*", "", bound).strip()
            if bound and not bound.startswith("'"):
                bounds[name] = bound
    return bounds


# ---------------------------------------------------------------------------
# Crate extraction
# ---------------------------------------------------------------------------

_ASSERT_MACROS = {
    "assert", "assert_eq", "assert_ne",
    "debug_assert", "debug_assert_eq", "debug_assert_ne",
}

# Common safe wrappers that would otherwise look like unresolved unsafe calls
# when used inside an unsafe block.
_SAFE_BUILTINS = {
    "Some", "None", "Ok", "Err", "Box::new", "Vec::new", "String::from",
    "drop", "Default::default",
}

_CTOR_WRAPPERS = {"Option", "Result", "Box", "Rc", "Arc"}

_SCREAMING_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")


@dataclass
class _FnCtx:
    fact: FunctionFact
    raw: RawFn
    owner_path: str | None


class CrateExtractor:
    """Two-phase extraction: parse items crate-wide, then analyze bodies."""

    def __init__(self, crate_root: str | Path) -> None:
        self.root = Path(crate_root)
        self.warnings: list[str] = []
        self.raw_fns: list[RawFn] = []
        self.raw_structs: list[RawStruct] = []
        self.raw_traits: list[tuple[str, str, list[RawFn]]] = []
        self.statics: dict[str, bool] = {}  # full path -> mutable
        self.struct_paths: dict[str, str] = {}  # bare name -> full path (unique)
        self.struct_by_path: dict[str, RawStruct] = {}
        self.trait_paths: dict[str, str] = {}
        self.fields_by_struct: dict[str, dict[str, tuple[str, Visibility]]] = {}
        self.field_writers: dict[str, set[str]] = {}  # field name -> writer fn ids
        self.crate_name = self.root.name or "crate"

    # -- public entry --------------------------------------------------------

    def extract(self) -> CrateFacts:
        if not self.root.exists() or not self.root.is_dir():
            raise RootNotFound(str(self.root))
        files = sorted(p for p in self.root.rglob("*.rs") if p.is_file())
        if not files:
            raise NoSourceFiles(str(self.root))
        for path in files:
            self._parse_file(path)
        facts = self._link()
        self._analyze_bodies(facts)
        facts.functions.sort(key=lambda f: f.id)
        facts.structs.sort(key=lambda s: s.type_path)
        facts.traits.sort(key=lambda t: t.trait_path)
        return facts

    # -- phase A: parse ------------------------------------------------------

    def _module_for(self, path: Path) -> str:
        rel = path.relative_to(self.root)
        parts = list(rel.parts)
        if parts and parts[0] == "src":
            parts = parts[1:]
        stem = Path(parts[-1]).stem if parts else ""
        parts = parts[:-1]
        if stem not in ("lib", "main", "mod"):
            parts.append(stem)
        return "::".join(["crate", *parts]) if parts else "crate"

    def _parse_file(self, path: Path) -> None:
        label = str(path.relative_to(self.root))
        try:
            text = path.read_text(encoding="utf-8")
            toks = tokenize(text)
            module = self._module_for(path)
            parser = FileParser(toks, module, label)
            parser.parse_items(module, len(toks))
        except Exception as exc:  # per-file failures are warnings, never fatal
            self.warnings.append(f"{label}: parse failed: {exc}")
            logger.warning("skipping %s: %s", label, exc)
            return
        self.warnings.extend(parser.warnings)
        self.raw_fns.extend(parser.fns)
        self.raw_structs.extend(parser.structs)
        self.raw_traits.extend(parser.traits)
        for st in parser.statics:
            self.statics[f"{st.module}::{st.name}"] = st.mutable

    # -- phase B: link -------------------------------------------------------

    def _type_path_for(self, module: str, type_text: str) -> str:
        """Resolve an impl/return type name to a declared struct path."""
        name = _head_type_name(type_text)
        if not name:
            return type_text
        local = f"{module}::{name}"
        if local in self.struct_by_path:
            return local
        if name in self.struct_paths:
            return self.struct_paths[name]
        if name in self.trait_paths:
            return self.trait_paths[name]
        return local if "::" not in name else name

    def _link(self) -> CrateFacts:
        for rs in self.raw_structs:
            full = f"{rs.module}::{rs.name}"
            self.struct_by_path[full] = rs
            if rs.name in self.struct_paths:
                self.struct_paths[rs.name] = ""  # ambiguous bare name
            else:
                self.struct_paths[rs.name] = full
            self.fields_by_struct[full] = {
                n: (t, v) for n, t, v in rs.fields
            }
        self.struct_paths = {k: v for k, v in self.struct_paths.items() if v}
        for module, name, _fns in self.raw_traits:
            full = f"{module}::{name}"
            if name in self.trait_paths:
                self.trait_paths[name] = ""
            else:
                self.trait_paths[name] = full
        self.trait_paths = {k: v for k, v in self.trait_paths.items() if v}

        # assign ids
        seen: dict[str, int] = {}
        functions: list[FunctionFact] = []
        for rf in self.raw_fns:
            owner_path: str | None = None
            if rf.in_trait_decl and rf.owner_text:
                owner_path = f"{rf.module}::{rf.owner_text}"
            elif rf.owner_text:
                owner_path = self._type_path_for(rf.module, rf.owner_text)
            base = f"{owner_path}::{rf.name}" if owner_path else f"{rf.module}::{rf.name}"
            n = seen.get(base, 0) + 1
            seen[base] = n
            fid = base if n == 1 else f"{base}#{n}"
            if rf.has_receiver:
                kind = FnKind.DYNAMIC_METHOD
            elif rf.in_trait_decl:
                kind = FnKind.TRAIT_METHOD_DECL
            elif rf.trait_text is not None:
                kind = FnKind.TRAIT_METHOD_IMPL
            elif owner_path:
                kind = FnKind.STATIC_METHOD
            else:
                kind = FnKind.FREE_FUNCTION
            fact = FunctionFact(
                id=fid,
                name=rf.name,
                owner=owner_path,
                kind=kind,
                declared_unsafe=rf.declared_unsafe,
                contains_unsafe_block=False,  # set during body analysis
                visibility=rf.visibility,
                params=list(rf.params),
                returns=rf.returns,
                safety_doc=rf.doc,
            )
            rf.fact = fact
            functions.append(fact)

        structs = [
            StructFact(
                type_path=path,
                fields=list(rs.fields),
                literal_constructible_from=least_visible([v for _, _, v in rs.fields]),
            )
            for path, rs in sorted(self.struct_by_path.items())
        ]
        facts = CrateFacts(
            crate_name=self.crate_name,
            functions=functions,
            structs=structs,
        )
        for s in facts.structs:
            owned = [f for f in functions if f.owner == s.type_path]
            s.constructor_ids = detect_constructors(s, owned)

        # traits: decls, impls, and default-bodied decls as self-impl entries
        for module, name, trait_fns in sorted(
            self.raw_traits, key=lambda t: (t[0], t[1])
        ):
            trait_path = f"{module}::{name}"
            decl_ids = sorted(f.fact.id for f in trait_fns if f.fact)
            decl_by_name = {f.name: f.fact.id for f in trait_fns if f.fact}
            impls: dict[str, dict[str, str]] = {}
            self_impl = {
                f.fact.id: f.fact.id
                for f in trait_fns
                if f.fact and f.body is not None
            }
            if self_impl:
                impls[trait_path] = self_impl
            for rf in self.raw_fns:
                if rf.trait_text is None or rf.in_trait_decl or rf.fact is None:
                    continue
                trait_head = _head_type_name(rf.trait_text)
                if trait_head != name:
                    continue
                decl_id = decl_by_name.get(rf.name)
                if decl_id is None:
                    continue
                type_path = self._type_path_for(rf.module, rf.owner_text or "")
                impls.setdefault(type_path, {})[decl_id] = rf.fact.id
            facts.traits.append(
                TraitFact(
                    trait_path=trait_path,
                    method_decls=decl_ids,
                    impls=sorted(impls.items()),
                )
            )
        return facts

    # -- phase C: bodies -----------------------------------------------------

    def _analyze_bodies(self, facts: CrateFacts) -> None:
        ctxs = [
            _FnCtx(fact=rf.fact, raw=rf, owner_path=rf.fact.owner)
            for rf in self.raw_fns
            if rf.fact is not None and rf.body is not None
        ]
        # pass 1: field writes outside constructors decide ctor-guarantee
        for ctx in ctxs:
            self._collect_field_writes(ctx)
        guaranteed = self._guaranteed_fields(facts)
        # pass 2: call sites
        analyzer = _BodyAnalyzer(self, facts, guaranteed)
        for ctx in ctxs:
            sites, has_unsafe_block = analyzer.analyze(ctx)
            ctx.fact.contains_unsafe_block = has_unsafe_block
            ctx.fact.call_sites = sites

    def _collect_field_writes(self, ctx: _FnCtx) -> None:
        body = ctx.raw.body or []
        assign_ops = {"=", "+=", "-=", "*=", "/=", "%=", "^=", "&=", "|=", "<<=", ">>="}
        for j in range(len(body) - 2):
            if (
                body[j].text == "."
                and body[j + 1].kind == "ident"
                and body[j + 2].text in assign_ops
            ):
                if body[j + 2].text == "=" and j + 3 < len(body) and body[j + 3].text == "=":
                    continue
                self.field_writers.setdefault(body[j + 1].text, set()).add(
                    ctx.fact.id
                )

    def _guaranteed_fields(self, facts: CrateFacts) -> dict[str, set[str]]:
        """Per struct path, fields readable as constructor-established state.

        A field qualifies when it is not public and no function outside the
        owner's constructors assigns to a field of that name.
        """
        ctor_ids = {cid for s in facts.structs for cid in s.constructor_ids}
        out: dict[str, set[str]] = {}
        for s in facts.structs:
            ok: set[str] = set()
            for name, _t, vis in s.fields:
                if vis is Visibility.PUBLIC:
                    continue
                writers = self.field_writers.get(name, set())
                if writers - ctor_ids:
                    continue
                ok.add(name)
            out[s.type_path] = ok
        return out


def _head_type_name(type_text: str) -> str:
    """Last path segment of a type, generics stripped: `a::B<T>` -> `B`."""
    t = type_text.strip()
    t = re.sub(r"^[&*\s]+(mut\s+)?", "", t)
    t = re.sub(r"<.*$", "", t).strip()
    if "::" in t:
        t = t.split("::")[-1].strip()
    m = IDENT_RE.match(t)
    return m.group() if m else ""


def detect_constructors(s: StructFact, fns: list[FunctionFact]) -> list[str]:
    """Static methods of ``s`` returning the owner type, optionally wrapped
    one level in an Option/Result/Box/Rc/Arc. Marks matches is_constructor."""
    owner_name = s.type_path.split("::")[-1]
    out: list[str] = []
    for f in fns:
        if f.kind is not FnKind.STATIC_METHOD:
            continue
        ret = f.returns.strip()
        inner = ret
        m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)\s*<(.*)>$", ret)
        if m and m.group(1) in _CTOR_WRAPPERS:
            inner = _split_generic_args(m.group(2))[0]
        name = _head_type_name(inner)
        if name in ("Self", owner_name):
            f.is_constructor = True
            out.append(f.id)
    return sorted(out)


def _split_generic_args(text: str) -> list[str]:
    parts: list[str] = [""]
    depth = 0
    for ch in text:
        if ch in "<([":
            depth += 1
        elif ch in ">)]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("")
        else:
            parts[-1] += ch
    return [p.strip() for p in parts]


# ---------------------------------------------------------------------------
# Body analysis
# ---------------------------------------------------------------------------


@dataclass
class _ArgInfo:
    has_param: bool = False
    has_global: bool = False
    has_literal: bool = False
    has_field: bool = False
    has_unknown: bool = False
    has_call: bool = False
    fields: set[str] = field(default_factory=set)
    mentions: set[str] = field(default_factory=set)


class _BodyAnalyzer:
    def __init__(
        self,
        extractor: CrateExtractor,
        facts: CrateFacts,
        guaranteed: dict[str, set[str]],
    ) -> None:
        self.x = extractor
        self.facts = facts
        self.guaranteed = guaranteed
        self.fn_index: dict[str, FunctionFact] = {f.id: f for f in facts.functions}
        self.fn_by_bare: dict[str, list[FunctionFact]] = {}
        for f in facts.functions:
            self.fn_by_bare.setdefault(f.name, []).append(f)
        self.trait_by_path: dict[str, TraitFact] = {
            t.trait_path: t for t in facts.traits
        }

    # -- resolution helpers ----------------------------------------------

    def _resolve_path_fn(self, path: str, module: str, owner: str | None) -> FunctionFact | None:
        segs = path.split("::")
        if segs and segs[0] == "Self" and owner:
            segs[0] = owner
            path = "::".join(segs)
            segs = path.split("::")
        if path in self.fn_index:
            return self.fn_index[path]
        candidate = f"{module}::{path}"
        if candidate in self.fn_index:
            return self.fn_index[candidate]
        if len(segs) >= 2:
            type_name, fn_name = segs[-2], segs[-1]
            tp = self.x.struct_paths.get(type_name)
            if tp:
                fid = f"{tp}::{fn_name}"
                if fid in self.fn_index:
                    return self.fn_index[fid]
        if len(segs) == 1:
            hits = [
                f for f in self.fn_by_bare.get(segs[0], []) if f.owner is None
            ]
            if len(hits) == 1:
                return hits[0]
        hits = [
            f for fid, f in self.fn_index.items()
            if fid.endswith("::" + path)
        ]
        if len(hits) == 1:
            return hits[0]
        return None

    def _resolve_static(self, path: str, module: str) -> tuple[str, bool] | None:
        """Return (full path, mutable) for a static/const path, if declared."""
        if path in self.x.statics:
            return path, self.x.statics[path]
        tail = path.split("::")[-1]
        candidates = [
            (p, m) for p, m in self.x.statics.items()
            if p == f"{module}::{tail}" or p.endswith(f"::{tail}")
        ]
        if len(candidates) == 1:
            return candidates[0]
        return None

    def _struct_field_type(self, type_path: str, field_name: str) -> str | None:
        entry = self.x.fields_by_struct.get(type_path, {}).get(field_name)
        return entry[0] if entry else None

    def _resolve_receiver_type(
        self, chain: list[str], ctx: _FnCtx
    ) -> str | None:
        """Type path for receivers like self, self.field, or a typed param."""
        if not chain:
            return None
        root = chain[0]
        if root == "self":
            current = ctx.owner_path
        else:
            ptype = dict(ctx.fact.params).get(root)
            if ptype is None:
                return None
            current = self._type_text_to_path(ptype, ctx)
        for fld in chain[1:]:
            if current is None:
                return None
            ftext = self._struct_field_type(current, fld)
            if ftext is None:
                return None
            current = self._type_text_to_path(ftext, ctx)
        return current

    def _type_text_to_path(self, type_text: str, ctx: _FnCtx) -> str | None:
        name = _head_type_name(type_text)
        if not name:
            return None
        if name == "Self":
            return ctx.owner_path
        local = f"{ctx.raw.module}::{name}"
        if local in self.x.struct_by_path:
            return local
        return self.x.struct_paths.get(name)

    # -- the walk -------------------------------------------------------------

    def analyze(self, ctx: _FnCtx) -> tuple[list[CallSiteFact], bool]:
        toks = ctx.raw.body or []
        fact = ctx.fact
        sites: list[CallSiteFact] = []
        has_unsafe_block = False
        unsafe_depth = 0
        cond_stack: list[tuple[int, set[str]]] = []  # (brace depth at push, idents)
        assert_mentions: set[str] = set()
        locals_map: dict[str, set[str]] = {}
        param_names = {n for n, _ in fact.value_params()}
        depth = 0
        pending_cond: set[str] | None = None
        pending_unsafe = False
        pending_let: tuple[str, int] | None = None  # (name, expr start index)
        deref_counter = 0
        i = 0
        n = len(toks)

        def in_unsafe() -> bool:
            return unsafe_depth > 0 or fact.declared_unsafe

        def dominating() -> set[str]:
            out = set(assert_mentions)
            for _, idents in cond_stack:
                out |= idents
            return out

        while i < n:
            t = toks[i]
            txt = t.text

            if txt == "{":
                depth += 1
                if pending_unsafe:
                    unsafe_depth += 1
                    has_unsafe_block = True
                    cond_stack.append((depth, set()))
                    pending_unsafe = False
                elif pending_cond is not None:
                    cond_stack.append((depth, pending_cond))
                    pending_cond = None
                else:
                    cond_stack.append((depth, set()))
                i += 1
                continue
            if txt == "}":
                if cond_stack and cond_stack[-1][0] == depth:
                    cond_stack.pop()
                # an unsafe scope closes when its brace closes
                if unsafe_depth > 0 and self._unsafe_scope_closes(toks, i, depth):
                    pass
                depth -= 1
                i += 1
                continue

            if txt == "unsafe" and i + 1 < n and toks[i + 1].text == "{":
                # track the span of this unsafe block explicitly
                close = self._match_brace(toks, i + 1)
                pending_unsafe = False
                unsafe_depth += 1
                has_unsafe_block = True
                # record where it ends so we can decrement
                self._unsafe_ends.append((close, depth + 1))
                depth += 1
                cond_stack.append((depth, set()))
                i += 2
                continue

            # close any unsafe blocks ending here
            while self._unsafe_ends and self._unsafe_ends[-1][0] == i:
                self._unsafe_ends.pop()
                unsafe_depth -= 1
            if txt == "}":
                pass

            if txt in ("if", "while"):
                cond_idents: set[str] = set()
                j = i + 1
                if j < n and toks[j].text == "let":
                    j += 1
                cdepth = 0
                while j < n:
                    ct = toks[j]
                    if ct.text == "{" and cdepth == 0:
                        break
                    if ct.text in ("(", "[", "<"):
                        cdepth += 1
                    elif ct.text in (")", "]", ">"):
                        cdepth -= 1
                    if ct.kind == "ident":
                        cond_idents.add(ct.text)
                    j += 1
                pending_cond = cond_idents
                i += 1
                continue

            if txt == "let":
                j = i + 1
                if j < n and toks[j].text == "mut":
                    j += 1
                name = None
                if j < n and toks[j].kind == "ident":
                    name = toks[j].text
                # find `=` at this statement level
                k = j
                d2 = 0
                eq = None
                while k < n:
                    kt = toks[k].text
                    if kt in ("(", "[", "{", "<"):
                        d2 += 1
                    elif kt in (")", "]", "}", ">"):
                        d2 -= 1
                    elif kt == "=" and d2 == 0:
                        eq = k
                        break
                    elif kt == ";" and d2 <= 0:
                        break
                    k += 1
                if name and eq is not None:
                    pending_let = (name, eq + 1)
                i += 1
                continue

            if txt == ";" and pending_let is not None:
                name, start = pending_let
                info = self._arg_info(toks[start:i], ctx, param_names, locals_map)
                locals_map[name] = info.mentions
                pending_let = None
                i += 1
                continue

            if t.kind == "ident":
                # path scan
                path_segs = [txt]
                j = i + 1
                while j + 1 < n and toks[j].text == "::" and toks[j + 1].kind == "ident":
                    path_segs.append(toks[j + 1].text)
                    j += 2
                # skip turbofish
                if j < n and toks[j].text == "::" and j + 1 < n and toks[j + 1].text == "<":
                    j += 1
                    ad = 0
                    while j < n:
                        if toks[j].text == "<":
                            ad += 1
                        elif toks[j].text == ">":
                            ad -= 1
                            if ad == 0:
                                j += 1
                                break
                        elif toks[j].text == ">>":
                            ad -= 2
                            if ad <= 0:
                                j += 1
                                break
                        j += 1
                nxt = toks[j].text if j < n else ""
                prev = toks[i - 1].text if i > 0 else ""
                if prev in (".", "::"):
                    i += 1
                    continue
                path = "::".join(path_segs)
                if nxt == "!":
                    i = self._handle_macro(
                        toks, i, j, path, ctx, param_names, locals_map,
                        assert_mentions,
                    )
                    continue
                if nxt == "(":
                    close = self._match_paren(toks, j)
                    site = self._handle_path_call(
                        path, toks[j + 1:close], ctx, param_names, locals_map,
                        dominating(), in_unsafe(),
                    )
                    if site is not None:
                        sites.append(site)
                    i = j + 1  # walk into the argument list
                    continue
                if nxt == "." and j + 2 < n and toks[j + 1].kind == "ident" \
                        and toks[j + 2].text == "(":
                    # receiver chain: path(.field)*.method(...)
                    chain = list(path_segs)
                    k = j
                    while (
                        k + 2 < n
                        and toks[k].text == "."
                        and toks[k + 1].kind == "ident"
                        and toks[k + 2].text == "("
                    ):
                        # is this the method (last link) or a field hop?
                        chain.append(toks[k + 1].text)
                        k += 2
                        break
                    # extend over intermediate fields: a.b.c.method(
                    chain = list(path_segs)
                    k = j
                    while k + 1 < n and toks[k].text == "." and toks[k + 1].kind == "ident":
                        after = toks[k + 2].text if k + 2 < n else ""
                        chain.append(toks[k + 1].text)
                        k += 2
                        if after == "(":
                            break
                    if k < n and toks[k].text == "(":
                        close = self._match_paren(toks, k)
                        site = self._handle_method_call(
                            chain, toks[k + 1:close], ctx, param_names,
                            locals_map, dominating(), in_unsafe(),
                        )
                        if site is not None:
                            sites.append(site)
                        i = k + 1
                        continue
                    i = j
                    continue
                # bare path expression: static access?
                if in_unsafe() and nxt not in ("(", "{", "!"):
                    site = self._maybe_static_site(path, ctx)
                    if site is not None:
                        sites.append(site)
                i = j
                continue

            if txt == "(" and i > 0 and toks[i - 1].text == ")":
                # (self.field)(...) style callable-field invocation
                open_idx = self._match_back(toks, i - 1)
                inner = toks[open_idx + 1:i - 1]
                site = self._maybe_fn_field_call(
                    inner, toks, i, ctx, param_names, locals_map,
                    dominating(), in_unsafe(),
                )
                if site is not None:
                    sites.append(site)
                i += 1
                continue

            if txt == "*" and in_unsafe() and self._is_prefix_position(toks, i):
                operand = self._deref_operand(toks, i + 1)
                if operand and self._looks_raw(operand, ctx):
                    info = self._arg_info(operand, ctx, param_names, locals_map)
                    flow = self._flow_from_info(info, ctx, dominating())
                    deref_counter += 1
                    sites.append(
                        CallSiteFact(
                            caller_id=ctx.fact.id,
                            callee_ref=CalleeRef(
                                kind=CalleeKind.DIRECT_PATH,
                                path=f"{PSEUDO_DEREF}@{ctx.fact.id}#{deref_counter - 1}",
                            ),
                            callee_is_unsafe=True,
                            inside_unsafe_block=True,
                            arg_flows=[flow],
                        )
                    )
                i += 1
                continue

            i += 1

        return sites, has_unsafe_block

    # analyze() helpers ------------------------------------------------------

    def _unsafe_scope_closes(self, toks: list[Tok], i: int, depth: int) -> bool:
        return False  # handled via _unsafe_ends bookkeeping

    @property
    def _unsafe_ends(self) -> list[tuple[int, int]]:
        if not hasattr(self, "_unsafe_ends_store"):
            self._unsafe_ends_store: list[tuple[int, int]] = []
        return self._unsafe_ends_store

    def _match_brace(self, toks: list[Tok], open_idx: int) -> int:
        depth = 0
        for j in range(open_idx, len(toks)):
            if toks[j].text == "{":
                depth += 1
            elif toks[j].text == "}":
                depth -= 1
                if depth == 0:
                    return j
        return len(toks) - 1

    def _match_paren(self, toks: list[Tok], open_idx: int) -> int:
        depth = 0
        for j in range(open_idx, len(toks)):
            if toks[j].text == "(":
                depth += 1
            elif toks[j].text == ")":
                depth -= 1
                if depth == 0:
                    return j
        return len(toks) - 1

    def _match_back(self, toks: list[Tok], close_idx: int) -> int:
        depth = 0
        for j in range(close_idx, -1, -1):
            if toks[j].text == ")":
                depth += 1
            elif toks[j].text == "(":
                depth -= 1
                if depth == 0:
                    return j
        return 0

    def _is_prefix_position(self, toks: list[Tok], i: int) -> bool:
        if i == 0:
            return True
        prev = toks[i - 1]
        if prev.kind in ("ident", "num", "str", "char"):
            return prev.text in ("return", "mut", "as", "in", "unsafe", "else")
        return prev.text not in (")", "]")

    def _deref_operand(self, toks: list[Tok], start: int) -> list[Tok]:
        if start >= len(toks):
            return []
        if toks[start].text == "(":
            close = self._match_paren(toks, start)
            return toks[start:close + 1]
        j = start
        out: list[Tok] = []
        while j < len(toks):
            t = toks[j]
            if t.kind in ("ident", "num") or t.text in ("::", ".", "self"):
                out.append(t)
                j += 1
                continue
            if t.text == "[":
                depth = 0
                while j < len(toks):
                    out.append(toks[j])
                    if toks[j].text == "[":
                        depth += 1
                    elif toks[j].text == "]":
                        depth -= 1
                        if depth == 0:
                            j += 1
                            break
                    j += 1
                continue
            break
        return out

    def _looks_raw(self, operand: list[Tok], ctx: _FnCtx) -> bool:
        texts = [t.text for t in operand]
        for k, txt in enumerate(texts):
            if txt == "as" and "*" in texts[k + 1:k + 3]:
                return True
        # root identifier typed as a raw pointer?
        root = next((t.text for t in operand if t.kind == "ident"), None)
        if root is None:
            return False
        ptype = dict(ctx.fact.params).get(root, "")
        if "*mut" in squash(ptype) or "*const" in squash(ptype):
            return True
        if root == "self" and ctx.owner_path:
            fields = self.x.fields_by_struct.get(ctx.owner_path, {})
            for t in operand:
                if t.kind == "ident" and t.text in fields:
                    ftype = squash(fields[t.text][0])
                    if "*mut" in ftype or "*const" in ftype:
                        return True
        return False

    def _handle_macro(
        self,
        toks: list[Tok],
        i: int,
        bang_idx: int,
        path: str,
        ctx: _FnCtx,
        param_names: set[str],
        locals_map: dict[str, set[str]],
        assert_mentions: set[str],
    ) -> int:
        name = path.split("::")[-1]
        j = bang_idx + 1
        if j >= len(toks) or toks[j].text not in ("(", "[", "{"):
            return j
        opener = toks[j].text
        closer = {"(": ")", "[": "]", "{": "}"}[opener]
        depth = 0
        k = j
        while k < len(toks):
            if toks[k].text == opener:
                depth += 1
            elif toks[k].text == closer:
                depth -= 1
                if depth == 0:
                    break
            k += 1
        if name in _ASSERT_MACROS:
            for t in toks[j + 1:k]:
                if t.kind == "ident":
                    assert_mentions.add(t.text)
        # macro bodies are unexpanded: no call sites inside them
        return k + 1

    def _handle_path_call(
        self,
        path: str,
        arg_toks: list[Tok],
        ctx: _FnCtx,
        param_names: set[str],
        locals_map: dict[str, set[str]],
        dominating: set[str],
        in_unsafe: bool,
    ) -> CallSiteFact | None:
        segs = path.split("::")
        # struct literal / tuple-struct construction is not a call
        head = segs[0]
        if head == "Self" and len(segs) == 1:
            return None
        if len(segs) == 1 and (head in self.x.struct_paths or
                               f"{ctx.raw.module}::{head}" in self.x.struct_by_path):
            return None
        if path in _SAFE_BUILTINS or head in _SAFE_BUILTINS:
            return None
        # function-parameter callee: param of fn type
        if len(segs) == 1:
            ptype = dict(ctx.fact.params).get(head)
            if ptype and "fn" in re.findall(r"[A-Za-z_]+", ptype):
                sig = ptype
                unsafe_sig = "unsafe" in sig
                if not unsafe_sig:
                    return None
                args = _split_top_level(arg_toks, ",")
                flows = self._flows_for_args(args, ctx, param_names, locals_map, dominating)
                return CallSiteFact(
                    caller_id=ctx.fact.id,
                    callee_ref=CalleeRef(
                        kind=CalleeKind.FUNCTION_PARAM,
                        param=head,
                        signature=sig,
                    ),
                    callee_is_unsafe=True,
                    inside_unsafe_block=in_unsafe,
                    arg_flows=flows,
                )
        # generic parameter bounded by a trait: T::method(...)
        if len(segs) >= 2 and segs[0] in ctx.raw.bounds:
            bound = ctx.raw.bounds[segs[0]]
            return self._trait_generic_site(
                bound, segs[-1], arg_toks, ctx, param_names, locals_map,
                dominating, in_unsafe,
            )
        # trait-qualified call: Trait::method(...)
        if len(segs) >= 2:
            head_path = "::".join(segs[:-1])
            trait_path = self.x.trait_paths.get(_head_type_name(head_path))
            if trait_path:
                return self._trait_generic_site(
                    trait_path, segs[-1], arg_toks, ctx, param_names,
                    locals_map, dominating, in_unsafe,
                )
        resolved = self._resolve_path_fn(path, ctx.raw.module, ctx.owner_path)
        if resolved is not None:
            if not resolved.declared_unsafe:
                return None
            args = _split_top_level(arg_toks, ",")
            flows = self._flows_for_args(args, ctx, param_names, locals_map, dominating)
            return CallSiteFact(
                caller_id=ctx.fact.id,
                callee_ref=CalleeRef(kind=CalleeKind.DIRECT_PATH, path=resolved.id),
                callee_is_unsafe=True,
                inside_unsafe_block=in_unsafe,
                arg_flows=flows,
            )
        # tuple-struct construction through a resolvable struct path
        if self.x.struct_paths.get(_head_type_name(path)) and len(segs) == 1:
            return None
        if not in_unsafe:
            return None
        # unresolved free-path call inside an unsafe region: assume unsafe
        args = _split_top_level(arg_toks, ",")
        flows = self._flows_for_args(args, ctx, param_names, locals_map, dominating)
        return CallSiteFact(
            caller_id=ctx.fact.id,
            callee_ref=CalleeRef(kind=CalleeKind.DIRECT_PATH, path=path),
            callee_is_unsafe=True,
            inside_unsafe_block=True,
            arg_flows=flows,
        )

    def _trait_generic_site(
        self,
        trait_ref: str,
        method: str,
        arg_toks: list[Tok],
        ctx: _FnCtx,
        param_names: set[str],
        locals_map: dict[str, set[str]],
        dominating: set[str],
        in_unsafe: bool,
    ) -> CallSiteFact | None:
        trait_path = self.x.trait_paths.get(_head_type_name(trait_ref), trait_ref)
        trait = self.trait_by_path.get(trait_path)
        is_unsafe = in_unsafe
        if trait is not None:
            for decl_id in trait.method_decls:
                decl = self.fn_index.get(decl_id)
                if decl is not None and decl.name == method:
                    is_unsafe = decl.declared_unsafe
                    break
        if not is_unsafe:
            return None
        args = _split_top_level(arg_toks, ",")
        flows = self._flows_for_args(args, ctx, param_names, locals_map, dominating)
        if trait is None:
            # unknown trait: record as an external direct path
            return CallSiteFact(
                caller_id=ctx.fact.id,
                callee_ref=CalleeRef(
                    kind=CalleeKind.DIRECT_PATH,
                    path=f"{trait_ref}::{method}",
                ),
                callee_is_unsafe=True,
                inside_unsafe_block=in_unsafe,
                arg_flows=flows,
            )
        return CallSiteFact(
            caller_id=ctx.fact.id,
            callee_ref=CalleeRef(
                kind=CalleeKind.TRAIT_GENERIC_METHOD,
                trait_path=trait_path,
                method=method,
            ),
            callee_is_unsafe=True,
            inside_unsafe_block=in_unsafe,
            arg_flows=flows,
        )

    def _handle_method_call(
        self,
        chain: list[str],
        arg_toks: list[Tok],
        ctx: _FnCtx,
        param_names: set[str],
        locals_map: dict[str, set[str]],
        dominating: set[str],
        in_unsafe: bool,
    ) -> CallSiteFact | None:
        *receiver, method = chain
        recv_type = self._resolve_receiver_type(receiver, ctx)
        resolved: FunctionFact | None = None
        if recv_type:
            resolved = self.fn_index.get(f"{recv_type}::{method}")
        if resolved is None and len(receiver) == 1 and receiver[0] in ctx.raw.bounds:
            return self._trait_generic_site(
                ctx.raw.bounds[receiver[0]], method, arg_toks, ctx,
                param_names, locals_map, dominating, in_unsafe,
            )
        if resolved is None or not resolved.declared_unsafe:
            # unresolved or safe method calls are not unsafe call sites
            return None
        args = _split_top_level(arg_toks, ",")
        flows = self._flows_for_args(args, ctx, param_names, locals_map, dominating)
        return CallSiteFact(
            caller_id=ctx.fact.id,
            callee_ref=CalleeRef(kind=CalleeKind.DIRECT_PATH, path=resolved.id),
            callee_is_unsafe=True,
            inside_unsafe_block=in_unsafe,
            arg_flows=flows,
        )

    def _maybe_fn_field_call(
        self,
        inner: list[Tok],
        toks: list[Tok],
        call_open: int,
        ctx: _FnCtx,
        param_names: set[str],
        locals_map: dict[str, set[str]],
        dominating: set[str],
        in_unsafe: bool,
    ) -> CallSiteFact | None:
        texts = [t.text for t in inner]
        if len(texts) == 3 and texts[0] == "self" and texts[1] == ".":
            fname = texts[2]
            if ctx.owner_path is None:
                return None
            ftype = self._struct_field_type(ctx.owner_path, fname)
            if ftype is None or "fn" not in re.findall(r"[A-Za-z_]+", ftype):
                return None
            if "unsafe" not in ftype:
                return None
            close = self._match_paren(toks, call_open)
            args = _split_top_level(toks[call_open + 1:close], ",")
            flows = self._flows_for_args(args, ctx, param_names, locals_map, dominating)
            return CallSiteFact(
                caller_id=ctx.fact.id,
                callee_ref=CalleeRef(
                    kind=CalleeKind.FUNCTION_PARAM,
                    param=fname,
                    signature=ftype,
                ),
                callee_is_unsafe=True,
                inside_unsafe_block=in_unsafe,
                arg_flows=flows,
            )
        return None

    def _maybe_static_site(self, path: str, ctx: _FnCtx) -> CallSiteFact | None:
        resolved = self._resolve_static(path, ctx.raw.module)
        if resolved is not None:
            full, mutable = resolved
            if not mutable:
                return None
            return CallSiteFact(
                caller_id=ctx.fact.id,
                callee_ref=CalleeRef(
                    kind=CalleeKind.DIRECT_PATH,
                    path=f"{PSEUDO_STATIC_MUT}{full}>",
                ),
                callee_is_unsafe=True,
                inside_unsafe_block=True,
                arg_flows=[],
            )
        segs = path.split("::")
        if len(segs) >= 2 and _SCREAMING_RE.match(segs[-1]) and len(segs[-1]) > 1:
            return CallSiteFact(
                caller_id=ctx.fact.id,
                callee_ref=CalleeRef(
                    kind=CalleeKind.DIRECT_PATH,
                    path=f"{PSEUDO_STATIC_MUT}{path}>",
                ),
                callee_is_unsafe=True,
                inside_unsafe_block=True,
                arg_flows=[],
            )
        return None

    # -- argument classification -----------------------------------------

    def _flows_for_args(
        self,
        args: list[list[Tok]],
        ctx: _FnCtx,
        param_names: set[str],
        locals_map: dict[str, set[str]],
        dominating: set[str],
    ) -> list[ArgFlow]:
        flows: list[ArgFlow] = []
        for arg in args:
            if not arg:
                continue
            info = self._arg_info(arg, ctx, param_names, locals_map)
            flows.append(self._flow_from_info(info, ctx, dominating))
        return flows

    def _arg_info(
        self,
        toks: list[Tok],
        ctx: _FnCtx,
        param_names: set[str],
        locals_map: dict[str, set[str]],
    ) -> _ArgInfo:
        info = _ArgInfo()
        n = len(toks)
        i = 0
        while i < n:
            t = toks[i]
            if t.kind in ("num", "str", "char") or t.text in ("true", "false"):
                info.has_literal = True
                i += 1
                continue
            if t.text == "as":
                # the cast target is a type, not a value
                i += 1
                depth = 0
                while i < n:
                    txt = toks[i].text
                    if txt in ("<", "(", "["):
                        depth += 1
                    elif txt in (">", ")", "]"):
                        if depth == 0:
                            break
                        depth -= 1
                    elif depth == 0 and txt in (",", "+", "-", "/", "%", ";"):
                        break
                    elif depth == 0 and txt == "*" and i + 1 < n and \
                            toks[i + 1].text not in ("mut", "const"):
                        break
                    i += 1
                continue
            if t.kind != "ident":
                i += 1
                continue
            # path scan
            segs = [t.text]
            j = i + 1
            while j + 1 < n and toks[j].text == "::" and toks[j + 1].kind == "ident":
                segs.append(toks[j + 1].text)
                j += 2
            nxt = toks[j].text if j < n else ""
            prev = toks[i - 1].text if i > 0 else ""
            path = "::".join(segs)
            if prev == ".":
                i += 1
                continue
            if nxt == "!":
                i = j + 1
                continue
            if nxt == "(":
                info.has_call = True
                i = j + 1
                continue
            if segs[0] == "self":
                # receiver field chain
                k = j
                got_field = False
                while k + 1 < n and toks[k].text == "." and toks[k + 1].kind == "ident":
                    after = toks[k + 2].text if k + 2 < n else ""
                    if after == "(":
                        info.has_call = True
                        break
                    info.has_field = True
                    info.fields.add(toks[k + 1].text)
                    info.mentions.add(toks[k + 1].text)
                    got_field = True
                    k += 2
                if not got_field:
                    info.has_field = True
                i = max(k, j)
                if i == j and nxt != ".":
                    i = j
                i = max(i, j)
                if i <= j:
                    i = j
                continue
            static = self._resolve_static(path, ctx.raw.module)
            if static is not None or (
                len(segs) >= 2 and _SCREAMING_RE.match(segs[-1])
            ):
                info.has_global = True
                info.mentions.add(segs[-1])
                i = j
                continue
            name = segs[0]
            if len(segs) == 1:
                if name in param_names:
                    info.has_param = True
                    info.mentions.add(name)
                elif name in locals_map:
                    sub = locals_map[name]
                    info.mentions |= sub
                    info.mentions.add(name)
                    if sub & param_names:
                        info.has_param = True
                    if not sub:
                        info.has_call = True  # local from a pure call chain
                elif _SCREAMING_RE.match(name):
                    info.has_global = True
                    info.mentions.add(name)
                else:
                    info.has_unknown = True
                    info.mentions.add(name)
            else:
                info.has_unknown = True
                info.mentions.add(segs[-1])
            i = j
        return info

    def _flow_from_info(
        self, info: _ArgInfo, ctx: _FnCtx, dominating: set[str]
    ) -> ArgFlow:
        validated = bool(info.mentions & dominating)
        source = ArgSource.LOCAL_COMPUTED
        guaranteed = self.guaranteed.get(ctx.owner_path or "", set())
        if info.has_global:
            source = ArgSource.GLOBAL_OR_STATIC_VAR
        elif info.has_literal and not (
            info.has_param or info.has_field or info.has_call or info.has_unknown
        ):
            source = ArgSource.HARDCODED_LITERAL
        elif info.has_call and not (
            info.has_param or info.has_field or info.has_unknown
        ):
            source = ArgSource.FIXED_VALUE_FN
        elif info.has_param:
            source = ArgSource.CALLER_PARAM
        elif (
            info.has_field
            and not info.has_unknown
            and info.fields
            and info.fields <= guaranteed
        ):
            # constructor-established receiver state reads like a fixed global
            source = ArgSource.GLOBAL_OR_STATIC_VAR
        return ArgFlow(source=source, validated_by_branch_or_assert=validated)


def extract_facts(crate_root: str | Path) -> CrateFacts:
    """Parse a crate tree into CrateFacts. Deterministic for identical trees."""
    extractor = CrateExtractor(crate_root)
    facts = extractor.extract()
    for w in extractor.warnings:
        logger.warning("%s", w)
    return facts
