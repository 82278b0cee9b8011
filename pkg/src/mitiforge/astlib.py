"""Function-level parser and vulnerable-call context slicing.

Supports a statement-level subset of a class-based, curly-brace language:
declarations, assignments, method invocations, returns, throws, and
if/for/while/do/try blocks. The slicer collects statements that feed the
arguments of the vulnerable call or consume its result, aligned by line.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NoCallSite, ParseError

_MULTI_OPS = [
    ">>>=", "<<=", ">>=", ">>>", "==", "!=", "<=", ">=", "&&", "||", "++", "--",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "->", "::",
]
_SINGLE_OPS = set("+-*/%=<>!&|^~?:;,.(){}[]@")

_MODIFIERS = {
    "public", "private", "protected", "static", "final", "synchronized",
    "abstract", "native", "transient", "volatile", "strictfp", "default",
}

_BINARY_OPS = {
    "+", "-", "*", "/", "%", "<", ">", "<=", ">=", "==", "!=",
    "&&", "||", "&", "|", "^", "<<", ">>", ">>>",
}

_ASSIGN_OPS = {"=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>="}

_LITERAL_WORDS = {"true", "false", "null", "this", "super"}


@dataclass(frozen=True)
class Token:
    type: str  # IDENT, NUMBER, STRING, OP
    value: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    line = 1
    line_start = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            i += 1
            line_start = i
            continue
        if ch in " \t\r":
            i += 1
            continue
        col = i - line_start + 1
        if text.startswith("//", i):
            j = text.find("\n", i)
            i = n if j < 0 else j
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise ParseError("unterminated comment", line, col)
            line += text.count("\n", i, j)
            nl = text.rfind("\n", i, j + 2)
            if nl >= 0:
                line_start = nl + 1
            i = j + 2
            continue
        if ch.isalpha() or ch == "_" or ch == "$":
            m = re.match(r"[A-Za-z_$][A-Za-z0-9_$]*", text[i:])
            word = m.group(0)
            tokens.append(Token("IDENT", word, line, col))
            i += len(word)
            continue
        if ch.isdigit():
            m = re.match(r"\d[\dA-Za-z_.]*", text[i:])
            tokens.append(Token("NUMBER", m.group(0), line, col))
            i += len(m.group(0))
            continue
        if ch in "\"'":
            quote = ch
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == quote:
                    break
                if text[j] == "\n":
                    raise ParseError("unterminated string literal", line, col)
                j += 1
            if j >= n:
                raise ParseError("unterminated string literal", line, col)
            tokens.append(Token("STRING", text[i : j + 1], line, col))
            i = j + 1
            continue
        matched = False
        for op in _MULTI_OPS:
            if text.startswith(op, i):
                tokens.append(Token("OP", op, line, col))
                i += len(op)
                matched = True
                break
        if matched:
            continue
        if ch in _SINGLE_OPS:
            tokens.append(Token("OP", ch, line, col))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    return tokens


@dataclass
class Invocation:
    """One call expression: method name, best-effort receiver, argument uses."""

    method: str
    receiver: str | None
    line: int
    col: int
    arg_uses: list[set[str]] = field(default_factory=list)
    nested: list["Invocation"] = field(default_factory=list)

    def all_invocations(self) -> list["Invocation"]:
        out = [self]
        for inv in self.nested:
            out.extend(inv.all_invocations())
        return out


@dataclass
class ExprInfo:
    uses: set[str] = field(default_factory=set)
    invocations: list[Invocation] = field(default_factory=list)
    name_path: str | None = None
    is_call: bool = False

    def merge(self, other: "ExprInfo") -> None:
        self.uses |= other.uses
        self.invocations.extend(other.invocations)

    def all_invocations(self) -> list[Invocation]:
        out: list[Invocation] = []
        for inv in self.invocations:
            out.extend(inv.all_invocations())
        return out


COMPOUND_KINDS = {"Block", "If", "Loop", "Try"}


@dataclass
class Node:
    kind: str  # MethodInvocation, Assignment, VariableDeclaration, ReturnStatement, Block, If, Loop, Try, Other
    start_line: int
    end_line: int
    head_end_line: int  # for compound nodes: last line of the header/condition
    children: list["Node"] = field(default_factory=list)
    defs: set[str] = field(default_factory=set)
    uses: set[str] = field(default_factory=set)
    invocations: list[Invocation] = field(default_factory=list)
    name: str | None = None

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def all_invocations(self) -> list[Invocation]:
        out: list[Invocation] = []
        for inv in self.invocations:
            out.extend(inv.all_invocations())
        return out

    def slice_lines(self) -> range:
        if self.kind in COMPOUND_KINDS:
            return range(self.start_line, self.head_end_line + 1)
        return range(self.start_line, self.end_line + 1)


@dataclass
class FunctionAst:
    name: str
    params: list[str]
    root: Node
    source_text: str

    def nodes(self) -> list[Node]:
        return list(self.root.walk())

    @property
    def line_count(self) -> int:
        return len(self.source_text.splitlines())


@dataclass(frozen=True)
class VulnerableApi:
    method_name: str
    type_or_receiver: str | None = None

    @classmethod
    def parse(cls, spec: str) -> "VulnerableApi":
        """Parse "receiver.method" or bare "method"."""
        if "." in spec:
            receiver, method = spec.rsplit(".", 1)
            return cls(method_name=method, type_or_receiver=receiver)
        return cls(method_name=spec)


@dataclass(frozen=True)
class Dependency:
    group: str
    artifact: str
    version: str

    @classmethod
    def parse(cls, spec: str) -> "Dependency":
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"dependency must be group:artifact:version, got {spec!r}")
        return cls(*parts)


@dataclass
class ImpactedFunction:
    file_path: str
    function_name: str
    source_text: str
    vulnerable_api: VulnerableApi
    dependency: Dependency


@dataclass
class ContextSlice:
    lines: list[int]
    call_sites: list[tuple[int, int]]
    slice_text: str

    def to_dict(self) -> dict:
        return {
            "lines": self.lines,
            "call_sites": [{"line": l, "col": c} for l, c in self.call_sites],
            "slice_text": self.slice_text,
        }


class _ParseFail(Exception):
    """Internal backtracking signal; never escapes the parser."""


class _Parser:
    def __init__(self, tokens: list[Token], text: str) -> None:
        self.tokens = tokens
        self.text = text
        self.pos = 0

    # -- token helpers -------------------------------------------------

    def peek(self, offset: int = 0) -> Token | None:
        i = self.pos + offset
        return self.tokens[i] if i < len(self.tokens) else None

    def at(self, value: str) -> bool:
        t = self.peek()
        return t is not None and t.value == value

    def advance(self) -> Token:
        t = self.peek()
        if t is None:
            last = self.tokens[-1] if self.tokens else Token("OP", "", 1, 1)
            raise ParseError("unexpected end of input", last.line, last.col)
        self.pos += 1
        return t

    def expect(self, value: str) -> Token:
        t = self.peek()
        if t is None or t.value != value:
            if t is None:
                last = self.tokens[-1] if self.tokens else Token("OP", "", 1, 1)
                raise ParseError(f"expected {value!r}, found end of input", last.line, last.col)
            raise ParseError(f"expected {value!r}, found {t.value!r}", t.line, t.col)
        return self.advance()

    def error(self, message: str) -> ParseError:
        t = self.peek()
        if t is None:
            last = self.tokens[-1] if self.tokens else Token("OP", "", 1, 1)
            return ParseError(message, last.line, last.col)
        return ParseError(message, t.line, t.col)

    # -- declarations --------------------------------------------------

    def parse_function(self) -> FunctionAst:
        while self.at("@"):  # annotations
            self.advance()
            self.expect_ident()
            if self.at("("):
                self.skip_balanced("(", ")")
        while True:
            t = self.peek()
            if t is not None and t.type == "IDENT" and t.value in _MODIFIERS:
                self.advance()
            else:
                break
        start = self.peek()
        if start is None:
            raise ParseError("empty input", 1, 1)
        self.parse_type_strict()
        name_tok = self.expect_ident()
        self.expect("(")
        params: list[str] = []
        if not self.at(")"):
            while True:
                if self.at("final"):
                    self.advance()
                self.parse_type_strict()
                params.append(self.expect_ident().value)
                if self.at(","):
                    self.advance()
                    continue
                break
        self.expect(")")
        if self.at("throws"):
            self.advance()
            self.parse_type_strict()
            while self.at(","):
                self.advance()
                self.parse_type_strict()
        body = self.parse_block()
        if self.peek() is not None:
            raise self.error("trailing content after function body")
        # The root is a compound node: parameters are defined on the signature
        # line, which the slice always carries anyway.
        root = Node(
            kind="Block",
            start_line=start.line,
            end_line=body.end_line,
            head_end_line=start.line,
            children=[body],
            defs=set(params),
            name=name_tok.value,
        )
        return FunctionAst(name=name_tok.value, params=params, root=root, source_text=self.text)

    def expect_ident(self) -> Token:
        t = self.peek()
        if t is None or t.type != "IDENT":
            raise self.error("expected identifier")
        return self.advance()

    def skip_balanced(self, open_tok: str, close_tok: str) -> None:
        self.expect(open_tok)
        depth = 1
        while depth:
            t = self.advance()
            if t.value == open_tok:
                depth += 1
            elif t.value == close_tok:
                depth -= 1

    def parse_type_strict(self) -> str:
        """Qualified name with optional generics and array suffixes; raises on failure."""
        parts = [self.expect_ident().value]
        while self.at(".") and self.peek(1) is not None and self.peek(1).type == "IDENT":
            self.advance()
            parts.append(self.expect_ident().value)
        if self.at("<"):
            self._skip_generic_args()
        while self.at("[") and self.peek(1) is not None and self.peek(1).value == "]":
            self.advance()
            self.advance()
        return ".".join(parts)

    def _skip_generic_args(self) -> None:
        self.expect("<")
        depth = 1
        allowed = {",", ".", "?", "extends", "super", "[", "]"}
        while depth:
            t = self.peek()
            if t is None:
                raise self.error("unterminated generic arguments")
            if t.value == "<":
                depth += 1
            elif t.value == ">":
                depth -= 1
            elif t.value == ">>":
                depth -= 2
            elif t.value == ">>>":
                depth -= 3
            elif t.type not in ("IDENT",) and t.value not in allowed:
                raise _ParseFail()
            if depth < 0:
                raise _ParseFail()
            self.advance()

    # -- statements ----------------------------------------------------

    def parse_block(self) -> Node:
        open_tok = self.expect("{")
        children = []
        while not self.at("}"):
            if self.peek() is None:
                raise ParseError("unbalanced braces", open_tok.line, open_tok.col)
            children.append(self.parse_stmt())
        close = self.expect("}")
        return Node(
            kind="Block",
            start_line=open_tok.line,
            end_line=close.line,
            head_end_line=open_tok.line,
            children=children,
        )

    def parse_stmt(self) -> Node:
        t = self.peek()
        if t is None:
            raise self.error("expected statement")
        if t.value == "{":
            return self.parse_block()
        if t.value == ";":
            self.advance()
            return Node("Other", t.line, t.line, t.line)
        if t.type == "IDENT":
            handler = {
                "return": self._parse_return,
                "throw": self._parse_throw,
                "if": self._parse_if,
                "while": self._parse_while,
                "do": self._parse_do,
                "for": self._parse_for,
                "try": self._parse_try,
                "break": self._parse_jump,
                "continue": self._parse_jump,
            }.get(t.value)
            if handler is not None:
                return handler()
        return self._parse_decl_or_expr()

    def _parse_return(self) -> Node:
        t = self.expect("return")
        info = ExprInfo()
        if not self.at(";"):
            info = self.parse_expression()
        end = self.expect(";")
        return Node(
            "ReturnStatement", t.line, end.line, end.line,
            uses=info.uses, invocations=info.invocations,
        )

    def _parse_throw(self) -> Node:
        t = self.expect("throw")
        info = self.parse_expression()
        end = self.expect(";")
        return Node("Other", t.line, end.line, end.line, uses=info.uses, invocations=info.invocations)

    def _parse_jump(self) -> Node:
        t = self.advance()
        if self.peek() is not None and self.peek().type == "IDENT":
            self.advance()
        end = self.expect(";")
        return Node("Other", t.line, end.line, end.line)

    def _parse_if(self) -> Node:
        t = self.expect("if")
        self.expect("(")
        cond = self.parse_expression()
        close = self.expect(")")
        children = [self.parse_stmt()]
        if self.at("else"):
            self.advance()
            children.append(self.parse_stmt())
        end_line = children[-1].end_line
        return Node(
            "If", t.line, end_line, close.line,
            children=children, uses=cond.uses, invocations=cond.invocations,
        )

    def _parse_while(self) -> Node:
        t = self.expect("while")
        self.expect("(")
        cond = self.parse_expression()
        close = self.expect(")")
        body = self.parse_stmt()
        return Node(
            "Loop", t.line, body.end_line, close.line,
            children=[body], uses=cond.uses, invocations=cond.invocations,
        )

    def _parse_do(self) -> Node:
        t = self.expect("do")
        body = self.parse_stmt()
        self.expect("while")
        self.expect("(")
        cond = self.parse_expression()
        self.expect(")")
        end = self.expect(";")
        return Node(
            "Loop", t.line, end.line, t.line,
            children=[body], uses=cond.uses, invocations=cond.invocations,
        )

    def _parse_for(self) -> Node:
        t = self.expect("for")
        self.expect("(")
        saved = self.pos
        # for-each: [final] Type name : expr
        try:
            if self.at("final"):
                self.advance()
            self.parse_type_strict()
            var = self.expect_ident().value
            if not self.at(":"):
                raise _ParseFail()
            self.advance()
            iterable = self.parse_expression()
            close = self.expect(")")
            body = self.parse_stmt()
            return Node(
                "Loop", t.line, body.end_line, close.line,
                children=[body], defs={var},
                uses=iterable.uses, invocations=iterable.invocations,
            )
        except (_ParseFail, ParseError):
            self.pos = saved
        children: list[Node] = []
        uses: set[str] = set()
        invocations: list[Invocation] = []
        defs: set[str] = set()
        if self.at(";"):
            self.advance()
        else:
            init = self._parse_decl_or_expr()
            children.append(init)
            defs |= init.defs
        if not self.at(";"):
            cond = self.parse_expression()
            uses |= cond.uses
            invocations.extend(cond.invocations)
        self.expect(";")
        while not self.at(")"):
            update = self._parse_expr_no_semi()
            uses |= update.uses
            invocations.extend(update.invocations)
            if self.at(","):
                self.advance()
        close = self.expect(")")
        body = self.parse_stmt()
        children.append(body)
        return Node(
            "Loop", t.line, body.end_line, close.line,
            children=children, defs=defs, uses=uses, invocations=invocations,
        )

    def _parse_try(self) -> Node:
        t = self.expect("try")
        children = [self.parse_block()]
        defs: set[str] = set()
        saw_handler = False
        while self.at("catch"):
            saw_handler = True
            self.advance()
            self.expect("(")
            if self.at("final"):
                self.advance()
            self.parse_type_strict()
            while self.at("|"):
                self.advance()
                self.parse_type_strict()
            defs.add(self.expect_ident().value)
            self.expect(")")
            children.append(self.parse_block())
        if self.at("finally"):
            saw_handler = True
            self.advance()
            children.append(self.parse_block())
        if not saw_handler:
            raise self.error("try without catch or finally")
        return Node(
            "Try", t.line, children[-1].end_line, t.line,
            children=children, defs=defs,
        )

    def _parse_decl_or_expr(self) -> Node:
        saved = self.pos
        try:
            return self._parse_declaration()
        except (_ParseFail, ParseError):
            self.pos = saved
        node = self._parse_expr_statement_node()
        self.expect(";")
        return node

    def _parse_declaration(self) -> Node:
        start = self.peek()
        if self.at("final"):
            self.advance()
        self.parse_type_strict()
        first = self.peek()
        if first is None or first.type != "IDENT":
            raise _ParseFail()
        nxt = self.peek(1)
        if nxt is None or nxt.value not in ("=", ";", ","):
            raise _ParseFail()
        defs: set[str] = set()
        uses: set[str] = set()
        invocations: list[Invocation] = []
        while True:
            name = self.expect_ident().value
            defs.add(name)
            if self.at("="):
                self.advance()
                init = self.parse_expression()
                uses |= init.uses
                invocations.extend(init.invocations)
            if self.at(","):
                self.advance()
                continue
            break
        end = self.expect(";")
        return Node(
            "VariableDeclaration", start.line, end.line, end.line,
            defs=defs, uses=uses, invocations=invocations, name=sorted(defs)[0],
        )

    def _parse_expr_no_semi(self) -> "ExprInfo":
        """Expression or assignment used inside a for-update clause."""
        lhs = self.parse_expression()
        t = self.peek()
        if t is not None and t.value in _ASSIGN_OPS:
            self.advance()
            rhs = self.parse_expression()
            lhs.merge(rhs)
        return lhs

    def _parse_expr_statement_node(self) -> Node:
        start = self.peek()
        lhs = self.parse_expression()
        t = self.peek()
        if t is not None and t.value in _ASSIGN_OPS:
            if lhs.name_path is None:
                raise self.error("assignment target must be a name")
            self.advance()
            rhs = self.parse_expression()
            end_tok = self.tokens[self.pos - 1]
            # Name-lexical tracing: a field target like a.b defines its base name.
            target = lhs.name_path.split(".")[0]
            uses = set(rhs.uses)
            if t.value != "=":
                uses.add(target)
            return Node(
                "Assignment", start.line, end_tok.line, end_tok.line,
                defs={target}, uses=uses, invocations=list(rhs.invocations),
                name=target,
            )
        end_tok = self.tokens[self.pos - 1]
        kind = "MethodInvocation" if lhs.is_call else "Other"
        return Node(
            kind, start.line, end_tok.line, end_tok.line,
            uses=lhs.uses, invocations=lhs.invocations,
        )

    # -- expressions ---------------------------------------------------

    def parse_expression(self) -> ExprInfo:
        info = self._parse_binary()
        if self.at("?"):
            self.advance()
            then = self.parse_expression()
            self.expect(":")
            other = self.parse_expression()
            info.merge(then)
            info.merge(other)
            info.name_path = None
            info.is_call = False
        return info

    def _parse_binary(self) -> ExprInfo:
        info = self._parse_unary()
        while True:
            t = self.peek()
            if t is None:
                break
            if t.value == "instanceof":
                self.advance()
                self.parse_type_strict()
                info.name_path = None
                info.is_call = False
                continue
            if t.value in _BINARY_OPS:
                self.advance()
                rhs = self._parse_unary()
                info.merge(rhs)
                info.name_path = None
                info.is_call = False
                continue
            break
        return info

    def _parse_unary(self) -> ExprInfo:
        t = self.peek()
        if t is not None and t.value in ("!", "-", "+", "~", "++", "--"):
            self.advance()
            return self._parse_unary()
        return self._parse_postfix()

    def _parse_postfix(self) -> ExprInfo:
        info, chain = self._parse_primary()
        pending_member: str | None = None
        while True:
            t = self.peek()
            if t is None:
                break
            if t.value == "." and self.peek(1) is not None and self.peek(1).type == "IDENT":
                self.advance()
                member = self.advance()
                if chain is not None:
                    chain.append((member.value, member.line, member.col))
                else:
                    pending_member = member.value
                    self._pending_tok = member
                continue
            if t.value == "(":
                if chain is not None:
                    method, line, col = chain[-1]
                    receiver = ".".join(seg for seg, _, _ in chain[:-1]) or None
                    if len(chain) >= 2:
                        info.uses.add(chain[0][0])
                elif pending_member is not None:
                    method = pending_member
                    line, col = self._pending_tok.line, self._pending_tok.col
                    receiver = None
                else:
                    raise self.error("call on non-invocable expression")
                args = self._parse_call_args()
                inv = Invocation(
                    method=method, receiver=receiver, line=line, col=col,
                    arg_uses=[a.uses for a in args],
                    nested=[i for a in args for i in a.invocations],
                )
                for a in args:
                    info.uses |= a.uses
                info.invocations.append(inv)
                chain = None
                pending_member = None
                info.name_path = None
                info.is_call = True
                continue
            if t.value == "[":
                if chain is not None:
                    info.uses.add(chain[0][0])
                    chain = None
                self.advance()
                index = self.parse_expression()
                self.expect("]")
                info.merge(index)
                info.name_path = None
                info.is_call = False
                continue
            if t.value in ("++", "--"):
                self.advance()
                if chain is not None:
                    info.uses.add(chain[0][0])
                    chain = None
                info.is_call = False
                continue
            break
        if chain is not None:
            info.uses.add(chain[0][0])
            info.name_path = ".".join(seg for seg, _, _ in chain)
        return info

    def _parse_call_args(self) -> list[ExprInfo]:
        self.expect("(")
        args: list[ExprInfo] = []
        if not self.at(")"):
            while True:
                args.append(self.parse_expression())
                if self.at(","):
                    self.advance()
                    continue
                break
        self.expect(")")
        return args

    def _parse_primary(self) -> tuple[ExprInfo, list[tuple[str, int, int]] | None]:
        t = self.peek()
        if t is None:
            raise self.error("expected expression")
        if t.type in ("NUMBER", "STRING"):
            self.advance()
            return ExprInfo(), None
        if t.type == "IDENT" and t.value in _LITERAL_WORDS:
            self.advance()
            if t.value in ("this", "super"):
                # treat as an empty chain root so member calls work
                return ExprInfo(), [(t.value, t.line, t.col)]
            return ExprInfo(), None
        if t.type == "IDENT" and t.value == "new":
            self.advance()
            type_tok = self.peek()
            type_name = self.parse_type_strict()
            if self.at("("):
                args = self._parse_call_args()
                info = ExprInfo(is_call=True)
                inv = Invocation(
                    method=type_name.split(".")[-1], receiver=None,
                    line=type_tok.line, col=type_tok.col,
                    arg_uses=[a.uses for a in args],
                    nested=[i for a in args for i in a.invocations],
                )
                for a in args:
                    info.uses |= a.uses
                info.invocations.append(inv)
                return info, None
            if self.at("["):
                info = ExprInfo()
                while self.at("["):
                    self.advance()
                    if not self.at("]"):
                        info.merge(self.parse_expression())
                    self.expect("]")
                return info, None
            raise self.error("expected constructor arguments or array dimensions")
        if t.value == "(":
            saved = self.pos
            try:  # cast expression
                self.advance()
                self.parse_type_strict()
                self.expect(")")
                nxt = self.peek()
                if nxt is None or (
                    nxt.type == "OP" and nxt.value not in ("(", "!", "-", "~")
                ):
                    raise _ParseFail()
                inner = self._parse_unary()
                return inner, None
            except (_ParseFail, ParseError):
                self.pos = saved
            self.advance()
            inner = self.parse_expression()
            self.expect(")")
            inner.name_path = None
            return inner, None
        if t.type == "IDENT":
            self.advance()
            return ExprInfo(), [(t.value, t.line, t.col)]
        raise self.error(f"unexpected token {t.value!r} in expression")


def parse_function(source_text: str) -> FunctionAst:
    """Parse a single method declaration; raises ParseError with line/col."""
    tokens = tokenize(source_text)
    parser = _Parser(tokens, source_text)
    try:
        return parser.parse_function()
    except _ParseFail:
        raise parser.error("could not parse declaration")


def find_call_sites(
    ast: FunctionAst, api: VulnerableApi, strict: bool = False
) -> list[tuple[int, int]]:
    """All invocation positions of the vulnerable API, in source order."""
    sites = []
    for inv in _iter_invocations(ast):
        if _matches(inv, api):
            sites.append((inv.line, inv.col))
    sites.sort()
    if strict and not sites:
        raise NoCallSite(f"no invocation of {api.method_name} found")
    return sites


def _iter_invocations(ast: FunctionAst) -> list[Invocation]:
    out = []
    for node in ast.nodes():
        out.extend(node.all_invocations())
    return out


def _matches(inv: Invocation, api: VulnerableApi) -> bool:
    if inv.method != api.method_name:
        return False
    if api.type_or_receiver is None:
        return True
    if inv.receiver is None:
        return False
    return inv.receiver == api.type_or_receiver or inv.receiver.split(".")[-1] == api.type_or_receiver


def _site_invocations(ast: FunctionAst, sites: list[tuple[int, int]]) -> list[Invocation]:
    positions = set(sites)
    return [inv for inv in _iter_invocations(ast) if (inv.line, inv.col) in positions]


def collect_param_context(ast: FunctionAst, sites: list[tuple[int, int]]) -> set[int]:
    """Statements defining identifiers that feed the vulnerable call's arguments.

    Recurses through invocations inside defining statements; a visited set over
    identifiers bounds the traversal. Returns node ids (see nodes_by_id).
    """
    nodes = ast.nodes()
    worklist: list[str] = []
    for inv in _site_invocations(ast, sites):
        for arg in inv.arg_uses:
            worklist.extend(arg)
    visited: set[str] = set()
    collected: set[int] = set()
    while worklist:
        ident = worklist.pop()
        if ident in visited:
            continue
        visited.add(ident)
        for idx, node in enumerate(nodes):
            if node.kind == "Block" or ident not in node.defs:
                continue
            collected.add(idx)
            for inv in node.all_invocations():
                for arg in inv.arg_uses:
                    worklist.extend(arg)
    return collected


def collect_return_context(ast: FunctionAst, sites: list[tuple[int, int]]) -> set[int]:
    """Statements containing a site plus one forward step over assigned results."""
    nodes = ast.nodes()
    positions = set(sites)
    collected: set[int] = set()
    assigned: set[str] = set()
    for idx, node in enumerate(nodes):
        if node.kind == "Block":
            continue
        if any((inv.line, inv.col) in positions for inv in node.all_invocations()):
            collected.add(idx)
            if node.kind in ("Assignment", "VariableDeclaration"):
                assigned |= node.defs
    for idx, node in enumerate(nodes):
        if node.kind == "Block":
            continue
        if node.uses & assigned:
            collected.add(idx)
    return collected


def build_slice(
    ast: FunctionAst,
    param_ctx: set[int],
    ret_ctx: set[int],
    sites: list[tuple[int, int]],
) -> ContextSlice:
    """Line-aligned union of the contexts; the signature line is always kept."""
    nodes = ast.nodes()
    lines: set[int] = {ast.root.start_line}
    for idx in param_ctx | ret_ctx:
        lines.update(nodes[idx].slice_lines())
    for line, _col in sites:
        lines.add(line)
    source_lines = ast.source_text.splitlines()
    lines = {l for l in lines if 1 <= l <= len(source_lines)}
    ordered = sorted(lines)
    slice_text = "\n".join(source_lines[l - 1] for l in ordered)
    return ContextSlice(lines=ordered, call_sites=sorted(sites), slice_text=slice_text)


def slice_function(source_text: str, api: VulnerableApi, strict: bool = True) -> ContextSlice:
    """Convenience wrapper: parse, locate call sites, and build the slice."""
    ast = parse_function(source_text)
    sites = find_call_sites(ast, api, strict=strict)
    if not sites:
        return ContextSlice(
            lines=list(range(1, ast.line_count + 1)),
            call_sites=[],
            slice_text=source_text,
        )
    param_ctx = collect_param_context(ast, sites)
    ret_ctx = collect_return_context(ast, sites)
    return build_slice(ast, param_ctx, ret_ctx, sites)


def load_impacted_function(
    path: Path | str, api: VulnerableApi, dependency: Dependency
) -> ImpactedFunction:
    path = Path(path)
    text = path.read_text("utf-8")
    ast = parse_function(text)
    return ImpactedFunction(
        file_path=str(path),
        function_name=ast.name,
        source_text=text,
        vulnerable_api=api,
        dependency=dependency,
    )
