"""OpenQASM 2.0 subset: parser, canonical printer and circuit depth.

Accepted statements::

    OPENQASM 2.0;
    include "qelib1.inc";        // ignored
    qreg q[n];                   // exactly one, n <= 20
    creg c[m];                   // at most one
    h|x|y|z q[i];
    rx|ry|rz(<angle>) q[i];      // angle: [-]decimal | [-]pi | [-]pi/k
    cx q[i],q[j];
    measure q[i] -> c[j];
    barrier q[i],q[j],...;       // or the whole register
    if(c==v) <gate statement>
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

MAX_QUBITS = 20

SINGLE_GATES = ("h", "x", "y", "z")
ROTATION_GATES = ("rx", "ry", "rz")
GATES = SINGLE_GATES + ROTATION_GATES + ("cx",)


@dataclass(frozen=True)
class Instruction:
    kind: str  # gate | measure | barrier
    qubits: Tuple[int, ...]
    gate: Optional[str] = None
    params: Tuple[float, ...] = ()
    clbit: Optional[int] = None
    condition: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind == "gate":
            if self.gate not in GATES:
                raise ValueError(f"unsupported gate {self.gate!r}")
            arity = 2 if self.gate == "cx" else 1
            if len(self.qubits) != arity:
                raise ValueError(f"{self.gate} takes {arity} qubit(s)")
            if self.gate == "cx" and self.qubits[0] == self.qubits[1]:
                raise ValueError("cx control and target must differ")
            nparams = 1 if self.gate in ROTATION_GATES else 0
            if len(self.params) != nparams:
                raise ValueError(f"{self.gate} takes {nparams} parameter(s)")
        elif self.kind == "measure":
            if len(self.qubits) != 1 or self.clbit is None:
                raise ValueError("measure needs one qubit and a clbit")
            if self.condition is not None:
                raise ValueError("conditioned measurement is not supported")
        elif self.kind == "barrier":
            if self.condition is not None:
                raise ValueError("conditioned barrier is not supported")
        else:
            raise ValueError(f"unknown instruction kind {self.kind!r}")

    @property
    def conditioned(self) -> bool:
        return self.condition is not None


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    num_clbits: int = 0
    instructions: Tuple[Instruction, ...] = ()
    name: str = field(default="circuit", compare=False)
    qreg: str = "q"
    creg: str = "c"

    def __post_init__(self) -> None:
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise ValueError(f"num_qubits must be in [1, {MAX_QUBITS}], got {self.num_qubits}")
        if self.num_clbits < 0:
            raise ValueError("num_clbits must be non-negative")
        object.__setattr__(self, "instructions", tuple(self.instructions))
        for inst in self.instructions:
            for q in inst.qubits:
                if not 0 <= q < self.num_qubits:
                    raise ValueError(f"qubit index {q} out of range")
            if inst.clbit is not None and not 0 <= inst.clbit < self.num_clbits:
                raise ValueError(f"clbit index {inst.clbit} out of range")
            if inst.condition is not None:
                if self.num_clbits == 0:
                    raise ValueError("condition without a classical register")
                if not 0 <= inst.condition < (1 << self.num_clbits):
                    raise ValueError(f"condition value {inst.condition} out of range")

    def with_instructions(self, instructions: Sequence[Instruction], num_clbits: Optional[int] = None) -> "Circuit":
        return Circuit(
            self.num_qubits,
            self.num_clbits if num_clbits is None else num_clbits,
            tuple(instructions),
            name=self.name,
            qreg=self.qreg,
            creg=self.creg,
        )

    @property
    def has_measurements(self) -> bool:
        return any(i.kind == "measure" for i in self.instructions)

    @property
    def num_conditioned(self) -> int:
        return sum(1 for i in self.instructions if i.condition is not None)


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


class QasmError(ValueError):
    def __init__(self, diagnostics: Sequence[ParseDiagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


# --------------------------------------------------------------------- lexing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"\n]*")
  | (?P<op>->|==|[;,\[\]()/\-+*{}])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # number | id | string | op | eof | bad
    text: str
    line: int
    col: int


def _tokenize(text: str) -> List[_Tok]:
    toks: List[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            toks.append(_Tok("bad", text[pos], line, pos - line_start + 1))
            pos += 1
            continue
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _StatementError(Exception):
    def __init__(self, tok: _Tok, message: str):
        self.tok = tok
        self.message = message


# -------------------------------------------------------------------- parsing


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.diags: List[ParseDiagnostic] = []
        self.qreg: Optional[Tuple[str, int]] = None
        self.creg: Optional[Tuple[str, int]] = None
        self.instructions: List[Instruction] = []

    # token helpers
    def peek(self, k: int = 0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> _Tok:
        tok = self.peek()
        if tok.kind != "eof":
            self.i += 1
        return tok

    def prev(self) -> _Tok:
        return self.toks[max(self.i - 1, 0)]

    def expect(self, text: str, what: Optional[str] = None) -> _Tok:
        tok = self.peek()
        if tok.text != text or tok.kind in ("string", "eof"):
            if text == ";":
                # point at the last token of the unterminated statement
                raise _StatementError(self.prev(), "missing semicolon")
            raise _StatementError(tok, f"expected {what or repr(text)}, found {tok.text or 'end of input'!r}")
        return self.next()

    def expect_kind(self, kind: str, what: str) -> _Tok:
        tok = self.peek()
        if tok.kind != kind:
            raise _StatementError(tok, f"expected {what}, found {tok.text or 'end of input'!r}")
        return self.next()

    def error(self, tok: _Tok, message: str) -> None:
        self.diags.append(ParseDiagnostic(tok.line, tok.col, message))

    def recover(self) -> None:
        while self.peek().kind != "eof":
            tok = self.next()
            if tok.text == ";" and tok.kind == "op":
                return

    # grammar
    def parse(self) -> None:
        self.header()
        while self.peek().kind != "eof":
            start = self.i
            try:
                self.statement()
            except _StatementError as e:
                self.error(e.tok, e.message)
                if e.message == "missing semicolon":
                    continue  # the offending token starts the next statement
                self.recover()
            if self.i == start:  # guarantee progress
                self.next()
        if self.qreg is None and not self.diags:
            tok = self.peek()
            self.error(tok, "no qreg declared")

    def header(self) -> None:
        tok = self.peek()
        if tok.text != "OPENQASM":
            self.error(tok, "missing 'OPENQASM 2.0;' header")
            return
        self.next()
        try:
            ver = self.expect_kind("number", "version number")
            if ver.text not in ("2.0", "2"):
                raise _StatementError(ver, f"unsupported OpenQASM version {ver.text}")
            self.expect(";")
        except _StatementError as e:
            self.error(e.tok, e.message)
            self.recover()

    def statement(self) -> None:
        tok = self.peek()
        if tok.kind != "id":
            raise _StatementError(tok, f"unexpected {tok.text!r}")
        name = tok.text
        if name == "include":
            self.next()
            path = self.expect_kind("string", "file name string")
            if path.text != '"qelib1.inc"':
                raise _StatementError(path, f"unsupported include {path.text}")
            self.expect(";")
        elif name in ("qreg", "creg"):
            self.declaration(name)
        elif name == "if":
            self.conditional()
        elif name == "measure":
            self.next()
            q = self.qubit_arg()
            self.expect("->", "'->'")
            c = self.clbit_arg()
            self.expect(";")
            self.instructions.append(Instruction("measure", (q,), clbit=c))
        elif name == "barrier":
            self.next()
            qubits = self.barrier_args()
            self.expect(";")
            self.instructions.append(Instruction("barrier", qubits))
        else:
            self.instructions.append(self.gate_statement(None))

    def declaration(self, which: str) -> None:
        kw = self.next()
        reg = self.expect_kind("id", "register name")
        self.expect("[", "'['")
        size_tok = self.expect_kind("number", "register size")
        if not size_tok.text.isdigit():
            raise _StatementError(size_tok, "register size must be an integer")
        size = int(size_tok.text)
        self.expect("]", "']'")
        self.expect(";")
        if which == "qreg":
            if self.qreg is not None:
                raise _StatementError(kw, "only one qreg is supported")
            if not 1 <= size <= MAX_QUBITS:
                raise _StatementError(size_tok, f"qreg size must be in [1, {MAX_QUBITS}]")
            self.qreg = (reg.text, size)
        else:
            if self.creg is not None:
                raise _StatementError(kw, "only one creg is supported")
            if size < 1:
                raise _StatementError(size_tok, "creg size must be positive")
            self.creg = (reg.text, size)

    def conditional(self) -> None:
        self.next()
        self.expect("(", "'('")
        reg = self.expect_kind("id", "classical register name")
        if self.creg is None or reg.text != self.creg[0]:
            raise _StatementError(reg, f"undeclared register {reg.text!r}")
        self.expect("==", "'=='")
        val = self.expect_kind("number", "integer value")
        if not val.text.isdigit():
            raise _StatementError(val, "condition value must be a non-negative integer")
        value = int(val.text)
        if value >= 1 << self.creg[1]:
            raise _StatementError(val, f"condition value {value} out of range for {reg.text}[{self.creg[1]}]")
        self.expect(")", "')'")
        tok = self.peek()
        if tok.text not in GATES:
            if tok.kind == "id" and tok.text not in ("measure", "barrier", "if", "qreg", "creg", "include"):
                raise _StatementError(tok, f"unsupported gate name {tok.text!r}")
            raise _StatementError(tok, "only gate statements may be conditioned")
        self.instructions.append(self.gate_statement(value))

    def gate_statement(self, condition: Optional[int]) -> Instruction:
        tok = self.next()
        name = tok.text
        if name not in GATES:
            raise _StatementError(tok, f"unsupported gate name {name!r}")
        params: Tuple[float, ...] = ()
        if name in ROTATION_GATES:
            self.expect("(", "'('")
            params = (self.angle(),)
            self.expect(")", "')'")
        q0 = self.qubit_arg()
        qubits: Tuple[int, ...] = (q0,)
        if name == "cx":
            self.expect(",", "','")
            tgt_tok = self.peek(2)
            q1 = self.qubit_arg()
            if q1 == q0:
                raise _StatementError(tgt_tok, "cx control and target must differ")
            qubits = (q0, q1)
        self.expect(";")
        return Instruction("gate", qubits, gate=name, params=params, condition=condition)

    def angle(self) -> float:
        first = self.peek()
        sign = 1.0
        if first.text == "-" and first.kind == "op":
            self.next()
            sign = -1.0
        tok = self.peek()
        if tok.kind == "number":
            self.next()
            value = float(tok.text)
        elif tok.kind == "id" and tok.text == "pi":
            self.next()
            value = math.pi
            if self.peek().text == "/":
                self.next()
                k = self.peek()
                if k.kind != "number" or not k.text.isdigit() or int(k.text) == 0:
                    raise _StatementError(k, f"malformed angle: expected positive integer after 'pi/', found {k.text!r}")
                self.next()
                value = math.pi / int(k.text)
        else:
            raise _StatementError(tok, f"malformed angle {tok.text!r}")
        nxt = self.peek()
        if nxt.text != ")":
            raise _StatementError(nxt, f"malformed angle: unexpected {nxt.text!r}")
        return sign * value

    def _index(self, size: int) -> int:
        self.expect("[", "'['")
        idx = self.expect_kind("number", "index")
        if not idx.text.isdigit():
            raise _StatementError(idx, "index must be an integer")
        value = int(idx.text)
        if value >= size:
            raise _StatementError(idx, f"index out of range: {value} >= {size}")
        self.expect("]", "']'")
        return value

    def qubit_arg(self) -> int:
        reg = self.expect_kind("id", "qubit argument")
        if self.qreg is None or reg.text != self.qreg[0]:
            raise _StatementError(reg, f"undeclared register {reg.text!r}")
        if self.peek().text != "[":
            raise _StatementError(reg, "expected an indexed qubit like q[0]")
        return self._index(self.qreg[1])

    def clbit_arg(self) -> int:
        reg = self.expect_kind("id", "classical bit argument")
        if self.creg is None or reg.text != self.creg[0]:
            raise _StatementError(reg, f"undeclared register {reg.text!r}")
        if self.peek().text != "[":
            raise _StatementError(reg, "expected an indexed clbit like c[0]")
        return self._index(self.creg[1])

    def barrier_args(self) -> Tuple[int, ...]:
        qubits: List[int] = []
        while True:
            reg = self.peek()
            if reg.kind == "id" and self.qreg is not None and reg.text == self.qreg[0] and self.peek(1).text != "[":
                self.next()
                qubits.extend(range(self.qreg[1]))
            else:
                qubits.append(self.qubit_arg())
            if self.peek().text != ",":
                break
            self.next()
        return tuple(sorted(set(qubits)))


def parse_qasm(text: str, name: str = "circuit") -> Circuit:
    """Parse ``text`` into a :class:`Circuit`; raises :class:`QasmError` with all diagnostics."""
    p = _Parser(text)
    p.parse()
    if p.diags:
        raise QasmError(p.diags)
    assert p.qreg is not None
    qname, nq = p.qreg
    cname, nc = p.creg if p.creg is not None else ("c", 0)
    return Circuit(nq, nc, tuple(p.instructions), name=name, qreg=qname, creg=cname)


def diagnose_qasm(text: str) -> List[ParseDiagnostic]:
    p = _Parser(text)
    p.parse()
    return p.diags


# ------------------------------------------------------------------- printing


def format_angle(value: float) -> str:
    sign = "-" if value < 0 else ""
    mag = abs(value)
    for k in range(1, 17):
        if mag == math.pi / k:
            return f"{sign}pi" if k == 1 else f"{sign}pi/{k}"
    return format(value, ".12g")


def _format_instruction(inst: Instruction, c: Circuit) -> str:
    q = c.qreg
    if inst.kind == "measure":
        return f"measure {q}[{inst.qubits[0]}] -> {c.creg}[{inst.clbit}];"
    if inst.kind == "barrier":
        return "barrier " + ",".join(f"{q}[{i}]" for i in inst.qubits) + ";"
    args = ",".join(f"{q}[{i}]" for i in inst.qubits)
    head = inst.gate if not inst.params else f"{inst.gate}({format_angle(inst.params[0])})"
    stmt = f"{head} {args};"
    if inst.condition is not None:
        stmt = f"if({c.creg}=={inst.condition}) {stmt}"
    return stmt


def emit_qasm(c: Circuit) -> str:
    lines = ["OPENQASM 2.0;", f"qreg {c.qreg}[{c.num_qubits}];"]
    if c.num_clbits:
        lines.append(f"creg {c.creg}[{c.num_clbits}];")
    lines.extend(_format_instruction(i, c) for i in c.instructions)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------- depth


def depth(c: Circuit) -> int:
    """Greedy layering depth.

    Barriers flush every qubit to the current maximum without adding a layer;
    conditioned gates occupy a full-width layer since classical feedback
    serialises the device.
    """
    level = [0] * c.num_qubits
    for inst in c.instructions:
        if inst.kind == "barrier":
            top = max(level)
            level = [top] * c.num_qubits
            continue
        if inst.condition is not None:
            top = max(level) + 1
            level = [top] * c.num_qubits
            continue
        top = max(level[q] for q in inst.qubits) + 1
        for q in inst.qubits:
            level[q] = top
    return max(level) if level else 0
