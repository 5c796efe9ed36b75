import glob
import math
import os
import random

import pytest
from hypothesis import given, settings, strategies as st

from qhpc.qasm import (
    Circuit, Instruction, QasmError, depth, diagnose_qasm, emit_qasm, format_angle, parse_qasm,
)

CORPUS = sorted(glob.glob(os.path.join(os.path.dirname(__file__), "data", "qasm", "*.qasm")))
HDR = "OPENQASM 2.0;\n"


def test_corpus_size():
    assert len(CORPUS) == 20
    conditioned = [p for p in CORPUS if parse_qasm(open(p).read()).num_conditioned]
    assert len(conditioned) >= 3


@pytest.mark.parametrize("path", CORPUS, ids=os.path.basename)
def test_corpus_round_trip(path):
    c1 = parse_qasm(open(path).read())
    text = emit_qasm(c1)
    c2 = parse_qasm(text)
    assert c2 == c1
    assert emit_qasm(c2) == text


def test_spec_example_bell_prefix():
    c = parse_qasm("OPENQASM 2.0; qreg q[2]; creg c[2]; h q[0]; cx q[0],q[1]; measure q[0] -> c[0];")
    assert (c.num_qubits, c.num_clbits, len(c.instructions)) == (2, 2, 3)
    assert [i.kind for i in c.instructions] == ["gate", "gate", "measure"]
    assert c.instructions[1].qubits == (0, 1)


def test_conditioned_instruction():
    c = parse_qasm("OPENQASM 2.0; qreg q[1]; creg c[1]; h q[0]; measure q[0]->c[0]; if(c==1) x q[0];")
    last = c.instructions[-1]
    assert last.gate == "x" and last.condition == 1 and last.conditioned


def test_include_is_ignored_and_comments_skipped():
    c = parse_qasm('OPENQASM 2.0;\ninclude "qelib1.inc"; // lib\nqreg q[1]; // one\nh q[0];\n')
    assert len(c.instructions) == 1


def test_angle_forms():
    c = parse_qasm(HDR + "qreg q[1];\nrx(pi) q[0];\nry(pi/4) q[0];\nrz(0.25) q[0];\nrx(-pi/2) q[0];\n")
    assert [i.params[0] for i in c.instructions] == [math.pi, math.pi / 4, 0.25, -math.pi / 2]


def test_emit_pi_literals():
    c = Circuit(1, 0, (Instruction("gate", (0,), gate="ry", params=(math.pi / 2,)),))
    assert "ry(pi/2) q[0];" in emit_qasm(c)
    assert format_angle(math.pi) == "pi"
    assert format_angle(-math.pi / 16) == "-pi/16"
    assert format_angle(math.pi / 17) == format(math.pi / 17, ".12g")
    assert format_angle(0.1) == "0.1"


def test_emit_empty_circuit():
    assert emit_qasm(Circuit(3)) == "OPENQASM 2.0;\nqreg q[3];\n"


# documented error cases: (source, line, message fragment)
ERRORS = [
    (HDR + "qreg q[1];\nx q[3];\n", 3, "index out of range"),
    (HDR + "qreg q[1];\nh r[0];\n", 3, "undeclared register"),
    (HDR + "qreg q[1];\nmeasure q[0] -> c[0];\n", 3, "undeclared register"),
    (HDR + "qreg q[1];\n\nrx(pi*2) q[0];\n", 4, "malformed angle"),
    (HDR + "qreg q[1];\nrx(abc) q[0];\n", 3, "malformed angle"),
    (HDR + "qreg q[1];\nh q[0]\nx q[0];\n", 3, "missing semicolon"),
    (HDR + "qreg q[1];\nh q[0];\nu3(0,0,0) q[0];\n", 4, "unsupported gate"),
    (HDR + "qreg q[1];\nif(c==1) x q[0];\n", 3, "undeclared register"),
    (HDR + "qreg q[2];\ncreg c[1];\nmeasure q[1] -> c[4];\n", 4, "index out of range"),
]


@pytest.mark.parametrize("src,line,fragment", ERRORS)
def test_error_diagnostics(src, line, fragment):
    diags = diagnose_qasm(src)
    assert diags, "expected a diagnostic"
    assert any(d.line == line and fragment in d.message for d in diags), [str(d) for d in diags]
    with pytest.raises(QasmError):
        parse_qasm(src)


def test_diagnostic_column_points_into_token():
    src = HDR + "qreg q[1];\nx q[3];\n"
    d = diagnose_qasm(src)[0]
    line = src.splitlines()[d.line - 1]
    assert line[d.column - 1] == "3"
    src = HDR + "qreg q[1];\n  foo q[0];\n"
    d = diagnose_qasm(src)[0]
    assert src.splitlines()[d.line - 1][d.column - 1:].startswith("foo")


def test_missing_header():
    d = diagnose_qasm("qreg q[1];\n")
    assert d and d[0].line == 1


def test_errors_prevent_construction_but_collect_several():
    src = HDR + "qreg q[1];\nx q[3];\nfoo q[0];\n"
    assert {d.line for d in diagnose_qasm(src)} == {3, 4}


# ------------------------------------------------------------------ depth


def test_depth_examples():
    assert depth(parse_qasm(HDR + "qreg q[2];\nh q[0];\ncx q[0],q[1];\n")) == 2
    assert depth(parse_qasm(HDR + "qreg q[2];\nh q[0];\nh q[1];\n")) == 1
    assert depth(Circuit(3)) == 0


def test_depth_barrier_and_condition():
    c = parse_qasm(HDR + "qreg q[2];\ncreg c[1];\nh q[0];\nbarrier q;\nh q[1];\n")
    assert depth(c) == 2
    c = parse_qasm(HDR + "qreg q[2];\ncreg c[1];\nh q[0];\nif(c==0) x q[1];\nh q[0];\n")
    assert depth(c) == 3


def longest_path_depth(c):
    """Oracle: weighted longest path over the dependency DAG where two
    instructions depend if they share a qubit (barriers and conditioned gates
    touch every qubit; barriers weigh 0)."""
    full = set(range(c.num_qubits))
    nodes = []
    for inst in c.instructions:
        qs = full if inst.kind == "barrier" or inst.condition is not None else set(inst.qubits)
        nodes.append((qs, 0 if inst.kind == "barrier" else 1))
    best = []
    for j, (qj, wj) in enumerate(nodes):
        prev = [best[i] for i in range(j) if nodes[i][0] & qj]
        best.append(max(prev, default=0) + wj)
    return max(best, default=0)


def _rand_circuit(rng, n, length):
    insts = []
    for _ in range(length):
        r = rng.random()
        if r < 0.1:
            insts.append(Instruction("barrier", tuple(sorted(rng.sample(range(n), rng.randint(1, n))))))
        elif r < 0.2:
            insts.append(Instruction("gate", (rng.randrange(n),), gate="x", condition=rng.randint(0, 1)))
        elif r < 0.5 and n > 1:
            insts.append(Instruction("gate", tuple(rng.sample(range(n), 2)), gate="cx"))
        elif r < 0.6:
            q = rng.randrange(n)
            insts.append(Instruction("measure", (q,), clbit=0))
        else:
            insts.append(Instruction("gate", (rng.randrange(n),), gate=rng.choice("hxyz")))
    return Circuit(n, 1, tuple(insts))


def test_depth_matches_longest_path_oracle():
    rng = random.Random(8)
    for _ in range(200):
        c = _rand_circuit(rng, rng.randint(1, 4), rng.randint(0, 15))
        assert depth(c) == longest_path_depth(c)
        assert depth(c) <= len(c.instructions)


def test_depth_invariant_under_disjoint_swap():
    c = parse_qasm(HDR + "qreg q[3];\nh q[0];\nx q[1];\ncx q[0],q[2];\n")
    swapped = c.with_instructions([c.instructions[1], c.instructions[0], c.instructions[2]])
    assert depth(c) == depth(swapped)


# ------------------------------------------------------------- properties

_angles = st.floats(-10, 10, allow_nan=False).map(lambda a: float(format(a, ".12g")))


@st.composite
def circuits(draw):
    n = draw(st.integers(1, 4))
    m = draw(st.integers(0, 3))
    insts = []
    for _ in range(draw(st.integers(0, 12))):
        kind = draw(st.sampled_from(["1q", "rot", "cx", "measure", "barrier"]))
        q = draw(st.integers(0, n - 1))
        cond = draw(st.none() | st.integers(0, (1 << m) - 1)) if m else None
        if kind == "1q":
            insts.append(Instruction("gate", (q,), gate=draw(st.sampled_from("hxyz")), condition=cond))
        elif kind == "rot":
            insts.append(Instruction("gate", (q,), gate=draw(st.sampled_from(["rx", "ry", "rz"])),
                                     params=(draw(_angles),), condition=cond))
        elif kind == "cx" and n > 1:
            t = draw(st.integers(0, n - 1).filter(lambda x: x != q))
            insts.append(Instruction("gate", (q, t), gate="cx", condition=cond))
        elif kind == "measure" and m:
            insts.append(Instruction("measure", (q,), clbit=draw(st.integers(0, m - 1))))
        elif kind == "barrier":
            insts.append(Instruction("barrier", (q,)))
    return Circuit(n, m, tuple(insts))


@settings(max_examples=150)
@given(circuits())
def test_round_trip_property(c):
    text = emit_qasm(c)
    assert parse_qasm(text) == c
    assert emit_qasm(parse_qasm(text)) == text


@given(st.floats(-100, 100, allow_nan=False))
def test_emit_parse_emit_fixpoint_any_angle(a):
    c = Circuit(1, 0, (Instruction("gate", (0,), gate="rz", params=(a,)),))
    once = emit_qasm(c)
    assert emit_qasm(parse_qasm(once)) == once
    assert abs(parse_qasm(once).instructions[0].params[0] - a) <= 1e-11 * max(1.0, abs(a))


def test_instruction_invariants():
    with pytest.raises(ValueError):
        Instruction("gate", (0, 0), gate="cx")
    with pytest.raises(ValueError):
        Instruction("gate", (0,), gate="rx")
    with pytest.raises(ValueError):
        Circuit(21)
    with pytest.raises(ValueError):
        Circuit(1, 0, (Instruction("gate", (1,), gate="h"),))
