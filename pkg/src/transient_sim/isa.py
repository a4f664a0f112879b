"""Toy assembly language understood by the core models.

Code and data live in separate address spaces: code addresses are instruction
indices, data addresses are plain byte addresses.  One memory cell holds one
integer value, so a "byte" of secret is simply a cell whose value is < 256.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

NUM_REGS = 16
SP = 15  # conventional stack pointer
NUM_SYSREGS = 16


class Opcode(Enum):
    MOVI = "MOVI"
    LD = "LD"
    ST = "ST"
    ADD = "ADD"
    SHL = "SHL"
    AND = "AND"
    CMP = "CMP"
    BGE = "BGE"
    CALL = "CALL"
    RET = "RET"
    FLUSH = "FLUSH"
    RDCYC = "RDCYC"
    MRS = "MRS"
    YIELD = "YIELD"
    FENCE = "FENCE"
    HALT = "HALT"
    NOP = "NOP"


@dataclass(frozen=True)
class Reg:
    index: int

    def __str__(self) -> str:
        return f"r{self.index}"


@dataclass(frozen=True)
class Imm:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Mem:
    """Register-plus-offset data address, written ``[rN + off]``."""

    base: int
    offset: int

    def __str__(self) -> str:
        if self.offset == 0:
            return f"[r{self.base}]"
        sign = "+" if self.offset >= 0 else "-"
        return f"[r{self.base} {sign} {abs(self.offset)}]"


@dataclass(frozen=True)
class LabelRef:
    """Branch/call target, resolved to an instruction index."""

    target: int

    def __str__(self) -> str:
        return f"L{self.target}"


@dataclass(frozen=True)
class SysReg:
    index: int

    def __str__(self) -> str:
        return f"s{self.index}"


Operand = "Reg | Imm | Mem | LabelRef | SysReg"


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    operands: tuple

    def __str__(self) -> str:
        if not self.operands:
            return self.opcode.value
        return f"{self.opcode.value} {', '.join(str(o) for o in self.operands)}"


@dataclass(frozen=True)
class Program:
    instructions: tuple
    labels: dict
    entry: int = 0

    def __len__(self) -> int:
        return len(self.instructions)


class AssemblyError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


# operand kind expected per position, per opcode
_SIGNATURES = {
    Opcode.MOVI: ("reg", "imm"),
    Opcode.LD: ("reg", "mem"),
    Opcode.ST: ("mem", "reg"),
    Opcode.ADD: ("reg", "reg", "reg_or_imm"),
    Opcode.SHL: ("reg", "reg", "reg_or_imm"),
    Opcode.AND: ("reg", "reg", "reg_or_imm"),
    Opcode.CMP: ("reg", "reg_or_imm"),
    Opcode.BGE: ("label",),
    Opcode.CALL: ("label",),
    Opcode.RET: (),
    Opcode.FLUSH: ("mem",),
    Opcode.RDCYC: ("reg",),
    Opcode.MRS: ("reg", "sysreg"),
    Opcode.YIELD: (),
    Opcode.FENCE: (),
    Opcode.HALT: (),
    Opcode.NOP: (),
}

_LABEL_DEF = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*):(.*)$")
_MEM_RE = re.compile(
    r"^\[\s*r(\d+)\s*(?:([+-])\s*(0x[0-9a-fA-F]+|\d+)\s*)?\]$"
)
_REG_RE = re.compile(r"^r(\d+)$")
_SYSREG_RE = re.compile(r"^s(\d+)$")
_IMM_RE = re.compile(r"^[+-]?(0x[0-9a-fA-F]+|\d+)$")
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _split_operands(text: str) -> list:
    """Split on commas that sit outside [...] brackets."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


def _parse_operand(tok: str, kind: str, labels: dict, lineno: int):
    if kind in ("reg", "reg_or_imm"):
        m = _REG_RE.match(tok)
        if m:
            idx = int(m.group(1))
            if idx >= NUM_REGS:
                raise AssemblyError(lineno, f"register r{idx} out of range (r0-r{NUM_REGS - 1})")
            return Reg(idx)
        if kind == "reg":
            raise AssemblyError(lineno, f"expected register, got {tok!r}")
    if kind in ("imm", "reg_or_imm"):
        if _IMM_RE.match(tok):
            return Imm(int(tok, 0))
        raise AssemblyError(lineno, f"expected immediate, got {tok!r}")
    if kind == "mem":
        m = _MEM_RE.match(tok)
        if not m:
            raise AssemblyError(lineno, f"expected memory operand like [r1 + 8], got {tok!r}")
        base = int(m.group(1))
        if base >= NUM_REGS:
            raise AssemblyError(lineno, f"register r{base} out of range")
        off = int(m.group(3), 0) if m.group(3) else 0
        if m.group(2) == "-":
            off = -off
        return Mem(base, off)
    if kind == "label":
        if not _IDENT_RE.match(tok):
            raise AssemblyError(lineno, f"expected label name, got {tok!r}")
        if tok not in labels:
            raise AssemblyError(lineno, f"undefined label {tok!r}")
        return LabelRef(labels[tok])
    if kind == "sysreg":
        m = _SYSREG_RE.match(tok)
        if not m:
            raise AssemblyError(lineno, f"expected system register like s0, got {tok!r}")
        idx = int(m.group(1))
        if idx >= NUM_SYSREGS:
            raise AssemblyError(lineno, f"system register s{idx} out of range")
        return SysReg(idx)
    raise AssemblyError(lineno, f"cannot parse operand {tok!r}")


def _logical_lines(text: str):
    """Yield (lineno, label_or_None, statement_or_None) with comments stripped."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        m = _LABEL_DEF.match(line)
        if m:
            yield lineno, m.group(1), m.group(2).strip() or None
        else:
            yield lineno, None, line


def assemble(text: str) -> Program:
    """Assemble source text into a Program. Raises AssemblyError with line numbers."""
    # pass 1: count instructions, collect label -> instruction index
    labels: dict = {}
    count = 0
    for lineno, label, stmt in _logical_lines(text):
        if label is not None:
            if label in labels:
                raise AssemblyError(lineno, f"duplicate label {label!r}")
            labels[label] = count
        if stmt is not None:
            count += 1
    if count == 0:
        raise AssemblyError(0, "empty program")
    for name, idx in labels.items():
        if idx >= count:
            raise AssemblyError(0, f"label {name!r} points past the last instruction")

    # pass 2: parse statements
    instructions = []
    for lineno, _, stmt in _logical_lines(text):
        if stmt is None:
            continue
        parts = stmt.split(None, 1)
        mnemonic = parts[0].upper()
        try:
            opcode = Opcode(mnemonic)
        except ValueError:
            raise AssemblyError(lineno, f"unknown mnemonic {parts[0]!r}") from None
        operand_text = parts[1] if len(parts) > 1 else ""
        tokens = _split_operands(operand_text)
        sig = _SIGNATURES[opcode]
        if len(tokens) != len(sig):
            raise AssemblyError(
                lineno,
                f"{opcode.value} takes {len(sig)} operand(s), got {len(tokens)}",
            )
        operands = tuple(
            _parse_operand(tok, kind, labels, lineno) for tok, kind in zip(tokens, sig)
        )
        instructions.append(Instruction(opcode, operands))

    program = Program(tuple(instructions), labels, entry=0)
    _check_termination(program)
    return program


def _check_termination(program: Program) -> None:
    halts = sum(1 for i in program.instructions if i.opcode is Opcode.HALT)
    if halts == 1:
        return
    if halts == 0 and program.instructions[-1].opcode is Opcode.YIELD:
        return
    raise AssemblyError(
        0, f"program must contain exactly one HALT or end with YIELD (found {halts} HALTs)"
    )


def disassemble(program: Program) -> str:
    """Textual form whose reassembly yields the same instruction sequence."""
    targets = set()
    for instr in program.instructions:
        for op in instr.operands:
            if isinstance(op, LabelRef):
                targets.add(op.target)
    lines = []
    for idx, instr in enumerate(program.instructions):
        if idx in targets:
            lines.append(f"L{idx}:")
        lines.append(f"    {instr}")
    return "\n".join(lines) + "\n"


@dataclass
class ValidationReport:
    findings: list
    max_call_depth: int | None  # None = recursion, depth unbounded
    privileged_opcodes: list
    unreachable: list

    @property
    def clean(self) -> bool:
        return not self.findings


def _function_extent(program: Program, start: int) -> range:
    """Instructions from `start` until the first RET or HALT (inclusive)."""
    for idx in range(start, len(program)):
        if program.instructions[idx].opcode in (Opcode.RET, Opcode.HALT):
            return range(start, idx + 1)
    return range(start, len(program))


def _call_depth(program: Program, start: int, visiting: tuple) -> int | None:
    if start in visiting:
        return None  # recursive chain, unbounded
    deepest = 0
    for idx in _function_extent(program, start):
        instr = program.instructions[idx]
        if instr.opcode is Opcode.CALL:
            sub = _call_depth(program, instr.operands[0].target, visiting + (start,))
            if sub is None:
                return None
            deepest = max(deepest, 1 + sub)
    return deepest


def validate(
    program: Program,
    rsb_size: int | None = None,
    flush_privileged: bool = False,
) -> ValidationReport:
    """Static checks: call-depth estimate, privileged opcodes, unreachable code.

    Report only; nothing here blocks execution.
    """
    findings: list = []

    depth = _call_depth(program, program.entry, ())
    if depth is None:
        findings.append("recursive CALL chain: static depth unbounded")
    elif rsb_size is not None and depth > rsb_size:
        findings.append(
            f"static CALL depth {depth} exceeds RSB capacity {rsb_size}; "
            "returns past that depth will mispredict"
        )

    privileged = []
    for idx, instr in enumerate(program.instructions):
        if instr.opcode is Opcode.MRS:
            privileged.append((idx, Opcode.MRS.value))
        elif instr.opcode is Opcode.FLUSH and flush_privileged:
            privileged.append((idx, Opcode.FLUSH.value))
    if privileged:
        findings.append(
            "privileged opcodes present: "
            + ", ".join(f"{name}@{idx}" for idx, name in privileged)
        )

    reachable = set()
    stack = [program.entry]
    while stack:
        idx = stack.pop()
        if idx in reachable or idx >= len(program):
            continue
        reachable.add(idx)
        instr = program.instructions[idx]
        if instr.opcode in (Opcode.HALT, Opcode.RET):
            continue
        if instr.opcode is Opcode.BGE:
            stack.append(instr.operands[0].target)
            stack.append(idx + 1)
        elif instr.opcode is Opcode.CALL:
            stack.append(instr.operands[0].target)
            stack.append(idx + 1)  # continuation after the callee returns
        else:
            stack.append(idx + 1)
    unreachable = sorted(set(range(len(program))) - reachable)
    if unreachable:
        findings.append(f"unreachable instructions: {unreachable}")

    return ValidationReport(
        findings=findings,
        max_call_depth=depth,
        privileged_opcodes=privileged,
        unreachable=unreachable,
    )
