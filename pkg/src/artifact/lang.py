"""µASM syntax: values, expressions, instructions, units, parsing, linking.

Programs are written one instruction per ``<label>: <instr>`` item; items may
share a line when separated by ``;``.  Labels are plain identifiers (dots are
allowed so compiler passes can mint ``l3.1`` style names) and the textual order
of a function's items is its label chain.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Union

from .errors import (
    AdministrativeInSource,
    CrossFunctionJump,
    DuplicateLabel,
    ExtensionDisabled,
    InvalidComponentMemory,
    LabelClash,
    MissingImport,
    NameClash,
    NoMain,
    ParseError,
    PrivateAccessInAttacker,
    PrivateInitInAttacker,
    UnknownLabel,
)
from .taint import S, U, Taint

# --------------------------------------------------------------------------
# values


@dataclass(frozen=True, order=True)
class LabelVal:
    name: str

    def __str__(self):
        return self.name


class _Bot:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "BOT"

    def __reduce__(self):
        return (_Bot, ())


BOT = _Bot()

Value = Union[int, LabelVal, _Bot]

# --------------------------------------------------------------------------
# expressions


@dataclass(frozen=True)
class Lit:
    value: Value


@dataclass(frozen=True)
class Reg:
    name: str


@dataclass(frozen=True)
class Un:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Lit, Reg, Un, Bin]

BINOPS = ("||", "&&", "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "/", "%")
PRECEDENCE = {
    "||": 1, "&&": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4,
    "*": 5, "/": 5, "%": 5,
}


def expr_regs(e: Expr) -> set[str]:
    if isinstance(e, Reg):
        return {e.name}
    if isinstance(e, Un):
        return expr_regs(e.arg)
    if isinstance(e, Bin):
        return expr_regs(e.left) | expr_regs(e.right)
    return set()


def expr_labels(e: Expr) -> set[str]:
    if isinstance(e, Lit) and isinstance(e.value, LabelVal):
        return {e.value.name}
    if isinstance(e, Un):
        return expr_labels(e.arg)
    if isinstance(e, Bin):
        return expr_labels(e.left) | expr_labels(e.right)
    return set()


def show_expr(e: Expr, prec: int = 0) -> str:
    if isinstance(e, Lit):
        v = e.value
        if v is BOT:
            return "bot"
        return str(v)
    if isinstance(e, Reg):
        return e.name
    if isinstance(e, Un):
        inner = show_expr(e.arg, 9)
        if isinstance(e.arg, Lit) or inner.startswith("-"):
            inner = f"({show_expr(e.arg)})"
        return f"{e.op}{inner}"
    p = PRECEDENCE[e.op]
    s = f"{show_expr(e.left, p)} {e.op} {show_expr(e.right, p + 1)}"
    return f"({s})" if p < prec else s


# --------------------------------------------------------------------------
# instructions


@dataclass(frozen=True)
class Skip:
    kind = "skip"


@dataclass(frozen=True)
class Assign:
    dst: str
    expr: Expr
    kind = "assign"


@dataclass(frozen=True)
class CondAssign:
    dst: str
    expr: Expr
    guard: Expr
    kind = "condassign"


@dataclass(frozen=True)
class Load:
    dst: str
    addr: Expr
    kind = "load"


@dataclass(frozen=True)
class Store:
    src: str
    addr: Expr
    kind = "store"


@dataclass(frozen=True)
class LoadPrv:
    dst: str
    addr: Expr
    kind = "loadprv"


@dataclass(frozen=True)
class StorePrv:
    src: str
    addr: Expr
    kind = "storeprv"


@dataclass(frozen=True)
class Jmp:
    target: Expr
    kind = "jmp"

    @property
    def indirect(self) -> bool:
        return bool(expr_regs(self.target))


@dataclass(frozen=True)
class Beqz:
    reg: str
    label: str
    kind = "beqz"


@dataclass(frozen=True)
class SpBarr:
    kind = "spbarr"


@dataclass(frozen=True)
class Call:
    fname: str
    kind = "call"


@dataclass(frozen=True)
class Ret:
    kind = "ret"


@dataclass(frozen=True)
class PopRet:
    kind = "popret"


@dataclass(frozen=True)
class ModRet:
    target: Expr
    kind = "modret"


@dataclass(frozen=True)
class VAssign:
    dst: str
    left: str
    right: str
    kind = "vassign"


Instr = Union[Skip, Assign, CondAssign, Load, Store, LoadPrv, StorePrv, Jmp, Beqz,
              SpBarr, Call, Ret, PopRet, ModRet, VAssign]

ADMINISTRATIVE = ("popret", "modret")
PRIVATE = ("loadprv", "storeprv")


def instr_class(i: Instr) -> str:
    """Instruction class used by trigger sets and inserted-instruction sets."""
    if isinstance(i, Jmp):
        return "jmp_indirect" if i.indirect else "jmp_static"
    return i.kind


def instr_regs(i: Instr) -> set[str]:
    """Every register an instruction reads or writes."""
    out: set[str] = set()
    for name in ("dst", "src", "reg", "left", "right"):
        v = getattr(i, name, None)
        if isinstance(v, str):
            out.add(v)
    for name in ("expr", "guard", "addr", "target"):
        v = getattr(i, name, None)
        if v is not None and not isinstance(v, str):
            out |= expr_regs(v)
    return out


def show_instr(i: Instr) -> str:
    match i:
        case Skip():
            return "skip"
        case Assign(x, e):
            return f"{x} <- {show_expr(e)}"
        case CondAssign(x, e, g):
            return f"{x} <?- {show_expr(e)}, {show_expr(g)}"
        case Load(x, e):
            return f"load {x}, {show_expr(e)}"
        case Store(x, e):
            return f"store {x}, {show_expr(e)}"
        case LoadPrv(x, e):
            return f"loadprv {x}, {show_expr(e)}"
        case StorePrv(x, e):
            return f"storeprv {x}, {show_expr(e)}"
        case Jmp(e):
            return f"jmp {show_expr(e)}"
        case Beqz(x, l):
            return f"beqz {x}, {l}"
        case SpBarr():
            return "spbarr"
        case Call(f):
            return f"call {f}"
        case Ret():
            return "ret"
        case PopRet():
            return "popret"
        case ModRet(e):
            return f"modret {show_expr(e)}"
        case VAssign(x, y, z):
            return f"{x} <-op {y}, {z}"
    raise TypeError(i)


# --------------------------------------------------------------------------
# units


@dataclass(frozen=True)
class Function:
    name: str
    code: tuple[tuple[str, Instr], ...]

    @property
    def start(self) -> str | None:
        return self.code[0][0] if self.code else None

    @property
    def labels(self) -> list[str]:
        return [l for l, _ in self.code]


@dataclass(frozen=True)
class Unit:
    """A parsed component or attacker."""

    kind: str                                   # "component" | "attacker"
    memory: tuple[tuple[int, int, Taint], ...]  # (addr, value, taint), sorted
    imports: tuple[str, ...]
    functions: tuple[Function, ...]

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.functions]

    def all_labels(self) -> list[str]:
        return [l for f in self.functions for l in f.labels]

    def instructions(self) -> Iterable[Instr]:
        for f in self.functions:
            for _, i in f.code:
                yield i

    def mem_dict(self) -> dict[int, tuple[int, Taint]]:
        return {a: (v, t) for a, v, t in self.memory}

    def with_memory(self, mem: dict[int, tuple[int, Taint]]) -> "Unit":
        cells = tuple(sorted((a, v, t) for a, (v, t) in mem.items()))
        return Unit(self.kind, cells, self.imports, self.functions)


Component = Unit
Attacker = Unit


def function_of(unit_or_prog, label: str) -> str:
    """Owning function name of ``label``."""
    owner = getattr(unit_or_prog, "owner", None)
    if owner is not None:
        if label in owner:
            return owner[label]
        raise UnknownLabel(label)
    for f in unit_or_prog.functions:
        if label in f.labels:
            return f.name
    raise UnknownLabel(label)


# --------------------------------------------------------------------------
# parser

_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_.']*)|(\|\||&&|==|!=|<=|>=|[<>+\-*/%()!]))")
_IDENT = r"[A-Za-z_][A-Za-z0-9_.']*"
_ITEM = re.compile(rf"\s*({_IDENT})\s*:\s*(.*)$")
_FUN = re.compile(rf"fun\s+({_IDENT})\s*:\s*(.*)$")
_MEM = re.compile(r"mem\s+(-?\d+)\s*:=\s*(\d+)\s*:\s*([SU])\s*$")

RESERVED_WORDS = {"bot", "pc"}


def _tokenize(text: str, line: int) -> list[str]:
    toks, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"bad expression near {text[pos:]!r}", line)
        toks.append(m.group(m.lastindex))
        pos = m.end()
    return toks


class _ExprParser:
    def __init__(self, toks, labels, line):
        self.toks, self.i, self.labels, self.line = toks, 0, labels, line

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self):
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of expression", self.line)
        self.i += 1
        return t

    def parse(self, prec=1) -> Expr:
        left = self.unary()
        while True:
            op = self.peek()
            if op not in PRECEDENCE or PRECEDENCE[op] < prec:
                return left
            self.take()
            right = self.parse(PRECEDENCE[op] + 1)
            left = Bin(op, left, right)

    def unary(self) -> Expr:
        t = self.take()
        if t == "(":
            e = self.parse()
            if self.take() != ")":
                raise ParseError("expected )", self.line)
            return e
        if t == "-":
            if self.peek() is not None and self.peek().isdigit():
                return Lit(-int(self.take()))
            return Un("-", self.unary())
        if t == "!":
            return Un("!", self.unary())
        if t.isdigit():
            return Lit(int(t))
        if t == "bot":
            return Lit(BOT)
        if re.fullmatch(_IDENT, t):
            if t in self.labels:
                return Lit(LabelVal(t))
            return Reg(t)
        raise ParseError(f"unexpected token {t!r}", self.line)


def _expr(text: str, labels, line) -> Expr:
    p = _ExprParser(_tokenize(text, line), labels, line)
    e = p.parse()
    if p.peek() is not None:
        raise ParseError(f"trailing tokens in {text!r}", line)
    return e


def _split2(text: str, line: int) -> tuple[str, str]:
    # split "a, b" at the top-level comma
    depth = 0
    for k, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            return text[:k].strip(), text[k + 1:].strip()
    raise ParseError(f"expected two operands in {text!r}", line)


def _register(name: str, line: int) -> str:
    if not re.fullmatch(_IDENT, name) or name in RESERVED_WORDS:
        raise ParseError(f"bad register {name!r}", line)
    return name


def _instr(text: str, labels, line: int, ext_vassign: bool) -> Instr:
    text = text.strip()
    word, _, rest = text.partition(" ")
    rest = rest.strip()
    if word == "skip" and not rest:
        return Skip()
    if word == "spbarr" and not rest:
        return SpBarr()
    if word == "ret" and not rest:
        return Ret()
    if word == "popret" and not rest:
        return PopRet()
    if word == "modret":
        return ModRet(_expr(rest, labels, line))
    if word == "jmp":
        return Jmp(_expr(rest, labels, line))
    if word == "call":
        if not re.fullmatch(_IDENT, rest):
            raise ParseError(f"bad function name {rest!r}", line)
        return Call(rest)
    if word in ("load", "store", "loadprv", "storeprv"):
        a, b = _split2(rest, line)
        cls = {"load": Load, "store": Store, "loadprv": LoadPrv, "storeprv": StorePrv}[word]
        return cls(_register(a, line), _expr(b, labels, line))
    if word == "beqz":
        a, b = _split2(rest, line)
        if b not in labels:
            raise ParseError(f"beqz target {b!r} is not a label", line)
        return Beqz(_register(a, line), b)
    m = re.match(rf"({_IDENT})\s*(<-op|<\?-|<-)\s*(.*)$", text)
    if m:
        x, arrow, rhs = _register(m.group(1), line), m.group(2), m.group(3)
        if x == "pc":
            raise ParseError("pc is not assignable", line)
        if arrow == "<-":
            return Assign(x, _expr(rhs, labels, line))
        a, b = _split2(rhs, line)
        if arrow == "<?-":
            return CondAssign(x, _expr(a, labels, line), _expr(b, labels, line))
        if not ext_vassign:
            raise ExtensionDisabled(f"line {line}: vassign needs the variable-latency extension")
        return VAssign(x, _register(a, line), _register(b, line))
    raise ParseError(f"unknown instruction {text!r}", line)


def parse(text: str, *, ext_vassign: bool = False, allow_admin: bool = False) -> Unit:
    """Parse a component or attacker source text.

    ``allow_admin`` admits popret/modret; only compiler output uses it.
    """
    kind = None
    memory: dict[int, tuple[int, Taint]] = {}
    imports: list[str] = []
    funs: list[tuple[str, list[tuple[str, str, int]]]] = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if kind is None:
            if line not in ("component", "attacker"):
                raise ParseError("expected 'component' or 'attacker' header", n)
            kind = line
            continue
        if line.startswith("mem "):
            m = _MEM.match(line)
            if not m:
                raise ParseError(f"bad memory line {line!r}", n)
            addr = int(m.group(1))
            if addr in memory:
                raise ParseError(f"address {addr} initialised twice", n)
            memory[addr] = (int(m.group(2)), S if m.group(3) == "S" else U)
            continue
        if line.startswith("import "):
            name = line[len("import "):].strip()
            if not re.fullmatch(_IDENT, name):
                raise ParseError(f"bad import {name!r}", n)
            imports.append(name)
            continue
        m = _FUN.match(line)
        if m:
            funs.append((m.group(1), []))
            line = m.group(2).strip()
            if not line:
                continue
        if not funs:
            raise ParseError(f"instruction outside a function: {line!r}", n)
        for item in line.split(";"):
            if not item.strip():
                continue
            im = _ITEM.match(item)
            if not im:
                raise ParseError(f"expected '<label>: <instr>' in {item.strip()!r}", n)
            funs[-1][1].append((im.group(1), im.group(2), n))
    if kind is None:
        raise ParseError("empty program", 1)

    seen: set[str] = set()
    names: set[str] = set()
    for fname, items in funs:
        if fname in names:
            raise ParseError(f"function {fname} defined twice")
        names.add(fname)
        for lab, _, n in items:
            if lab in seen:
                raise DuplicateLabel(f"duplicate label {lab}", n)
            if lab in RESERVED_WORDS:
                raise ParseError(f"reserved label name {lab}", n)
            seen.add(lab)

    functions = []
    for fname, items in funs:
        code = []
        for lab, body, n in items:
            ins = _instr(body, seen, n, ext_vassign)
            if ins.kind in ADMINISTRATIVE and not allow_admin:
                raise AdministrativeInSource(f"{ins.kind} may only appear in compiler output", n)
            code.append((lab, ins))
        functions.append(Function(fname, tuple(code)))
    unit = Unit(kind, tuple(sorted((a, v, t) for a, (v, t) in memory.items())),
                tuple(imports), tuple(functions))
    check_static_jumps(unit)
    return unit


def check_static_jumps(unit: Unit) -> None:
    """Reject branch/jump label literals that leave their function."""
    for f in unit.functions:
        own = set(f.labels)
        for lab, i in f.code:
            targets: set[str] = set()
            if isinstance(i, Beqz):
                targets = {i.label}
            elif isinstance(i, Jmp) and not i.indirect:
                targets = expr_labels(i.target)
            bad = targets - own
            if bad:
                raise CrossFunctionJump(f"{lab} in {f.name} targets {sorted(bad)} outside the function")


def pretty(unit: Unit) -> str:
    out = [unit.kind]
    for a, v, t in unit.memory:
        out.append(f"mem {a} := {v} : {t.name}")
    for imp in unit.imports:
        out.append(f"import {imp}")
    for f in unit.functions:
        out.append(f"fun {f.name}:")
        for lab, i in f.code:
            out.append(f"  {lab}: {show_instr(i)}")
    return "\n".join(out) + "\n"


def load_unit(path, **kw) -> Unit:
    with open(path) as fh:
        return parse(fh.read(), **kw)


# --------------------------------------------------------------------------
# validity and linking


def validate_attacker(a: Unit) -> None:
    for f in a.functions:
        for lab, i in f.code:
            if i.kind in PRIVATE or i.kind in ADMINISTRATIVE:
                raise PrivateAccessInAttacker(f"{lab}: {i.kind} is not allowed in attacker code")
    for addr, _, _ in a.memory:
        if addr < 0:
            raise PrivateInitInAttacker(f"attacker initialises private address {addr}")


def validate_component(p: Unit) -> None:
    for addr, _, t in p.memory:
        if addr >= 0 or t is not U:
            raise InvalidComponentMemory(f"component cell {addr} must be private and tainted U")


@dataclass(frozen=True)
class WholeProgram:
    """A linked program with a fixed instruction layout.

    Functions are laid out component first, then attacker, each in source
    order; ``successor`` follows that layout, so falling off the end of one
    function continues at the start of the next one.
    """

    memory: tuple[tuple[int, int, Taint], ...]
    functions: tuple[Function, ...]
    imports: frozenset[str]
    component_names: tuple[str, ...]
    layout: tuple[str, ...] = field(init=False)
    code: dict = field(init=False, compare=False, repr=False)
    owner: dict = field(init=False, compare=False, repr=False)
    successor: dict = field(init=False, compare=False, repr=False)
    starts: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        layout = tuple(l for f in self.functions for l in f.labels)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "code", {l: i for f in self.functions for l, i in f.code})
        object.__setattr__(self, "owner", {l: f.name for f in self.functions for l in f.labels})
        object.__setattr__(self, "successor", {a: b for a, b in zip(layout, layout[1:])})
        object.__setattr__(self, "starts", {f.name: f.start for f in self.functions})
        comp = set(self.component_names)
        object.__setattr__(self, "_comp_labels",
                           tuple(l for l in layout if self.owner[l] in comp))

    def is_attacker(self, fname: str | None) -> bool:
        return fname in self.imports

    def component_labels(self) -> tuple[str, ...]:
        return self._comp_labels


def link(a: Unit | None, p: Unit) -> WholeProgram:
    """Plug component ``p`` into attacker context ``a``."""
    if a is None:
        a = Unit("attacker", (), (), ())
    validate_attacker(a)
    validate_component(p)
    a_names, p_names = set(a.names), set(p.names)
    clash = a_names & p_names
    if clash:
        raise NameClash(f"functions defined on both sides: {sorted(clash)}")
    missing = [f for f in p.imports if f not in a_names]
    if missing:
        raise MissingImport(f"attacker does not define {missing}")
    lclash = set(a.all_labels()) & set(p.all_labels())
    if lclash:
        raise LabelClash(f"labels defined on both sides: {sorted(lclash)}")
    for u in (a, p):
        for i in u.instructions():
            if isinstance(i, Call) and i.fname not in a_names | p_names:
                raise MissingImport(f"call to undefined function {i.fname}")
    if "main" not in p_names:
        raise NoMain("component defines no main")
    mem = tuple(sorted(a.memory + p.memory))
    return WholeProgram(mem, p.functions + a.functions, frozenset(a.names), tuple(p.names))


def instantiate_labels(w: WholeProgram, seed: int = 1) -> dict[str, int]:
    """Assign consecutive naturals along each function chain, functions in layout order."""
    out, n = {}, seed
    for f in w.functions:
        for lab in f.labels:
            out[lab] = n
            n += 1
    return out


def uses_register(unit: Unit, names: Iterable[str]) -> set[str]:
    names = set(names)
    found = set()
    for i in unit.instructions():
        found |= instr_regs(i) & names
    return found
