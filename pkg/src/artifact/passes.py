"""The nine countermeasure passes, component to component.

New labels are derived from the label of the instruction being rewritten
(``l`` gives ``l.1``, ``l.2``, ...), skipping any name already in use, so the
inserted code stays between ``l`` and its original successor.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ExtensionDisabled, ReservedRegisterUsed
from .lang import (
    BOT, Assign, Beqz, Bin, Call, CondAssign, Function, Jmp, LabelVal, Lit, Load, LoadPrv,
    ModRet, PopRet, Reg, Ret, Skip, SpBarr, Store, StorePrv, Un, Unit, VAssign, uses_register,
)


@dataclass(frozen=True)
class PassDescriptor:
    id: str
    base: str                       # base speculation source
    inserted: frozenset[str]        # instruction classes the pass may insert
    description: str = ""


_FENCE = frozenset({"spbarr"})
_RETP_J = frozenset({"call", "skip", "spbarr", "ret", "modret", "jmp_static"})
_RETP_R = frozenset({"skip", "spbarr", "popret", "ret", "call", "jmp_static"})
_SLH = frozenset({"condassign", "assign", "jmp_static"})

PASSES: dict[str, PassDescriptor] = {d.id: d for d in (
    PassDescriptor("fence_sls", "SLS", _FENCE, "speculation barrier after every ret"),
    PassDescriptor("retp_j", "J", _RETP_J, "indirect jumps through a return trampoline"),
    PassDescriptor("retp_j_fence", "J", _RETP_J, "retp_j with a barrier after the thunk's ret"),
    PassDescriptor("retp_r", "R", _RETP_R, "returns through a shared popret trampoline"),
    PassDescriptor("fence_r", "R", _FENCE, "speculation barrier after every call"),
    PassDescriptor("fence_s", "S", _FENCE, "speculation barrier after every store"),
    PassDescriptor("uslh_b", "B", _SLH, "SLH with a misprediction flag, masking variable-latency operands"),
    PassDescriptor("sslh_b", "B", _SLH, "SLH with a misprediction flag"),
    PassDescriptor("fence_b", "B", _FENCE, "speculation barrier on both sides of every branch"),
)}

PASS_ORDER = ("fence_sls", "retp_j", "retp_j_fence", "retp_r", "fence_r", "fence_s",
              "uslh_b", "sslh_b", "fence_b")

R_SLH, R_SLHC, R_SCR, R_SCR2 = "r_slh", "r_slhC", "r_scr", "r_scr2"
RESERVED = (R_SLH, R_SLHC, R_SCR, R_SCR2)


def inserted_instrs(d: PassDescriptor | str) -> frozenset[str]:
    return (PASSES[d] if isinstance(d, str) else d).inserted


class _Fresh:
    def __init__(self, used):
        self.used = set(used)

    def __call__(self, base: str) -> str:
        k = 1
        while f"{base}.{k}" in self.used:
            k += 1
        name = f"{base}.{k}"
        self.used.add(name)
        return name

    def exact(self, name: str) -> str:
        if name in self.used:
            return self(name)
        self.used.add(name)
        return name


def _rebuild(p: Unit, functions) -> Unit:
    return Unit(p.kind, p.memory, p.imports, tuple(functions))


# --------------------------------------------------------------------------
# fences


def _fence_after(p: Unit, pred) -> Unit:
    fresh = _Fresh(p.all_labels())
    funs = []
    for f in p.functions:
        code = []
        for lab, i in f.code:
            code.append((lab, i))
            if pred(i):
                code.append((fresh(lab), SpBarr()))
        funs.append(Function(f.name, tuple(code)))
    return _rebuild(p, funs)


def fence_b(p: Unit) -> Unit:
    """Barrier after every beqz and at the entry of every branch target."""
    fresh = _Fresh(p.all_labels())
    targets = {i.label for i in p.instructions() if isinstance(i, Beqz)}
    funs = []
    for f in p.functions:
        code = []
        for lab, i in f.code:
            if lab in targets:
                code.append((lab, SpBarr()))
                code.append((fresh(lab), i))
            else:
                code.append((lab, i))
            if isinstance(i, Beqz):
                code.append((fresh(lab), SpBarr()))
        funs.append(Function(f.name, tuple(code)))
    return _rebuild(p, funs)


def fence_s(p: Unit) -> Unit:
    return _fence_after(p, lambda i: isinstance(i, (Store, StorePrv)))


def fence_r(p: Unit) -> Unit:
    return _fence_after(p, lambda i: isinstance(i, Call))


def fence_sls(p: Unit) -> Unit:
    return _fence_after(p, lambda i: isinstance(i, Ret))


# --------------------------------------------------------------------------
# retpolines


def _trap(fresh, lab):
    """``skip; spbarr; jmp skip`` starting at a fresh label after ``lab``."""
    l_skip, l_barr, l_jmp = fresh(lab), fresh(lab), fresh(lab)
    return [(l_skip, Skip()), (l_barr, SpBarr()), (l_jmp, Jmp(Lit(LabelVal(l_skip))))]


def _retp_j(p: Unit, fenced: bool) -> Unit:
    names = set(p.names)
    fresh = _Fresh(p.all_labels())
    funs = []
    for f in p.functions:
        code, thunks = [], []
        for lab, i in f.code:
            if isinstance(i, Jmp) and i.indirect:
                thunk = f"retpo_trg_{lab}"
                while thunk in names:
                    thunk += "_"
                names.add(thunk)
                code.append((lab, Call(thunk)))
                code.extend(_trap(fresh, lab))
                body = [(fresh.exact(f"{thunk}.0"), ModRet(i.target)), (fresh.exact(f"{thunk}.1"), Ret())]
                if fenced:
                    body.append((fresh.exact(f"{thunk}.2"), SpBarr()))
                thunks.append(Function(thunk, tuple(body)))
            else:
                code.append((lab, i))
        funs.append(Function(f.name, tuple(code)))
        funs.extend(thunks)
    return _rebuild(p, funs)


def retp_j(p: Unit) -> Unit:
    return _retp_j(p, fenced=False)


def retp_j_fence(p: Unit) -> Unit:
    return _retp_j(p, fenced=True)


def retp_r(p: Unit) -> Unit:
    if not any(isinstance(i, Ret) for i in p.instructions()):
        return p
    names = set(p.names)
    thunk = "Retpo"
    while thunk in names:
        thunk += "_"
    fresh = _Fresh(p.all_labels())
    funs = []
    for f in p.functions:
        code = []
        for lab, i in f.code:
            if isinstance(i, Ret):
                code.append((lab, Call(thunk)))
                code.extend(_trap(fresh, lab))
            else:
                code.append((lab, i))
        funs.append(Function(f.name, tuple(code)))
    funs.append(Function(thunk, ((fresh.exact(f"{thunk}.0"), PopRet()),
                                 (fresh.exact(f"{thunk}.1"), Ret()))))
    return _rebuild(p, funs)


# --------------------------------------------------------------------------
# speculative load hardening

_SCR = Reg(R_SCR)
_SCR2 = Reg(R_SCR2)


def _mask(reg: str, value=0):
    return CondAssign(reg, Lit(value), Un("!", Reg(R_SLH)))


def beqz_rewrite_sslh(lab: str, i: Beqz, nxt: str | None, fresh) -> list:
    """Seven-instruction block for ``lab: beqz x, l'``.

    The flag is raised on the fallthrough path when the scratch copy is 0 and
    on the taken path when it is nonzero, i.e. exactly when the branch was
    mispredicted.  ``nxt`` is the original successor inside the function.
    """
    l1, l2, l3, l4 = fresh(lab), fresh(lab), fresh(lab), fresh(lab)
    l_new, l_new2 = fresh(lab), fresh(lab)
    ft_raise = Assign(R_SLH, Bin("||", Reg(R_SLH), Un("!", _SCR)))
    tk_raise = Assign(R_SLH, Bin("||", Reg(R_SLH), _SCR))
    head = [(lab, Assign(R_SCR, Reg(i.reg))), (l1, _mask(R_SCR)), (l2, Beqz(R_SCR, l_new))]
    taken = [(l_new, tk_raise), (l_new2, Jmp(Lit(LabelVal(i.label))))]
    if nxt is not None:
        return head + [(l3, ft_raise), (l4, Jmp(Lit(LabelVal(nxt))))] + taken
    # no in-function successor: put the fallthrough block last so it keeps falling through
    l_skip = fresh(lab)
    return (head[:2] + [(l2, Beqz(R_SCR, l_new)), (l_skip, Jmp(Lit(LabelVal(l3))))]
            + taken + [(l3, ft_raise)])


def _slh(p: Unit, ultimate: bool, ext_vassign: bool) -> Unit:
    used = uses_register(p, RESERVED)
    if used:
        raise ReservedRegisterUsed(f"program already uses reserved register(s) {sorted(used)}")
    has_vassign = any(isinstance(i, VAssign) for i in p.instructions())
    if ultimate and has_vassign and not ext_vassign:
        raise ExtensionDisabled("uslh_b on vassign code needs the variable-latency extension")
    fresh = _Fresh(p.all_labels())
    funs = []
    for f in p.functions:
        labels = f.labels
        code = []
        if f.code:
            code.append((fresh(f.start), Assign(R_SLH, Reg(R_SLHC))))
        for k, (lab, i) in enumerate(f.code):
            nxt = labels[k + 1] if k + 1 < len(labels) else None
            match i:
                case Assign(x, e):
                    code += [(lab, Assign(R_SCR, e)), (fresh(lab), _mask(R_SCR)),
                             (fresh(lab), Assign(x, _SCR))]
                case Load(x, e) | LoadPrv(x, e) | Store(x, e) | StorePrv(x, e):
                    code += [(lab, Assign(R_SCR, e)), (fresh(lab), _mask(R_SCR)),
                             (fresh(lab), type(i)(x, _SCR))]
                case CondAssign(x, e, g):
                    code += [(lab, Assign(R_SCR, e)), (fresh(lab), Assign(R_SCR2, g)),
                             (fresh(lab), _mask(R_SCR)), (fresh(lab), _mask(R_SCR2)),
                             (fresh(lab), CondAssign(x, _SCR, _SCR2))]
                case VAssign(x, y, z) if ultimate:
                    code += [(lab, Assign(R_SCR, Reg(y))), (fresh(lab), Assign(R_SCR2, Reg(z))),
                             (fresh(lab), _mask(R_SCR)), (fresh(lab), _mask(R_SCR2)),
                             (fresh(lab), VAssign(x, R_SCR, R_SCR2))]
                case Jmp(e) if i.indirect:
                    # a static target is a constant; masking it would create an indirect jump
                    code += [(lab, Assign(R_SCR, e)), (fresh(lab), _mask(R_SCR, BOT)),
                             (fresh(lab), Jmp(_SCR))]
                case Call(g):
                    code += [(lab, Assign(R_SLHC, Reg(R_SLH))), (fresh(lab), Call(g)),
                             (fresh(lab), Assign(R_SLH, Reg(R_SLHC)))]
                case Ret():
                    code += [(lab, Assign(R_SLHC, Reg(R_SLH))), (fresh(lab), Ret())]
                case Beqz():
                    code += beqz_rewrite_sslh(lab, i, nxt, fresh)
                case _:
                    code.append((lab, i))
        funs.append(Function(f.name, tuple(code)))
    return _rebuild(p, funs)


def sslh_b(p: Unit, ext_vassign: bool = False) -> Unit:
    return _slh(p, ultimate=False, ext_vassign=ext_vassign)


def uslh_b(p: Unit, ext_vassign: bool = False) -> Unit:
    return _slh(p, ultimate=True, ext_vassign=ext_vassign)


_IMPL = {
    "fence_sls": fence_sls, "retp_j": retp_j, "retp_j_fence": retp_j_fence, "retp_r": retp_r,
    "fence_r": fence_r, "fence_s": fence_s, "uslh_b": uslh_b, "sslh_b": sslh_b, "fence_b": fence_b,
}


def compile(d: PassDescriptor | str, p: Unit, ext_vassign: bool = False) -> Unit:
    d = PASSES[d] if isinstance(d, str) else d
    fn = _IMPL[d.id]
    if d.id in ("uslh_b", "sslh_b"):
        return fn(p, ext_vassign=ext_vassign)
    return fn(p)
