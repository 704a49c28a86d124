"""The two-point taint lattice S < U."""

from enum import IntEnum


class Taint(IntEnum):
    S = 0
    U = 1

    def join(self, other: "Taint") -> "Taint":
        return self if self >= other else other

    def meet(self, other: "Taint") -> "Taint":
        return self if self <= other else other


S = Taint.S
U = Taint.U


def join(*ts: Taint) -> Taint:
    return max(ts, default=S)


def meet(*ts: Taint) -> Taint:
    return min(ts, default=U)
