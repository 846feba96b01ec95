"""Annotation cost arithmetic.

A classification query picks one of L options and costs log2(L) bits. A
correction query is a binary confirm (1 bit) that falls back to the L-ary
question when the shown label is wrong, so its expected cost is
p + (1 - p) * log2(L) where p is the chance the shown label is correct.
The ledger accounts realized branch costs (1 bit per confirmation, log2 L
per correction), which matches the expectation as clicks grow.
"""

from __future__ import annotations

import math

from .core import BudgetLedger


class InvalidL(ValueError):
    pass


class InvalidP(ValueError):
    pass


def _check(L: int, p: float | None = None) -> None:
    if L < 2:
        raise InvalidL(f"need at least 2 classes, got {L}")
    if p is not None and not 0.0 <= p <= 1.0:
        raise InvalidP(f"p={p} outside [0, 1]")


def classification_cost(L: int) -> float:
    """Bits to pick one of L classes directly."""
    _check(L)
    return math.log2(L)


def correction_cost(L: int, p: float) -> float:
    """Expected bits per correction query when the shown label is right with
    probability p."""
    _check(L, p)
    return p + (1.0 - p) * math.log2(L)


def cost_saving_rate(L: int, p: float) -> float:
    """Fraction of classification-query budget saved by correction queries:
    (1 - 1/log2 L) * p."""
    _check(L, p)
    return (1.0 - 1.0 / math.log2(L)) * p


def normalized_click_cost(ledger: BudgetLedger, L: int) -> float:
    """Realized information cost of a ledger: confirmations at 1 bit each,
    corrections at log2(L) bits each."""
    _check(L)
    return ledger.confirmations * 1.0 + ledger.corrections * math.log2(L)


def cost_table(l_values: list[int], p_values: list[float]) -> list[dict]:
    """Rows of (L, p) costs and ratios, ready for CSV dumping."""
    rows = []
    for L in l_values:
        for p in p_values:
            cls = classification_cost(L)
            cor = correction_cost(L, p)
            rows.append({
                "L": L,
                "p": p,
                "classification_bits": cls,
                "correction_bits": cor,
                "ratio": cor / cls,
                "saving_rate": cost_saving_rate(L, p),
            })
    return rows
