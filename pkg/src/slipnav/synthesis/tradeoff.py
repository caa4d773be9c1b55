"""Expected-step bounds for the decaying goal-reaching switch."""
from __future__ import annotations

import math
from dataclasses import dataclass

BISECTION_TOL = 1e-9


@dataclass(frozen=True)
class TradeoffBounds:
    m_switch: float  # steps until the LTL action becomes the more likely branch
    m_ltl: float  # steps after which expected net LTL progress exceeds the product size
    rl_proportion: float  # expected fraction of RL actions over the first m_ltl steps


def switch_step(c: float, eps: float) -> float:
    """Step at which C exp(-eps m) falls to one half (0 if it starts there or below)."""
    if c <= 0.5:
        return 0.0
    return -math.log(0.5 / c) / eps


def net_progress(m: float, m_switch: float, c: float, eps: float) -> float:
    """Closed-form integral of (1 - 2 C exp(-eps t)) for t from m_switch to m."""
    return (m - m_switch) + (2.0 * c / eps) * (math.exp(-eps * m) - math.exp(-eps * m_switch))


def tradeoff_bounds(c: float, eps: float, product_size: int) -> TradeoffBounds:
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < c < 1:
        raise ValueError("C must lie in (0, 1)")
    m_switch = switch_step(c, eps)
    lo = m_switch
    hi = m_switch + product_size + 2.0 * c / eps + 1.0
    while hi - lo > BISECTION_TOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if net_progress(mid, m_switch, c, eps) > product_size:
            hi = mid
        else:
            lo = mid
    m_ltl = hi
    proportion = c / (m_ltl * eps) * (1.0 - math.exp(-eps * m_ltl))
    return TradeoffBounds(m_switch, m_ltl, proportion)
