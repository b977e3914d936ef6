"""Sliding-window risk budget: bad-step counting and the safety certificate.

A step is bad when the filter's slack exceeds the risk cap or the minimum
residual falls below the good-step margin,

    b_k = 1{nu_k > nu_bar}  or  1{r_min,k < margin}.

Over a window of W steps with at most M bad ones, the discrete comparison
h_{j+1} >= mu*h_j + c*r_j gives the worst terminal value when the bad steps
sit at the window's end (the enumeration oracle in the tests confirms this),

    h_W >= mu^W h_0 + c * (margin * sum_{l=M}^{W-1} mu^l
                           - nu_bar * sum_{l=0}^{M-1} mu^l),

and the largest cap that keeps the bracket nonnegative from h_0 >= 0 is

    nu_bar = margin * mu^M * (1 - mu^{W-M}) / (1 - mu^M).
"""

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

from .barrier import BarrierParams, derive_discrete


def nu_cap(window: int, budget: int, margin: float, mu: float) -> float:
    """Largest per-step risk cap certified by the window budget.

    budget = 0 never spends risk, so the cap is unconstrained (+inf);
    budget = window leaves no good steps to pay it back, so the cap is 0.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    if not 0 <= budget <= window:
        raise ValueError("budget must lie in [0, window]")
    if not 0.0 < mu < 1.0:
        raise ValueError("mu must lie in (0, 1)")
    if margin <= 0.0:
        raise ValueError("margin must be positive")
    if budget == 0:
        return math.inf
    if budget == window:
        return 0.0
    return margin * mu**budget * (1.0 - mu ** (window - budget)) / (1.0 - mu**budget)


def certificate_holds(window: int, budget: int, margin: float, nu_bar: float, mu: float) -> bool:
    """Window certificate: mu^M (1 - mu^{W-M}) margin >= (1 - mu^M) nu_bar.

    The cap from nu_cap satisfies this with equality, so the comparison
    carries a relative slack far below any meaningful cap inflation.
    """
    if budget == 0:
        return True
    lhs = mu**budget * (1.0 - mu ** (window - budget)) * margin
    rhs = (1.0 - mu**budget) * nu_bar
    return lhs >= rhs - 1e-12 * max(abs(lhs), abs(rhs))


@dataclass
class RiskBudgetConfig:
    """Window parameters; nu_bar derives from the cap formula when omitted."""

    window: int = 5
    budget: int = 1
    margin: float = 1.0
    nu_bar: Optional[float] = None
    barrier: BarrierParams = field(default_factory=BarrierParams)
    ts: float = 0.02

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not 0 <= self.budget <= self.window:
            raise ValueError("budget must lie in [0, window]")
        if self.margin <= 0.0:
            raise ValueError("margin must be positive")
        if self.ts <= 0.0:
            raise ValueError("ts must be positive")
        if self.nu_bar is None:
            self.nu_bar = nu_cap(self.window, self.budget, self.margin, self.mu)
        elif self.nu_bar < 0.0:
            raise ValueError("nu_bar must be nonnegative")

    @property
    def mu(self) -> float:
        return derive_discrete(self.barrier.kappa, self.ts)[0]

    @property
    def c(self) -> float:
        return derive_discrete(self.barrier.kappa, self.ts)[1]


def worst_case_terminal_bound(h0: float, cfg: RiskBudgetConfig) -> float:
    """Terminal barrier bound after one window's worst admissible sequence.

    Evaluates mu^W h0 + c (margin * sum_{l=M}^{W-1} mu^l
    - nu_bar * sum_{l=0}^{M-1} mu^l); pass h0 = 0 for the conservative form
    that drops the decayed start term.
    """
    mu, c = cfg.mu, cfg.c
    good = cfg.margin * sum(mu**l for l in range(cfg.budget, cfg.window))
    bad = cfg.nu_bar * sum(mu**l for l in range(cfg.budget)) if cfg.budget else 0.0
    return mu**cfg.window * h0 + c * (good - bad)


def brute_force_window_min(
    h0: float, window: int, budget: int, margin: float, nu_bar: float, mu: float, c: float
) -> float:
    """Exact minimum of the window recursion over all bad-step placements.

    Unrolls h_{j+1} = mu*h_j + c*v_j with v_j in {margin, -nu_bar} over every
    placement of m <= budget bad steps.  Combinatorial oracle, small windows
    only.
    """
    if window > 20:
        raise ValueError("window too large for enumeration")
    best = math.inf
    for m in range(budget + 1):
        for slots in combinations(range(window), m):
            h = h0
            for j in range(window):
                v = -nu_bar if j in slots else margin
                h = mu * h + c * v
            best = min(best, h)
    return best


def classify_step(nu_k: float, r_min_k: float, cfg: RiskBudgetConfig) -> int:
    """Bad-step indicator: excessive slack or insufficient residual margin."""
    return int(nu_k > cfg.nu_bar or r_min_k < cfg.margin)


@dataclass(frozen=True)
class MonitorState:
    """Ring of the last W bad-step bits (oldest first) plus running count."""

    ring: tuple
    m: int
    k: int


def fresh_state(window: int) -> MonitorState:
    # all-zero start: the first W steps count only observed bad steps
    return MonitorState(ring=(0,) * window, m=0, k=0)


def window_update(st: MonitorState, b_k: int) -> MonitorState:
    """Slide the window one step: m_k = m_{k-1} + b_k - b_{k-W}."""
    evicted = st.ring[0]
    return MonitorState(ring=st.ring[1:] + (int(b_k),), m=st.m + int(b_k) - evicted, k=st.k + 1)
