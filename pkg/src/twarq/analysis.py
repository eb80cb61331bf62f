"""Exact steady-state throughput via the expanded protocol/channel chain.

The coarse protocol cycle has three phases: T0 (first slot of a round, S1
transmits), T1 (second slot, S2 transmits), and R (retransmitting).  Each
phase is expanded into sub-states that pin down everything the next slot
depends on:

    T0(i)       i = joint channel index during the slot
    T1(a, i)    a = dec[ps1, rs1] left behind by the first slot
    R(b, i)     b = dec[ps1, ps2, rs1, rs2], b <= 11
    R(b, i, t)  rows that also need the scheduler token

The ARQ part of every transition is deterministic (it is the protocol rules
replayed symbolically), so entry (m, n) of the transition matrix is the
joint-channel step probability p_c(i_m, i_n) whenever the protocol maps m's
configuration to n's, and zero otherwise.  Stacking blocks in the order
T0, T1, R gives the structure

    [ 0    P01  0   ]
    [ P10  0    P1R ]
    [ PR0  0    PRR ],

and the throughput is twice the stationary mass of the T0 block: two
packets delivered per round, one round per T0 visit.

Token bookkeeping per strategy: the AR family tokens every row (the
alternation bit persists across rows), the CR family tokens exactly the
C rows (the bit caches the feedback-based choice made when the row was
entered), RR needs none.  That yields 8+32+96 = 136 sub-states for RR and
RR-NC, 8+32+192 = 232 for AR and AR-NC, 176 for CR-NC and 184 for CR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import GOOD, BAD, JointChannelModel, LinkId, joint_matrix, stationary_link
from .exceptions import NumericalError
from .protocol import (
    Action,
    ArqState,
    NodeId,
    Payload,
    Phase,
    PolicyContext,
    Strategy,
    XorConvention,
    advance_token,
    apply_slot,
    c_rows,
    policy_action,
)

__all__ = [
    "SteadyState",
    "SubState",
    "SubStateSpace",
    "aggregate_coarse",
    "analytic_throughput",
    "enumerate_substates",
    "steady_state",
    "sw_arq_throughput",
    "throughput",
    "transition_matrix",
]

N_CHAN = 8

# Sub-state totals implied by the policy table; enumerate_substates asserts them.
_EXPECTED_SIZE = {
    Strategy.RR: 136,
    Strategy.RR_NC: 136,
    Strategy.AR: 232,
    Strategy.AR_NC: 232,
    Strategy.CR: 184,
    Strategy.CR_NC: 176,
}


@dataclass(frozen=True)
class SubState:
    """One expanded chain state; unused indices stay None."""

    kind: str  # "T0" | "T1" | "R"
    chan: int
    a: int | None = None
    b: int | None = None
    token: int | None = None


class SubStateSpace:
    """Ordered sub-state list for one strategy, with both index directions."""

    def __init__(self, strategy: Strategy):
        if not strategy.cooperative:
            raise ValueError(
                "the stop-and-wait baseline has a closed-form throughput; "
                "no sub-state chain is defined for it"
            )
        self.strategy = strategy
        if strategy in (Strategy.AR, Strategy.AR_NC):
            tokened = tuple(range(12))
        elif strategy in (Strategy.CR, Strategy.CR_NC):
            tokened = c_rows(strategy)
        else:
            tokened = ()
        self.tokened_rows = frozenset(tokened)

        states: list[SubState] = []
        states += [SubState("T0", i) for i in range(N_CHAN)]
        states += [SubState("T1", i, a=a) for a in range(4) for i in range(N_CHAN)]
        for b in range(12):
            if b in self.tokened_rows:
                for t in (0, 1):
                    states += [SubState("R", i, b=b, token=t) for i in range(N_CHAN)]
            else:
                states += [SubState("R", i, b=b) for i in range(N_CHAN)]
        self.states = states
        self.index = {s: m for m, s in enumerate(states)}
        self.n_t0 = N_CHAN
        self.n_t1 = 4 * N_CHAN
        self.n_r = len(states) - self.n_t0 - self.n_t1
        assert len(states) == _EXPECTED_SIZE[strategy], (strategy, len(states))

    def __len__(self) -> int:
        return len(self.states)

    @property
    def t0_slice(self) -> slice:
        return slice(0, self.n_t0)

    @property
    def t1_slice(self) -> slice:
        return slice(self.n_t0, self.n_t0 + self.n_t1)

    @property
    def r_slice(self) -> slice:
        return slice(self.n_t0 + self.n_t1, len(self.states))


def enumerate_substates(strategy: Strategy) -> SubStateSpace:
    """Full ordered sub-state space for a cooperative strategy."""
    return SubStateSpace(strategy)


def _t1_state(a: int) -> ArqState:
    return ArqState(ps1=(a >> 1) & 1, ps2=0, rs1=a & 1, rs2=0)


def _row_ctx(strategy: Strategy, token: int | None) -> PolicyContext:
    """Context that makes policy_action reproduce a stored token decision.

    AR reads the token directly.  CR reads the feedback view, so encode the
    cached bit there: direct link Good and both relay links Bad exactly when
    the cached choice was the source.
    """
    ctx = PolicyContext(phase=Phase.RETRANSMISSION, token=token or 0)
    if strategy in (Strategy.CR, Strategy.CR_NC) and token is not None:
        relay_bit = BAD if token else GOOD
        ctx.observe(LinkId.S1S2, GOOD, -1)
        ctx.observe(LinkId.S1R, relay_bit, -1)
        ctx.observe(LinkId.S2R, relay_bit, -1)
    return ctx


def _next_token(
    strategy: Strategy,
    space: SubStateSpace,
    executed: ArqState | None,
    exec_token: int | None,
    next_state: ArqState,
    chan_index: int,
) -> int | None:
    """Token carried into the next retransmission sub-state, None if untokened.

    chan_index is the channel during the slot just executed; for CR that is
    exactly the feedback the next decision will be based on.
    """
    if next_state.b_index not in space.tokened_rows:
        return None
    if strategy in (Strategy.AR, Strategy.AR_NC):
        ctx = PolicyContext(phase=Phase.RETRANSMISSION, token=exec_token or 0)
        advance_token(strategy, ctx, executed, next_state)
        return ctx.token
    # CR family: recompute the decision from the just-observed channel.
    ctx = PolicyContext(phase=Phase.RETRANSMISSION)
    ctx.set_csi_from_index(chan_index, -1)
    advance_token(strategy, ctx, executed, next_state)
    return ctx.token


def transition_matrix(
    space: SubStateSpace,
    model: JointChannelModel,
    xor_convention: XorConvention = XorConvention.SAME_INDEX,
) -> np.ndarray:
    """Dense row-stochastic matrix of the sub-state chain.

    Each row has exactly eight nonzeros: the protocol maps the row's
    configuration to one target configuration, and the channel moves to any
    of the eight joint states with probability p_c(i, j).
    """
    strategy = space.strategy
    p_c = joint_matrix(model)
    n = len(space)
    mat = np.zeros((n, n))

    for m, sub in enumerate(space.states):
        i = sub.chan
        if sub.kind == "T0":
            out = apply_slot(ArqState(), Action(NodeId.S1, Payload.P1), i)
            a_new = (out.state.ps1 << 1) | out.state.rs1
            targets = [SubState("T1", j, a=a_new) for j in range(N_CHAN)]
        elif sub.kind == "T1":
            out = apply_slot(_t1_state(sub.a), Action(NodeId.S2, Payload.P2), i)
            if out.state.complete:
                targets = [SubState("T0", j) for j in range(N_CHAN)]
            else:
                t_new = _next_token(strategy, space, None, None, out.state, i)
                targets = [
                    SubState("R", j, b=out.state.b_index, token=t_new)
                    for j in range(N_CHAN)
                ]
        else:
            state = ArqState.from_b_index(sub.b)
            ctx = _row_ctx(strategy, sub.token)
            action = policy_action(strategy, state, ctx)
            out = apply_slot(state, action, i, xor_convention)
            if out.state.complete:
                targets = [SubState("T0", j) for j in range(N_CHAN)]
            else:
                t_new = _next_token(strategy, space, state, sub.token, out.state, i)
                targets = [
                    SubState("R", j, b=out.state.b_index, token=t_new)
                    for j in range(N_CHAN)
                ]
        for j, target in enumerate(targets):
            mat[m, space.index[target]] = p_c[i, j]

    rowsum_err = np.abs(mat.sum(axis=1) - 1.0).max()
    if rowsum_err > 1e-12:
        raise NumericalError(f"transition matrix rows off stochastic by {rowsum_err}")
    return mat


@dataclass(frozen=True)
class SteadyState:
    """Stationary distribution and the sup-norm residual of pi P = pi."""

    pi: np.ndarray
    residual: float


def _power_iteration(mat: np.ndarray, tol: float = 1e-14, max_iter: int = 2_000_000) -> np.ndarray:
    """Damped power iteration; the averaging kills period-2 cycles."""
    n = mat.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = 0.5 * (pi + pi @ mat)
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < tol:
            return nxt
        pi = nxt
    raise NumericalError("power iteration did not converge")


def _deterministic_steady(mat: np.ndarray) -> SteadyState:
    """Exact stationary law of a 0/1 transition matrix (degenerate links).

    The chain is a functional graph; the single recurrent class reachable
    from the first state is a cycle, and the stationary law is uniform on
    it.  This keeps limits like the all-Good channel exact instead of
    carrying linear-solver roundoff.
    """
    succ = mat.argmax(axis=1)
    seen: dict[int, int] = {}
    state = 0
    while state not in seen:
        seen[state] = len(seen)
        state = int(succ[state])
    cycle = [s for s, order in seen.items() if order >= seen[state]]
    pi = np.zeros(mat.shape[0])
    pi[cycle] = 1.0 / len(cycle)
    return SteadyState(pi=pi, residual=float(np.abs(pi @ mat - pi).max()))


def steady_state(mat: np.ndarray, residual_tol: float = 1e-10) -> SteadyState:
    """Solve pi = pi P with sum(pi) = 1 by a direct least-squares solve.

    Deterministic (0/1) matrices from degenerate channel limits are solved
    exactly by cycle detection.  Otherwise the solver falls back to damped
    power iteration when the direct solve produces negative mass or a
    residual above residual_tol, and raises NumericalError if neither
    route meets the tolerance.
    """
    n = mat.shape[0]
    if mat.shape != (n, n):
        raise ValueError("transition matrix must be square")
    if np.abs(mat.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("matrix is not row-stochastic")
    if np.all((mat == 0.0) | (mat == 1.0)):
        return _deterministic_steady(mat)

    system = np.vstack([mat.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)

    def _finish(vec: np.ndarray) -> SteadyState | None:
        if vec.min() < -1e-10:
            return None
        vec = np.clip(vec, 0.0, None)
        vec = vec / vec.sum()
        res = float(np.abs(vec @ mat - vec).max())
        if res > residual_tol or abs(vec.sum() - 1.0) > 1e-12:
            return None
        return SteadyState(pi=vec, residual=res)

    solved = _finish(pi)
    if solved is None:
        solved = _finish(_power_iteration(mat))
    if solved is None:
        raise NumericalError(
            "steady-state solve failed: negative mass or residual above "
            f"{residual_tol} from both the direct solve and power iteration"
        )
    return solved


def throughput(space: SubStateSpace, steady: SteadyState | np.ndarray) -> float:
    """Packets per slot: twice the stationary probability of the T0 block."""
    pi = steady.pi if isinstance(steady, SteadyState) else steady
    return 2.0 * float(pi[space.t0_slice].sum())


def aggregate_coarse(
    space: SubStateSpace, steady: SteadyState | np.ndarray
) -> tuple[float, float, float]:
    """Collapse the stationary law onto the coarse (T0, T1, R) phases."""
    pi = steady.pi if isinstance(steady, SteadyState) else steady
    return (
        float(pi[space.t0_slice].sum()),
        float(pi[space.t1_slice].sum()),
        float(pi[space.r_slice].sum()),
    )


def sw_arq_throughput(p_ss: float) -> float:
    """Stop-and-wait baseline: 1 - P_ss, independent of channel correlation."""
    if not 0.0 <= p_ss < 1.0:
        raise ValueError(f"direct-link outage probability must be in [0, 1), got {p_ss}")
    return 1.0 - p_ss


def analytic_throughput(
    strategy: Strategy,
    model: JointChannelModel,
    xor_convention: XorConvention = XorConvention.SAME_INDEX,
) -> float:
    """End-to-end throughput for any strategy under the given channel model."""
    if strategy is Strategy.SW_ARQ:
        p_ss, _ = stationary_link(model.s1s2)
        return sw_arq_throughput(p_ss)
    space = enumerate_substates(strategy)
    mat = transition_matrix(space, model, xor_convention)
    return throughput(space, steady_state(mat))
