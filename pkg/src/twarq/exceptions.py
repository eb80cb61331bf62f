"""Package-wide exception types."""


class NumericalError(RuntimeError):
    """A computed quantity violated a numerical sanity bound.

    Raised instead of silently clamping when a probability falls outside
    its tolerance band or a steady-state solve fails to converge, since
    either condition points at a broken upstream computation.
    """


class ProtocolError(RuntimeError):
    """An ARQ state machine rule was violated.

    Examples: asking for a retransmission action when the round is already
    complete, or scheduling the relay to send a packet it never received.
    """
