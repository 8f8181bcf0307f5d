"""Peer-to-peer layer: framing, handshake, gossip, sync and content fetch."""

from .peer import HandshakeResult, PeerNetwork, PeerSession
from .wire import DEFAULT_PORT, MAX_FRAME, PROTOCOL_VERSION, FrameDecoder, Hello, InvKind, MsgType

__all__ = [
    "DEFAULT_PORT",
    "MAX_FRAME",
    "PROTOCOL_VERSION",
    "FrameDecoder",
    "HandshakeResult",
    "Hello",
    "InvKind",
    "MsgType",
    "PeerNetwork",
    "PeerSession",
]
