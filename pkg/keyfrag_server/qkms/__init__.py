#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

from .exceptions import DispatchError, DuplicateTagnameError, NegotiationError
from .service import Qkms, QkmsState
from .session import DispatchReport, PartyRequest, PendingSession, SessionRecord, SessionState

__all__ = [
    "DispatchError",
    "DispatchReport",
    "DuplicateTagnameError",
    "NegotiationError",
    "PartyRequest",
    "PendingSession",
    "Qkms",
    "QkmsState",
    "SessionRecord",
    "SessionState",
]
