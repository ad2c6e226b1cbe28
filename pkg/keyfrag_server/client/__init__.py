#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

from .errors import KemModeError, SessionFailedError, SessionStateError
from .probe import ProbeError, open_probe, seal_probe
from .service import KeyClient
from .session import ClientMode, ClientSessionState, KeyParameters, SessionPhase

__all__ = [
    "ClientMode",
    "ClientSessionState",
    "KemModeError",
    "KeyClient",
    "KeyParameters",
    "ProbeError",
    "SessionFailedError",
    "SessionPhase",
    "SessionStateError",
    "open_probe",
    "seal_probe",
]
