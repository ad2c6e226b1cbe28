#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.


class SessionStateError(Exception):
    def __init__(self, tagname: str, phase: str, action: str):
        self.tagname = tagname
        self.phase = phase
        super().__init__(f"Cannot {action} session '{tagname}' while it is {phase}.")


class SessionFailedError(Exception):
    def __init__(self, tagname: str, reason: str):
        self.tagname = tagname
        self.reason = reason
        super().__init__(f"Session '{tagname}' failed: {reason}")


class KemModeError(Exception):
    """The post-quantum tunnel could not be established. There is no fallback to the classical mode."""
