#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import logging
from collections.abc import MutableMapping
from typing import Any


class SessionAdapter(logging.LoggerAdapter):
    """Prefixes every message with the session tagname, if one is given as `session` in the extras."""

    def process(self, msg: str, kwargs: MutableMapping[str, Any]) -> tuple[str, MutableMapping[str, Any]]:
        if self.extra and "session" in self.extra:
            return f"[{self.extra['session']}] {msg}", kwargs
        return msg, kwargs


def session_logger(logger: logging.Logger, tagname: str) -> SessionAdapter:
    return SessionAdapter(logger, {"session": tagname})
