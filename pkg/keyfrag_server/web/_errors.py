#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from aiohttp import web
from aiohttp.log import web_logger


class _ExceptionMixin(web.HTTPException):
    def __init__(self, msg: str) -> None:
        super().__init__(reason=type(self).__name__, text=msg)

        # web.HTTPException uses the HTTP reason (which should be very short) as the exception message (which should be
        # detailed). This sets the message to our detailed one.
        Exception.__init__(self, msg)

        web_logger.info(msg)


class MainBodyMissingError(web.HTTPBadRequest, _ExceptionMixin):
    def __init__(self) -> None:
        super().__init__("The main body is required but was not provided.")


class TagnameTakenError(web.HTTPConflict, _ExceptionMixin):
    pass


class KeyNegotiationError(web.HTTPConflict, _ExceptionMixin):
    pass


class UnsupportedKeyLengthError(web.HTTPBadRequest, _ExceptionMixin):
    pass


class DispatchFailedError(web.HTTPBadGateway, _ExceptionMixin):
    pass


class UpstreamUnavailableError(web.HTTPBadGateway, _ExceptionMixin):
    pass


class CredentialRejectedError(web.HTTPForbidden, _ExceptionMixin):
    pass


class TunnelRejectedError(web.HTTPBadRequest, _ExceptionMixin):
    pass


class KemUnsupportedError(web.HTTPNotImplemented, _ExceptionMixin):
    def __init__(self) -> None:
        super().__init__("This node has no post-quantum KEM provider configured.")


class RoutingError(web.HTTPBadRequest, _ExceptionMixin):
    pass
