#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

from ._client import client_routes
from ._proxy import proxy_routes
from ._qkms import qkms_routes
from ._status import status_routes

qkms_app_routes = (*qkms_routes, *status_routes)
proxy_app_routes = (*proxy_routes, *status_routes)
client_app_routes = (*client_routes, *status_routes)

__all__ = ["client_app_routes", "proxy_app_routes", "qkms_app_routes"]
