#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
"""Terminating side of the post-quantum request tunnel."""

from time import perf_counter_ns
from typing import TypeVar

from pydantic import ValidationError

from keyfrag_common.kem import KemError, KemKeyPair, KemProvider, TunnelError, TunnelKey, tunnel_context
from keyfrag_common.models import KeyRequest, KemPublicKey, TunnelEnvelope

_R = TypeVar("_R", bound=KeyRequest)


class TunnelEndpoint:
    """Holds a node's KEM key pair and opens tunnelled key requests addressed to it."""

    def __init__(self, provider: KemProvider, keypair: KemKeyPair | None = None):
        self.provider = provider
        self._keypair = keypair or provider.generate_keypair()

    def public_key(self) -> KemPublicKey:
        return KemPublicKey(provider=self.provider.name, public_key=self._keypair.public_key)

    def open(self, envelope: TunnelEnvelope, request_type: type[_R]) -> tuple[_R, TunnelKey, float]:
        """Decapsulates, opens and validates a tunnelled request.

        The tunnel context must be the hash of the tagname inside the request.

        Raises:
            TunnelError: On any KEM, authentication, parsing or context failure.
        """
        start = perf_counter_ns()
        if envelope.provider != self.provider.name:
            msg = f"Tunnel uses KEM provider '{envelope.provider}', expected '{self.provider.name}'."
            raise TunnelError(msg)

        try:
            shared_secret = self.provider.decapsulate(self._keypair.secret_key, envelope.kem_ciphertext)
        except KemError as error:
            msg = f"KEM decapsulation failed: {error}"
            raise TunnelError(msg) from error

        key = TunnelKey.derive(shared_secret, envelope.context)
        plaintext = key.open(envelope.sealed, envelope.context.encode())
        kem_micros = (perf_counter_ns() - start) / 1000

        try:
            request = request_type.model_validate_json(plaintext)
        except ValidationError as error:
            msg = f"Tunnelled request is not a valid key request: {error}"
            raise TunnelError(msg) from error

        if tunnel_context(request.tagname) != envelope.context:
            msg = "Tunnel context does not match the tagname of the request."
            raise TunnelError(msg)

        return request, key, kem_micros
