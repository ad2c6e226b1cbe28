#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
from itertools import count

from polyfactory import Use
from polyfactory.factories.pydantic_factory import ModelFactory as _ModelFactory

from keyfrag_common import models as _models
from keyfrag_common.keycore import AsymmetricKeyPair

# Generating RSA keys is slow, so all factory-built requests share one key pair.
_SHARED_KEYPAIR = AsymmetricKeyPair.generate()
_channel_numbers = count()


class LatencyModelFactory(_ModelFactory):
    __model__ = _models.LatencyModel

    distribution = _models.LatencyDistribution.CONSTANT
    params = (0.0,)


class ChannelDescriptorFactory(_ModelFactory):
    __model__ = _models.ChannelDescriptor

    channel_id = Use(lambda: f"channel-{next(_channel_numbers)}")
    host = "127.0.0.1"
    port = Use(lambda: 20000 + next(_channel_numbers) % 20000)
    latency_model = Use(LatencyModelFactory.build)
    tapped = False


class KeyRequestFactory(_ModelFactory):
    __model__ = _models.KeyRequest

    tagname = Use(lambda: f"tag-{next(_channel_numbers)}")
    key_bits = 256
    num_splits = 8
    channels = Use(lambda: ChannelDescriptorFactory.batch(2))
    public_key = _SHARED_KEYPAIR.public_key
    party_label = "alice"


class ProxyKeyRequestFactory(KeyRequestFactory):
    __model__ = _models.ProxyKeyRequest

    channels = Use(list)
    reply_to = "http://127.0.0.1:1"
    credential = None


class FragmentMessageFactory(_ModelFactory):
    __model__ = _models.FragmentMessage


def shared_keypair() -> AsymmetricKeyPair:
    """The key pair whose public half every factory-built request carries."""
    return _SHARED_KEYPAIR
