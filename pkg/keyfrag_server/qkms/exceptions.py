#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.


class DuplicateTagnameError(Exception):
    def __init__(self, tagname: str):
        self.tagname = tagname
        super().__init__(f"Tagname '{tagname}' already has two parties.")


class NegotiationError(Exception):
    def __init__(self, tagname: str, first_bits: int, second_bits: int):
        self.tagname = tagname
        super().__init__(
            f"Parties of tagname '{tagname}' disagree on the key length: {first_bits} bits vs. {second_bits} bits."
        )


class DispatchError(Exception):
    def __init__(self, tagname: str, party_label: str, cause: Exception):
        self.tagname = tagname
        self.party_label = party_label
        super().__init__(f"Dispatch of session '{tagname}' to party '{party_label}' failed, session aborted: {cause}")
