#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.


class HarnessError(Exception):
    """The benchmark could not be set up or its input is unusable."""


class NoRecordsError(HarnessError):
    def __init__(self) -> None:
        super().__init__("There are no successful trial records to summarize.")
