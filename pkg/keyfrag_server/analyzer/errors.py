#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.


class AnalysisError(ValueError):
    pass


class DimensionMismatchError(AnalysisError):
    def __init__(self, capacities: int, allocation: int):
        super().__init__(f"Capacity vector has {capacities} entries but the allocation has {allocation}.")


class InfeasibleBudgetError(AnalysisError):
    pass


class InsufficientSamplesError(AnalysisError):
    def __init__(self, samples: int, required: int):
        super().__init__(f"Need at least {required} samples, got {samples}.")


class AnalysisParameterError(AnalysisError):
    pass
