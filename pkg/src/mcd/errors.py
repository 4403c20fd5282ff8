"""Exception hierarchy. The CLI maps ``DataError`` to exit 2 and
``PipelineError`` to exit 3."""


class MCDError(Exception):
    pass


class DataError(MCDError):
    """Missing, ill-formed or inconsistent input files."""


class PipelineError(MCDError):
    """A stage could not produce a result (degenerate input, divergence)."""


class NoAnteriorSegment(PipelineError):
    def __init__(self, msg="no anterior segment found"):
        super().__init__(msg)


class PromptsOutsideDarkRegion(PipelineError):
    def __init__(self, msg="prompts outside dark region"):
        super().__init__(msg)


class DegenerateHistogram(PipelineError):
    def __init__(self, msg="degenerate histogram"):
        super().__init__(msg)


class TrainingDiverged(PipelineError):
    pass
