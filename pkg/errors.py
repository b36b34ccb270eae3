"""
Toolchain Errors
User-facing exceptions shared by every stage of the pipeline.

Each error carries the exit code the command line reports for it:
1 for usage, IO and parse problems, 2 for analysis verdicts.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_REJECT = 2


class MdfgError(Exception):
    """Base class for all toolchain errors."""

    exit_code = EXIT_USAGE

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InputFileError(MdfgError):
    """A referenced file is missing or malformed."""


class GraphError(MdfgError):
    """Malformed graph construction or a graph that fails a precondition."""


class MdfgSyntaxError(MdfgError):
    """Lexical, syntax or scope error in a .mdfg program."""

    def __init__(self, message: str, line: int, column: int, category: str = "syntax"):
        super().__init__(message)
        self.line = max(line, 1)
        self.column = max(column, 1)
        self.category = category

    def format(self, filename: str = "<input>") -> str:
        return f"{filename}:{self.line}:{self.column}: error: {self.message}"

    def __str__(self) -> str:
        return self.format()


class LoweringError(MdfgError):
    """A parsed program that cannot be turned into a graph."""


class MissingSpecError(MdfgError):
    exit_code = EXIT_REJECT

    def __init__(self, node: str, pe_class: str):
        super().__init__(f"no performance specification for {node} on {pe_class}")
        self.node = node
        self.pe_class = pe_class


class UnboundedFifoError(MdfgError):
    """Fifo edges whose producer outpaces the consumer."""

    exit_code = EXIT_REJECT

    def __init__(self, edges: list, partial: dict):
        labels = ", ".join(edge.label for edge in edges)
        super().__init__(f"unbounded fifo: {labels}")
        self.edges = edges
        self.partial = partial


class UnmappableError(MdfgError):
    exit_code = EXIT_REJECT

    def __init__(self, node: str):
        super().__init__(f"no processing element can host {node}")
        self.node = node


class InfeasibleError(MdfgError):
    exit_code = EXIT_REJECT


class SearchSpaceTooLargeError(MdfgError):
    pass


class EnvTraceError(MdfgError):
    pass


class KnobModelError(MdfgError):
    pass


class EmptyFrontierError(MdfgError):
    exit_code = EXIT_REJECT


class OverflowGuardError(MdfgError):
    pass


class NoSafeConfigError(MdfgError):
    exit_code = EXIT_REJECT

    def __init__(self, workload: float, fastest):
        super().__init__(f"no frontier point meets the deadline at workload {workload:g}")
        self.workload = workload
        self.fastest = fastest
