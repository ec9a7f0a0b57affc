"""Linear SDP backend: embedded interior-point solver and SDPA file I/O."""
from .problem import DegenerateProblemError, SdpOptions, SdpProblem, SdpSolution, SdpStatus
from .sdpa import SdpaParseError, export_sdpa, import_solution, read_sdpa, write_solution
from .solver import solve

__all__ = ["DegenerateProblemError", "SdpOptions", "SdpProblem", "SdpSolution", "SdpStatus", "solve",
    "SdpaParseError", "export_sdpa", "import_solution", "read_sdpa", "write_solution"]
