"""Real-time voltage stability monitoring and N-1 security assessment engine."""

__version__ = "0.1.0"

from .netmodel import NetworkModel, load_case, build_ybus, apply_outage  # noqa: F401
from .acpf import solve_power_flow, build_jacobian, LoadDirection  # noqa: F401
