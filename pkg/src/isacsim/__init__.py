"""Discrete-event simulator of an ISAC service-based control and sensing plane."""
from __future__ import annotations

from .errors import IsacError
from .scenario import ScenarioDoc, build, execute, load_scenario, make_report, run

__all__ = ["IsacError", "ScenarioDoc", "build", "execute", "load_scenario", "make_report", "run"]
__version__ = "0.1.0"
