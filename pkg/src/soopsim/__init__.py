"""Joint localization and clock-parameter bounds for two agents using signals of opportunity."""

from .errors import SoopError
from .geometry import Agent, Beacon, ClockModel, Scenario
from .signals import SignalSpec
from .scenario_io import parse_scenario, reference_document

__all__ = ["Agent", "Beacon", "ClockModel", "Scenario", "SignalSpec", "SoopError",
           "parse_scenario", "reference_document"]
__version__ = "0.1.0"
