"""Vision-force virtual-fixture teleoperation simulator."""

__version__ = "0.1.0"
