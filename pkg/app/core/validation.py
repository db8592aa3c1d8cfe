"""
Input validation and parsing utilities.

Scenario files express angles as rational multiples of pi and reference nested
keys whose source line must be recoverable for diagnostics. The helpers here
are shared by the pydantic scenario models and the runner.
"""

import math
import re
from fractions import Fraction
from typing import Any, Optional, Sequence, Union
import logging

logger = logging.getLogger(__name__)


class InputValidator:
    """Parsing and range validation for scenario inputs."""

    # "pi", "-pi", "pi/5", "3pi/4", "3*pi/4", "-3 * pi / 4", "2.5*pi"
    PI_EXPRESSION = re.compile(
        r'^\s*(?P<sign>[+-])?\s*(?:(?P<num>\d+(?:\.\d+)?)\s*\*?\s*)?pi\s*(?:/\s*(?P<den>\d+(?:\.\d+)?))?\s*$',
        re.IGNORECASE
    )
    # plain decimal or scientific number given as a string
    NUMBER_EXPRESSION = re.compile(r'^\s*[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?\s*$')
    SPIN_NAMES = {'up': 0, '↑': 0, 'u': 0, 'down': 1, '↓': 1, 'd': 1}

    @staticmethod
    def parse_angle(value: Union[str, int, float]) -> float:
        """
        Parse an angle given as a number or a multiple of pi.

        Args:
            value: A number (radians) or a string such as "pi/5" or "-3*pi/4"

        Returns:
            float: Angle in radians

        Raises:
            ValueError: If the expression cannot be parsed
        """
        if isinstance(value, bool):
            raise ValueError(f"Angle must be a number or pi expression, got {value!r}")
        if isinstance(value, (int, float)):
            if not math.isfinite(value):
                raise ValueError(f"Angle must be finite, got {value!r}")
            return float(value)
        if not isinstance(value, str):
            raise ValueError(f"Angle must be a number or pi expression, got {type(value).__name__}")

        if InputValidator.NUMBER_EXPRESSION.match(value):
            return float(value)

        match = InputValidator.PI_EXPRESSION.match(value)
        if not match:
            raise ValueError(f"Cannot parse angle expression '{value}'")

        numerator = float(match.group('num')) if match.group('num') else 1.0
        denominator = float(match.group('den')) if match.group('den') else 1.0
        if denominator == 0:
            raise ValueError(f"Zero denominator in angle expression '{value}'")
        sign = -1.0 if match.group('sign') == '-' else 1.0
        return sign * numerator * math.pi / denominator

    @staticmethod
    def parse_scale(value: Union[str, int, float, Fraction]) -> Fraction:
        """Parse an exact coin-angle scale such as 1 or "1/2"."""
        try:
            scale = Fraction(value) if not isinstance(value, float) else Fraction(value).limit_denominator(64)
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"Invalid coin scale {value!r}: {e}")
        if scale <= 0:
            raise ValueError(f"Coin scale must be positive, got {scale}")
        return scale

    @staticmethod
    def validate_probability(value: float, name: str = "probability") -> float:
        """Validate a probability in [0, 1]."""
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValueError(f"{name} must be a number")
        if not 0.0 <= float(value) <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
        return float(value)

    @staticmethod
    def parse_spin(value: Union[str, int]) -> int:
        """Parse a spin label into its basis index (0 = up, 1 = down)."""
        if isinstance(value, int) and not isinstance(value, bool):
            if value in (0, 1):
                return value
            raise ValueError(f"Spin index must be 0 or 1, got {value}")
        if isinstance(value, str) and value.strip().lower() in InputValidator.SPIN_NAMES:
            return InputValidator.SPIN_NAMES[value.strip().lower()]
        raise ValueError(f"Unknown spin label {value!r}; use 'up' or 'down'")

    @staticmethod
    def locate_config_line(text: str, location: Sequence[Any]) -> Optional[int]:
        """
        Find the 1-based line of a nested key in a JSON document.

        Keys are searched in order, each one after the position of its parent,
        so the first occurrence inside the enclosing object wins. Integer path
        components (list indices) and keys absent from the text, such as union
        tags or missing fields, are skipped.

        Args:
            text: Raw configuration text
            location: Key path, e.g. ('decoherence', 'probability')

        Returns:
            int: Line number, or None if a key cannot be found
        """
        position = 0
        found = None
        for component in location:
            if not isinstance(component, str):
                continue
            pattern = re.compile(r'"' + re.escape(component) + r'"\s*:')
            match = pattern.search(text, position)
            if not match:
                continue
            position = match.end()
            found = match.start()
        if found is None:
            return None
        return text.count('\n', 0, found) + 1
