"""Value schemas for module globals and message payloads.

Four kinds: ``int`` (64-bit signed), ``real`` (64-bit float), ``real[N]``
(fixed-length float array, stored as a tuple) and ``bytes``.
"""
import json
import logging
import math
import re
from dataclasses import dataclass
from typing import Any, Optional, Tuple, Union

from .errors import SchemaMismatch

logger = logging.getLogger(__name__)

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

Value = Union[int, float, Tuple[float, ...], bytes]

_ARRAY_RE = re.compile(r"^real\[(\d+)\]$")


@dataclass(frozen=True)
class ValueSchema:
    kind: str  # int | real | real-array | bytes
    length: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "ValueSchema":
        text = text.strip()
        if text in ("int", "integer"):
            return cls("int")
        if text == "real":
            return cls("real")
        if text in ("bytes", "byte-string"):
            return cls("bytes")
        match = _ARRAY_RE.match(text)
        if match:
            return cls("real-array", int(match.group(1)))
        raise SchemaMismatch(f"Unknown value schema: {text!r}")

    def __str__(self) -> str:
        if self.kind == "real-array":
            return f"real[{self.length}]"
        return self.kind

    def conform(self, value: Any) -> Value:
        """Return a normalized copy of ``value`` or raise SchemaMismatch."""
        if self.kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaMismatch(f"Expected int, got {type(value).__name__}")
            if not INT64_MIN <= value <= INT64_MAX:
                raise SchemaMismatch(f"Integer {value} outside 64-bit range")
            return int(value)
        if self.kind == "real":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaMismatch(f"Expected real, got {type(value).__name__}")
            return float(value)
        if self.kind == "real-array":
            if isinstance(value, (str, bytes)) or not hasattr(value, "__len__"):
                raise SchemaMismatch(f"Expected real[{self.length}], got {type(value).__name__}")
            if len(value) != self.length:
                raise SchemaMismatch(f"Expected real[{self.length}], got length {len(value)}")
            try:
                return tuple(float(x) for x in value)
            except (TypeError, ValueError) as e:
                raise SchemaMismatch(f"Array element is not a real: {e}")
        if self.kind == "bytes":
            if isinstance(value, (bytearray, memoryview)):
                return bytes(value)
            if not isinstance(value, bytes):
                raise SchemaMismatch(f"Expected bytes, got {type(value).__name__}")
            return value
        raise SchemaMismatch(f"Unsupported schema kind {self.kind}")


def infer_schema(value: Any) -> ValueSchema:
    """Schema of a free-standing value, used for message payloads and string args."""
    if isinstance(value, bool):
        raise SchemaMismatch("Booleans are not values; use int")
    if isinstance(value, int):
        return ValueSchema("int")
    if isinstance(value, float):
        return ValueSchema("real")
    if isinstance(value, (bytes, bytearray, memoryview)):
        return ValueSchema("bytes")
    if isinstance(value, (tuple, list)):
        return ValueSchema("real-array", len(value))
    if hasattr(value, "tolist") and hasattr(value, "__len__"):
        return ValueSchema("real-array", len(value))
    raise SchemaMismatch(f"Not a value: {type(value).__name__}")


def conform_value(value: Any) -> Value:
    return infer_schema(value).conform(value)


def format_value(value: Value) -> str:
    """Render a value as a tapestry/monitor literal."""
    if isinstance(value, bool):
        raise SchemaMismatch("Booleans are not values")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return repr(value)
        text = repr(value)
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(value, bytes):
        return json.dumps(value.decode("latin-1"))
    if isinstance(value, (tuple, list)):
        return "[" + ",".join(format_value(float(x)) for x in value) + "]"
    raise SchemaMismatch(f"Cannot format {type(value).__name__}")


_INT_RE = re.compile(r"^[+-]?\d+$")


def parse_value(text: str) -> Value:
    """Inverse of :func:`format_value`."""
    text = text.strip()
    if text.startswith('"'):
        try:
            return json.loads(text).encode("latin-1")
        except (ValueError, UnicodeEncodeError) as e:
            raise SchemaMismatch(f"Bad string literal {text}: {e}")
    if text.startswith("["):
        if not text.endswith("]"):
            raise SchemaMismatch(f"Unterminated array literal {text}")
        body = text[1:-1].strip()
        if not body:
            return ()
        try:
            return tuple(float(x) for x in body.split(","))
        except ValueError as e:
            raise SchemaMismatch(f"Bad array literal {text}: {e}")
    if _INT_RE.match(text):
        return ValueSchema("int").conform(int(text))
    try:
        return float(text)
    except ValueError:
        raise SchemaMismatch(f"Not a value literal: {text!r}")
