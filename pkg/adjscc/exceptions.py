# -*- coding: utf-8 -*-
from typing import Optional


class ADJSCCError(Exception):
    """
    Base class for errors raised by this package.
    """


class ChannelError(ADJSCCError, ValueError):
    pass


class AttentionError(ADJSCCError, ValueError):
    pass


class ShapeError(ADJSCCError, ValueError):
    pass


class ArchitectureError(ADJSCCError, ValueError):
    pass


class CheckpointError(ADJSCCError):
    pass


class DatasetError(ADJSCCError):
    pass


class DivergenceError(ADJSCCError, ArithmeticError):
    pass


class EvaluationError(ADJSCCError, ValueError):
    pass


class ConfigError(ADJSCCError):
    """
    Raised when an experiment document is invalid. The line number, when
    known, points into the document so the message can be shown as
    ``path:line: message``.
    """

    def __init__(
        self, message: str, lineno: Optional[int] = None, path: Optional[str] = None
    ):
        super().__init__(message)
        self.message = message
        self.lineno = lineno
        self.path = path

    def __str__(self) -> str:
        prefix = ""
        if self.path is not None:
            prefix = f"{self.path}:"
            if self.lineno is not None:
                prefix += f"{self.lineno}:"
            prefix += " "
        elif self.lineno is not None:
            prefix = f"line {self.lineno}: "
        return prefix + self.message
