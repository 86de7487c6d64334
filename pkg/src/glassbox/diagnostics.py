"""Source locations and diagnostics shared by the parser and the validator."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SourceSpan:
    """Location of a parsed element. Offsets are UTF-8 byte offsets, lines and
    columns are 1-based."""

    start: int
    end: int
    line: int
    column: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"span start {self.start} after end {self.end}")

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str
    elements: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False)

    @property
    def is_error(self) -> bool:
        return self.severity == "error"

    def format(self, filename: str = "<spec>") -> str:
        where = f"{filename}:{self.span}" if self.span else filename
        ids = f" [{', '.join(self.elements)}]" if self.elements else ""
        return f"{where}: {self.severity}: {self.code}: {self.message}{ids}"


def errors(diagnostics: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diagnostics if d.is_error]


class SpecError(Exception):
    """Raised by the parser when the input is not a well-formed spec.

    Carries every diagnostic gathered before giving up; there is always at
    least one error among them.
    """

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        first = next((d for d in self.diagnostics if d.is_error), self.diagnostics[0])
        super().__init__(first.format())
