"""Named residual reports emitted by every verification command."""

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ResidualEntry:
    name: str
    norm_kind: str  # "sup" or "l2"
    value: float
    tolerance: float

    @property
    def passed(self):
        return self.value <= self.tolerance

    def as_dict(self):
        return {
            "name": self.name,
            "norm": self.norm_kind,
            "value": float(self.value),
            "tolerance": float(self.tolerance),
            "pass": bool(self.passed),
        }


@dataclass(frozen=True)
class ResidualReport:
    entries: tuple
    context: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def value(self, name):
        return self[name].value

    def as_dict(self):
        return {
            "entries": [e.as_dict() for e in self.entries],
            "pass": bool(self.passed),
            "context": dict(self.context),
        }

    def format_lines(self):
        lines = []
        for e in self.entries:
            status = "pass" if e.passed else "FAIL"
            lines.append(
                f"{e.name:32s} {e.norm_kind:3s} {e.value:12.4e}"
                f"  (tol {e.tolerance:.1e})  {status}"
            )
        return lines


def report(entries, **context):
    return ResidualReport(entries=tuple(entries), context=context)
