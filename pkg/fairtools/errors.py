from __future__ import annotations

import json
from typing import Any, Dict, Optional


class FairtoolsError(Exception):
    """Base class for every error raised by fairtools.

    ``exit_code`` is what the CLI returns when the error escapes a stage;
    ``details`` holds the structured fields printed on the error line.
    """

    exit_code: int = 3

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def to_line(self) -> str:
        payload: Dict[str, Any] = {"error": type(self).__name__, "message": self.message}
        for key, value in self.details.items():
            payload[key] = value if isinstance(value, (int, float, str, bool, type(None))) else str(value)
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)


# data_model
class SchemaError(FairtoolsError):
    pass


class MissingColumn(FairtoolsError):
    def __init__(self, column: str) -> None:
        super().__init__(f"missing column: {column}", column=column)
        self.column = column


class DuplicateHeader(FairtoolsError):
    def __init__(self, column: str) -> None:
        super().__init__(f"duplicate header: {column}", column=column)
        self.column = column


class EmptyFile(FairtoolsError):
    pass


class TypeMismatch(FairtoolsError):
    def __init__(self, row: int, column: str, value: str, reason: str = "not numeric") -> None:
        super().__init__(f"row {row}, column {column!r}: {value!r} {reason}", row=row, column=column)
        self.row = row
        self.column = column


class MissingValue(TypeMismatch):
    def __init__(self, row: int, column: str) -> None:
        super().__init__(row, column, "", reason="is missing")


class InvalidConfig(FairtoolsError):
    pass


class DomainTooLarge(FairtoolsError):
    pass


class NumericColumnSelected(FairtoolsError):
    def __init__(self, column: str) -> None:
        super().__init__(f"column {column!r} is numeric; bin it first", column=column)
        self.column = column


# metrics
class EmptyGroup(FairtoolsError):
    def __init__(self, group: str) -> None:
        super().__init__(f"{group} group is empty", group=group)
        self.group = group


class KTooLarge(FairtoolsError):
    def __init__(self, k: int, n: int) -> None:
        super().__init__(f"k={k} needs more than {n} candidate rows", k=k, n=n)
        self.k = k
        self.n = n


class DegenerateFeature(FairtoolsError):
    pass


class LengthMismatch(FairtoolsError):
    pass


class EmptyInput(FairtoolsError):
    pass


# classifiers
class SingleClassDataset(FairtoolsError):
    pass


class SingleGroupDataset(FairtoolsError):
    pass


class NonFiniteLoss(FairtoolsError):
    def __init__(self, epoch: int) -> None:
        super().__init__(f"loss became non-finite at epoch {epoch}", epoch=epoch)
        self.epoch = epoch


class EncodingMismatch(FairtoolsError):
    pass


# optimize
class Infeasible(FairtoolsError):
    def __init__(self, residual: float, worst: str) -> None:
        super().__init__(f"no feasible repair map (residual {residual:.3g}); worst constraint: {worst}",
                         residual=residual, worst=worst)
        self.residual = residual
        self.worst = worst


class NotConverged(FairtoolsError):
    pass


class UnmappedCell(FairtoolsError):
    def __init__(self, row_id: int, cell: Any) -> None:
        super().__init__(f"row {row_id}: cell {cell!r} is not in the repair map", row_id=row_id, cell=repr(cell))
        self.row_id = row_id
        self.cell = cell


# smote
class CellTooSmall(FairtoolsError):
    pass


# postprocess
class FewerThanTwoClassifiers(FairtoolsError):
    pass


# audit
class RowIdMismatch(FairtoolsError):
    pass


# cli
class ConfigParse(FairtoolsError):
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None) -> None:
        super().__init__(message, field=field, line=line)
        self.field = field
        self.line = line


class StageFailure(FairtoolsError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        cause_name = type(cause).__name__
        super().__init__(f"stage {stage!r} failed: {cause_name}: {cause}", stage=stage, cause=cause_name)
        self.stage = stage
        self.cause = cause
