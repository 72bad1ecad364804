"""Exception hierarchy shared by every layer of the engine."""


class SavimeError(Exception):
    """Base class for all engine errors."""


# -- schema -----------------------------------------------------------------

class SchemaError(SavimeError):
    pass


class DuplicateType(SchemaError):
    pass


class OverlappingRoleSets(SchemaError):
    pass


class DuplicateTar(SchemaError):
    pass


class UnknownType(SchemaError):
    pass


class UnknownTar(SchemaError):
    pass


class UnknownElement(SchemaError):
    pass


class MissingMandatoryRole(SchemaError):
    pass


class NonInjectiveRoleMap(SchemaError):
    pass


class IncomparableTypes(SchemaError):
    pass


class DomainError(SchemaError):
    """A dimension domain violates its own invariants."""


# -- storage ----------------------------------------------------------------

class StorageError(SavimeError):
    pass


class BadSize(StorageError):
    pass


class DuplicateDataset(StorageError):
    pass


class UnknownDataset(StorageError):
    pass


class Unreadable(StorageError):
    pass


class UnsupportedByteOrder(StorageError):
    pass


class DatasetInUse(StorageError):
    pass


class ResourceExhausted(StorageError):
    pass


class OutOfBounds(SavimeError, IndexError):
    pass


class LengthMismatch(SavimeError):
    pass


# -- layout -----------------------------------------------------------------

class LayoutError(SavimeError):
    pass


class NotInDomain(LayoutError):
    pass


class OverlapViolation(LayoutError):
    pass


class MixedTotalSpec(LayoutError):
    pass


class OutsideExtent(LayoutError):
    pass


# -- query ------------------------------------------------------------------

class QueryError(SavimeError):
    pass


class QuerySyntaxError(QueryError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at offset {position}")


class TypeMismatch(QueryError):
    pass


class ArityError(QueryError):
    pass


class ProjectionError(QueryError):
    pass


class BoundsError(QueryError):
    pass


class IncomparableDimensions(TypeMismatch):
    pass


class EvaluationError(QueryError):
    def __init__(self, message: str, node_id: int | None = None):
        self.node_id = node_id
        if node_id is not None:
            message = f"node {node_id}: {message}"
        super().__init__(message)


class DoubleRelease(SavimeError):
    pass


# -- visualization ----------------------------------------------------------

class VizError(SavimeError):
    pass


class DanglingPointId(VizError):
    pass


class MissingSelector(VizError):
    pass


class TypeViolation(VizError):
    pass


class AdjacencyNotExportable(VizError):
    pass


class IncompleteField(VizError):
    pass


# -- server / catalog / bench ----------------------------------------------

class CorruptCatalog(SavimeError):
    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class ProtocolError(SavimeError):
    pass


class BindFailure(SavimeError):
    pass


class OracleMismatch(SavimeError):
    pass
