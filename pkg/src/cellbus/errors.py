"""Exception taxonomy for the whole package.

Validation *verdicts* (graph violations, chain verdicts) are data, not
exceptions; only contract breaches raise.
"""

from __future__ import annotations


class CellbusError(Exception):
    """Base class for all package errors."""


# -- notebook parsing ---------------------------------------------------------

class MalformedDocument(CellbusError):
    """Input bytes are not a parseable notebook document."""


class UnsupportedFormat(CellbusError):
    """Notebook format major version is not 4."""


class MissingKernel(CellbusError):
    """Notebook declares no kernel language."""


# -- cell analysis ------------------------------------------------------------

class SyntaxUnsupported(CellbusError):
    """Cell uses a construct outside the supported grammar subset."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        loc = f" (line {line}, col {col})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.line = line
        self.col = col


class NotACodeCell(CellbusError):
    """Cell index does not address a code cell."""


# -- containerizer ------------------------------------------------------------

class InterfaceMismatch(CellbusError):
    """Interface names absent from (or reserved names present in) cell source."""


class EmptyCell(CellbusError):
    """Cell has no executable statements."""


# -- workflow IR --------------------------------------------------------------

class IrVersionUnsupported(CellbusError):
    """IR document carries a missing or unknown version field."""


class IrMalformed(CellbusError):
    """IR document is structurally invalid."""

    def __init__(self, message: str, location: str = ""):
        suffix = f" at {location}" if location else ""
        super().__init__(f"{message}{suffix}")
        self.location = location


# -- planner / infra ----------------------------------------------------------

class Unsatisfiable(CellbusError):
    """Some task exceeds every available flavor."""

    def __init__(self, message: str, task: str = ""):
        super().__init__(message)
        self.task = task


class DoubleRelease(CellbusError):
    """Infrastructure handle released twice."""


class UnknownHandle(CellbusError):
    """Handle not managed by this provisioner."""


# -- workflow bus -------------------------------------------------------------

class RunnerMissing(CellbusError):
    """No runner registered for a task."""


class NotAList(CellbusError):
    """Split input did not resolve to a JSON list."""


class SiblingFailed(CellbusError):
    """A scatter sibling failed; merge cannot collect."""


class NestedScatterUnsupported(CellbusError):
    """Runtime supports single-level scatter regions only."""


# -- data mesh ----------------------------------------------------------------

class StorageFull(CellbusError):
    """Configured storage quota exceeded."""


class NotFound(CellbusError):
    """No object under the requested digest."""


class IntegrityError(CellbusError):
    """Stored bytes fail digest re-check."""


class MeshLocked(CellbusError):
    """Exclusive mesh operation attempted while a run is active."""


# -- ledger -------------------------------------------------------------------

class UnknownOrganization(CellbusError):
    """Signer organization not registered in the consortium."""


class SignatureInvalid(CellbusError):
    """Block authenticator does not verify."""


class LedgerUnavailable(CellbusError):
    """Ledger cannot accept appends."""


# -- provenance ---------------------------------------------------------------

class RunNotTerminal(CellbusError):
    """Provenance export requires a finished run."""


class UnknownEntity(CellbusError):
    """Entity not present in the provenance graph."""


class TooFewSamples(CellbusError):
    """Anomaly detection needs at least three timed instances."""


# -- catalog ------------------------------------------------------------------

class UnknownAsset(CellbusError):
    """Asset id not present in the catalog."""


# -- demo pipeline ------------------------------------------------------------

class EmptyCloud(CellbusError):
    """Operation requires a non-empty point cloud."""


class IoFailure(CellbusError):
    """File export/import failed."""
