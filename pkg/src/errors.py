"""Exception hierarchy shared by the services and the CLI"""

from typing import Optional


class EHOIError(Exception):
    """Base class for toolkit errors"""
    pass


class DocumentParseError(EHOIError):
    """Raised when a file is not valid JSON or violates the document schema"""

    def __init__(self, message: str, source: Optional[str] = None):
        self.message = message
        self.source = source
        super().__init__(f"{source}: {message}" if source else message)

    def __reduce__(self):
        # keeps the two-argument signature across joblib workers
        return self.__class__, (self.message, self.source)


class DatasetValidationError(EHOIError):
    """Raised when a parsed document breaks a dataset rule.

    The offending record (``"frame 3"``, ``"annotation 17"``...) is always part
    of the message.
    """

    def __init__(self, record: str, message: str):
        self.record = record
        self.message = message
        super().__init__(f"{record}: {message}")

    def __reduce__(self):
        return self.__class__, (self.record, self.message)


class ReferentialIntegrityError(DatasetValidationError):
    """Raised when an id points at a record that does not exist"""
    pass


class ReportSchemaError(DatasetValidationError):
    """Raised when a report file was written with another schema version"""
    pass
