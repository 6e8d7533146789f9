import errno
from dataclasses import dataclass
from enum import Enum
from typing import Any


class ErrorCode(str, Enum):
    """result code of every core and compat call"""
    SUCC = "eSucc"
    BADF = "eBadF"
    NOENT = "eNoEnt"
    INVAL = "eInval"
    EXISTS = "eExists"
    NOTDIR = "eNotDir"
    ISDIR = "eIsDir"
    NOTEMPTY = "eNotEmpty"
    ACCES = "eAcces"
    NOSPACE = "eNoSpace"
    INTR = "eIntr"
    UNSUPPORTED = "eUnsupported"
    VIOLATION = "eViolation"


class ViolationKind(str, Enum):
    """which kind of backend deviation tripped the monitor"""
    CONTENT_TAMPER = "ContentTamper"
    PAGE_OVERLAP = "PageOverlap"
    PATH_MISMATCH = "PathMismatch"
    FD_MISMATCH = "FdMismatch"
    SIZE_MISMATCH = "SizeMismatch"
    ERRNO_LIE = "ErrnoLie"
    NON_ZERO_MMAP = "NonZeroMmap"
    ROLLBACK = "Rollback"


@dataclass(frozen=True)
class OpResult:
    """
    outcome of one call: a code plus the call's payload
    for eViolation the payload is the ViolationKind
    """
    code: ErrorCode
    value: Any = None

    @property
    def ok(self) -> bool:
        return self.code is ErrorCode.SUCC

    @classmethod
    def succ(cls, value: Any = None) -> "OpResult":
        return cls(ErrorCode.SUCC, value)

    @classmethod
    def violation(cls, kind: ViolationKind) -> "OpResult":
        return cls(ErrorCode.VIOLATION, kind)


_ERRNO_TO_CODE = {
    0: ErrorCode.SUCC,
    errno.EBADF: ErrorCode.BADF,
    errno.ENOENT: ErrorCode.NOENT,
    errno.EINVAL: ErrorCode.INVAL,
    errno.EEXIST: ErrorCode.EXISTS,
    errno.ENOTDIR: ErrorCode.NOTDIR,
    errno.EISDIR: ErrorCode.ISDIR,
    errno.ENOTEMPTY: ErrorCode.NOTEMPTY,
    errno.EACCES: ErrorCode.ACCES,
    errno.EPERM: ErrorCode.ACCES,
    errno.ENOSPC: ErrorCode.NOSPACE,
    errno.EINTR: ErrorCode.INTR,
}

_CODE_TO_ERRNO = {
    ErrorCode.SUCC: 0,
    ErrorCode.BADF: errno.EBADF,
    ErrorCode.NOENT: errno.ENOENT,
    ErrorCode.INVAL: errno.EINVAL,
    ErrorCode.EXISTS: errno.EEXIST,
    ErrorCode.NOTDIR: errno.ENOTDIR,
    ErrorCode.ISDIR: errno.EISDIR,
    ErrorCode.NOTEMPTY: errno.ENOTEMPTY,
    ErrorCode.ACCES: errno.EACCES,
    ErrorCode.NOSPACE: errno.ENOSPC,
    ErrorCode.INTR: errno.EINTR,
}


def code_from_errno(err: int) -> ErrorCode:
    """map a backend errno to a result code, unknown errnos read as eInval"""
    return _ERRNO_TO_CODE.get(err, ErrorCode.INVAL)


def errno_for(code: ErrorCode) -> int:
    return _CODE_TO_ERRNO[code]


def parse_code(text: str) -> ErrorCode:
    """accept both the enum value ('eNoEnt') and the member name ('NOENT')"""
    try:
        return ErrorCode(text)
    except ValueError:
        pass
    try:
        return ErrorCode[text.upper()]
    except KeyError:
        raise ValueError(f"unknown result code: {text}") from None
