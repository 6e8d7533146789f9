"""
small client routines whose logic an errno or mmap lie can subvert
"""
import struct

import structlog

from app.services.codes import ErrorCode, OpResult
from app.services.compat import SEEK_END, PosixCompat


logger = structlog.get_logger()

MAX_RETRIES = 3


def _create_log(compat: PosixCompat, path: str) -> OpResult:
    return compat.c_fopen(path, "w")


def vote_log(compat: PosixCompat, path: str, vote: bytes) -> OpResult:
    """
    append one vote record to a log, creating the log when it is missing

    an errno lie on the first open convinces the routine that the log does
    not exist, and the create path truncates every earlier vote
    """
    opened = compat.c_fopen(path, "r+")
    retries = 0
    while opened.code is ErrorCode.INTR and retries < MAX_RETRIES:
        retries += 1
        opened = compat.c_fopen(path, "r+")
    if opened.code is ErrorCode.NOENT:
        logger.info("vote log missing, creating it", path=path)
        opened = _create_log(compat, path)
    elif opened.code is ErrorCode.INVAL:
        opened = compat.c_fopen(path, "a")
    if not opened.ok:
        return opened

    stream = opened.value
    sought = compat.c_fseek(stream, 0, SEEK_END)
    if not sought.ok:
        return sought
    written = compat.c_fwrite(stream, vote)
    if not written.ok:
        return written
    closed = compat.c_fclose(stream)
    return closed if not closed.ok else OpResult.succ(len(vote))


def glibc_chunk(core, length: int) -> OpResult:
    """
    allocate a chunk with mmap and free it the way the allocator does

    the allocator trusts the prev_size word at the start of the mapping to
    compute where the region really begins; a non-zero word shifts the
    unmap target to an address nobody mapped
    """
    mapped = core.fs_mmap(length)
    if not mapped.ok:
        return mapped
    addr = mapped.value
    header = core.mem_read(addr, 0, min(8, length))
    if not header.ok:
        return header
    prev_size = struct.unpack("<Q", header.value.ljust(8, b"\x00"))[0]
    result = core.fs_munmap(addr - prev_size)
    if not result.ok:
        return result
    return OpResult.succ(prev_size)
