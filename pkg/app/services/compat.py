"""
libc-flavored calls composed from the core transitions

nothing here talks to a backend; every call is a short sequence of core
calls on whatever core it wraps (the monitor or the reference model).
a composed call that fails midway is not rolled back, each core step is
atomic on its own
"""
from dataclasses import dataclass
from typing import Dict, Optional, Union

import structlog

from app.services.codes import ErrorCode, OpResult
from app.services.state import PathError, PathName, Permission, parent_of


logger = structlog.get_logger()

SEEK_SET = 0
SEEK_CUR = 1
SEEK_END = 2

DEFAULT_PERM = Permission(read=True, write=True, execute=False)


@dataclass(frozen=True)
class OpenMode:
    readable: bool
    writable: bool
    create: bool
    truncate: bool
    append: bool

    @classmethod
    def parse(cls, text: str) -> "OpenMode":
        base = MODES.get(text)
        if base is None:
            raise ValueError(f"unsupported fopen mode {text!r}")
        return base


MODES: Dict[str, OpenMode] = {}
for _base, _mode in {
    "r": OpenMode(True, False, False, False, False),
    "w": OpenMode(False, True, True, True, False),
    "a": OpenMode(False, True, True, False, True),
    "r+": OpenMode(True, True, False, False, False),
    "w+": OpenMode(True, True, True, True, False),
    "a+": OpenMode(True, True, True, False, True),
}.items():
    MODES[_base] = _mode
    # "rb", "r+b", "rb+" and friends alias the base mode
    MODES[_base + "b"] = _mode
    MODES[_base[0] + "b" + _base[1:]] = _mode


@dataclass
class FileStream:
    core_handle: int
    mode: OpenMode
    eof: bool = False
    err: bool = False
    position: int = 0


def _parse_path(path: Union[str, PathName]) -> PathName:
    if isinstance(path, PathName):
        return path
    return PathName.parse(path)


class PosixCompat:
    """stream and syscall wrappers over one core"""

    def __init__(self, core):
        self.core = core
        self.streams: Dict[int, FileStream] = {}

    # streams

    def c_fopen(self, path: Union[str, PathName], mode: str) -> OpResult:
        try:
            p = _parse_path(path)
            flags = OpenMode.parse(mode)
        except (PathError, ValueError):
            return OpResult(ErrorCode.INVAL)

        opened = self.core.fs_open(p)
        if opened.code is ErrorCode.NOENT and flags.create:
            listed = self.core.fs_readdir(parent_of(p)) if not p.is_root else opened
            if not listed.ok:
                return listed
            created = self.core.fs_create(p, DEFAULT_PERM)
            if not created.ok:
                return created
            opened = self.core.fs_open(p)
        if not opened.ok:
            return opened
        h = opened.value

        info = self.core.fs_stat(h)
        if not info.ok:
            return info
        perm = info.value.perm
        if (flags.readable and not perm.read) or (flags.writable and not perm.write):
            self.core.fs_close(h)
            return OpResult(ErrorCode.ACCES)

        size = info.value.size
        if flags.truncate:
            truncated = self.core.fs_truncate(h, 0)
            if not truncated.ok:
                self.core.fs_close(h)
                return truncated
            size = 0
        position = 0
        if flags.append:
            sought = self.core.fs_seek(h, size)
            if not sought.ok:
                self.core.fs_close(h)
                return sought
            position = size

        stream = FileStream(core_handle=h, mode=flags, position=position)
        self.streams[h] = stream
        return OpResult.succ(stream)

    def c_fclose(self, stream: FileStream) -> OpResult:
        result = self.core.fs_close(stream.core_handle)
        if result.ok:
            self.streams.pop(stream.core_handle, None)
        return result

    def c_fread(self, stream: FileStream, elem_size: int, count: int) -> OpResult:
        if not stream.mode.readable:
            stream.err = True
            return OpResult(ErrorCode.ACCES)
        if elem_size <= 0 or count <= 0:
            return OpResult.succ(b"")
        info = self.core.fs_stat(stream.core_handle)
        if not info.ok:
            return info
        wanted = elem_size * count
        available = max(info.value.size - stream.position, 0)
        n = min(wanted, available)
        data = b""
        if n > 0:
            result = self.core.fs_read(stream.core_handle, n)
            if not result.ok:
                stream.err = True
                return result
            data = result.value
            stream.position += n
        if n < wanted:
            stream.eof = True
        return OpResult.succ(data[:len(data) // elem_size * elem_size])

    def c_fwrite(self, stream: FileStream, data: bytes) -> OpResult:
        if not stream.mode.writable:
            stream.err = True
            return OpResult(ErrorCode.ACCES)
        info = self.core.fs_stat(stream.core_handle)
        if not info.ok:
            return info
        if stream.mode.append:
            sought = self.core.fs_seek(stream.core_handle, info.value.size)
            if not sought.ok:
                return sought
            stream.position = info.value.size
        # the whole buffer goes out in one core write
        result = self.core.fs_write(stream.core_handle, stream.position, bytes(data))
        if not result.ok:
            stream.err = True
            return result
        stream.position += len(data)
        return OpResult.succ(len(data))

    def c_fgets(self, stream: FileStream, cap: int) -> OpResult:
        if cap < 1:
            return OpResult(ErrorCode.INVAL)
        if not stream.mode.readable:
            stream.err = True
            return OpResult(ErrorCode.ACCES)
        info = self.core.fs_stat(stream.core_handle)
        if not info.ok:
            return info
        line = bytearray()
        while len(line) < cap - 1:
            if stream.position >= info.value.size:
                stream.eof = True
                break
            result = self.core.fs_read(stream.core_handle, 1)
            if not result.ok:
                stream.err = True
                return result
            stream.position += 1
            line += result.value
            if result.value == b"\n":
                break
        return OpResult.succ(bytes(line))

    def c_fgetc(self, stream: FileStream) -> OpResult:
        """next byte as an int, -1 at end of file"""
        result = self.c_fread(stream, 1, 1)
        if not result.ok:
            return result
        return OpResult.succ(result.value[0] if result.value else -1)

    def c_fseek(self, stream: FileStream, offset: int, whence: int = SEEK_SET) -> OpResult:
        if whence == SEEK_SET:
            target = offset
        elif whence == SEEK_CUR:
            target = stream.position + offset
        elif whence == SEEK_END:
            info = self.core.fs_stat(stream.core_handle)
            if not info.ok:
                return info
            target = info.value.size + offset
        else:
            return OpResult(ErrorCode.INVAL)
        result = self.core.fs_seek(stream.core_handle, target)
        if result.ok:
            stream.position = target
            stream.eof = False
        return result

    def c_ftell(self, stream: FileStream) -> OpResult:
        return OpResult.succ(stream.position)

    def c_rewind(self, stream: FileStream) -> OpResult:
        return self.c_fseek(stream, 0, SEEK_SET)

    def c_ftruncate(self, stream: FileStream, length: int) -> OpResult:
        result = self.core.fs_truncate(stream.core_handle, length)
        if result.ok:
            stream.position = min(stream.position, length)
        return result

    # path calls

    def c_creat(self, path: Union[str, PathName], perm: Permission = DEFAULT_PERM) -> OpResult:
        """create (or truncate) and open for writing"""
        try:
            p = _parse_path(path)
        except PathError:
            return OpResult(ErrorCode.INVAL)
        created = self.core.fs_create(p, perm)
        if created.code is ErrorCode.EXISTS:
            return self.c_fopen(p, "w")
        if not created.ok:
            return created
        opened = self.core.fs_open(p)
        if not opened.ok:
            return opened
        stream = FileStream(core_handle=opened.value, mode=MODES["w"])
        self.streams[opened.value] = stream
        return OpResult.succ(stream)

    def c_unlink(self, path: Union[str, PathName]) -> OpResult:
        return self._with_path(path, self.core.fs_remove)

    def c_chmod(self, path: Union[str, PathName], perm: Permission) -> OpResult:
        return self._with_path(path, lambda p: self.core.fs_chmod(p, perm))

    def c_readdir(self, path: Union[str, PathName]) -> OpResult:
        return self._with_path(path, self.core.fs_readdir)

    def c_mkdir(self, path: Union[str, PathName], perm: Permission = Permission(True, True, True)) -> OpResult:
        return self._with_path(path, lambda p: self.core.fs_mkdir(p, perm))

    def c_rmdir(self, path: Union[str, PathName]) -> OpResult:
        return self._with_path(path, self.core.fs_rmdir)

    def c_rename(self, old: Union[str, PathName], new: Union[str, PathName]) -> OpResult:
        return OpResult(ErrorCode.UNSUPPORTED)

    def c_fsync(self, stream: FileStream) -> OpResult:
        return OpResult(ErrorCode.UNSUPPORTED)

    def _with_path(self, path, call) -> OpResult:
        try:
            p = _parse_path(path)
        except PathError:
            return OpResult(ErrorCode.INVAL)
        return call(p)

    # syscall style, the descriptor is the core handle

    def sys_open(self, path: Union[str, PathName]) -> OpResult:
        return self._with_path(path, self.core.fs_open)

    def sys_close(self, fd: int) -> OpResult:
        return self.core.fs_close(fd)

    def sys_read(self, fd: int, n: int) -> OpResult:
        return self.core.fs_read(fd, n)

    def sys_write(self, fd: int, data: bytes) -> OpResult:
        cursor: Optional[int] = self.core.cursor(fd)
        return self.core.fs_write(fd, cursor if cursor is not None else 0, bytes(data))

    def sys_lseek(self, fd: int, offset: int, whence: int = SEEK_SET) -> OpResult:
        if whence == SEEK_SET:
            target = offset
        elif whence == SEEK_CUR:
            cursor = self.core.cursor(fd)
            if cursor is None:
                return OpResult(ErrorCode.BADF)
            target = cursor + offset
        elif whence == SEEK_END:
            info = self.core.fs_stat(fd)
            if not info.ok:
                return info
            target = info.value.size + offset
        else:
            return OpResult(ErrorCode.INVAL)
        result = self.core.fs_seek(fd, target)
        return OpResult.succ(target) if result.ok else result
