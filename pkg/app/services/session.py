"""
executes parsed script commands against a core (monitor or reference model)
"""
import hashlib
from typing import Any, Dict, Optional

import structlog

from app.services.codes import ErrorCode, OpResult, ViolationKind
from app.services.compat import FileStream, PosixCompat
from app.services.monitor import NO_HANDLE, StatInfo
from app.services.script import Command, SlotRef, decode_data
from app.services.state import PathError, PathName
from app.services.victims import glibc_chunk, vote_log


logger = structlog.get_logger()

INLINE_BYTES = 64


class Session:
    def __init__(self, core, adversary=None):
        self.core = core
        self.compat = PosixCompat(core)
        self.adversary = adversary
        self.slots: Dict[str, Any] = {}

    def _value(self, arg: Any) -> Any:
        if isinstance(arg, SlotRef):
            return self.slots.get(arg.name, NO_HANDLE)
        return arg

    def _stream(self, arg: Any) -> Optional[FileStream]:
        value = self._value(arg)
        return value if isinstance(value, FileStream) else None

    def execute(self, command: Command) -> OpResult:
        try:
            result = self._dispatch(command)
        except PathError:
            result = OpResult(ErrorCode.INVAL)
        if result.ok and command.bind:
            self.slots[command.bind] = result.value
        return result

    def _dispatch(self, command: Command) -> OpResult:
        call = command.call
        args = [self._value(arg) for arg in command.args]
        core = self.core
        compat = self.compat

        if call in ("open", "mkdir", "create", "remove", "rmdir", "readdir", "chmod"):
            path = PathName.parse(args[0])
            method = getattr(core, "fs_" + call)
            return method(path, *args[1:])
        if call in ("close", "stat", "seek", "read", "write", "truncate", "mmap", "munmap"):
            if not isinstance(args[0], int):
                return OpResult(ErrorCode.INVAL if call == "munmap" else ErrorCode.BADF)
            return getattr(core, "fs_" + call)(*args)
        if call in ("mem_read", "mem_write"):
            if not isinstance(args[0], int):
                return OpResult(ErrorCode.INVAL)
            return getattr(core, call)(*args)
        if call == "remount":
            return core.remount()

        if call == "fopen":
            return compat.c_fopen(args[0], args[1])
        if call in ("fclose", "fread", "fwrite", "fgets", "fgetc", "fseek", "ftell",
                    "rewind", "ftruncate", "fsync"):
            stream = self._stream(command.args[0])
            if stream is None:
                return OpResult(ErrorCode.BADF)
            return getattr(compat, "c_" + call)(stream, *args[1:])
        if call in ("creat", "unlink", "rename"):
            return getattr(compat, "c_" + call)(*args)
        if call.startswith("sys_"):
            if call != "sys_open" and not isinstance(args[0], int):
                return OpResult(ErrorCode.BADF)
            return getattr(compat, call)(*args)
        if call == "cat":
            return self.cat(args[0])

        if call == "vote_log":
            return vote_log(compat, args[0], args[1])
        if call == "glibc_chunk":
            return glibc_chunk(core, args[0])
        if call == "arm":
            if self.adversary is not None:
                self.adversary.armed = True
            return OpResult.succ()
        raise ValueError(f"no executor for {call!r}")

    def cat(self, path: str) -> OpResult:
        """whole-file content through the stream calls"""
        opened = self.compat.c_fopen(path, "r")
        if not opened.ok:
            return opened
        stream = opened.value
        info = self.core.fs_stat(stream.core_handle)
        if not info.ok:
            return info
        data = self.compat.c_fread(stream, 1, info.value.size)
        if not data.ok:
            return data
        closed = self.compat.c_fclose(stream)
        return closed if not closed.ok else data


def render_value(value: Any) -> Any:
    """json-friendly rendering of a call payload"""
    if isinstance(value, (bytes, bytearray)):
        if len(value) <= INLINE_BYTES:
            return value.decode("latin-1")
        return "sha256:" + hashlib.sha256(value).hexdigest()
    if isinstance(value, StatInfo):
        return f"{value.perm}:{value.name}:{value.size}"
    if isinstance(value, FileStream):
        return f"stream:{value.core_handle}"
    if isinstance(value, ViolationKind):
        return value.value
    if isinstance(value, list):
        return list(value)
    return value


def comparable(value: Any) -> Any:
    """payload form used for oracle comparison, streams compare by handle"""
    if isinstance(value, FileStream):
        return ("stream", value.core_handle, value.position, value.eof)
    if isinstance(value, bytearray):
        return bytes(value)
    return value


def payload_matches(value: Any, token: str) -> bool:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value) == decode_data(token)
    if isinstance(value, list):
        return value == ([] if token == "" else token.split(","))
    if isinstance(value, bool) or value is None:
        return str(value) == token
    if isinstance(value, int):
        try:
            return value == int(token, 0)
        except ValueError:
            return False
    return render_value(value) == token
