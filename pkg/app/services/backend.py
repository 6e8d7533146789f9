"""
the untrusted side of the boundary

a backend answers page-granular requests from the monitor; nothing it
returns is trusted. MemoryBackend and PosixBackend are the honest
implementations, the adversary module wraps either one
"""
import errno
import hashlib
import mmap
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import structlog


logger = structlog.get_logger()


class BackendOp(str, Enum):
    OPEN = "xOpen"
    CLOSE = "xClose"
    MKDIR = "xMkdir"
    CREATE = "xCreate"
    REMOVE = "xRemove"
    RMDIR = "xRmdir"
    READDIR = "xReaddir"
    CHMOD = "xChmod"
    READ_PAGE = "xReadPage"
    WRITE_PAGE = "xWritePage"
    TRUNCATE = "xTruncate"
    MMAP = "xMmap"
    MUNMAP = "xMunmap"
    STAT = "xStat"
    STORE_IMAGE = "xStoreImage"
    LOAD_IMAGE = "xLoadImage"


# ops whose successful execution changes the backend's directory image
MUTATING_OPS = frozenset({
    BackendOp.MKDIR,
    BackendOp.CREATE,
    BackendOp.REMOVE,
    BackendOp.RMDIR,
    BackendOp.CHMOD,
    BackendOp.WRITE_PAGE,
    BackendOp.TRUNCATE,
    BackendOp.STORE_IMAGE,
})


class BackendError(Exception):
    """raised when the backend cannot be reached at all (transport failure)"""
    pass


@dataclass(frozen=True)
class BackendRequest:
    counter: int
    op: BackendOp
    args: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class BackendResult:
    errno: int = 0
    value: Any = None

    @property
    def ok(self) -> bool:
        return self.errno == 0


@dataclass(frozen=True)
class BackendCall:
    """one ledger entry: a request and the (possibly forged) answer the monitor saw"""
    counter: int
    op: BackendOp
    args: Dict[str, Any]
    result: BackendResult

    def render(self) -> Dict[str, Any]:
        return {
            "counter": self.counter,
            "op": self.op.value,
            "args": {key: _render_value(value) for key, value in self.args.items()},
            "errno": self.result.errno,
            "value": _render_value(self.result.value),
        }


def _render_value(value: Any) -> Any:
    # page and image bytes are reported as digests
    if isinstance(value, (bytes, bytearray)):
        return "sha256:" + hashlib.sha256(value).hexdigest()
    if isinstance(value, (list, tuple)):
        return [_render_value(item) for item in value]
    return value


class Ledger:
    """ordered record of every boundary crossing"""

    def __init__(self):
        self.entries: List[BackendCall] = []

    def record(self, call: BackendCall) -> None:
        if self.entries and call.counter != self.entries[-1].counter + 1:
            raise ValueError(
                f"ledger counter {call.counter} does not follow {self.entries[-1].counter}"
            )
        self.entries.append(call)

    def slice(self, start: int, end: int) -> List[BackendCall]:
        return [entry for entry in self.entries if start <= entry.counter < end]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


class Backend(ABC):
    """
    narrow call interface the monitor drives
    handlers return (errno, value); they never raise for filesystem outcomes
    """

    def __init__(self):
        self._handlers: Dict[BackendOp, Callable[..., BackendResult]] = {
            BackendOp.OPEN: self.x_open,
            BackendOp.CLOSE: self.x_close,
            BackendOp.MKDIR: self.x_mkdir,
            BackendOp.CREATE: self.x_create,
            BackendOp.REMOVE: self.x_remove,
            BackendOp.RMDIR: self.x_rmdir,
            BackendOp.READDIR: self.x_readdir,
            BackendOp.CHMOD: self.x_chmod,
            BackendOp.READ_PAGE: self.x_read_page,
            BackendOp.WRITE_PAGE: self.x_write_page,
            BackendOp.TRUNCATE: self.x_truncate,
            BackendOp.MMAP: self.x_mmap,
            BackendOp.MUNMAP: self.x_munmap,
            BackendOp.STAT: self.x_stat,
            BackendOp.STORE_IMAGE: self.x_store_image,
            BackendOp.LOAD_IMAGE: self.x_load_image,
        }

    def dispatch(self, request: BackendRequest) -> BackendResult:
        handler = self._handlers.get(request.op)
        if handler is None:
            raise BackendError(f"unsupported backend op {request.op}")
        try:
            return handler(**request.args)
        except BackendError:
            raise
        except Exception as e:
            logger.error("backend transport failure", op=request.op.value, error=str(e))
            raise BackendError(str(e)) from e

    @abstractmethod
    def x_open(self, path: str) -> BackendResult: ...

    @abstractmethod
    def x_close(self, fd: int) -> BackendResult: ...

    @abstractmethod
    def x_mkdir(self, path: str, perm: int) -> BackendResult: ...

    @abstractmethod
    def x_create(self, path: str, perm: int) -> BackendResult: ...

    @abstractmethod
    def x_remove(self, path: str, pages: Tuple[int, ...] = ()) -> BackendResult: ...

    @abstractmethod
    def x_rmdir(self, path: str) -> BackendResult: ...

    @abstractmethod
    def x_readdir(self, path: str) -> BackendResult: ...

    @abstractmethod
    def x_chmod(self, path: str, perm: int) -> BackendResult: ...

    @abstractmethod
    def x_read_page(self, pid: int) -> BackendResult: ...

    @abstractmethod
    def x_write_page(self, pid: int, data: bytes) -> BackendResult: ...

    @abstractmethod
    def x_truncate(self, path: str, pages: Tuple[int, ...] = ()) -> BackendResult: ...

    @abstractmethod
    def x_mmap(self, length: int) -> BackendResult: ...

    @abstractmethod
    def x_munmap(self, addr: int, length: int) -> BackendResult: ...

    @abstractmethod
    def x_stat(self, path: str) -> BackendResult: ...

    @abstractmethod
    def x_store_image(self, data: bytes) -> BackendResult: ...

    @abstractmethod
    def x_load_image(self) -> BackendResult: ...

    # direct inspection, the OS can always look at its own storage
    @abstractmethod
    def page_ids(self) -> List[int]: ...

    @abstractmethod
    def peek_page(self, pid: int) -> Optional[bytes]: ...

    @abstractmethod
    def snapshot(self) -> Dict[str, Any]:
        """directory image: names mirror, page files and the state image"""
        ...


def _split(path: str) -> List[str]:
    return [part for part in path.split("/") if part]


class MemoryBackend(Backend):
    """benign in-memory backend with POSIX errno behavior"""

    def __init__(self):
        super().__init__()
        self.entries: Dict[str, str] = {"/": "dir"}
        self.perms: Dict[str, int] = {"/": 7}
        self.fds: Dict[int, str] = {}
        self.pages: Dict[int, bytes] = {}
        self.maps: Dict[int, int] = {}
        self.image: Optional[bytes] = None
        self._next_fd = 3
        self._next_addr = 0x7F0000000000

    @staticmethod
    def _join(parts: List[str]) -> str:
        return "/" + "/".join(parts)

    def _resolve(self, path: str) -> Tuple[int, Optional[str]]:
        parts = _split(path)
        for depth in range(len(parts)):
            prefix = self._join(parts[:depth])
            if self.entries.get(prefix) == "file":
                return errno.ENOTDIR, None
            if prefix not in self.entries:
                return errno.ENOENT, None
        kind = self.entries.get(self._join(parts))
        if kind is None:
            return errno.ENOENT, None
        return 0, kind

    def _children(self, path: str) -> List[str]:
        base = self._join(_split(path))
        prefix = base if base.endswith("/") else base + "/"
        out = []
        for entry in self.entries:
            if entry != base and entry.startswith(prefix) and "/" not in entry[len(prefix):]:
                out.append(entry[len(prefix):])
        return sorted(out)

    def _make(self, path: str, perm: int, kind: str) -> BackendResult:
        parts = _split(path)
        if not parts:
            return BackendResult(errno.EEXIST)
        err, parent_kind = self._resolve(self._join(parts[:-1]))
        if err:
            return BackendResult(err)
        if parent_kind != "dir":
            return BackendResult(errno.ENOTDIR)
        full = self._join(parts)
        if full in self.entries:
            return BackendResult(errno.EEXIST)
        self.entries[full] = kind
        self.perms[full] = perm
        return BackendResult()

    def x_open(self, path: str) -> BackendResult:
        err, kind = self._resolve(path)
        if err:
            return BackendResult(err)
        if kind == "dir":
            return BackendResult(errno.EISDIR)
        fd = self._next_fd
        self._next_fd += 1
        self.fds[fd] = self._join(_split(path))
        return BackendResult(0, fd)

    def x_close(self, fd: int) -> BackendResult:
        if self.fds.pop(fd, None) is None:
            return BackendResult(errno.EBADF)
        return BackendResult()

    def x_mkdir(self, path: str, perm: int) -> BackendResult:
        return self._make(path, perm, "dir")

    def x_create(self, path: str, perm: int) -> BackendResult:
        return self._make(path, perm, "file")

    def x_remove(self, path: str, pages: Tuple[int, ...] = ()) -> BackendResult:
        err, kind = self._resolve(path)
        if err:
            return BackendResult(err)
        if kind == "dir":
            return BackendResult(errno.EISDIR)
        full = self._join(_split(path))
        del self.entries[full]
        self.perms.pop(full, None)
        for pid in pages:
            self.pages.pop(pid, None)
        return BackendResult()

    def x_rmdir(self, path: str) -> BackendResult:
        parts = _split(path)
        if not parts:
            return BackendResult(errno.EBUSY)
        err, kind = self._resolve(path)
        if err:
            return BackendResult(err)
        if kind != "dir":
            return BackendResult(errno.ENOTDIR)
        if self._children(path):
            return BackendResult(errno.ENOTEMPTY)
        full = self._join(parts)
        del self.entries[full]
        self.perms.pop(full, None)
        return BackendResult()

    def x_readdir(self, path: str) -> BackendResult:
        err, kind = self._resolve(path)
        if err:
            return BackendResult(err)
        if kind != "dir":
            return BackendResult(errno.ENOTDIR)
        return BackendResult(0, self._children(path))

    def x_chmod(self, path: str, perm: int) -> BackendResult:
        err, _ = self._resolve(path)
        if err:
            return BackendResult(err)
        self.perms[self._join(_split(path))] = perm
        return BackendResult()

    def x_read_page(self, pid: int) -> BackendResult:
        data = self.pages.get(pid)
        if data is None:
            return BackendResult(errno.ENOENT)
        return BackendResult(0, data)

    def x_write_page(self, pid: int, data: bytes) -> BackendResult:
        self.pages[pid] = bytes(data)
        return BackendResult(0, len(data))

    def x_truncate(self, path: str, pages: Tuple[int, ...] = ()) -> BackendResult:
        err, kind = self._resolve(path)
        if err:
            return BackendResult(err)
        if kind == "dir":
            return BackendResult(errno.EISDIR)
        for pid in pages:
            self.pages.pop(pid, None)
        return BackendResult()

    def x_mmap(self, length: int) -> BackendResult:
        if length <= 0:
            return BackendResult(errno.EINVAL)
        addr = self._next_addr
        self._next_addr += -(-length // mmap.PAGESIZE) * mmap.PAGESIZE
        self.maps[addr] = length
        return BackendResult(0, (addr, bytes(length)))

    def x_munmap(self, addr: int, length: int) -> BackendResult:
        if self.maps.get(addr) != length:
            return BackendResult(errno.EINVAL)
        del self.maps[addr]
        return BackendResult()

    def x_stat(self, path: str) -> BackendResult:
        err, _ = self._resolve(path)
        return BackendResult(err)

    def x_store_image(self, data: bytes) -> BackendResult:
        self.image = bytes(data)
        return BackendResult(0, len(data))

    def x_load_image(self) -> BackendResult:
        if self.image is None:
            return BackendResult(errno.ENOENT)
        return BackendResult(0, self.image)

    def page_ids(self) -> List[int]:
        return sorted(self.pages)

    def peek_page(self, pid: int) -> Optional[bytes]:
        return self.pages.get(pid)

    def snapshot(self) -> Dict[str, Any]:
        return {
            "names": sorted((path, kind) for path, kind in self.entries.items()),
            "pages": dict(sorted(self.pages.items())),
            "image": self.image,
        }


class PosixBackend(Backend):
    """
    passthrough backend over a real directory

    layout under the store root:
        names/        mirror of the directory tree (empty placeholder files)
        pages/<pid>.pg  sealed pages, exactly 4096 bytes each
        state.bfs     latest state image
    """

    IMAGE_NAME = "state.bfs"

    def __init__(self, root: str):
        super().__init__()
        self.root = Path(root)
        self.names_root = self.root / "names"
        self.pages_root = self.root / "pages"
        self.names_root.mkdir(parents=True, exist_ok=True)
        self.pages_root.mkdir(parents=True, exist_ok=True)
        self._maps: Dict[int, mmap.mmap] = {}
        self._next_addr = 1
        logger.info("posix backend ready", root=str(self.root))

    def _host(self, path: str) -> Path:
        return self.names_root.joinpath(*_split(path))

    def _page_file(self, pid: int) -> Path:
        return self.pages_root / f"{pid}.pg"

    def _drop_pages(self, pages: Tuple[int, ...]) -> None:
        for pid in pages:
            try:
                self._page_file(pid).unlink()
            except FileNotFoundError:
                pass

    def x_open(self, path: str) -> BackendResult:
        try:
            return BackendResult(0, os.open(self._host(path), os.O_RDWR))
        except OSError as e:
            return BackendResult(e.errno)

    def x_close(self, fd: int) -> BackendResult:
        try:
            os.close(fd)
        except OSError as e:
            return BackendResult(e.errno)
        return BackendResult()

    def x_mkdir(self, path: str, perm: int) -> BackendResult:
        try:
            os.mkdir(self._host(path), 0o700)
        except OSError as e:
            return BackendResult(e.errno)
        return BackendResult()

    def x_create(self, path: str, perm: int) -> BackendResult:
        try:
            fd = os.open(self._host(path), os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o600)
        except OSError as e:
            return BackendResult(e.errno)
        os.close(fd)
        return BackendResult()

    def x_remove(self, path: str, pages: Tuple[int, ...] = ()) -> BackendResult:
        try:
            os.unlink(self._host(path))
        except IsADirectoryError:
            return BackendResult(errno.EISDIR)
        except PermissionError as e:
            # some platforms report EPERM when unlinking a directory
            if self._host(path).is_dir():
                return BackendResult(errno.EISDIR)
            return BackendResult(e.errno)
        except OSError as e:
            return BackendResult(e.errno)
        self._drop_pages(pages)
        return BackendResult()

    def x_rmdir(self, path: str) -> BackendResult:
        if not _split(path):
            return BackendResult(errno.EBUSY)
        try:
            os.rmdir(self._host(path))
        except OSError as e:
            # ENOTEMPTY and EEXIST are interchangeable for rmdir
            if e.errno == errno.EEXIST:
                return BackendResult(errno.ENOTEMPTY)
            return BackendResult(e.errno)
        return BackendResult()

    def x_readdir(self, path: str) -> BackendResult:
        try:
            return BackendResult(0, sorted(os.listdir(self._host(path))))
        except OSError as e:
            return BackendResult(e.errno)

    def x_chmod(self, path: str, perm: int) -> BackendResult:
        # permissions live only in the monitor, the mirror just has to exist
        return self.x_stat(path)

    def x_read_page(self, pid: int) -> BackendResult:
        try:
            return BackendResult(0, self._page_file(pid).read_bytes())
        except OSError as e:
            return BackendResult(e.errno)

    def x_write_page(self, pid: int, data: bytes) -> BackendResult:
        target = self._page_file(pid)
        scratch = target.with_suffix(".tmp")
        try:
            with open(scratch, "wb") as handle:
                written = handle.write(data)
            os.replace(scratch, target)
        except OSError as e:
            return BackendResult(e.errno)
        return BackendResult(0, written)

    def x_truncate(self, path: str, pages: Tuple[int, ...] = ()) -> BackendResult:
        host = self._host(path)
        try:
            os.stat(host)
        except OSError as e:
            return BackendResult(e.errno)
        if host.is_dir():
            return BackendResult(errno.EISDIR)
        self._drop_pages(pages)
        return BackendResult()

    def x_mmap(self, length: int) -> BackendResult:
        if length <= 0:
            return BackendResult(errno.EINVAL)
        region = mmap.mmap(-1, length)
        addr = self._next_addr
        self._next_addr += 1
        self._maps[addr] = region
        return BackendResult(0, (addr, region[:]))

    def x_munmap(self, addr: int, length: int) -> BackendResult:
        region = self._maps.get(addr)
        if region is None or len(region) != length:
            return BackendResult(errno.EINVAL)
        region.close()
        del self._maps[addr]
        return BackendResult()

    def x_stat(self, path: str) -> BackendResult:
        try:
            os.stat(self._host(path))
        except OSError as e:
            return BackendResult(e.errno)
        return BackendResult()

    def x_store_image(self, data: bytes) -> BackendResult:
        target = self.root / self.IMAGE_NAME
        scratch = target.with_suffix(".tmp")
        try:
            scratch.write_bytes(data)
            os.replace(scratch, target)
        except OSError as e:
            return BackendResult(e.errno)
        return BackendResult(0, len(data))

    def x_load_image(self) -> BackendResult:
        try:
            return BackendResult(0, (self.root / self.IMAGE_NAME).read_bytes())
        except OSError as e:
            return BackendResult(e.errno)

    def page_ids(self) -> List[int]:
        return sorted(int(entry.stem) for entry in self.pages_root.glob("*.pg"))

    def peek_page(self, pid: int) -> Optional[bytes]:
        try:
            return self._page_file(pid).read_bytes()
        except OSError:
            return None

    def snapshot(self) -> Dict[str, Any]:
        names = [("/", "dir")]
        for dirpath, dirnames, filenames in os.walk(self.names_root):
            rel = Path(dirpath).relative_to(self.names_root)
            for name in dirnames:
                names.append(("/" + (rel / name).as_posix(), "dir"))
            for name in filenames:
                names.append(("/" + (rel / name).as_posix(), "file"))
        image_path = self.root / self.IMAGE_NAME
        return {
            "names": sorted(names),
            "pages": {pid: self.peek_page(pid) for pid in self.page_ids()},
            "image": image_path.read_bytes() if image_path.exists() else None,
        }


def make_backend(spec: str) -> Backend:
    """'memory' or 'posix:<dir>'"""
    if spec == "memory":
        return MemoryBackend()
    if spec.startswith("posix:") and len(spec) > len("posix:"):
        return PosixBackend(spec[len("posix:"):])
    raise ValueError(f"unknown backend spec {spec!r}, expected 'memory' or 'posix:<dir>'")


def replay_ledger(ledger: Ledger) -> MemoryBackend:
    """rebuild a memory backend from the successful mutating calls of a ledger"""
    backend = MemoryBackend()
    for entry in ledger:
        if entry.op in MUTATING_OPS and entry.result.ok:
            backend.dispatch(BackendRequest(entry.counter, entry.op, dict(entry.args)))
    return backend
