"""
naive in-memory filesystem used as the differential oracle

deliberately shares no code with the monitor's state model: paths are plain
strings in two dicts and file content is a bytearray. ids, addresses and
error precedence follow the same rules so results compare one to one
"""
from dataclasses import dataclass, field
from typing import Dict, Optional

from app.services.codes import ErrorCode, OpResult
from app.services.monitor import StatInfo
from app.services.pagestore import CONTENT_BYTES
from app.services.state import PathName, Permission


MMAP_ALIGN = 4096


@dataclass
class _File:
    fid: int
    perm: Permission
    data: bytearray = field(default_factory=bytearray)


@dataclass
class _Dir:
    did: int
    perm: Permission


def _pages(size: int) -> int:
    return (size + CONTENT_BYTES - 1) // CONTENT_BYTES


def _parent(path: str) -> str:
    head = path.rsplit("/", 1)[0]
    return head or "/"


def _name(path: str) -> str:
    return path.rsplit("/", 1)[1]


class ReferenceFs:
    def __init__(self, capacity: int = 4096, mmap_base: int = 0x10000):
        self.capacity = capacity
        self.files: Dict[str, _File] = {}
        self.dirs: Dict[str, _Dir] = {"/": _Dir(0, Permission(True, True, True))}
        self.cursors: Dict[int, int] = {}
        self.maps: Dict[int, bytearray] = {}
        self.next_fid = 0
        self.next_did = 1
        self.next_addr = mmap_base

    def _resolve(self, path: str) -> ErrorCode:
        """eSucc when every ancestor is a directory, otherwise the walk error"""
        parts = [part for part in path.split("/") if part]
        for depth in range(len(parts)):
            prefix = "/" + "/".join(parts[:depth])
            if prefix in self.files:
                return ErrorCode.NOTDIR
            if prefix not in self.dirs:
                return ErrorCode.NOENT
        full = "/" + "/".join(parts)
        if full not in self.files and full not in self.dirs:
            return ErrorCode.NOENT
        return ErrorCode.SUCC

    def _by_fid(self, fid: int) -> Optional[_File]:
        for node in self.files.values():
            if node.fid == fid:
                return node
        return None

    def _children(self, path: str) -> list:
        return sorted(
            _name(entry)
            for entry in list(self.files) + list(self.dirs)
            if entry != "/" and _parent(entry) == path
        )

    def fs_open(self, path: PathName) -> OpResult:
        p = str(path)
        code = self._resolve(p)
        if code is not ErrorCode.SUCC:
            return OpResult(code)
        if p in self.dirs:
            return OpResult(ErrorCode.ISDIR)
        fid = self.files[p].fid
        if fid in self.cursors:
            return OpResult(ErrorCode.INVAL)
        self.cursors[fid] = 0
        return OpResult.succ(fid)

    def fs_close(self, h: int) -> OpResult:
        if self.cursors.pop(h, None) is None:
            return OpResult(ErrorCode.BADF)
        return OpResult.succ()

    def _make(self, path: PathName, perm: Permission, is_dir: bool) -> OpResult:
        p = str(path)
        if p == "/":
            return OpResult(ErrorCode.EXISTS)
        parent = _parent(p)
        code = self._resolve(parent)
        if code is not ErrorCode.SUCC:
            return OpResult(code)
        if parent in self.files:
            return OpResult(ErrorCode.NOTDIR)
        if p in self.files or p in self.dirs:
            return OpResult(ErrorCode.EXISTS)
        if not self.dirs[parent].perm.write:
            return OpResult(ErrorCode.ACCES)
        if is_dir:
            self.dirs[p] = _Dir(self.next_did, perm)
            self.next_did += 1
        else:
            self.files[p] = _File(self.next_fid, perm)
            self.next_fid += 1
        return OpResult.succ()

    def fs_mkdir(self, path: PathName, perm: Permission) -> OpResult:
        return self._make(path, perm, is_dir=True)

    def fs_create(self, path: PathName, perm: Permission) -> OpResult:
        return self._make(path, perm, is_dir=False)

    def fs_remove(self, path: PathName) -> OpResult:
        p = str(path)
        code = self._resolve(p)
        if code is not ErrorCode.SUCC:
            return OpResult(code)
        if p in self.dirs:
            return OpResult(ErrorCode.ISDIR)
        if not self.dirs[_parent(p)].perm.write:
            return OpResult(ErrorCode.ACCES)
        if self.files[p].fid in self.cursors:
            return OpResult(ErrorCode.INVAL)
        del self.files[p]
        return OpResult.succ()

    def fs_rmdir(self, path: PathName) -> OpResult:
        p = str(path)
        if p == "/":
            return OpResult(ErrorCode.INVAL)
        code = self._resolve(p)
        if code is not ErrorCode.SUCC:
            return OpResult(code)
        if p in self.files:
            return OpResult(ErrorCode.NOTDIR)
        if self._children(p):
            return OpResult(ErrorCode.NOTEMPTY)
        if not self.dirs[_parent(p)].perm.write:
            return OpResult(ErrorCode.ACCES)
        del self.dirs[p]
        return OpResult.succ()

    def fs_stat(self, h: int) -> OpResult:
        if h not in self.cursors:
            return OpResult(ErrorCode.BADF)
        for p, node in self.files.items():
            if node.fid == h:
                return OpResult.succ(StatInfo(perm=node.perm, name=_name(p), size=len(node.data)))
        return OpResult(ErrorCode.BADF)

    def fs_readdir(self, path: PathName) -> OpResult:
        p = str(path)
        code = self._resolve(p)
        if code is not ErrorCode.SUCC:
            return OpResult(code)
        if p in self.files:
            return OpResult(ErrorCode.NOTDIR)
        return OpResult.succ(self._children(p))

    def fs_chmod(self, path: PathName, perm: Permission) -> OpResult:
        p = str(path)
        code = self._resolve(p)
        if code is not ErrorCode.SUCC:
            return OpResult(code)
        if p in self.files:
            self.files[p].perm = perm
        else:
            self.dirs[p].perm = perm
        return OpResult.succ()

    def fs_seek(self, h: int, l: int) -> OpResult:
        if h not in self.cursors:
            return OpResult(ErrorCode.BADF)
        if l < 0 or l > len(self._by_fid(h).data):
            return OpResult(ErrorCode.INVAL)
        self.cursors[h] = l
        return OpResult.succ()

    def fs_read(self, h: int, l: int) -> OpResult:
        if h not in self.cursors:
            return OpResult(ErrorCode.BADF)
        data = self._by_fid(h).data
        start = self.cursors[h]
        if l < 0 or start + l > len(data):
            return OpResult(ErrorCode.INVAL)
        self.cursors[h] = start + l
        return OpResult.succ(bytes(data[start:start + l]))

    def fs_write(self, h: int, l: int, b: bytes) -> OpResult:
        if h not in self.cursors:
            return OpResult(ErrorCode.BADF)
        node = self._by_fid(h)
        if not node.perm.write:
            return OpResult(ErrorCode.ACCES)
        if l < 0 or l > len(node.data):
            return OpResult(ErrorCode.INVAL)
        if b:
            touched = (l + len(b) - 1) // CONTENT_BYTES - l // CONTENT_BYTES + 1
            in_use = sum(_pages(len(other.data)) for other in self.files.values())
            if touched > self.capacity - in_use:
                return OpResult(ErrorCode.NOSPACE)
        node.data[l:l + len(b)] = b
        self.cursors[h] = l + len(b)
        return OpResult.succ()

    def fs_truncate(self, h: int, l: int) -> OpResult:
        if h not in self.cursors:
            return OpResult(ErrorCode.BADF)
        node = self._by_fid(h)
        if l < 0 or l > len(node.data):
            return OpResult(ErrorCode.INVAL)
        del node.data[l:]
        self.cursors[h] = min(self.cursors[h], l)
        return OpResult.succ()

    def fs_mmap(self, l: int) -> OpResult:
        if l <= 0:
            return OpResult(ErrorCode.INVAL)
        addr = self.next_addr
        self.maps[addr] = bytearray(l)
        self.next_addr = addr + (l + MMAP_ALIGN - 1) // MMAP_ALIGN * MMAP_ALIGN
        return OpResult.succ(addr)

    def fs_munmap(self, a: int) -> OpResult:
        if self.maps.pop(a, None) is None:
            return OpResult(ErrorCode.INVAL)
        return OpResult.succ()

    def mem_read(self, a: int, offset: int, n: int) -> OpResult:
        region = self.maps.get(a)
        if region is None or offset < 0 or n < 0 or offset + n > len(region):
            return OpResult(ErrorCode.INVAL)
        return OpResult.succ(bytes(region[offset:offset + n]))

    def mem_write(self, a: int, offset: int, b: bytes) -> OpResult:
        region = self.maps.get(a)
        if region is None or offset < 0 or offset + len(b) > len(region):
            return OpResult(ErrorCode.INVAL)
        region[offset:offset + len(b)] = b
        return OpResult.succ()

    def cursor(self, h: int) -> Optional[int]:
        return self.cursors.get(h)

    def remount(self) -> OpResult:
        """closing and unmapping everything is all a remount does to the model"""
        self.cursors.clear()
        self.maps.clear()
        return OpResult.succ()

    def paths(self) -> Dict[str, str]:
        out = {path: "dir" for path in self.dirs}
        out.update({path: "file" for path in self.files})
        return dict(sorted(out.items()))
