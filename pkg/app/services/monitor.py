"""
checked transitions over an untrusted backend

every core call follows the same plan:
    1. check the precondition on the shadow state
    2. drive the backend, ledgering each crossing under the call counter
    3. cross-check every answer against what the shadow predicts
    4. commit the transition, or return with the shadow untouched

with checked=False the same plan runs but backend answers are trusted,
which is the unprotected client the harness compares against
"""
import functools
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import structlog

from app.services.backend import (
    Backend,
    BackendCall,
    BackendError,
    BackendOp,
    BackendRequest,
    BackendResult,
    Ledger,
)
from app.services.codes import ErrorCode, OpResult, ViolationKind, code_from_errno, errno_for
from app.services.pagestore import (
    CONTENT_BYTES,
    PG_SIZE,
    IntegrityFailure,
    IntegrityField,
    SealingKey,
    open_unverified,
    seal_page,
    unseal_page,
    verify_zeroed,
)
from app.services.state import (
    DData,
    DirNode,
    FData,
    FileNode,
    FsState,
    MmapHandle,
    OpenHandle,
    PathName,
    Permission,
    PoolExhausted,
    Resolution,
    find_child,
    find_handle,
    find_mmap,
    good_state_violations,
    init_state,
    lookup,
    new_did,
    new_fid,
    node_name,
    pages_for,
    parent_of,
    path_of_fid,
)
from app.services.statefile import (
    EpochStore,
    MemoryEpochStore,
    StateImageError,
    load_state,
    open_image,
    save_state,
)


logger = structlog.get_logger()

NO_HANDLE = -1
MMAP_ALIGN = 4096

_FIELD_TO_KIND = {
    IntegrityField.OWNER: ViolationKind.PAGE_OVERLAP,
    IntegrityField.PAGE_ID: ViolationKind.PAGE_OVERLAP,
    IntegrityField.VERSION: ViolationKind.ROLLBACK,
    IntegrityField.TAG: ViolationKind.CONTENT_TAMPER,
}


class MonitorAbort(Exception):
    """raised instead of latching when the monitor runs in strict-abort mode"""

    def __init__(self, kind: ViolationKind, op: str):
        self.kind = kind
        self.op = op
        super().__init__(f"backend deviation {kind.value} during {op}")


class GoodStateLost(AssertionError):
    """a committed transition produced a state that is not good"""
    pass


@dataclass(frozen=True)
class StatInfo:
    perm: Permission
    name: str
    size: int


class _Reject(Exception):
    """unwinds a transition without committing"""

    def __init__(self, result: OpResult):
        self.result = result


def transition(method: Callable[..., OpResult]) -> Callable[..., OpResult]:
    """
    wrap a core call: refuse once latched, map early exits to results,
    fail closed on transport errors
    """

    @functools.wraps(method)
    def wrapper(self: "Monitor", *args, **kwargs) -> OpResult:
        if self.violation is not None:
            return OpResult.violation(self.violation)
        self._op = method.__name__
        try:
            result = method(self, *args, **kwargs)
        except _Reject as reject:
            return reject.result
        except BackendError:
            if not self.checked:
                return OpResult(ErrorCode.INTR)
            try:
                self._deviate(ViolationKind.ERRNO_LIE)
            except _Reject as reject:
                return reject.result
        if self.check_good and result.ok:
            problems = good_state_violations(self.state)
            if problems:
                raise GoodStateLost(f"{method.__name__}: {problems[0]}")
        return result

    return wrapper


class Monitor:
    """
    the trusted client of one backend

    owns the shadow state, the ledger, the transient fid -> backend fd and
    shadow -> backend address maps, and the latched violation
    """

    def __init__(
        self,
        backend: Backend,
        key: SealingKey,
        state: Optional[FsState] = None,
        checked: bool = True,
        strict_abort: bool = False,
        check_good: bool = False,
        epoch_store: Optional[EpochStore] = None,
        capacity: int = 4096,
        mmap_base: int = 0x10000,
    ):
        self.backend = backend
        self.key = key
        self.capacity = capacity
        self.mmap_base = mmap_base
        self.state = state if state is not None else init_state(capacity, mmap_base)
        self.checked = checked
        self.strict_abort = strict_abort
        self.check_good = check_good
        self.epochs = epoch_store if epoch_store is not None else MemoryEpochStore()
        self.ledger = Ledger()
        self.violation: Optional[ViolationKind] = None
        self._fds: Dict[int, int] = {}
        self._addrs: Dict[int, int] = {}
        self._op = ""

    # plumbing

    def _call(self, op: BackendOp, **args) -> BackendResult:
        counter = self.state.call_counter
        self.state.call_counter += 1
        try:
            result = self.backend.dispatch(BackendRequest(counter, op, args))
        except BackendError as e:
            self.ledger.record(BackendCall(counter, op, args, BackendResult(errno=-1, value=str(e))))
            raise
        self.ledger.record(BackendCall(counter, op, args, result))
        return result

    def _deviate(self, kind: ViolationKind) -> None:
        """latch a violation in checked mode; in unchecked mode do nothing"""
        if not self.checked:
            return
        self.violation = kind
        logger.warning(
            "violation latched",
            kind=kind.value,
            op=self._op,
            counter=self.state.call_counter - 1,
        )
        if self.strict_abort:
            raise MonitorAbort(kind, self._op)
        raise _Reject(OpResult.violation(kind))

    def _agree(self, result: BackendResult, predicted: ErrorCode, forged_success: Optional[OpResult] = None) -> None:
        """
        the backend errno must match the shadow prediction

        returns only when both say success; otherwise unwinds with the
        predicted code, a violation, or (unchecked) the backend's own answer
        """
        if result.errno == errno_for(predicted):
            if predicted is ErrorCode.SUCC:
                return
            raise _Reject(OpResult(predicted))
        if result.errno == 0:
            self._deviate(ViolationKind.PATH_MISMATCH)
            raise _Reject(forged_success or OpResult.succ())
        self._deviate(ViolationKind.ERRNO_LIE)
        raise _Reject(OpResult(code_from_errno(result.errno)))

    def _fail(self, code: ErrorCode) -> None:
        raise _Reject(OpResult(code))

    def _handle(self, fid: int) -> OpenHandle:
        handle = find_handle(self.state, fid)
        if handle is None:
            self._fail(ErrorCode.BADF)
        return handle

    def _path(self, fid: int) -> str:
        return str(path_of_fid(self.state, fid))

    @staticmethod
    def _resolve_code(res: Resolution) -> ErrorCode:
        if res.absent:
            return ErrorCode.NOTDIR if res.not_dir else ErrorCode.NOENT
        return ErrorCode.SUCC

    def _parent_prediction(self, path: PathName) -> tuple[ErrorCode, Optional[DirNode]]:
        """structural prediction for creating `path` plus the parent node when it exists"""
        if path.is_root:
            return ErrorCode.EXISTS, None
        parent = lookup(self.state, parent_of(path))
        if parent.absent:
            return self._resolve_code(parent), None
        if parent.is_file:
            return ErrorCode.NOTDIR, None
        if find_child(self.state, parent.node, path.name) is not None:
            return ErrorCode.EXISTS, parent.node
        return ErrorCode.SUCC, parent.node

    def _parent_writable(self, path: PathName) -> bool:
        parent = lookup(self.state, parent_of(path))
        return self.state.dmap[parent.node_id].perm.write

    def _load_page(self, fid: int, idx: int) -> bytes:
        """fetch and verify page `idx` of file `fid`, returns its 4000 content bytes"""
        pid = self.state.fmap[fid].pages[idx]
        meta = self.state.pool.meta(pid)
        result = self._call(BackendOp.READ_PAGE, pid=pid)
        if not result.ok:
            self._deviate(ViolationKind.ERRNO_LIE)
            self._fail(code_from_errno(result.errno))
        page = result.value if isinstance(result.value, (bytes, bytearray)) else b""
        if not self.checked:
            return open_unverified(page, self.key)
        try:
            return unseal_page(bytes(page), meta, self.key)
        except IntegrityFailure as failure:
            logger.warning("page failed verification", pid=pid, field=failure.field.value)
            self._deviate(_FIELD_TO_KIND[failure.field])
            raise

    # core calls

    @transition
    def fs_open(self, path: PathName) -> OpResult:
        res = lookup(self.state, path)
        predicted = ErrorCode.ISDIR if res.is_dir else self._resolve_code(res)
        if predicted is ErrorCode.SUCC and find_handle(self.state, res.node_id) is not None:
            self._fail(ErrorCode.INVAL)
        result = self._call(BackendOp.OPEN, path=str(path))
        self._agree(result, predicted, forged_success=OpResult.succ(NO_HANDLE))

        fid = res.node_id
        fd = result.value
        if not isinstance(fd, int) or fd < 0 or fd in self._fds.values():
            self._deviate(ViolationKind.FD_MISMATCH)

        self.state.handles.append(OpenHandle(fid=fid, cursor=0))
        self._fds[fid] = fd
        return OpResult.succ(fid)

    @transition
    def fs_close(self, h: int) -> OpResult:
        handle = self._handle(h)
        fd = self._fds.get(h)
        if fd is not None:
            self._agree(self._call(BackendOp.CLOSE, fd=fd), ErrorCode.SUCC)
        self.state.handles.remove(handle)
        self._fds.pop(h, None)
        return OpResult.succ()

    def _make(self, path: PathName, perm: Permission, op: BackendOp) -> OpResult:
        predicted, parent = self._parent_prediction(path)
        if predicted is not ErrorCode.SUCC:
            self._agree(self._call(op, path=str(path), perm=perm.bits), predicted)
        if not self.state.dmap[parent.did].perm.write:
            self._fail(ErrorCode.ACCES)
        self._agree(self._call(op, path=str(path), perm=perm.bits), ErrorCode.SUCC)

        if op is BackendOp.MKDIR:
            did = new_did(self.state)
            self.state.dmap[did] = DData(name=path.name, perm=perm)
            parent.children.append(DirNode(did=did))
            self.state.next_did = did + 1
        else:
            fid = new_fid(self.state)
            self.state.fmap[fid] = FData(name=path.name, perm=perm)
            parent.children.append(FileNode(fid=fid))
            self.state.next_fid = fid + 1
        return OpResult.succ()

    @transition
    def fs_mkdir(self, path: PathName, perm: Permission) -> OpResult:
        return self._make(path, perm, BackendOp.MKDIR)

    @transition
    def fs_create(self, path: PathName, perm: Permission) -> OpResult:
        return self._make(path, perm, BackendOp.CREATE)

    @transition
    def fs_remove(self, path: PathName) -> OpResult:
        res = lookup(self.state, path)
        predicted = ErrorCode.ISDIR if res.is_dir else self._resolve_code(res)
        if predicted is not ErrorCode.SUCC:
            self._agree(self._call(BackendOp.REMOVE, path=str(path), pages=()), predicted)
        if not self._parent_writable(path):
            self._fail(ErrorCode.ACCES)
        fid = res.node_id
        if find_handle(self.state, fid) is not None:
            self._fail(ErrorCode.INVAL)

        pages = tuple(self.state.fmap[fid].pages)
        self._agree(self._call(BackendOp.REMOVE, path=str(path), pages=pages), ErrorCode.SUCC)

        parent = lookup(self.state, parent_of(path)).node
        parent.children.remove(res.node)
        for pid in pages:
            self.state.pool.release(pid)
        del self.state.fmap[fid]
        return OpResult.succ()

    @transition
    def fs_rmdir(self, path: PathName) -> OpResult:
        if path.is_root:
            self._fail(ErrorCode.INVAL)
        res = lookup(self.state, path)
        if res.is_file:
            predicted = ErrorCode.NOTDIR
        elif res.is_dir and res.node.children:
            predicted = ErrorCode.NOTEMPTY
        else:
            predicted = self._resolve_code(res)
        if predicted is not ErrorCode.SUCC:
            self._agree(self._call(BackendOp.RMDIR, path=str(path)), predicted)
        if not self._parent_writable(path):
            self._fail(ErrorCode.ACCES)
        self._agree(self._call(BackendOp.RMDIR, path=str(path)), ErrorCode.SUCC)

        parent = lookup(self.state, parent_of(path)).node
        parent.children.remove(res.node)
        del self.state.dmap[res.node_id]
        return OpResult.succ()

    @transition
    def fs_stat(self, h: int) -> OpResult:
        self._handle(h)
        self._agree(self._call(BackendOp.STAT, path=self._path(h)), ErrorCode.SUCC)
        fdata = self.state.fmap[h]
        return OpResult.succ(StatInfo(perm=fdata.perm, name=fdata.name, size=fdata.size))

    @transition
    def fs_readdir(self, path: PathName) -> OpResult:
        res = lookup(self.state, path)
        predicted = ErrorCode.NOTDIR if res.is_file else self._resolve_code(res)
        result = self._call(BackendOp.READDIR, path=str(path))
        raw = result.value if isinstance(result.value, list) else []
        listed = sorted(name for name in raw if isinstance(name, str))
        self._agree(result, predicted, forged_success=OpResult.succ(listed))

        names = sorted(node_name(self.state, child) for child in res.node.children)
        if listed != names or len(listed) != len(raw):
            self._deviate(ViolationKind.PATH_MISMATCH)
            return OpResult.succ(listed)
        return OpResult.succ(names)

    @transition
    def fs_chmod(self, path: PathName, perm: Permission) -> OpResult:
        res = lookup(self.state, path)
        predicted = self._resolve_code(res)
        self._agree(self._call(BackendOp.CHMOD, path=str(path), perm=perm.bits), predicted)
        if res.is_file:
            self.state.fmap[res.node_id].perm = perm
        else:
            self.state.dmap[res.node_id].perm = perm
        return OpResult.succ()

    @transition
    def fs_seek(self, h: int, l: int) -> OpResult:
        handle = self._handle(h)
        if l < 0 or l > self.state.fmap[h].size:
            self._fail(ErrorCode.INVAL)
        handle.cursor = l
        return OpResult.succ()

    @transition
    def fs_read(self, h: int, l: int) -> OpResult:
        handle = self._handle(h)
        fdata = self.state.fmap[h]
        start = handle.cursor
        if l < 0 or start + l > fdata.size:
            self._fail(ErrorCode.INVAL)

        out = bytearray()
        if l > 0:
            for idx in range(start // CONTENT_BYTES, (start + l - 1) // CONTENT_BYTES + 1):
                content = self._load_page(h, idx)
                lo = max(start, idx * CONTENT_BYTES) - idx * CONTENT_BYTES
                hi = min(start + l, (idx + 1) * CONTENT_BYTES) - idx * CONTENT_BYTES
                out += content[lo:hi]
        handle.cursor = start + l
        return OpResult.succ(bytes(out))

    @transition
    def fs_write(self, h: int, l: int, b: bytes) -> OpResult:
        handle = self._handle(h)
        fdata = self.state.fmap[h]
        if not fdata.perm.write:
            self._fail(ErrorCode.ACCES)
        if l < 0 or l > fdata.size:
            self._fail(ErrorCode.INVAL)

        data = bytes(b)
        end = l + len(data)
        touched = list(range(l // CONTENT_BYTES, (end - 1) // CONTENT_BYTES + 1)) if data else []
        try:
            fresh = self.state.pool.plan(len(touched))
        except PoolExhausted:
            self._fail(ErrorCode.NOSPACE)

        # seal the full page set before the first backend write
        sealed = []
        for idx, pid in zip(touched, fresh):
            base = idx * CONTENT_BYTES
            existing_end = min(base + CONTENT_BYTES, fdata.size)
            covers_existing = l <= base and end >= existing_end
            if idx < len(fdata.pages) and not covers_existing:
                content = bytearray(self._load_page(h, idx))
            else:
                content = bytearray(CONTENT_BYTES)
            lo = max(l, base)
            hi = min(end, base + CONTENT_BYTES)
            content[lo - base:hi - base] = data[lo - l:hi - l]
            version = self.state.pool.next_version(pid)
            page, meta = seal_page(bytes(content), h, pid, version, self.key)
            sealed.append((idx, page, meta))

        for idx, page, meta in sealed:
            result = self._call(BackendOp.WRITE_PAGE, pid=meta.page_id, data=page)
            self._agree(result, ErrorCode.SUCC)
            if result.value != PG_SIZE:
                self._deviate(ViolationKind.SIZE_MISMATCH)
                if not isinstance(result.value, int) or result.value < PG_SIZE:
                    self._fail(ErrorCode.NOSPACE)

        for idx, _, meta in sealed:
            if idx < len(fdata.pages):
                self.state.pool.release(fdata.pages[idx])
                fdata.pages[idx] = meta.page_id
            else:
                fdata.pages.append(meta.page_id)
            self.state.pool.claim(meta)
        fdata.size = max(fdata.size, end)
        handle.cursor = end
        return OpResult.succ()

    @transition
    def fs_truncate(self, h: int, l: int) -> OpResult:
        handle = self._handle(h)
        fdata = self.state.fmap[h]
        if l < 0 or l > fdata.size:
            self._fail(ErrorCode.INVAL)
        keep = pages_for(l)
        surplus = tuple(fdata.pages[keep:])
        self._agree(self._call(BackendOp.TRUNCATE, path=self._path(h), pages=surplus), ErrorCode.SUCC)

        for pid in surplus:
            self.state.pool.release(pid)
        del fdata.pages[keep:]
        fdata.size = l
        handle.cursor = min(handle.cursor, l)
        return OpResult.succ()

    @transition
    def fs_mmap(self, l: int) -> OpResult:
        if l <= 0:
            self._fail(ErrorCode.INVAL)
        result = self._call(BackendOp.MMAP, length=l)
        self._agree(result, ErrorCode.SUCC)
        try:
            backend_addr, buf = result.value
            buf = bytes(buf)
        except (TypeError, ValueError):
            backend_addr, buf = None, b""
        if len(buf) != l:
            self._deviate(ViolationKind.SIZE_MISMATCH)
        if not verify_zeroed(buf):
            self._deviate(ViolationKind.NON_ZERO_MMAP)

        addr = self.state.next_addr
        self.state.mmaps.append(MmapHandle(start=addr, length=l))
        # unchecked clients keep whatever bytes they were handed
        self.state.anon[addr] = bytearray(buf[:l].ljust(l, b"\x00"))
        self.state.next_addr = addr + -(-l // MMAP_ALIGN) * MMAP_ALIGN
        if backend_addr is not None:
            self._addrs[addr] = backend_addr
        return OpResult.succ(addr)

    @transition
    def fs_munmap(self, a: int) -> OpResult:
        region = find_mmap(self.state, a)
        if region is None:
            self._fail(ErrorCode.INVAL)
        backend_addr = self._addrs.get(a)
        if backend_addr is not None:
            self._agree(self._call(BackendOp.MUNMAP, addr=backend_addr, length=region.length), ErrorCode.SUCC)
        self.state.mmaps.remove(region)
        del self.state.anon[a]
        self._addrs.pop(a, None)
        return OpResult.succ()

    @transition
    def mem_read(self, a: int, offset: int, n: int) -> OpResult:
        """read from the trusted copy of a mapped region"""
        region = find_mmap(self.state, a)
        if region is None or offset < 0 or n < 0 or offset + n > region.length:
            self._fail(ErrorCode.INVAL)
        return OpResult.succ(bytes(self.state.anon[a][offset:offset + n]))

    @transition
    def mem_write(self, a: int, offset: int, b: bytes) -> OpResult:
        region = find_mmap(self.state, a)
        if region is None or offset < 0 or offset + len(b) > region.length:
            self._fail(ErrorCode.INVAL)
        self.state.anon[a][offset:offset + len(b)] = b
        return OpResult.succ()

    def cursor(self, h: int) -> Optional[int]:
        handle = find_handle(self.state, h)
        return handle.cursor if handle is not None else None

    # persistence

    @transition
    def format(self) -> OpResult:
        """start from an empty filesystem and persist it as the next epoch"""
        self.state = init_state(self.capacity, self.mmap_base)
        # the counter restarts at 0, so the ledger does too
        self.ledger = Ledger()
        self._fds.clear()
        self._addrs.clear()
        return self._save()

    @transition
    def unmount(self) -> OpResult:
        """close every handle and region through the core calls, then save"""
        for handle in list(self.state.handles):
            result = self.fs_close(handle.fid)
            if not result.ok:
                return result
        for region in list(self.state.mmaps):
            result = self.fs_munmap(region.start)
            if not result.ok:
                return result
        self._op = "unmount"
        return self._save()

    @transition
    def mount(self) -> OpResult:
        """load the last saved state, which must carry the trusted epoch"""
        result = self._call(BackendOp.LOAD_IMAGE)
        self._agree(result, ErrorCode.SUCC)
        image = bytes(result.value) if isinstance(result.value, (bytes, bytearray)) else b""
        counter = self.state.call_counter
        try:
            if self.checked:
                state = load_state(image, self.epochs.current(), self.key)
            else:
                _, state = open_image(image, self.key)
        except StateImageError as e:
            logger.warning("state image rejected", kind=e.kind.value, detail=e.detail)
            self._deviate(e.kind)
            # unprotected clients start over on an image they cannot read
            state = init_state(self.capacity, self.mmap_base)
        state.call_counter = max(state.call_counter, counter)
        self.state = state
        self._fds.clear()
        self._addrs.clear()
        logger.info("mounted", epoch=self.epochs.current(), files=len(state.fmap), dirs=len(state.dmap))
        return OpResult.succ()

    def remount(self) -> OpResult:
        result = self.unmount()
        if not result.ok:
            return result
        return self.mount()

    def _save(self) -> OpResult:
        epoch = self.epochs.current() + 1
        image = save_state(self.state, epoch, self.key)
        result = self._call(BackendOp.STORE_IMAGE, data=image)
        self._agree(result, ErrorCode.SUCC)
        if result.value != len(image):
            self._deviate(ViolationKind.SIZE_MISMATCH)
            self._fail(ErrorCode.NOSPACE)
        self.epochs.advance(epoch)
        logger.info("state saved", epoch=epoch, bytes=len(image))
        return OpResult.succ(epoch)
