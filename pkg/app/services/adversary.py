"""
byzantine backend wrapper

forwards every request to an honest backend and then lies about the
answer according to the configured strategies. the wrapper never fails,
it only rewrites results
"""
import errno
import random
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Set

import structlog
from pydantic import BaseModel, Field, field_validator

from app.services.backend import Backend, BackendOp, BackendRequest, BackendResult
from app.services.codes import ViolationKind
from app.services.pagestore import CONTENT_BYTES, PG_SIZE, read_header


logger = structlog.get_logger()

LIE_ERRNOS = (errno.ENOENT, errno.EINVAL, errno.EINTR)
FAKE_FD_BASE = 1000
GHOST_NAME = "ghost"

# ops that carry no payload, a forged success needs nothing invented
_BARE_OPS = frozenset({
    BackendOp.CLOSE,
    BackendOp.MKDIR,
    BackendOp.CREATE,
    BackendOp.REMOVE,
    BackendOp.RMDIR,
    BackendOp.CHMOD,
    BackendOp.STAT,
    BackendOp.TRUNCATE,
    BackendOp.MUNMAP,
})


class Trigger(BaseModel):
    """which calls the adversary is allowed to tamper with"""
    kind: Literal["at", "every", "random"] = "random"
    n: int = Field(default=0, ge=0, description="call counter for kind=at")
    k: int = Field(default=1, ge=1, description="period for kind=every")
    p: float = Field(default=0.1, ge=0.0, le=1.0, description="probability for kind=random")
    ops: Optional[List[BackendOp]] = None
    limit: Optional[int] = Field(default=None, ge=0, description="max tamper events")


class AdversaryConfig(BaseModel):
    seed: int = 0
    strategies: List[ViolationKind] = Field(default_factory=list)
    trigger: Trigger = Field(default_factory=Trigger)
    mmap_offset: Optional[int] = Field(default=None, ge=0)
    errno: Optional[int] = Field(default=None, description="forced errno for ErrnoLie")

    @field_validator("seed")
    @classmethod
    def seed_fits_64_bits(cls, v: int) -> int:
        if not -(1 << 63) <= v < (1 << 64):
            raise ValueError("seed must fit in 64 bits")
        return v


@dataclass(frozen=True)
class TamperEvent:
    counter: int
    op: BackendOp
    strategy: ViolationKind
    detail: str


class AdversaryBackend(Backend):
    """
    adversary_wrap: inner backend + seeded rng + strategy catalog

    the same (seed, config) always replays the same tampering because
    every random draw happens in dispatch order
    """

    def __init__(self, inner: Backend, cfg: AdversaryConfig):
        super().__init__()
        self.inner = inner
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.events: List[TamperEvent] = []
        # a script can hold the adversary back until an `arm` command
        self.armed = True
        self._open_fds: Set[int] = set()
        self._images: List[bytes] = []
        self._page_history: Dict[int, List[bytes]] = {}
        self._strategies = {
            ViolationKind.CONTENT_TAMPER: self._content_tamper,
            ViolationKind.PAGE_OVERLAP: self._page_overlap,
            ViolationKind.PATH_MISMATCH: self._path_mismatch,
            ViolationKind.FD_MISMATCH: self._fd_mismatch,
            ViolationKind.SIZE_MISMATCH: self._size_mismatch,
            ViolationKind.ERRNO_LIE: self._errno_lie,
            ViolationKind.NON_ZERO_MMAP: self._non_zero_mmap,
            ViolationKind.ROLLBACK: self._rollback,
        }

    def dispatch(self, request: BackendRequest) -> BackendResult:
        honest = self.inner.dispatch(request)
        fires = self._fires(request)
        forged = None
        if fires and self.cfg.strategies:
            forged = self._tamper(request, honest)
        # history is built from what really happened, before any lie
        self._observe(request, honest)
        return forged if forged is not None else honest

    def _fires(self, request: BackendRequest) -> bool:
        trigger = self.cfg.trigger
        if trigger.kind == "random":
            # always draw so the rng stream does not depend on the op filter
            hit = self.rng.random() < trigger.p
        elif trigger.kind == "every":
            hit = request.counter % trigger.k == 0
        else:
            hit = request.counter == trigger.n
        if not self.armed:
            return False
        if trigger.ops is not None and request.op not in trigger.ops:
            return False
        if trigger.limit is not None and len(self.events) >= trigger.limit:
            return False
        return hit

    def _tamper(self, request: BackendRequest, honest: BackendResult) -> Optional[BackendResult]:
        candidates = []
        for kind in sorted(set(self.cfg.strategies), key=lambda kind: kind.value):
            forged = self._strategies[kind](request, honest, dry_run=True)
            if forged is not None:
                candidates.append(kind)
        if not candidates:
            return None
        kind = candidates[0] if len(candidates) == 1 else self.rng.choice(candidates)
        forged = self._strategies[kind](request, honest, dry_run=False)
        if forged is None:
            return None
        result, detail = forged
        self.events.append(TamperEvent(request.counter, request.op, kind, detail))
        logger.info("adversary tampered", counter=request.counter, op=request.op.value, strategy=kind.value)
        return result

    def _observe(self, request: BackendRequest, honest: BackendResult) -> None:
        if not honest.ok:
            return
        if request.op is BackendOp.OPEN:
            self._open_fds.add(honest.value)
        elif request.op is BackendOp.CLOSE:
            self._open_fds.discard(request.args["fd"])
        elif request.op is BackendOp.WRITE_PAGE:
            self._page_history.setdefault(request.args["pid"], []).append(bytes(request.args["data"]))
        elif request.op is BackendOp.STORE_IMAGE:
            self._images.append(bytes(request.args["data"]))

    # strategies return None when inapplicable, otherwise (result, detail);
    # with dry_run=True they only answer applicability and draw nothing

    def _content_tamper(self, request, honest, dry_run):
        if request.op not in (BackendOp.READ_PAGE, BackendOp.LOAD_IMAGE) or not honest.ok:
            return None
        data = honest.value
        if not isinstance(data, (bytes, bytearray)) or not data:
            return None
        if dry_run:
            return True
        limit = min(CONTENT_BYTES, len(data)) if request.op is BackendOp.READ_PAGE else len(data)
        idx = self.rng.randrange(limit)
        flip = self.rng.randrange(1, 256)
        corrupted = bytearray(data)
        corrupted[idx] ^= flip
        return BackendResult(0, bytes(corrupted)), f"flipped byte {idx}"

    def _page_overlap(self, request, honest, dry_run):
        if request.op is not BackendOp.READ_PAGE or not honest.ok:
            return None
        pid = request.args["pid"]
        others = [other for other in self.inner.page_ids() if other != pid]
        if not others:
            return None
        if dry_run:
            return True
        owner = read_header(honest.value)[0] if len(honest.value) == PG_SIZE else None
        siblings = []
        for other in others:
            page = self.inner.peek_page(other)
            if page is not None and len(page) == PG_SIZE and read_header(page)[0] == owner:
                siblings.append(other)
        # prefer a page of the same file, the harder case to spot
        chosen = self.rng.choice(siblings or others)
        return BackendResult(0, self.inner.peek_page(chosen)), f"served page {chosen} for {pid}"

    def _path_mismatch(self, request, honest, dry_run):
        if request.op is BackendOp.READDIR and honest.ok:
            if dry_run:
                return True
            names = list(honest.value)
            if not names:
                return BackendResult(0, [GHOST_NAME]), "listed a ghost entry"
            action = self.rng.choice(("drop", "rename", "duplicate"))
            idx = self.rng.randrange(len(names))
            if action == "drop":
                del names[idx]
            elif action == "rename":
                names[idx] = names[idx] + "~"
            else:
                names.append(names[idx])
            return BackendResult(0, sorted(names)), f"{action} readdir entry"
        lookups = (BackendOp.OPEN, BackendOp.STAT, BackendOp.CHMOD, BackendOp.REMOVE)
        if request.op in lookups and honest.errno == errno.ENOENT:
            if dry_run:
                return True
            value = FAKE_FD_BASE + request.counter if request.op is BackendOp.OPEN else None
            return BackendResult(0, value), "claimed an absent path exists"
        return None

    def _fd_mismatch(self, request, honest, dry_run):
        if request.op is not BackendOp.OPEN or not honest.ok:
            return None
        others = sorted(fd for fd in self._open_fds if fd != honest.value)
        if not others:
            return None
        if dry_run:
            return True
        fd = self.rng.choice(others)
        return BackendResult(0, fd), f"returned fd {fd} instead of {honest.value}"

    def _size_mismatch(self, request, honest, dry_run):
        if not honest.ok:
            return None
        if request.op is BackendOp.WRITE_PAGE:
            if dry_run:
                return True
            if self.rng.random() < 0.5:
                ack = self.rng.randrange(0, honest.value)
            else:
                ack = honest.value + self.rng.randrange(1, PG_SIZE)
            return BackendResult(0, ack), f"acked {ack} of {honest.value} bytes"
        if request.op is BackendOp.MMAP:
            if dry_run:
                return True
            addr, buf = honest.value
            length = len(buf) - 1 if len(buf) > 1 and self.rng.random() < 0.5 else len(buf) + 1
            return BackendResult(0, (addr, bytes(length))), f"mapped {length} of {len(buf)} bytes"
        return None

    def _errno_lie(self, request, honest, dry_run):
        if dry_run:
            return True
        if honest.ok:
            err = self.cfg.errno or self.rng.choice(LIE_ERRNOS)
            return BackendResult(err), f"reported errno {err} for a success"
        if request.op in _BARE_OPS:
            return BackendResult(0), f"reported success for errno {honest.errno}"
        if request.op is BackendOp.OPEN:
            return BackendResult(0, FAKE_FD_BASE + request.counter), f"reported success for errno {honest.errno}"
        err = self.rng.choice([lie for lie in LIE_ERRNOS if lie != honest.errno])
        return BackendResult(err), f"reported errno {err} for errno {honest.errno}"

    def _non_zero_mmap(self, request, honest, dry_run):
        if request.op is not BackendOp.MMAP or not honest.ok:
            return None
        addr, buf = honest.value
        if not buf:
            return None
        if dry_run:
            return True
        offset = self.cfg.mmap_offset
        if offset is None or offset >= len(buf):
            offset = self.rng.randrange(len(buf))
        planted = bytearray(buf)
        planted[offset] = self.rng.randrange(1, 256)
        return BackendResult(0, (addr, bytes(planted))), f"planted byte at offset {offset}"

    def _rollback(self, request, honest, dry_run):
        if not honest.ok:
            return None
        if request.op is BackendOp.LOAD_IMAGE:
            stale = [image for image in self._images[:-1] if image != honest.value]
            if not stale:
                return None
            if dry_run:
                return True
            return BackendResult(0, self.rng.choice(stale)), "served a stale state image"
        if request.op is BackendOp.READ_PAGE:
            history = self._page_history.get(request.args["pid"], [])
            stale = [page for page in history if page != honest.value]
            if not stale:
                return None
            if dry_run:
                return True
            return BackendResult(0, self.rng.choice(stale)), "served a stale page version"
        return None

    # the backend interface, every call goes through dispatch

    def x_open(self, path: str) -> BackendResult:
        return self.inner.x_open(path)

    def x_close(self, fd: int) -> BackendResult:
        return self.inner.x_close(fd)

    def x_mkdir(self, path: str, perm: int) -> BackendResult:
        return self.inner.x_mkdir(path, perm)

    def x_create(self, path: str, perm: int) -> BackendResult:
        return self.inner.x_create(path, perm)

    def x_remove(self, path: str, pages=()) -> BackendResult:
        return self.inner.x_remove(path, pages)

    def x_rmdir(self, path: str) -> BackendResult:
        return self.inner.x_rmdir(path)

    def x_readdir(self, path: str) -> BackendResult:
        return self.inner.x_readdir(path)

    def x_chmod(self, path: str, perm: int) -> BackendResult:
        return self.inner.x_chmod(path, perm)

    def x_read_page(self, pid: int) -> BackendResult:
        return self.inner.x_read_page(pid)

    def x_write_page(self, pid: int, data: bytes) -> BackendResult:
        return self.inner.x_write_page(pid, data)

    def x_truncate(self, path: str, pages=()) -> BackendResult:
        return self.inner.x_truncate(path, pages)

    def x_mmap(self, length: int) -> BackendResult:
        return self.inner.x_mmap(length)

    def x_munmap(self, addr: int, length: int) -> BackendResult:
        return self.inner.x_munmap(addr, length)

    def x_stat(self, path: str) -> BackendResult:
        return self.inner.x_stat(path)

    def x_store_image(self, data: bytes) -> BackendResult:
        return self.inner.x_store_image(data)

    def x_load_image(self) -> BackendResult:
        return self.inner.x_load_image()

    def page_ids(self) -> List[int]:
        return self.inner.page_ids()

    def peek_page(self, pid: int) -> Optional[bytes]:
        return self.inner.peek_page(pid)

    def snapshot(self) -> Dict[str, Any]:
        return self.inner.snapshot()


def adversary_wrap(inner: Backend, cfg: AdversaryConfig) -> AdversaryBackend:
    return AdversaryBackend(inner, cfg)
