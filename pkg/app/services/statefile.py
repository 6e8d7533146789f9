"""
persisting the shadow state

image layout (big-endian):
    magic     8 bytes  "BESFS\\0v1"
    epoch     u64
    length    u32      ciphertext length
    payload   AES-256-GCM(canonical state encoding), 16-byte tag appended

the header is associated data, so the tag covers everything before it.
the trusted epoch lives outside the backend (EpochStore)
"""
import os
import struct
from abc import ABC, abstractmethod
from pathlib import Path
from typing import List, Optional, Tuple

import structlog
from cryptography.exceptions import InvalidTag

from app.services.codes import ViolationKind
from app.services.pagestore import PageMeta, SealingKey
from app.services.state import (
    DData,
    DirNode,
    FData,
    FileNode,
    FsState,
    MmapHandle,
    OpenHandle,
    PagePool,
    Permission,
    Tree,
    good_state_violations,
)


logger = structlog.get_logger()

MAGIC = b"BESFS\x00v1"
IMAGE_DOMAIN = b"BSST"
HEADER = struct.Struct(">8sQI")
TAG_BYTES = 16
MAX_DEPTH = 4096

_FILE_TAG = 0
_DIR_TAG = 1


class StateImageError(Exception):
    """a state image failed verification; kind is Rollback or ContentTamper"""

    def __init__(self, kind: ViolationKind, detail: str):
        self.kind = kind
        self.detail = detail
        super().__init__(f"state image rejected [{kind.value}] {detail}")


class _Writer:
    def __init__(self):
        self.parts: List[bytes] = []

    def u8(self, v: int) -> None:
        self.parts.append(struct.pack(">B", v))

    def u32(self, v: int) -> None:
        self.parts.append(struct.pack(">I", v))

    def u64(self, v: int) -> None:
        self.parts.append(struct.pack(">Q", v))

    def blob(self, v: bytes) -> None:
        self.u32(len(v))
        self.parts.append(bytes(v))

    def text(self, v: str) -> None:
        self.blob(v.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StateImageError(ViolationKind.CONTENT_TAMPER, "state encoding is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError:
            raise StateImageError(ViolationKind.CONTENT_TAMPER, "name is not utf-8") from None

    def done(self) -> bool:
        return self.pos == len(self.data)


def _encode_tree(out: _Writer, tree: Tree) -> None:
    stack: List[Tree] = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, FileNode):
            out.u8(_FILE_TAG)
            out.u64(node.fid)
            continue
        out.u8(_DIR_TAG)
        out.u64(node.did)
        out.u32(len(node.children))
        stack.extend(reversed(node.children))


def _decode_tree(src: _Reader) -> Tree:
    """pre-order decode; `pending` holds the open directories and how many children each still expects"""
    root: Optional[Tree] = None
    pending: List[List] = []
    while True:
        tag = src.u8()
        if tag == _FILE_TAG:
            node: Tree = FileNode(src.u64())
            count = 0
        elif tag == _DIR_TAG:
            node = DirNode(src.u64())
            count = src.u32()
        else:
            raise StateImageError(ViolationKind.CONTENT_TAMPER, f"unknown tree tag {tag}")

        if pending:
            pending[-1][0].children.append(node)
            pending[-1][1] -= 1
        else:
            root = node
        if count:
            if len(pending) >= MAX_DEPTH:
                raise StateImageError(ViolationKind.CONTENT_TAMPER, "layout nesting too deep")
            pending.append([node, count])
        while pending and pending[-1][1] == 0:
            pending.pop()
        if not pending:
            return root


def encode_state(s: FsState, clock: bool = True) -> bytes:
    """
    canonical encoding of the shadow state
    clock=False leaves out the call counter, the form used for atomicity checks
    """
    out = _Writer()
    out.u64(s.next_fid)
    out.u64(s.next_did)
    out.u64(s.next_addr)
    if clock:
        out.u64(s.call_counter)

    _encode_tree(out, s.layout)

    out.u32(len(s.fmap))
    for fid in sorted(s.fmap):
        fdata = s.fmap[fid]
        out.u64(fid)
        out.text(fdata.name)
        out.u8(fdata.perm.bits)
        out.u64(fdata.size)
        out.u32(len(fdata.pages))
        for pid in fdata.pages:
            out.u64(pid)

    out.u32(len(s.dmap))
    for did in sorted(s.dmap):
        ddata = s.dmap[did]
        out.u64(did)
        out.text(ddata.name)
        out.u8(ddata.perm.bits)
        out.u64(ddata.size)

    out.u32(len(s.handles))
    for handle in s.handles:
        out.u64(handle.fid)
        out.u64(handle.cursor)

    out.u32(len(s.mmaps))
    for region in s.mmaps:
        out.u64(region.start)
        out.u64(region.length)
        out.blob(bytes(s.anon.get(region.start, b"")))

    out.u64(s.pool.capacity)
    out.u64(s.pool.high_water)
    out.u32(len(s.pool.metas))
    for pid in sorted(s.pool.metas):
        meta = s.pool.metas[pid]
        out.u64(pid)
        out.u64(meta.version)
        out.u8(1 if meta.free else 0)
        out.u8(0 if meta.owner is None else 1)
        out.u64(meta.owner or 0)
        out.blob(meta.tag)

    return out.getvalue()


def decode_state(data: bytes, clock: bool = True) -> FsState:
    src = _Reader(data)
    next_fid = src.u64()
    next_did = src.u64()
    next_addr = src.u64()
    call_counter = src.u64() if clock else 0

    layout = _decode_tree(src)
    if not isinstance(layout, DirNode):
        raise StateImageError(ViolationKind.CONTENT_TAMPER, "layout root is a file")

    fmap = {}
    for _ in range(src.u32()):
        fid = src.u64()
        name = src.text()
        perm = Permission.from_bits(src.u8())
        size = src.u64()
        pages = [src.u64() for _ in range(src.u32())]
        fmap[fid] = FData(name=name, perm=perm, size=size, pages=pages)

    dmap = {}
    for _ in range(src.u32()):
        did = src.u64()
        name = src.text()
        perm = Permission.from_bits(src.u8())
        dmap[did] = DData(name=name, perm=perm, size=src.u64())

    handles = [OpenHandle(fid=src.u64(), cursor=src.u64()) for _ in range(src.u32())]

    mmaps = []
    anon = {}
    for _ in range(src.u32()):
        region = MmapHandle(start=src.u64(), length=src.u64())
        mmaps.append(region)
        anon[region.start] = bytearray(src.blob())

    pool = PagePool(src.u64())
    high_water = src.u64()
    metas = {}
    for _ in range(src.u32()):
        pid = src.u64()
        version = src.u64()
        free = src.u8() == 1
        has_owner = src.u8() == 1
        owner = src.u64()
        metas[pid] = PageMeta(
            page_id=pid,
            version=version,
            owner=owner if has_owner else None,
            tag=src.blob(),
            free=free,
        )
    pool.restore(high_water, metas)

    if not src.done():
        raise StateImageError(ViolationKind.CONTENT_TAMPER, "trailing bytes after state encoding")

    return FsState(
        layout=layout,
        pool=pool,
        handles=handles,
        mmaps=mmaps,
        anon=anon,
        fmap=fmap,
        dmap=dmap,
        next_fid=next_fid,
        next_did=next_did,
        next_addr=next_addr,
        call_counter=call_counter,
    )


def _image_nonce(epoch: int) -> bytes:
    return IMAGE_DOMAIN + struct.pack(">Q", epoch)


def save_state(s: FsState, epoch: int, key: SealingKey) -> bytes:
    """seal the state under `epoch`; the caller stores the image and advances the trusted epoch"""
    problems = good_state_violations(s)
    if problems:
        raise ValueError(f"refusing to persist a state that is not good: {problems[0]}")
    payload = encode_state(s)
    header = HEADER.pack(MAGIC, epoch, len(payload) + TAG_BYTES)
    sealed = key.aead.encrypt(_image_nonce(epoch), payload, header)
    return header + sealed


def open_image(image: bytes, key: SealingKey) -> Tuple[int, FsState]:
    """verify the tag and decode; no freshness check"""
    if len(image) < HEADER.size + TAG_BYTES:
        raise StateImageError(ViolationKind.CONTENT_TAMPER, f"image is only {len(image)} bytes")
    magic, epoch, length = HEADER.unpack(image[:HEADER.size])
    if magic != MAGIC or length != len(image) - HEADER.size:
        raise StateImageError(ViolationKind.CONTENT_TAMPER, "bad image header")
    try:
        payload = key.aead.decrypt(_image_nonce(epoch), image[HEADER.size:], image[:HEADER.size])
    except InvalidTag:
        raise StateImageError(ViolationKind.CONTENT_TAMPER, "image tag mismatch") from None
    return epoch, decode_state(payload)


def load_state(image: bytes, expected_epoch: int, key: SealingKey) -> FsState:
    """
    verify tag, then epoch, then the good-state predicate

    raises:
        StateImageError: ContentTamper for a forged or corrupt image,
        Rollback for a validly sealed image of another epoch
    """
    epoch, state = open_image(image, key)
    if epoch != expected_epoch:
        raise StateImageError(ViolationKind.ROLLBACK, f"image epoch {epoch} != trusted epoch {expected_epoch}")
    problems = good_state_violations(state)
    if problems:
        raise StateImageError(ViolationKind.CONTENT_TAMPER, problems[0])
    return state


class EpochStore(ABC):
    """trusted monotonic epoch record"""

    @abstractmethod
    def current(self) -> int: ...

    @abstractmethod
    def _write(self, epoch: int) -> None: ...

    def advance(self, epoch: int) -> None:
        if epoch != self.current() + 1:
            raise ValueError(f"epoch must advance by one, {self.current()} -> {epoch}")
        self._write(epoch)


class MemoryEpochStore(EpochStore):
    def __init__(self, epoch: int = 0):
        self._epoch = epoch

    def current(self) -> int:
        return self._epoch

    def _write(self, epoch: int) -> None:
        self._epoch = epoch


class FileEpochStore(EpochStore):
    """epoch.trusted sidecar file, treated as trusted storage"""

    FILE_NAME = "epoch.trusted"

    def __init__(self, directory: str):
        self.path = Path(directory) / self.FILE_NAME

    def current(self) -> int:
        try:
            text = self.path.read_text(encoding="utf-8").strip()
        except FileNotFoundError:
            return 0
        return int(text or 0)

    def _write(self, epoch: int) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        scratch = self.path.with_suffix(".tmp")
        scratch.write_text(f"{epoch}\n", encoding="utf-8")
        os.replace(scratch, self.path)


def epoch_store_for(root: Optional[str]) -> EpochStore:
    return FileEpochStore(root) if root else MemoryEpochStore()
