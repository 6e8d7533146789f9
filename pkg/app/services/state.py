"""
trusted shadow state of the filesystem

the monitor only ever changes state through the helpers in this module;
is_good_state is the predicate every committed transition must preserve
"""
from bisect import bisect_left, insort
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple, Union

from app.services.pagestore import CONTENT_BYTES, PageMeta


SEPARATOR = "/"
ROOT_DID = 0


class PathError(ValueError):
    """raised for malformed paths or for asking the parent of root"""
    pass


class PoolExhausted(Exception):
    """raised when the page pool has no free slot left"""
    pass


@dataclass(frozen=True)
class PathName:
    """absolute path as a tuple of components, () is the root"""
    components: Tuple[str, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "PathName":
        if not text.startswith(SEPARATOR):
            raise PathError(f"path must be absolute: {text!r}")
        parts = tuple(part for part in text.split(SEPARATOR) if part != "")
        # a trailing or doubled separator is tolerated, empty components are not kept
        for part in parts:
            validate_name(part)
        return cls(parts)

    @property
    def is_root(self) -> bool:
        return not self.components

    @property
    def name(self) -> str:
        return self.components[-1] if self.components else ""

    def child(self, name: str) -> "PathName":
        validate_name(name)
        return PathName(self.components + (name,))

    def __str__(self) -> str:
        return SEPARATOR + SEPARATOR.join(self.components)


def validate_name(name: str) -> None:
    if not name or name in (".", ".."):
        raise PathError(f"invalid path component: {name!r}")
    if SEPARATOR in name or "\x00" in name:
        raise PathError(f"path component contains a reserved character: {name!r}")


def parent_of(path: PathName) -> PathName:
    """the path with its last component removed"""
    if path.is_root:
        raise PathError("root has no parent")
    return PathName(path.components[:-1])


@dataclass(frozen=True)
class Permission:
    read: bool = True
    write: bool = True
    execute: bool = False

    @classmethod
    def parse(cls, text: str) -> "Permission":
        if len(text) != 3 or text[0] not in "r-" or text[1] not in "w-" or text[2] not in "x-":
            raise ValueError(f"permission must look like 'rwx' or 'r--', got {text!r}")
        return cls(text[0] == "r", text[1] == "w", text[2] == "x")

    @classmethod
    def from_bits(cls, bits: int) -> "Permission":
        return cls(bool(bits & 4), bool(bits & 2), bool(bits & 1))

    @property
    def bits(self) -> int:
        return (4 if self.read else 0) | (2 if self.write else 0) | (1 if self.execute else 0)

    def __str__(self) -> str:
        return ("r" if self.read else "-") + ("w" if self.write else "-") + ("x" if self.execute else "-")


@dataclass
class FData:
    name: str
    perm: Permission
    size: int = 0
    pages: List[int] = field(default_factory=list)


@dataclass
class DData:
    name: str
    perm: Permission
    size: int = 0


@dataclass
class FileNode:
    fid: int


@dataclass
class DirNode:
    did: int
    children: List["Tree"] = field(default_factory=list)


Tree = Union[FileNode, DirNode]


@dataclass
class OpenHandle:
    fid: int
    cursor: int = 0


@dataclass
class MmapHandle:
    start: int
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length


class PagePool:
    """
    fixed-capacity pool of page slots
    allocation is lowest-free-slot; a slot keeps its version when freed
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.metas: Dict[int, PageMeta] = {}
        self.free: List[int] = []
        self.high_water = 0

    def plan(self, count: int) -> List[int]:
        """the lowest `count` free slots, without claiming them"""
        picked = self.free[:count]
        nxt = self.high_water
        while len(picked) < count:
            if nxt >= self.capacity:
                raise PoolExhausted(f"page pool of {self.capacity} slots is full")
            picked.append(nxt)
            nxt += 1
        return picked

    def next_version(self, pid: int) -> int:
        meta = self.metas.get(pid)
        return meta.version + 1 if meta is not None else 1

    def meta(self, pid: int) -> Optional[PageMeta]:
        return self.metas.get(pid)

    def claim(self, meta: PageMeta) -> None:
        pid = meta.page_id
        if pid >= self.high_water:
            self.free.extend(range(self.high_water, pid))
            self.high_water = pid + 1
        else:
            idx = bisect_left(self.free, pid)
            if idx == len(self.free) or self.free[idx] != pid:
                raise ValueError(f"page {pid} is not free")
            del self.free[idx]
        self.metas[pid] = meta

    def release(self, pid: int) -> None:
        meta = self.metas[pid]
        self.metas[pid] = PageMeta(page_id=pid, version=meta.version, free=True)
        insort(self.free, pid)

    def in_use(self) -> Dict[int, PageMeta]:
        return {pid: meta for pid, meta in self.metas.items() if not meta.free}

    def restore(self, high_water: int, metas: Dict[int, PageMeta]) -> None:
        """rebuild the pool from its persisted slots, the free list is derived"""
        self.high_water = high_water
        self.metas = dict(metas)
        self.free = [pid for pid in range(high_water) if pid not in metas or metas[pid].free]


@dataclass
class FsState:
    layout: DirNode
    pool: PagePool
    handles: List[OpenHandle] = field(default_factory=list)
    mmaps: List[MmapHandle] = field(default_factory=list)
    anon: Dict[int, bytearray] = field(default_factory=dict)
    fmap: Dict[int, FData] = field(default_factory=dict)
    dmap: Dict[int, DData] = field(default_factory=dict)
    next_fid: int = 0
    next_did: int = 1
    next_addr: int = 0
    call_counter: int = 0


class NodeKind(str, Enum):
    FILE = "file"
    DIR = "dir"
    ABSENT = "absent"


@dataclass(frozen=True)
class Resolution:
    """
    result of resolving a path: FileAt(fid), DirAt(did) or Absent
    not_dir marks an absent path whose walk went through a regular file
    """
    kind: NodeKind
    node_id: Optional[int] = None
    not_dir: bool = False
    node: Optional[Tree] = field(default=None, compare=False, repr=False)

    @property
    def is_file(self) -> bool:
        return self.kind is NodeKind.FILE

    @property
    def is_dir(self) -> bool:
        return self.kind is NodeKind.DIR

    @property
    def absent(self) -> bool:
        return self.kind is NodeKind.ABSENT


def file_at(fid: int, node: Optional[FileNode] = None) -> Resolution:
    return Resolution(NodeKind.FILE, fid, node=node)


def dir_at(did: int, node: Optional[DirNode] = None) -> Resolution:
    return Resolution(NodeKind.DIR, did, node=node)


def absent(not_dir: bool = False) -> Resolution:
    return Resolution(NodeKind.ABSENT, not_dir=not_dir)


def node_name(state: FsState, node: Tree) -> str:
    if isinstance(node, FileNode):
        return state.fmap[node.fid].name
    return state.dmap[node.did].name


def find_child(state: FsState, directory: DirNode, name: str) -> Optional[Tree]:
    for child in directory.children:
        if node_name(state, child) == name:
            return child
    return None


def lookup(state: FsState, path: PathName) -> Resolution:
    """resolve a path by walking the layout from the root"""
    node: Tree = state.layout
    for component in path.components:
        if isinstance(node, FileNode):
            return absent(not_dir=True)
        child = find_child(state, node, component)
        if child is None:
            return absent()
        node = child
    if isinstance(node, FileNode):
        return file_at(node.fid, node)
    return dir_at(node.did, node)


def _preorder(tree: Tree) -> Iterator[Tree]:
    stack: List[Tree] = [tree]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, DirNode):
            stack.extend(reversed(node.children))


def fids(tree: Tree) -> List[int]:
    return [node.fid for node in _preorder(tree) if isinstance(node, FileNode)]


def dids(tree: Tree) -> List[int]:
    return [node.did for node in _preorder(tree) if isinstance(node, DirNode)]


def walk(state: FsState) -> Iterator[Tuple[PathName, Tree]]:
    """every (path, node) pair of the layout, root first"""
    stack: List[Tuple[PathName, Tree]] = [(PathName(), state.layout)]
    while stack:
        path, node = stack.pop()
        yield path, node
        if isinstance(node, DirNode):
            for child in reversed(node.children):
                stack.append((PathName(path.components + (node_name(state, child),)), child))


def path_of_fid(state: FsState, fid: int) -> Optional[PathName]:
    for path, node in walk(state):
        if isinstance(node, FileNode) and node.fid == fid:
            return path
    return None


def find_handle(state: FsState, fid: int) -> Optional[OpenHandle]:
    for handle in state.handles:
        if handle.fid == fid:
            return handle
    return None


def find_mmap(state: FsState, start: int) -> Optional[MmapHandle]:
    for region in state.mmaps:
        if region.start == start:
            return region
    return None


def pages_for(size: int) -> int:
    """number of pages backing `size` bytes of content"""
    return -(-size // CONTENT_BYTES)


def new_fid(state: FsState) -> int:
    fid = state.next_fid
    while fid in state.fmap:
        fid += 1
    return fid


def new_did(state: FsState) -> int:
    did = state.next_did
    while did in state.dmap:
        did += 1
    return did


def next_free_page(state: FsState) -> int:
    """lowest free page slot; raises PoolExhausted"""
    return state.pool.plan(1)[0]


def init_state(capacity: int = 4096, mmap_base: int = 0x10000) -> FsState:
    root = DirNode(did=ROOT_DID)
    return FsState(
        layout=root,
        pool=PagePool(capacity),
        dmap={ROOT_DID: DData(name="", perm=Permission(True, True, True))},
        next_did=ROOT_DID + 1,
        next_addr=mmap_base,
    )


def good_state_violations(state: FsState) -> List[str]:
    """every conjunct of the good-state predicate that does not hold"""
    problems: List[str] = []

    if not isinstance(state.layout, DirNode):
        return ["layout root is not a directory"]

    tree_fids = fids(state.layout)
    tree_dids = dids(state.layout)
    if len(set(tree_fids)) != len(tree_fids):
        problems.append("duplicate fid in layout")
    if len(set(tree_dids)) != len(tree_dids):
        problems.append("duplicate did in layout")
    if set(tree_fids) != set(state.fmap):
        problems.append("fmap domain differs from layout fids")
    if set(tree_dids) != set(state.dmap):
        problems.append("dmap domain differs from layout dids")
    if problems:
        return problems

    stack: List[DirNode] = [state.layout]
    while stack:
        directory = stack.pop()
        names = [node_name(state, child) for child in directory.children]
        if len(set(names)) != len(names):
            problems.append(f"duplicate sibling name under did {directory.did}")
        for name in names:
            try:
                validate_name(name)
            except PathError:
                problems.append(f"invalid name {name!r}")
        stack.extend(child for child in directory.children if isinstance(child, DirNode))

    for did, ddata in state.dmap.items():
        if ddata.size != 0:
            problems.append(f"directory {did} has non-zero size")

    in_use = state.pool.in_use()
    seen_pages: set = set()
    page_total = 0
    for fid, fdata in state.fmap.items():
        if len(fdata.pages) != pages_for(fdata.size):
            problems.append(f"file {fid} has {len(fdata.pages)} pages for {fdata.size} bytes")
        page_total += len(fdata.pages)
        seen_pages.update(fdata.pages)
        for pid in fdata.pages:
            meta = in_use.get(pid)
            if meta is None or meta.owner != fid:
                problems.append(f"page {pid} of file {fid} is not owned by it in the pagemap")
    if len(seen_pages) != page_total:
        problems.append("files share pages")
    if set(in_use) != seen_pages:
        problems.append("pagemap has in-use pages no file owns")

    handle_ids = [handle.fid for handle in state.handles]
    if len(set(handle_ids)) != len(handle_ids):
        problems.append("duplicate open handle")
    for handle in state.handles:
        fdata = state.fmap.get(handle.fid)
        if fdata is None:
            problems.append(f"handle {handle.fid} refers to no file")
        elif not 0 <= handle.cursor <= fdata.size:
            problems.append(f"handle {handle.fid} cursor {handle.cursor} outside [0, {fdata.size}]")

    regions = sorted(state.mmaps, key=lambda region: region.start)
    for region in regions:
        if region.length <= 0:
            problems.append(f"mmap at {region.start} has no length")
    for left, right in zip(regions, regions[1:]):
        if left.end > right.start:
            problems.append(f"mmap regions at {left.start} and {right.start} overlap")
    if set(state.anon) != {region.start for region in state.mmaps}:
        problems.append("anonymous shadow differs from mmap handles")
    for region in state.mmaps:
        shadow = state.anon.get(region.start)
        if shadow is not None and len(shadow) != region.length:
            problems.append(f"shadow of mmap at {region.start} has wrong length")

    return problems


def is_good_state(state: FsState) -> bool:
    return not good_state_violations(state)


def all_paths(state: FsState) -> Dict[PathName, Resolution]:
    """brute-force enumeration of the path set, used as a lookup oracle"""
    out: Dict[PathName, Resolution] = {}
    for path, node in walk(state):
        if isinstance(node, FileNode):
            out[path] = file_at(node.fid)
        else:
            out[path] = dir_at(node.did)
    return out
