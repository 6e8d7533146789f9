"""
seeded, precondition-aware script generation

the reference model tracks what exists while the script is being built, so
most generated calls are valid; a configurable fraction is deliberately
invalid to walk the error paths
"""
import random
from typing import Callable, Dict, List, Optional

import structlog

from app.services.codes import ErrorCode
from app.services.reference import ReferenceFs
from app.services.script import Command, SlotRef, WorkloadScript
from app.services.session import Session
from app.services.state import Permission


logger = structlog.get_logger()

DEFAULT_WEIGHTS: Dict[str, float] = {
    "create": 3.0,
    "mkdir": 1.5,
    "open": 3.0,
    "close": 2.0,
    "write": 5.0,
    "read": 4.0,
    "seek": 1.5,
    "stat": 1.5,
    "readdir": 1.5,
    "chmod": 1.0,
    "truncate": 1.5,
    "remove": 1.5,
    "rmdir": 1.0,
    "mmap": 1.0,
    "munmap": 1.0,
    "mem_read": 0.5,
    "remount": 0.3,
}

NAMES = ("a", "b", "c", "d", "e", "log", "data")
FILE_PERMS = ("rw-", "rw-", "rw-", "r--", "rwx")
DIR_PERMS = ("rwx", "rwx", "rwx", "r-x")


class _Builder:
    def __init__(self, rng: random.Random, capacity: int):
        self.rng = rng
        self.model = ReferenceFs(capacity=capacity)
        self.session = Session(self.model)
        self.commands: List[Command] = []
        self._maps = 0

    # views of the model

    def files(self) -> List[str]:
        return sorted(self.model.files)

    def dirs(self) -> List[str]:
        return sorted(self.model.dirs)

    def writable_dirs(self) -> List[str]:
        return [d for d in self.dirs() if self.model.dirs[d].perm.write]

    def open_fids(self) -> List[int]:
        return sorted(self.model.cursors)

    def closed_files(self) -> List[str]:
        return [p for p in self.files() if self.model.files[p].fid not in self.model.cursors]

    def size(self, fid: int) -> int:
        return len(self.model._by_fid(fid).data)

    def map_slots(self) -> List[str]:
        return sorted(name for name, value in self.session.slots.items()
                      if name.startswith("m") and value in self.model.maps)

    def parent_writable(self, path: str) -> bool:
        head = path.rsplit("/", 1)[0] or "/"
        return self.model.dirs[head].perm.write

    # emission

    def emit(self, call: str, *args, bind: Optional[str] = None) -> None:
        command = Command(line=len(self.commands) + 1, call=call, args=list(args), bind=bind)
        self.session.execute(command)
        self.commands.append(command)

    def handle(self, fid: int) -> SlotRef:
        return SlotRef(f"h{fid}")

    def child_path(self, parent: str, fresh: bool) -> Optional[str]:
        taken = set(self.model._children(parent))
        pool = [n for n in NAMES if (n not in taken) == fresh]
        if not pool:
            return None
        name = self.rng.choice(pool)
        return (parent.rstrip("/") + "/" + name) if parent != "/" else "/" + name

    def payload(self) -> bytes:
        roll = self.rng.random()
        if roll < 0.75:
            n = self.rng.randint(1, 48)
        elif roll < 0.95:
            n = self.rng.randint(100, 4200)
        else:
            n = self.rng.randint(4000, 9000)
        alphabet = b"abcdefghijklmnopqrstuvwxyz0123456789\n"
        return bytes(self.rng.choice(alphabet) for _ in range(n))

    # valid moves, each returns False when its precondition cannot be met

    def v_create(self) -> bool:
        parents = self.writable_dirs()
        path = self.child_path(self.rng.choice(parents), fresh=True) if parents else None
        if path is None:
            return False
        self.emit("create", path, Permission.parse(self.rng.choice(FILE_PERMS)))
        return True

    def v_mkdir(self) -> bool:
        parents = self.writable_dirs()
        path = self.child_path(self.rng.choice(parents), fresh=True) if parents else None
        if path is None or path.count("/") > 3:
            return False
        self.emit("mkdir", path, Permission.parse(self.rng.choice(DIR_PERMS)))
        return True

    def v_open(self) -> bool:
        candidates = self.closed_files()
        if not candidates:
            return False
        path = self.rng.choice(candidates)
        self.emit("open", path, bind=f"h{self.model.files[path].fid}")
        return True

    def v_close(self) -> bool:
        fids = self.open_fids()
        if not fids:
            return False
        self.emit("close", self.handle(self.rng.choice(fids)))
        return True

    def v_write(self) -> bool:
        fids = [fid for fid in self.open_fids() if self.model._by_fid(fid).perm.write]
        if not fids:
            return False
        fid = self.rng.choice(fids)
        size = self.size(fid)
        offset = size if self.rng.random() < 0.5 else self.rng.randint(0, size)
        self.emit("write", self.handle(fid), offset, self.payload())
        return True

    def v_read(self) -> bool:
        fids = self.open_fids()
        if not fids:
            return False
        fid = self.rng.choice(fids)
        left = self.size(fid) - self.model.cursor(fid)
        if left <= 0:
            if self.size(fid) == 0:
                return False
            self.emit("seek", self.handle(fid), 0)
            left = self.size(fid)
        self.emit("read", self.handle(fid), self.rng.randint(1, left))
        return True

    def v_seek(self) -> bool:
        fids = self.open_fids()
        if not fids:
            return False
        fid = self.rng.choice(fids)
        self.emit("seek", self.handle(fid), self.rng.randint(0, self.size(fid)))
        return True

    def v_stat(self) -> bool:
        fids = self.open_fids()
        if not fids:
            return False
        self.emit("stat", self.handle(self.rng.choice(fids)))
        return True

    def v_readdir(self) -> bool:
        self.emit("readdir", self.rng.choice(self.dirs()))
        return True

    def v_chmod(self) -> bool:
        candidates = self.files() + [d for d in self.dirs() if d != "/"]
        if not candidates:
            return False
        path = self.rng.choice(candidates)
        perms = FILE_PERMS if path in self.model.files else DIR_PERMS
        self.emit("chmod", path, Permission.parse(self.rng.choice(perms)))
        return True

    def v_truncate(self) -> bool:
        fids = self.open_fids()
        if not fids:
            return False
        fid = self.rng.choice(fids)
        self.emit("truncate", self.handle(fid), self.rng.randint(0, self.size(fid)))
        return True

    def v_remove(self) -> bool:
        candidates = [p for p in self.closed_files() if self.parent_writable(p)]
        if not candidates:
            return False
        self.emit("remove", self.rng.choice(candidates))
        return True

    def v_rmdir(self) -> bool:
        candidates = [d for d in self.dirs()
                      if d != "/" and not self.model._children(d) and self.parent_writable(d)]
        if not candidates:
            return False
        self.emit("rmdir", self.rng.choice(candidates))
        return True

    def v_mmap(self) -> bool:
        length = self.rng.choice((8, 64, 4096, self.rng.randint(1, 8192)))
        self.emit("mmap", length, bind=f"m{self._maps}")
        self._maps += 1
        return True

    def v_munmap(self) -> bool:
        slots = self.map_slots()
        if not slots:
            return False
        self.emit("munmap", SlotRef(self.rng.choice(slots)))
        return True

    def v_mem_read(self) -> bool:
        slots = self.map_slots()
        if not slots:
            return False
        slot = self.rng.choice(slots)
        length = len(self.model.maps[self.session.slots[slot]])
        offset = self.rng.randint(0, length - 1)
        self.emit("mem_read", SlotRef(slot), offset, self.rng.randint(1, length - offset))
        return True

    def v_remount(self) -> bool:
        self.emit("remount")
        return True

    # deliberately invalid calls

    def invalid(self) -> None:
        moves: List[Callable[[], bool]] = [
            lambda: self.emit("open", "/missing") or True,
            lambda: self.emit("close", 999) or True,
            lambda: self.emit("mmap", 0) or True,
            lambda: self.emit("munmap", 1) or True,
            lambda: self.emit("rmdir", "/") or True,
            self._invalid_read,
            self._invalid_write,
            self._invalid_seek,
            self._invalid_create,
            self._invalid_under_file,
            self._invalid_remove_dir,
        ]
        self.rng.shuffle(moves)
        for move in moves:
            if move():
                return

    def _invalid_read(self) -> bool:
        fids = self.open_fids()
        if not fids:
            return False
        fid = self.rng.choice(fids)
        self.emit("read", self.handle(fid), self.size(fid) - self.model.cursor(fid) + 1)
        return True

    def _invalid_write(self) -> bool:
        fids = self.open_fids()
        if not fids:
            return False
        fid = self.rng.choice(fids)
        self.emit("write", self.handle(fid), self.size(fid) + self.rng.randint(1, 10), b"gap")
        return True

    def _invalid_seek(self) -> bool:
        fids = self.open_fids()
        if not fids:
            return False
        fid = self.rng.choice(fids)
        self.emit("seek", self.handle(fid), self.size(fid) + 1)
        return True

    def _invalid_create(self) -> bool:
        existing = self.files() + [d for d in self.dirs() if d != "/"]
        if not existing:
            return False
        self.emit("create", self.rng.choice(existing), Permission.parse("rw-"))
        return True

    def _invalid_under_file(self) -> bool:
        files = self.files()
        if not files:
            return False
        self.emit("mkdir", self.rng.choice(files) + "/x", Permission.parse("rwx"))
        return True

    def _invalid_remove_dir(self) -> bool:
        dirs = [d for d in self.dirs() if d != "/"]
        if not dirs:
            return False
        self.emit("remove", self.rng.choice(dirs))
        return True


def generate(
    seed: int,
    length: int,
    op_weights: Optional[Dict[str, float]] = None,
    invalid_fraction: float = 0.1,
    capacity: int = 4096,
) -> WorkloadScript:
    """
    build a script of `length` top-level moves

    a valid read at end of file emits a rewinding seek first, so the
    command count can slightly exceed `length`
    """
    if length < 1:
        raise ValueError("script length must be at least 1")
    weights = dict(DEFAULT_WEIGHTS if op_weights is None else op_weights)
    unknown = set(weights) - set(DEFAULT_WEIGHTS)
    if unknown:
        raise ValueError(f"unknown ops in weights: {sorted(unknown)}")

    rng = random.Random(seed)
    builder = _Builder(rng, capacity)
    ops = sorted(op for op, weight in weights.items() if weight > 0)
    for _ in range(length):
        if rng.random() < invalid_fraction:
            builder.invalid()
            continue
        for _attempt in range(8):
            op = rng.choices(ops, weights=[weights[op] for op in ops])[0]
            if getattr(builder, "v_" + op)():
                break
        else:
            # nothing applicable: grow the tree instead
            if not builder.v_create():
                builder.v_readdir()

    script = WorkloadScript(builder.commands)
    logger.debug("script generated", seed=seed, commands=len(script))
    return script


def covered_ops(script: WorkloadScript) -> set:
    return {command.call for command in script.commands}


def benign_codes(script: WorkloadScript, capacity: int = 4096) -> List[ErrorCode]:
    """result codes of the script on the reference model"""
    session = Session(ReferenceFs(capacity=capacity))
    return [session.execute(command).code for command in script.commands]
