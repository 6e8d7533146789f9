"""
workload scripts

one command per line:

    [slot =] call arg... [=> CODE [payload]]

`#` starts a comment, arguments are shell-quoted. `$name` refers to a
value bound by an earlier `name = ...` line. data arguments understand
\\n \\t \\r \\0 \\\\ and \\xHH escapes, and `N*text` repeats text N times
"""
import re
import shlex
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

from app.services.codes import ErrorCode, ViolationKind, parse_code
from app.services.compat import MODES, SEEK_CUR, SEEK_END, SEEK_SET
from app.services.state import Permission


class ScriptError(Exception):
    """raised for any line that does not parse"""

    def __init__(self, line: int, message: str):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class Arg(str, Enum):
    PATH = "path"
    SLOT = "slot"
    INT = "int"
    PERM = "perm"
    MODE = "mode"
    DATA = "data"
    WHENCE = "whence"


# call name -> argument kinds
CALLS: Dict[str, Tuple[Arg, ...]] = {
    # core
    "open": (Arg.PATH,),
    "close": (Arg.SLOT,),
    "mkdir": (Arg.PATH, Arg.PERM),
    "create": (Arg.PATH, Arg.PERM),
    "remove": (Arg.PATH,),
    "rmdir": (Arg.PATH,),
    "stat": (Arg.SLOT,),
    "readdir": (Arg.PATH,),
    "chmod": (Arg.PATH, Arg.PERM),
    "seek": (Arg.SLOT, Arg.INT),
    "read": (Arg.SLOT, Arg.INT),
    "write": (Arg.SLOT, Arg.INT, Arg.DATA),
    "truncate": (Arg.SLOT, Arg.INT),
    "mmap": (Arg.INT,),
    "munmap": (Arg.SLOT,),
    "mem_read": (Arg.SLOT, Arg.INT, Arg.INT),
    "mem_write": (Arg.SLOT, Arg.INT, Arg.DATA),
    "remount": (),
    # compat
    "fopen": (Arg.PATH, Arg.MODE),
    "fclose": (Arg.SLOT,),
    "fread": (Arg.SLOT, Arg.INT, Arg.INT),
    "fwrite": (Arg.SLOT, Arg.DATA),
    "fgets": (Arg.SLOT, Arg.INT),
    "fgetc": (Arg.SLOT,),
    "fseek": (Arg.SLOT, Arg.INT, Arg.WHENCE),
    "ftell": (Arg.SLOT,),
    "rewind": (Arg.SLOT,),
    "ftruncate": (Arg.SLOT, Arg.INT),
    "fsync": (Arg.SLOT,),
    "creat": (Arg.PATH,),
    "unlink": (Arg.PATH,),
    "rename": (Arg.PATH, Arg.PATH),
    "sys_open": (Arg.PATH,),
    "sys_close": (Arg.SLOT,),
    "sys_read": (Arg.SLOT, Arg.INT),
    "sys_write": (Arg.SLOT, Arg.DATA),
    "sys_lseek": (Arg.SLOT, Arg.INT, Arg.WHENCE),
    "cat": (Arg.PATH,),
    # victims
    "vote_log": (Arg.PATH, Arg.DATA),
    "glibc_chunk": (Arg.INT,),
    # harness
    "arm": (),
}

CORE_CALLS = frozenset({
    "open", "close", "mkdir", "create", "remove", "rmdir", "stat", "readdir",
    "chmod", "seek", "read", "write", "truncate", "mmap", "munmap",
})

WHENCE = {"SEEK_SET": SEEK_SET, "SEEK_CUR": SEEK_CUR, "SEEK_END": SEEK_END}

_SLOT_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_REPEAT = re.compile(r"^(\d+)\*(.*)$", re.DOTALL)
_ESCAPE = re.compile(r"\\(x[0-9a-fA-F]{2}|[ntr0\\])")
_SIMPLE = {"n": b"\n", "t": b"\t", "r": b"\r", "0": b"\x00", "\\": b"\\"}


@dataclass(frozen=True)
class SlotRef:
    name: str


@dataclass(frozen=True)
class Expectation:
    code: ErrorCode
    payload: Optional[str] = None

    @property
    def kind(self) -> Optional[ViolationKind]:
        if self.code is ErrorCode.VIOLATION and self.payload:
            return ViolationKind(self.payload)
        return None


Value = Union[str, int, bytes, Permission, SlotRef]


@dataclass
class Command:
    line: int
    call: str
    args: List[Value] = field(default_factory=list)
    bind: Optional[str] = None
    expect: Optional[Expectation] = None


@dataclass
class WorkloadScript:
    commands: List[Command] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.commands)


def decode_data(text: str) -> bytes:
    """data literal -> bytes"""
    repeat = _REPEAT.match(text)
    if repeat:
        return decode_data(repeat.group(2)) * int(repeat.group(1))

    out = bytearray()
    pos = 0
    for match in _ESCAPE.finditer(text):
        out += text[pos:match.start()].encode("utf-8")
        token = match.group(1)
        out += bytes([int(token[1:], 16)]) if token[0] == "x" else _SIMPLE[token]
        pos = match.end()
    out += text[pos:].encode("utf-8")
    return bytes(out)


def encode_data(data: bytes) -> str:
    """bytes -> quoted data literal that decodes back to the same bytes"""
    parts = []
    for byte in data:
        ch = chr(byte)
        if ch == "\n":
            parts.append("\\n")
        elif ch == "\t":
            parts.append("\\t")
        elif ch == "\\":
            parts.append("\\\\")
        elif 0x20 <= byte < 0x7F and ch not in "\"'*#":
            parts.append(ch)
        else:
            parts.append(f"\\x{byte:02x}")
    return '"' + "".join(parts) + '"'


def _split(text: str, line: int) -> List[str]:
    lexer = shlex.shlex(text, posix=True)
    lexer.whitespace_split = True
    lexer.commenters = "#"
    # backslashes are data escapes, not shell escapes
    lexer.escape = ""
    try:
        return list(lexer)
    except ValueError as e:
        raise ScriptError(line, str(e)) from None


def _parse_arg(kind: Arg, token: str, line: int) -> Value:
    if kind is Arg.SLOT:
        if token.startswith("$"):
            if not _SLOT_NAME.match(token[1:]):
                raise ScriptError(line, f"bad slot reference {token!r}")
            return SlotRef(token[1:])
        kind = Arg.INT
    if kind is Arg.INT:
        try:
            return int(token, 0)
        except ValueError:
            raise ScriptError(line, f"expected an integer, got {token!r}") from None
    if kind is Arg.PERM:
        try:
            return Permission.parse(token)
        except ValueError as e:
            raise ScriptError(line, str(e)) from None
    if kind is Arg.MODE:
        if token not in MODES:
            raise ScriptError(line, f"unsupported fopen mode {token!r}")
        return token
    if kind is Arg.WHENCE:
        if token in WHENCE:
            return WHENCE[token]
        return _parse_arg(Arg.INT, token, line)
    if kind is Arg.DATA:
        return decode_data(token)
    # paths stay text, the executing layer decides whether they are valid
    return token


def parse_line(text: str, line: int) -> Optional[Command]:
    tokens = _split(text, line)
    if not tokens:
        return None

    expect = None
    if "=>" in tokens:
        at = tokens.index("=>")
        tail = tokens[at + 1:]
        tokens = tokens[:at]
        if not tail or len(tail) > 2:
            raise ScriptError(line, "expectation must be '=> CODE [payload]'")
        try:
            code = parse_code(tail[0])
        except ValueError as e:
            raise ScriptError(line, str(e)) from None
        payload = tail[1] if len(tail) == 2 else None
        if code is ErrorCode.VIOLATION and payload is not None:
            try:
                ViolationKind(payload)
            except ValueError:
                raise ScriptError(line, f"unknown violation kind {payload!r}") from None
        expect = Expectation(code, payload)

    bind = None
    if len(tokens) >= 2 and tokens[1] == "=":
        bind = tokens[0]
        if not _SLOT_NAME.match(bind):
            raise ScriptError(line, f"bad slot name {bind!r}")
        tokens = tokens[2:]
    if not tokens:
        raise ScriptError(line, "missing call name")

    call, raw = tokens[0], tokens[1:]
    signature = CALLS.get(call)
    if signature is None:
        raise ScriptError(line, f"unknown call {call!r}")
    if len(raw) != len(signature):
        raise ScriptError(line, f"{call} takes {len(signature)} argument(s), got {len(raw)}")
    args = [_parse_arg(kind, token, line) for kind, token in zip(signature, raw)]
    return Command(line=line, call=call, args=args, bind=bind, expect=expect)


def parse_script(text: str) -> WorkloadScript:
    commands = []
    for number, raw in enumerate(text.splitlines(), start=1):
        command = parse_line(raw, number)
        if command is not None:
            commands.append(command)
    return WorkloadScript(commands)


def _render_arg(kind: Arg, value: Value) -> str:
    if isinstance(value, SlotRef):
        return "$" + value.name
    if kind is Arg.DATA:
        return encode_data(value)
    if kind is Arg.PERM:
        return str(value)
    if kind is Arg.PATH:
        return shlex.quote(value)
    return str(value)


def render_command(command: Command) -> str:
    signature = CALLS[command.call]
    parts = []
    if command.bind:
        parts += [command.bind, "="]
    parts.append(command.call)
    parts += [_render_arg(kind, value) for kind, value in zip(signature, command.args)]
    if command.expect is not None:
        parts += ["=>", command.expect.code.value]
        if command.expect.payload is not None:
            parts.append(shlex.quote(command.expect.payload))
    return " ".join(parts)


def render_script(script: WorkloadScript, header: Optional[str] = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [render_command(command) for command in script.commands]
    return "\n".join(lines) + "\n"
