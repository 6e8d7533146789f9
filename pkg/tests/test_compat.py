import errno

import pytest

from app.services.adversary import AdversaryConfig, Trigger, adversary_wrap
from app.services.backend import BackendOp, MemoryBackend, PosixBackend
from app.services.codes import ErrorCode, ViolationKind
from app.services.compat import MODES, SEEK_CUR, SEEK_END, OpenMode, PosixCompat
from app.services.monitor import Monitor
from app.services.statefile import FileEpochStore

from conftest import P, RO


@pytest.fixture
def libc(monitor):
    return PosixCompat(monitor)


def _write_file(libc, path, data):
    stream = libc.c_fopen(path, "w").value
    assert libc.c_fwrite(stream, data).value == len(data)
    assert libc.c_fclose(stream).ok


class TestModes:
    @pytest.mark.parametrize("text", ["r", "w", "a", "r+", "w+", "a+", "rb", "r+b", "wb", "a+b"])
    def test_known_modes(self, text):
        assert OpenMode.parse(text) is MODES[text]

    def test_binary_flag_is_an_alias(self):
        assert MODES["rb"] == MODES["r"]

    def test_unknown_mode(self, libc):
        assert libc.c_fopen("/f", "x").code is ErrorCode.INVAL


class TestFopen:
    def test_read_missing(self, libc):
        assert libc.c_fopen("/f", "r").code is ErrorCode.NOENT

    def test_write_creates(self, libc, monitor):
        assert libc.c_fopen("/f", "w").ok
        assert monitor.fs_readdir(P("/")).value == ["f"]

    def test_create_needs_a_parent(self, libc):
        assert libc.c_fopen("/d/f", "w").code is ErrorCode.NOENT

    def test_write_truncates(self, libc):
        _write_file(libc, "/f", b"hello")
        stream = libc.c_fopen("/f", "w").value
        assert libc.c_ftell(stream).value == 0
        libc.c_fclose(stream)
        stream = libc.c_fopen("/f", "r").value
        assert libc.c_fread(stream, 1, 10).value == b""

    def test_append_positions_at_end(self, libc):
        _write_file(libc, "/f", b"abc")
        stream = libc.c_fopen("/f", "a").value
        assert libc.c_ftell(stream).value == 3
        libc.c_fwrite(stream, b"def")
        libc.c_fclose(stream)
        stream = libc.c_fopen("/f", "r").value
        assert libc.c_fread(stream, 1, 6).value == b"abcdef"

    def test_permission_checked_against_mode(self, libc, monitor):
        _write_file(libc, "/f", b"abc")
        monitor.fs_chmod(P("/f"), RO)
        assert libc.c_fopen("/f", "r+").code is ErrorCode.ACCES
        # the handle is released on refusal
        assert monitor.state.handles == []
        assert libc.c_fopen("/f", "r").ok

    def test_bad_path(self, libc):
        assert libc.c_fopen("relative", "r").code is ErrorCode.INVAL


class TestStreams:
    def test_fread_short_sets_eof(self, libc):
        _write_file(libc, "/f", b"abcde")
        stream = libc.c_fopen("/f", "r").value
        assert libc.c_fread(stream, 2, 2).value == b"abcd"
        assert not stream.eof
        assert libc.c_fread(stream, 2, 2).value == b""
        assert stream.eof

    def test_fread_on_write_only(self, libc):
        stream = libc.c_fopen("/f", "w").value
        assert libc.c_fread(stream, 1, 1).code is ErrorCode.ACCES
        assert stream.err

    def test_fwrite_on_read_only(self, libc):
        _write_file(libc, "/f", b"x")
        stream = libc.c_fopen("/f", "r").value
        assert libc.c_fwrite(stream, b"y").code is ErrorCode.ACCES

    def test_fgets(self, libc):
        _write_file(libc, "/f", b"one\ntwo\nthree")
        stream = libc.c_fopen("/f", "r").value
        assert libc.c_fgets(stream, 100).value == b"one\n"
        assert libc.c_fgets(stream, 3).value == b"tw"
        assert libc.c_fgets(stream, 100).value == b"o\n"
        assert libc.c_fgets(stream, 100).value == b"three"
        assert stream.eof
        assert libc.c_fgets(stream, 0).code is ErrorCode.INVAL

    def test_fgetc(self, libc):
        _write_file(libc, "/f", b"A")
        stream = libc.c_fopen("/f", "r").value
        assert libc.c_fgetc(stream).value == ord("A")
        assert libc.c_fgetc(stream).value == -1

    def test_fseek_whence(self, libc):
        _write_file(libc, "/f", b"0123456789")
        stream = libc.c_fopen("/f", "r").value
        assert libc.c_fseek(stream, -3, SEEK_END).ok
        assert libc.c_fread(stream, 1, 1).value == b"7"
        assert libc.c_fseek(stream, -2, SEEK_CUR).ok
        assert libc.c_fread(stream, 1, 1).value == b"6"
        assert libc.c_fseek(stream, 11).code is ErrorCode.INVAL
        assert libc.c_fseek(stream, 0, 9).code is ErrorCode.INVAL
        libc.c_rewind(stream)
        assert libc.c_ftell(stream).value == 0

    def test_ftruncate(self, libc, monitor):
        stream = libc.c_fopen("/f", "w+").value
        libc.c_fwrite(stream, b"abcdef")
        assert libc.c_ftruncate(stream, 2).ok
        assert libc.c_ftell(stream).value == 2
        assert monitor.fs_stat(stream.core_handle).value.size == 2


class TestPathCalls:
    def test_creat_new_and_existing(self, libc):
        first = libc.c_creat("/f")
        assert first.ok and first.value.mode.writable
        libc.c_fwrite(first.value, b"data")
        libc.c_fclose(first.value)
        again = libc.c_creat("/f")
        assert again.ok
        assert libc.c_ftell(again.value).value == 0

    def test_unlink(self, libc, monitor):
        _write_file(libc, "/f", b"x")
        assert libc.c_unlink("/f").ok
        assert libc.c_unlink("/f").code is ErrorCode.NOENT

    def test_mkdir_readdir_rmdir(self, libc):
        assert libc.c_mkdir("/d").ok
        _write_file(libc, "/d/f", b"x")
        assert libc.c_readdir("/d").value == ["f"]
        assert libc.c_rmdir("/d").code is ErrorCode.NOTEMPTY

    def test_rename_and_fsync_are_unsupported(self, libc):
        _write_file(libc, "/f", b"x")
        assert libc.c_rename("/f", "/g").code is ErrorCode.UNSUPPORTED
        stream = libc.c_fopen("/f", "r").value
        assert libc.c_fsync(stream).code is ErrorCode.UNSUPPORTED


class TestSyscalls:
    def test_read_write_lseek(self, libc):
        libc.c_creat("/f")
        libc.c_fclose(libc.streams[0])
        fd = libc.sys_open("/f").value
        assert libc.sys_write(fd, b"hello").ok
        assert libc.sys_lseek(fd, 1).value == 1
        assert libc.sys_read(fd, 3).value == b"ell"
        assert libc.sys_lseek(fd, -1, SEEK_END).value == 4
        assert libc.sys_lseek(fd, 0, SEEK_CUR).value == 4
        assert libc.sys_close(fd).ok
        assert libc.sys_close(fd).code is ErrorCode.BADF

    def test_lseek_cur_on_bad_fd(self, libc):
        assert libc.sys_lseek(9, 0, SEEK_CUR).code is ErrorCode.BADF


def test_passthrough_contents_match_direct_os_files(tmp_path, key):
    """the same stdio workload through the monitor and straight on the os"""
    store = tmp_path / "store"
    libc = PosixCompat(Monitor(PosixBackend(str(store)), key, epoch_store=FileEpochStore(str(store))))
    assert libc.core.format().ok
    direct = tmp_path / "direct"
    (direct / "d").mkdir(parents=True)

    big = bytes(i % 251 for i in range(9000))
    assert libc.c_mkdir("/d").ok

    s = libc.c_fopen("/d/a", "w").value
    libc.c_fwrite(s, big)
    libc.c_fseek(s, 100)
    libc.c_fwrite(s, b"patch")
    libc.c_fclose(s)
    with open(direct / "d" / "a", "wb") as f:
        f.write(big)
        f.seek(100)
        f.write(b"patch")

    s = libc.c_fopen("/d/a", "a").value
    libc.c_fwrite(s, b"tail")
    libc.c_fclose(s)
    with open(direct / "d" / "a", "ab") as f:
        f.write(b"tail")

    s = libc.c_fopen("/d/b", "w+").value
    libc.c_fwrite(s, b"xyz" * 2000)
    libc.c_ftruncate(s, 4001)
    libc.c_fclose(s)
    with open(direct / "d" / "b", "w+b") as f:
        f.write(b"xyz" * 2000)
        f.truncate(4001)

    s = libc.c_fopen("/d/b", "r+").value
    libc.c_fseek(s, -2, SEEK_END)
    libc.c_fwrite(s, b"QQ")
    libc.c_fclose(s)
    with open(direct / "d" / "b", "r+b") as f:
        f.seek(-2, 2)
        f.write(b"QQ")

    for name in ("a", "b"):
        s = libc.c_fopen(f"/d/{name}", "r").value
        assert libc.c_fread(s, 1, 20000).value == (direct / "d" / name).read_bytes(), name
        libc.c_fclose(s)
    assert sorted(libc.c_readdir("/d").value) == sorted(p.name for p in (direct / "d").iterdir())


def test_fopen_closes_the_handle_when_truncate_fails(key):
    adv = adversary_wrap(MemoryBackend(), AdversaryConfig(
        seed=1,
        strategies=[ViolationKind.ERRNO_LIE],
        errno=errno.EINTR,
        trigger=Trigger(kind="every", k=1, ops=[BackendOp.TRUNCATE]),
    ))
    adv.armed = False
    core = Monitor(adv, key, checked=False)
    assert core.format().ok
    libc = PosixCompat(core)
    _write_file(libc, "/f", b"hello")

    adv.armed = True
    assert libc.c_fopen("/f", "w").code is ErrorCode.INTR
    assert core.state.handles == []
    assert libc.c_fopen("/f", "r").ok
