import errno

from app.services.adversary import (
    FAKE_FD_BASE,
    GHOST_NAME,
    AdversaryConfig,
    Trigger,
    adversary_wrap,
)
from app.services.backend import BackendOp, BackendRequest, MemoryBackend
from app.services.codes import ViolationKind
from app.services.pagestore import CONTENT_BYTES, PG_SIZE


def _wrap(strategies, **trigger):
    cfg = AdversaryConfig(seed=7, strategies=strategies, trigger=Trigger(**trigger))
    return adversary_wrap(MemoryBackend(), cfg)


def _page(fill: int) -> bytes:
    return bytes([fill]) * PG_SIZE


class TestTrigger:
    def test_at_fires_once_at_its_counter(self):
        adv = _wrap([ViolationKind.ERRNO_LIE], kind="at", n=2)
        results = [adv.dispatch(BackendRequest(c, BackendOp.STAT, {"path": "/"})) for c in range(4)]
        assert [r.ok for r in results] == [True, True, False, True]
        assert [e.counter for e in adv.events] == [2]

    def test_every_respects_op_filter(self):
        adv = _wrap([ViolationKind.ERRNO_LIE], kind="every", k=1, ops=[BackendOp.MKDIR])
        assert adv.dispatch(BackendRequest(0, BackendOp.STAT, {"path": "/"})).ok
        assert not adv.dispatch(BackendRequest(1, BackendOp.MKDIR, {"path": "/d", "perm": 7})).ok
        # the honest backend still executed the call
        assert adv.inner.entries["/d"] == "dir"

    def test_limit(self):
        adv = _wrap([ViolationKind.ERRNO_LIE], kind="every", k=1, limit=1)
        for c in range(3):
            adv.dispatch(BackendRequest(c, BackendOp.STAT, {"path": "/"}))
        assert len(adv.events) == 1

    def test_disarmed_adversary_is_honest(self):
        adv = _wrap([ViolationKind.ERRNO_LIE], kind="every", k=1)
        adv.armed = False
        assert adv.dispatch(BackendRequest(0, BackendOp.STAT, {"path": "/"})).ok
        assert adv.events == []

    def test_same_seed_same_tampering(self):
        def trace():
            adv = _wrap([ViolationKind.ERRNO_LIE, ViolationKind.PATH_MISMATCH], kind="random", p=0.5)
            for c in range(40):
                adv.dispatch(BackendRequest(c, BackendOp.STAT, {"path": f"/x{c % 3}"}))
            return [(e.counter, e.strategy, e.detail) for e in adv.events]

        assert trace() == trace()
        assert trace()

    def test_no_strategies_means_no_events(self):
        adv = _wrap([], kind="every", k=1)
        adv.dispatch(BackendRequest(0, BackendOp.STAT, {"path": "/"}))
        assert adv.events == []


class TestStrategies:
    def test_content_tamper_flips_one_content_byte(self):
        adv = _wrap([ViolationKind.CONTENT_TAMPER], kind="every", k=1, ops=[BackendOp.READ_PAGE])
        adv.inner.pages[0] = _page(0)
        forged = adv.dispatch(BackendRequest(0, BackendOp.READ_PAGE, {"pid": 0})).value
        diff = [i for i in range(PG_SIZE) if forged[i] != 0]
        assert len(diff) == 1 and diff[0] < CONTENT_BYTES

    def test_content_tamper_needs_a_payload(self):
        adv = _wrap([ViolationKind.CONTENT_TAMPER], kind="every", k=1)
        assert adv.dispatch(BackendRequest(0, BackendOp.READ_PAGE, {"pid": 0})).errno == errno.ENOENT
        assert adv.events == []

    def test_page_overlap_serves_another_slot(self):
        adv = _wrap([ViolationKind.PAGE_OVERLAP], kind="every", k=1, ops=[BackendOp.READ_PAGE])
        adv.inner.pages = {0: _page(1), 1: _page(2)}
        assert adv.dispatch(BackendRequest(0, BackendOp.READ_PAGE, {"pid": 0})).value == _page(2)

    def test_readdir_of_empty_dir_lists_a_ghost(self):
        adv = _wrap([ViolationKind.PATH_MISMATCH], kind="every", k=1)
        assert adv.dispatch(BackendRequest(0, BackendOp.READDIR, {"path": "/"})).value == [GHOST_NAME]

    def test_path_mismatch_claims_absent_path_opens(self):
        adv = _wrap([ViolationKind.PATH_MISMATCH], kind="every", k=1)
        result = adv.dispatch(BackendRequest(5, BackendOp.OPEN, {"path": "/missing"}))
        assert result.ok and result.value == FAKE_FD_BASE + 5

    def test_fd_mismatch_reuses_a_live_fd(self):
        adv = _wrap([ViolationKind.FD_MISMATCH], kind="every", k=1)
        adv.inner.entries.update({"/a": "file", "/b": "file"})
        first = adv.dispatch(BackendRequest(0, BackendOp.OPEN, {"path": "/a"})).value
        second = adv.dispatch(BackendRequest(1, BackendOp.OPEN, {"path": "/b"})).value
        assert second == first

    def test_errno_lie_uses_configured_errno(self):
        cfg = AdversaryConfig(strategies=[ViolationKind.ERRNO_LIE], errno=errno.ENOENT,
                              trigger=Trigger(kind="every", k=1))
        adv = adversary_wrap(MemoryBackend(), cfg)
        assert adv.dispatch(BackendRequest(0, BackendOp.MKDIR, {"path": "/d", "perm": 7})).errno == errno.ENOENT

    def test_errno_lie_turns_failure_into_success(self):
        adv = _wrap([ViolationKind.ERRNO_LIE], kind="every", k=1)
        assert adv.dispatch(BackendRequest(0, BackendOp.RMDIR, {"path": "/missing"})).ok

    def test_non_zero_mmap_plants_at_offset(self):
        cfg = AdversaryConfig(strategies=[ViolationKind.NON_ZERO_MMAP], mmap_offset=3,
                              trigger=Trigger(kind="every", k=1))
        adv = adversary_wrap(MemoryBackend(), cfg)
        _, buf = adv.dispatch(BackendRequest(0, BackendOp.MMAP, {"length": 16})).value
        assert buf[3] != 0 and buf.count(0) == 15

    def test_rollback_serves_an_older_image(self):
        adv = _wrap([ViolationKind.ROLLBACK], kind="every", k=1, ops=[BackendOp.LOAD_IMAGE])
        adv.dispatch(BackendRequest(0, BackendOp.STORE_IMAGE, {"data": b"one"}))
        adv.dispatch(BackendRequest(1, BackendOp.STORE_IMAGE, {"data": b"two"}))
        assert adv.dispatch(BackendRequest(2, BackendOp.LOAD_IMAGE, {})).value == b"one"

    def test_rollback_without_history_is_inapplicable(self):
        adv = _wrap([ViolationKind.ROLLBACK], kind="every", k=1, ops=[BackendOp.LOAD_IMAGE])
        adv.dispatch(BackendRequest(0, BackendOp.STORE_IMAGE, {"data": b"one"}))
        assert adv.dispatch(BackendRequest(1, BackendOp.LOAD_IMAGE, {})).value == b"one"
        assert adv.events == []
