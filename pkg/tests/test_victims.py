"""
End-to-end attack scenarios, each run three ways: benign, monitored over the
adversary, and unprotected over the same adversary.
"""

import pytest

from app.services.adversary import AdversaryConfig, Trigger
from app.services.backend import BackendOp
from app.services.codes import ViolationKind
from app.services.harness import EXIT_CLEAN, EXIT_VIOLATION, RunMode, execute
from app.services.script import parse_script


def _three_ways(text, adversary):
    script = parse_script(text)
    return {mode: execute(script, mode=mode, adversary=adversary, seed=1) for mode in RunMode}


# =============================================================================
# Vote log: an errno lie makes the client recreate (and truncate) its log
# =============================================================================
VOTE_LOG = """\
vote_log /votes "alice\\n"
vote_log /votes "bob\\n"
arm
vote_log /votes "carol\\n"
cat /votes
"""

VOTE_ADVERSARY = AdversaryConfig(
    seed=1,
    strategies=[ViolationKind.ERRNO_LIE],
    errno=2,
    trigger=Trigger(kind="every", k=1, ops=[BackendOp.OPEN], limit=1),
)


class TestVoteLog:
    @pytest.fixture(scope="class")
    def runs(self):
        return _three_ways(VOTE_LOG, VOTE_ADVERSARY)

    def test_benign_log_keeps_every_vote(self, runs):
        outcome = runs[RunMode.BENIGN]
        assert outcome.observations[-1] == ("eSucc", b"alice\nbob\ncarol\n")
        assert outcome.report.summary.exit_code == EXIT_CLEAN

    def test_unprotected_client_loses_earlier_votes(self, runs):
        outcome = runs[RunMode.UNPROTECTED]
        assert outcome.observations[-1] == ("eSucc", b"carol\n")
        assert outcome.report.summary.violations == 0
        assert outcome.report.summary.tamper_events == 1

    def test_monitor_flags_the_lie_at_the_vote(self, runs):
        summary = runs[RunMode.ADVERSARIAL].report.summary
        assert summary.exit_code == EXIT_VIOLATION
        assert summary.first_violation_index == 3
        assert summary.first_violation_kind == ViolationKind.ERRNO_LIE.value


# =============================================================================
# Allocator chunk: a planted prev_size word redirects the unmap
# =============================================================================
GLIBC = """\
glibc_chunk 4096
"""

GLIBC_ADVERSARY = AdversaryConfig(
    seed=1,
    strategies=[ViolationKind.NON_ZERO_MMAP],
    mmap_offset=0,
    trigger=Trigger(kind="every", k=1, ops=[BackendOp.MMAP]),
)


class TestGlibcChunk:
    @pytest.fixture(scope="class")
    def runs(self):
        return _three_ways(GLIBC, GLIBC_ADVERSARY)

    def test_benign_chunk_has_no_prev_size(self, runs):
        assert runs[RunMode.BENIGN].observations == [("eSucc", 0)]

    def test_unprotected_free_misses_the_region(self, runs):
        assert runs[RunMode.UNPROTECTED].observations == [("eInval", None)]

    def test_monitor_refuses_the_dirty_mapping(self, runs):
        outcome = runs[RunMode.ADVERSARIAL]
        assert outcome.observations == [("eViolation", ViolationKind.NON_ZERO_MMAP)]


# =============================================================================
# Chunk header: a planted size word shows up in the client's view of the mapping
# =============================================================================
CHUNK_HEADER = """\
a = mmap 4096
mem_read $a 0 16
"""

SIZE_WORD_ADVERSARY = AdversaryConfig(
    seed=1,
    strategies=[ViolationKind.NON_ZERO_MMAP],
    mmap_offset=8,
    trigger=Trigger(kind="every", k=1, ops=[BackendOp.MMAP]),
)


class TestChunkSizeWord:
    @pytest.fixture(scope="class")
    def runs(self):
        return _three_ways(CHUNK_HEADER, SIZE_WORD_ADVERSARY)

    def test_benign_header_is_zero(self, runs):
        assert runs[RunMode.BENIGN].observations[1] == ("eSucc", bytes(16))

    def test_unprotected_client_reads_the_planted_byte(self, runs):
        header = runs[RunMode.UNPROTECTED].observations[1][1]
        assert header[8] != 0
        assert header[:8] + header[9:] == bytes(15)
        assert runs[RunMode.UNPROTECTED].report.summary.violations == 0

    def test_monitor_refuses_the_mapping(self, runs):
        assert runs[RunMode.ADVERSARIAL].observations[0] == ("eViolation", ViolationKind.NON_ZERO_MMAP)


# =============================================================================
# Forged open: a missing file is reported as present
# =============================================================================
FORGED_FOPEN = """\
s = fopen /missing r
"""

FORGED_OPEN_ADVERSARY = AdversaryConfig(
    seed=1,
    strategies=[ViolationKind.PATH_MISMATCH],
    trigger=Trigger(kind="every", k=1, ops=[BackendOp.OPEN]),
)


class TestForgedFopen:
    @pytest.fixture(scope="class")
    def runs(self):
        return _three_ways(FORGED_FOPEN, FORGED_OPEN_ADVERSARY)

    def test_benign_open_fails(self, runs):
        assert runs[RunMode.BENIGN].observations == [("eNoEnt", None)]

    def test_unprotected_client_does_not_see_enoent(self, runs):
        outcome = runs[RunMode.UNPROTECTED]
        assert outcome.observations != [("eNoEnt", None)]
        assert outcome.report.summary.violations == 0
        assert outcome.report.summary.tamper_events == 1

    def test_monitor_flags_the_phantom_file(self, runs):
        assert runs[RunMode.ADVERSARIAL].observations == [("eViolation", ViolationKind.PATH_MISMATCH)]


# =============================================================================
# Stale state image: a replayed older image resets a retry counter
# =============================================================================
PIN = """\
create /pin rw-
h = open /pin
write $h 0 "tries=0"
close $h
remount
g = open /pin
write $g 0 "tries=3"
close $g
arm
remount
cat /pin
"""

PIN_ADVERSARY = AdversaryConfig(
    seed=1,
    strategies=[ViolationKind.ROLLBACK],
    trigger=Trigger(kind="every", k=1, ops=[BackendOp.LOAD_IMAGE], limit=1),
)


class TestStaleImage:
    @pytest.fixture(scope="class")
    def runs(self):
        return _three_ways(PIN, PIN_ADVERSARY)

    def test_benign_sees_the_latest_counter(self, runs):
        assert runs[RunMode.BENIGN].observations[-1] == ("eSucc", b"tries=3")

    def test_unprotected_client_is_rolled_back(self, runs):
        outcome = runs[RunMode.UNPROTECTED]
        assert outcome.report.summary.tamper_events == 1
        assert outcome.observations[-1] != ("eSucc", b"tries=3")

    def test_monitor_detects_the_rollback_at_mount(self, runs):
        summary = runs[RunMode.ADVERSARIAL].report.summary
        assert summary.first_violation_index == 9
        assert summary.first_violation_kind == ViolationKind.ROLLBACK.value
        assert runs[RunMode.ADVERSARIAL].observations[-1] == ("eViolation", ViolationKind.ROLLBACK)
