import struct

import pytest

from app.services.pagestore import (
    CONTENT_BYTES,
    NONCE_OFFSET,
    OWNER_OFFSET,
    PAGE_DOMAIN,
    PAGE_ID_OFFSET,
    PG_SIZE,
    RESERVED_OFFSET,
    TAG_OFFSET,
    VERSION_OFFSET,
    IntegrityFailure,
    IntegrityField,
    PageMeta,
    SealingKey,
    open_unverified,
    page_nonce,
    read_header,
    seal_page,
    unseal_page,
    verify_zeroed,
)


CONTENT = bytes(i % 251 for i in range(CONTENT_BYTES))


# =============================================================================
# Layout
# =============================================================================
class TestLayout:
    def test_field_offsets(self):
        assert (NONCE_OFFSET, TAG_OFFSET, OWNER_OFFSET) == (4000, 4012, 4028)
        assert (PAGE_ID_OFFSET, VERSION_OFFSET, RESERVED_OFFSET) == (4036, 4044, 4052)
        assert PG_SIZE == 4096

    def test_sealed_page_is_one_full_page(self, key):
        page, _ = seal_page(CONTENT, owner=5, page_id=9, version=2, key=key)
        assert len(page) == PG_SIZE

    def test_header_is_plaintext_big_endian(self, key):
        page, _ = seal_page(CONTENT, owner=5, page_id=9, version=2, key=key)
        assert page[OWNER_OFFSET:PAGE_ID_OFFSET] == struct.pack(">Q", 5)
        assert read_header(page) == (5, 9, 2)
        assert page[NONCE_OFFSET:TAG_OFFSET] == page_nonce(9, 2)
        assert verify_zeroed(page[RESERVED_OFFSET:])

    def test_content_is_encrypted(self, key):
        page, _ = seal_page(CONTENT, owner=0, page_id=0, version=1, key=key)
        assert page[:CONTENT_BYTES] != CONTENT

    def test_wrong_content_length(self, key):
        with pytest.raises(ValueError):
            seal_page(b"short", owner=0, page_id=0, version=1, key=key)


class TestNonce:
    def test_domain_prefix(self):
        assert page_nonce(1, 1).startswith(PAGE_DOMAIN)
        assert len(page_nonce(1, 1)) == 12

    def test_distinct_slots_and_versions(self):
        nonces = {page_nonce(p, v) for p in range(8) for v in range(1, 8)}
        assert len(nonces) == 8 * 7

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            page_nonce(1 << 32, 1)


class TestSealingKey:
    def test_repr_hides_key(self, key):
        assert "00010203" not in repr(key)

    def test_length_checked(self):
        with pytest.raises(ValueError):
            SealingKey(b"\x00" * 16)

    def test_from_hex(self):
        assert SealingKey.from_hex("ab" * 32) is not None


# =============================================================================
# Verification
# =============================================================================
class TestUnseal:
    def test_round_trip(self, key):
        page, meta = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        assert unseal_page(page, meta, key) == CONTENT

    def test_every_single_byte_corruption_is_caught(self, key):
        page, meta = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        # one position per region is enough to cover every field check
        for offset in range(0, PG_SIZE, 37):
            bad = bytearray(page)
            bad[offset] ^= 0x01
            with pytest.raises(IntegrityFailure):
                unseal_page(bytes(bad), meta, key)

    def test_wrong_key(self, key, other_key):
        page, meta = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        with pytest.raises(IntegrityFailure) as err:
            unseal_page(page, meta, other_key)
        assert err.value.field is IntegrityField.TAG

    def test_other_files_page_fails_on_owner(self, key):
        page, _ = seal_page(CONTENT, owner=7, page_id=4, version=1, key=key)
        _, expected = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        with pytest.raises(IntegrityFailure) as err:
            unseal_page(page, expected, key)
        assert err.value.field is IntegrityField.OWNER

    def test_substituted_slot_fails_on_page_id(self, key):
        page, _ = seal_page(CONTENT, owner=3, page_id=5, version=1, key=key)
        _, expected = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        with pytest.raises(IntegrityFailure) as err:
            unseal_page(page, expected, key)
        assert err.value.field is IntegrityField.PAGE_ID

    def test_replayed_old_version_fails_on_version(self, key):
        old, _ = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        _, current = seal_page(bytes(CONTENT_BYTES), owner=3, page_id=4, version=2, key=key)
        with pytest.raises(IntegrityFailure) as err:
            unseal_page(old, current, key)
        assert err.value.field is IntegrityField.VERSION

    def test_freed_slot_has_no_owner(self, key):
        page, meta = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        freed = PageMeta(page_id=4, version=1, free=True)
        with pytest.raises(IntegrityFailure) as err:
            unseal_page(page, freed, key)
        assert err.value.field is IntegrityField.OWNER

    def test_short_page(self, key):
        page, meta = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        with pytest.raises(IntegrityFailure):
            unseal_page(page[:100], meta, key)


class TestUnverified:
    def test_matches_verified_decrypt_on_honest_page(self, key):
        page, _ = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        assert open_unverified(page, key) == CONTENT

    def test_accepts_tampered_page(self, key):
        page, _ = seal_page(CONTENT, owner=3, page_id=4, version=1, key=key)
        bad = bytearray(page)
        bad[0] ^= 0xFF
        out = open_unverified(bytes(bad), key)
        assert out[0] == CONTENT[0] ^ 0xFF
        assert out[1:] == CONTENT[1:]


def test_verify_zeroed():
    assert verify_zeroed(b"")
    assert verify_zeroed(bytes(64))
    assert not verify_zeroed(b"\x00\x01")
