import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import structlog
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM


logger = structlog.get_logger()

# page layout
PG_SIZE = 4096
CONTENT_BYTES = 4000
META_BYTES = PG_SIZE - CONTENT_BYTES

NONCE_OFFSET = 4000
TAG_OFFSET = 4012
OWNER_OFFSET = 4028
PAGE_ID_OFFSET = 4036
VERSION_OFFSET = 4044
RESERVED_OFFSET = 4052

NONCE_BYTES = 12
TAG_BYTES = 16
RESERVED_BYTES = PG_SIZE - RESERVED_OFFSET

PAGE_DOMAIN = b"BSPG"
KEY_BYTES = 32

_U32_LIMIT = 1 << 32


class IntegrityField(str, Enum):
    """the field that failed verification when a page is unsealed"""
    TAG = "Tag"
    OWNER = "Owner"
    PAGE_ID = "PageId"
    VERSION = "Version"


class IntegrityFailure(Exception):
    """raised when a page returned by the backend does not verify"""

    def __init__(self, field: IntegrityField, detail: str = ""):
        self.field = field
        self.detail = detail
        super().__init__(f"page integrity failure [{field.value}] {detail}".strip())


@dataclass(frozen=True)
class PageMeta:
    """trusted pagemap entry for one page slot"""
    page_id: int
    version: int
    owner: Optional[int] = None
    tag: bytes = b""
    free: bool = False


class SealingKey:
    """
    32-byte AES-256-GCM key
    the raw bytes are never rendered by repr/str
    """

    def __init__(self, raw: bytes):
        if len(raw) != KEY_BYTES:
            raise ValueError(f"sealing key must be {KEY_BYTES} bytes, got {len(raw)}")
        self._raw = bytes(raw)
        self._aead = AESGCM(self._raw)

    @classmethod
    def from_hex(cls, text: str) -> "SealingKey":
        return cls(bytes.fromhex(text.strip()))

    @property
    def aead(self) -> AESGCM:
        return self._aead

    def keystream_decrypt(self, nonce: bytes, ciphertext: bytes) -> bytes:
        """
        decrypt gcm ciphertext without checking the tag
        gcm encrypts with ctr mode starting at counter block nonce || 2
        """
        counter_block = nonce + b"\x00\x00\x00\x02"
        decryptor = Cipher(algorithms.AES(self._raw), modes.CTR(counter_block)).decryptor()
        return decryptor.update(ciphertext) + decryptor.finalize()

    def __repr__(self) -> str:
        return "SealingKey(<redacted>)"


def page_nonce(page_id: int, version: int) -> bytes:
    """domain tag || be32(page id) || be32(version), injective below 2^32"""
    if not (0 <= page_id < _U32_LIMIT and 0 <= version < _U32_LIMIT):
        raise ValueError("page id and version must fit in 32 bits")
    return PAGE_DOMAIN + struct.pack(">II", page_id, version)


def _associated_data(nonce: bytes, owner: int, page_id: int, version: int, reserved: bytes) -> bytes:
    return nonce + struct.pack(">QQQ", owner, page_id, version) + reserved


def seal_page(content: bytes, owner: int, page_id: int, version: int, key: SealingKey) -> tuple[bytes, PageMeta]:
    """
    encrypt and authenticate one page of content

    returns the 4096-byte sealed page and the pagemap entry the caller
    must record to verify the page later
    """
    if len(content) != CONTENT_BYTES:
        raise ValueError(f"page content must be exactly {CONTENT_BYTES} bytes")

    nonce = page_nonce(page_id, version)
    reserved = bytes(RESERVED_BYTES)
    ad = _associated_data(nonce, owner, page_id, version, reserved)
    sealed = key.aead.encrypt(nonce, bytes(content), ad)
    ciphertext, tag = sealed[:CONTENT_BYTES], sealed[CONTENT_BYTES:]

    page = b"".join([
        ciphertext,
        nonce,
        tag,
        struct.pack(">QQQ", owner, page_id, version),
        reserved,
    ])
    return page, PageMeta(page_id=page_id, version=version, owner=owner, tag=tag)


def read_header(page: bytes) -> tuple[int, int, int]:
    """plaintext (owner, page id, version) fields of a sealed page"""
    return struct.unpack(">QQQ", page[OWNER_OFFSET:RESERVED_OFFSET])


def unseal_page(page: bytes, expected: PageMeta, key: SealingKey) -> bytes:
    """
    verify a sealed page against its trusted pagemap entry and decrypt it

    raises:
        IntegrityFailure: with the first failing field (owner, page id,
        version, then the aead tag)
    """
    if len(page) != PG_SIZE:
        raise IntegrityFailure(IntegrityField.TAG, f"page is {len(page)} bytes")

    owner, page_id, version = read_header(page)
    if expected.owner is None or owner != expected.owner:
        raise IntegrityFailure(IntegrityField.OWNER, f"owner {owner} != {expected.owner}")
    if page_id != expected.page_id:
        raise IntegrityFailure(IntegrityField.PAGE_ID, f"page {page_id} != {expected.page_id}")
    if version != expected.version:
        raise IntegrityFailure(IntegrityField.VERSION, f"version {version} != {expected.version}")

    nonce = page[NONCE_OFFSET:TAG_OFFSET]
    tag = page[TAG_OFFSET:OWNER_OFFSET]
    if nonce != page_nonce(page_id, version) or tag != expected.tag:
        raise IntegrityFailure(IntegrityField.TAG, "nonce or tag differs from pagemap")

    ad = _associated_data(nonce, owner, page_id, version, page[RESERVED_OFFSET:])
    try:
        return key.aead.decrypt(nonce, page[:CONTENT_BYTES] + tag, ad)
    except InvalidTag:
        raise IntegrityFailure(IntegrityField.TAG, "aead tag mismatch") from None


def open_unverified(page: bytes, key: SealingKey) -> bytes:
    """
    decrypt whatever the backend handed over, trusting its header
    used only by the unprotected client
    """
    page = page[:PG_SIZE].ljust(PG_SIZE, b"\x00")
    nonce = page[NONCE_OFFSET:TAG_OFFSET]
    return key.keystream_decrypt(nonce, page[:CONTENT_BYTES])


def verify_zeroed(buf: bytes) -> bool:
    """true iff every byte is zero (vacuously true for an empty buffer)"""
    return bytes(buf).count(0) == len(buf)
