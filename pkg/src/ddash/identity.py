"""Signing identities, encryption keys, fingerprints and the multi-recipient envelope.

Accounts are Ed25519 signing keys; "keys" are X25519 encryption keys.  Both
are identified by the SHA-256 fingerprint of their 32-byte public half.
"""

from __future__ import annotations

import hashlib
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from nacl import bindings as sodium
from nacl.exceptions import CryptoError

from .errors import NotARecipientError, NotFoundError, PersistenceError, TamperError, ValidationError

KEY_LEN = 32
SIGNATURE_LEN = 64

MAGIC = b"DDE1"
NONCE_LEN = 24
TAG_LEN = 16
WRAPPED_LEN = KEY_LEN + TAG_LEN
SLOT_LEN = 32 + 32 + WRAPPED_LEN
WRAP_INFO = b"ddash/key-wrap/v1"
_WRAP_NONCE = bytes(12)  # every wrap key is single-use (fresh ephemeral agreement)

_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)
_RAW_PRIV = dict(
    encoding=serialization.Encoding.Raw,
    format=serialization.PrivateFormat.Raw,
    encryption_algorithm=serialization.NoEncryption(),
)


@dataclass(frozen=True, order=True)
class Fingerprint:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValidationError("fingerprint digest must be 32 bytes")

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @property
    def short_id(self) -> str:
        return self.hex[-16:]

    @classmethod
    def from_hex(cls, text: str) -> Fingerprint:
        try:
            raw = bytes.fromhex(text)
        except ValueError:
            raise ValidationError(f"fingerprint {text!r} is not hex") from None
        return cls(raw)

    def __str__(self) -> str:
        return self.hex


def fingerprint(pubkey: bytes) -> Fingerprint:
    if len(pubkey) != KEY_LEN:
        raise ValidationError(f"public key must be {KEY_LEN} bytes, got {len(pubkey)}")
    return Fingerprint(hashlib.sha256(pubkey).digest())


@dataclass(frozen=True)
class Identity:
    """An Ed25519 signing identity (an "account")."""

    signing_private: Ed25519PrivateKey = field(repr=False)
    signing_public: bytes
    fingerprint: Fingerprint

    @classmethod
    def from_seed(cls, seed: bytes) -> Identity:
        priv = Ed25519PrivateKey.from_private_bytes(seed)
        pub = priv.public_key().public_bytes(**_RAW)
        return cls(priv, pub, fingerprint(pub))

    def seed(self) -> bytes:
        return self.signing_private.private_bytes(**_RAW_PRIV)


@dataclass(frozen=True)
class EncryptionKey:
    """An X25519 keypair.  ``dh_private`` is None for a public-only contact key."""

    dh_private: X25519PrivateKey | None = field(repr=False)
    dh_public: bytes
    fingerprint: Fingerprint

    @classmethod
    def from_private_bytes(cls, raw: bytes) -> EncryptionKey:
        priv = X25519PrivateKey.from_private_bytes(raw)
        pub = priv.public_key().public_bytes(**_RAW)
        return cls(priv, pub, fingerprint(pub))

    @classmethod
    def from_public_bytes(cls, pub: bytes) -> EncryptionKey:
        return cls(None, bytes(pub), fingerprint(pub))

    def public(self) -> EncryptionKey:
        return EncryptionKey(None, self.dh_public, self.fingerprint)

    def private_bytes(self) -> bytes:
        if self.dh_private is None:
            raise ValidationError("public-only key has no private half")
        return self.dh_private.private_bytes(**_RAW_PRIV)


def generate_identity() -> Identity:
    return Identity.from_seed(os.urandom(32))


def generate_encryption_key() -> EncryptionKey:
    return EncryptionKey.from_private_bytes(os.urandom(32))


def sign(message: bytes, identity: Identity) -> bytes:
    return identity.signing_private.sign(message)


def verify_sig(message: bytes, signature: bytes, pubkey: bytes) -> bool:
    if len(signature) != SIGNATURE_LEN:
        raise ValidationError(f"signature must be {SIGNATURE_LEN} bytes")
    if len(pubkey) != KEY_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(pubkey).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# -- envelope -----------------------------------------------------------------


@dataclass(frozen=True)
class RecipientSlot:
    recipient: bytes  # fingerprint digest
    ephemeral_public: bytes
    wrapped_key: bytes  # 32-byte file key + 16-byte tag


@dataclass(frozen=True)
class EncryptedContainer:
    slots: tuple[RecipientSlot, ...]
    nonce: bytes
    ciphertext: bytes

    def header_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack(">H", len(self.slots))]
        for s in self.slots:
            parts += [s.recipient, s.ephemeral_public, s.wrapped_key]
        return b"".join(parts)

    def serialize(self) -> bytes:
        return b"".join(
            [self.header_bytes(), self.nonce, struct.pack(">Q", len(self.ciphertext)), self.ciphertext]
        )

    @classmethod
    def parse(cls, data: bytes) -> EncryptedContainer:
        """Decode container bytes.  Structural problems raise TamperError."""
        data = bytes(data)
        if data[:4] != MAGIC:
            raise TamperError("not an encrypted container (bad magic)")
        if len(data) < 6:
            raise TamperError("truncated container")
        (count,) = struct.unpack_from(">H", data, 4)
        if count == 0:
            raise TamperError("container has no recipient slots")
        offset = 6
        end_slots = offset + count * SLOT_LEN
        if len(data) < end_slots + NONCE_LEN + 8:
            raise TamperError("truncated container")
        slots = []
        for _ in range(count):
            slots.append(
                RecipientSlot(
                    data[offset : offset + 32],
                    data[offset + 32 : offset + 64],
                    data[offset + 64 : offset + SLOT_LEN],
                )
            )
            offset += SLOT_LEN
        nonce = data[offset : offset + NONCE_LEN]
        offset += NONCE_LEN
        (ct_len,) = struct.unpack_from(">Q", data, offset)
        offset += 8
        if len(data) - offset != ct_len or ct_len < TAG_LEN:
            raise TamperError("ciphertext length field does not match container size")
        return cls(tuple(slots), nonce, data[offset:])

    def recipients(self) -> list[Fingerprint]:
        return [Fingerprint(s.recipient) for s in self.slots]


def _wrap_key(shared: bytes, ephemeral_public: bytes, recipient_public: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=ephemeral_public + recipient_public,
        info=WRAP_INFO,
    ).derive(shared)


def _dedupe(recipients: Iterable[EncryptionKey]) -> list[EncryptionKey]:
    seen = {}
    for r in recipients:
        seen.setdefault(r.fingerprint, r)
    return list(seen.values())


def encrypt_for(
    plaintext: bytes,
    recipients: Sequence[EncryptionKey],
    *,
    randbytes: Callable[[int], bytes] = os.urandom,
) -> EncryptedContainer:
    """Encrypt ``plaintext`` so that every key in ``recipients`` (and no other) can open it.

    ``randbytes`` is injectable so golden vectors can be reproduced.
    """
    recipients = _dedupe(recipients)
    if not recipients:
        raise ValidationError("at least one recipient is required")
    file_key = randbytes(KEY_LEN)
    slots = []
    for r in recipients:
        eph = X25519PrivateKey.from_private_bytes(randbytes(KEY_LEN))
        eph_pub = eph.public_key().public_bytes(**_RAW)
        shared = eph.exchange(X25519PublicKey.from_public_bytes(r.dh_public))
        wrap = ChaCha20Poly1305(_wrap_key(shared, eph_pub, r.dh_public))
        wrapped = wrap.encrypt(_WRAP_NONCE, file_key, r.fingerprint.digest)
        slots.append(RecipientSlot(r.fingerprint.digest, eph_pub, wrapped))
    nonce = randbytes(NONCE_LEN)
    shell = EncryptedContainer(tuple(slots), nonce, b"")
    ciphertext = sodium.crypto_aead_xchacha20poly1305_ietf_encrypt(
        bytes(plaintext), shell.header_bytes(), nonce, file_key
    )
    return EncryptedContainer(tuple(slots), nonce, ciphertext)


def decrypt(container: EncryptedContainer | bytes, key: EncryptionKey) -> bytes:
    if not isinstance(container, EncryptedContainer):
        container = EncryptedContainer.parse(container)
    if key.dh_private is None:
        raise ValidationError("decryption needs a private key")
    slot = next((s for s in container.slots if s.recipient == key.fingerprint.digest), None)
    if slot is None:
        raise NotARecipientError(f"key {key.fingerprint.short_id} is not a recipient")
    try:
        shared = key.dh_private.exchange(X25519PublicKey.from_public_bytes(slot.ephemeral_public))
        wrap = ChaCha20Poly1305(_wrap_key(shared, slot.ephemeral_public, key.dh_public))
        file_key = wrap.decrypt(_WRAP_NONCE, slot.wrapped_key, slot.recipient)
    except (InvalidTag, ValueError):
        raise TamperError("recipient slot failed authentication") from None
    try:
        return sodium.crypto_aead_xchacha20poly1305_ietf_decrypt(
            container.ciphertext, container.header_bytes(), container.nonce, file_key
        )
    except CryptoError:
        raise TamperError("ciphertext failed authentication") from None


def is_container(data: bytes) -> bool:
    return data[:4] == MAGIC


# -- key directory --------------------------------------------------------------

_KEY_FILE = re.compile(r"^(\d{4})\.(x25519|ed25519)$")


class Keyring:
    """One hex-encoded file per key under ``<key_dir>/keys`` and ``<key_dir>/accounts``.

    Imported public keys of other people go to ``<key_dir>/contacts``.
    """

    def __init__(self, key_dir: str | os.PathLike):
        self.root = Path(key_dir)
        self.keys_dir = self.root / "keys"
        self.accounts_dir = self.root / "accounts"
        self.contacts_dir = self.root / "contacts"
        try:
            for d in (self.keys_dir, self.accounts_dir, self.contacts_dir):
                d.mkdir(parents=True, exist_ok=True)
            os.chmod(self.root, 0o700)
        except OSError as exc:
            raise PersistenceError(f"key directory {self.root} not writable: {exc}") from exc

    def _files(self, directory: Path, suffix: str) -> list[Path]:
        found = []
        for p in directory.iterdir():
            m = _KEY_FILE.match(p.name)
            if m and m.group(2) == suffix:
                found.append(p)
        return sorted(found)

    def _store(self, directory: Path, suffix: str, raw: bytes) -> None:
        index = len(self._files(directory, suffix))
        path = directory / f"{index:04d}.{suffix}"
        try:
            fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
            with os.fdopen(fd, "w") as fh:
                fh.write(raw.hex() + "\n")
        except OSError as exc:
            raise PersistenceError(f"cannot write key file {path}: {exc}") from exc

    def new_key(self) -> EncryptionKey:
        key = generate_encryption_key()
        self._store(self.keys_dir, "x25519", key.private_bytes())
        return key

    def new_account(self) -> Identity:
        ident = generate_identity()
        self._store(self.accounts_dir, "ed25519", ident.seed())
        return ident

    def keys(self) -> list[EncryptionKey]:
        return [
            EncryptionKey.from_private_bytes(bytes.fromhex(p.read_text().strip()))
            for p in self._files(self.keys_dir, "x25519")
        ]

    def accounts(self) -> list[Identity]:
        return [
            Identity.from_seed(bytes.fromhex(p.read_text().strip()))
            for p in self._files(self.accounts_dir, "ed25519")
        ]

    def key(self, index: int) -> EncryptionKey:
        keys = self.keys()
        if not 0 <= index < len(keys):
            raise ValidationError(f"key index {index} out of range (have {len(keys)})")
        return keys[index]

    def account(self, index: int) -> Identity:
        accounts = self.accounts()
        if not 0 <= index < len(accounts):
            raise ValidationError(f"account index {index} out of range (have {len(accounts)})")
        return accounts[index]

    def import_public(self, pub: bytes) -> EncryptionKey:
        key = EncryptionKey.from_public_bytes(pub)
        (self.contacts_dir / f"{key.fingerprint.hex}.pub").write_text(pub.hex() + "\n")
        return key

    def contacts(self) -> list[EncryptionKey]:
        return [
            EncryptionKey.from_public_bytes(bytes.fromhex(p.read_text().strip()))
            for p in sorted(self.contacts_dir.glob("*.pub"))
        ]

    def resolve(self, ref: str) -> EncryptionKey:
        """Find a public encryption key by full fingerprint hex or 16-char short id."""
        ref = ref.strip().lower()
        for k in self.keys() + self.contacts():
            if ref in (k.fingerprint.hex, k.fingerprint.short_id):
                return k.public()
        raise NotFoundError(f"no known encryption key with fingerprint {ref}")
