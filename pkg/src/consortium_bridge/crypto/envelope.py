"""Hybrid public-key encryption for consumer-addressed payloads.

X25519 key agreement with an ephemeral sender key, HKDF-SHA256 key
derivation, and ChaCha20-Poly1305 for the authenticated payload.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..encoding import length_prefixed, split_length_prefixed
from ..errors import ArgumentError, DecodeError, DecryptionError

_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)
_INFO = b"consortium-bridge envelope v1"


@dataclass(frozen=True)
class ConsumerKeyPair:
    secret: bytes = field(repr=False, metadata={"canonical": False})
    public: bytes


def consumer_keygen(seed) -> ConsumerKeyPair:
    if isinstance(seed, str):
        seed = seed.encode()
    if not seed:
        raise ArgumentError("seed material must be non-empty")
    raw = hashlib.sha256(b"consumer|" + bytes(seed)).digest()
    private = X25519PrivateKey.from_private_bytes(raw)
    return ConsumerKeyPair(raw, private.public_key().public_bytes(**_RAW))


@dataclass(frozen=True)
class CipherEnvelope:
    recipient: bytes
    ephemeral_key_material: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return length_prefixed(self.recipient, self.ephemeral_key_material, self.ciphertext)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CipherEnvelope":
        try:
            recipient, ephemeral, ciphertext = split_length_prefixed(data, 3)
        except ValueError as exc:
            raise DecodeError(f"malformed envelope: {exc}") from exc
        if len(recipient) != 32 or len(ephemeral) != 32:
            raise DecodeError("malformed envelope: key fields must be 32 bytes")
        return cls(recipient, ephemeral, ciphertext)

    def __canonical__(self) -> bytes:
        return self.to_bytes()


def _derive(shared: bytes, recipient: bytes, ephemeral: bytes) -> tuple[bytes, bytes]:
    okm = HKDF(algorithm=hashes.SHA256(), length=44, salt=recipient + ephemeral, info=_INFO).derive(shared)
    return okm[:32], okm[32:]


def encrypt_for(recipient_pubkey: bytes, plaintext: bytes, ephemeral_seed: Optional[bytes] = None) -> CipherEnvelope:
    """Encrypt ``plaintext`` so that only the holder of the matching secret can read it.

    ``ephemeral_seed`` makes the output deterministic (simulation runs); leave
    it as None to draw the ephemeral key from the OS.
    """
    try:
        recipient = X25519PublicKey.from_public_bytes(bytes(recipient_pubkey))
    except ValueError as exc:
        raise ArgumentError(f"invalid recipient key: {exc}") from exc
    raw = hashlib.sha256(b"ephemeral|" + ephemeral_seed).digest() if ephemeral_seed else os.urandom(32)
    ephemeral = X25519PrivateKey.from_private_bytes(raw)
    ephemeral_pub = ephemeral.public_key().public_bytes(**_RAW)
    key, nonce = _derive(ephemeral.exchange(recipient), bytes(recipient_pubkey), ephemeral_pub)
    ciphertext = ChaCha20Poly1305(key).encrypt(nonce, bytes(plaintext), bytes(recipient_pubkey) + ephemeral_pub)
    return CipherEnvelope(bytes(recipient_pubkey), ephemeral_pub, ciphertext)


def decrypt(secret: bytes, envelope: CipherEnvelope | bytes) -> bytes:
    if isinstance(envelope, (bytes, bytearray)):
        envelope = CipherEnvelope.from_bytes(bytes(envelope))
    if len(envelope.recipient) != 32 or len(envelope.ephemeral_key_material) != 32:
        raise DecodeError("malformed envelope: key fields must be 32 bytes")
    private = X25519PrivateKey.from_private_bytes(secret)
    own_public = private.public_key().public_bytes(**_RAW)
    try:
        shared = private.exchange(X25519PublicKey.from_public_bytes(envelope.ephemeral_key_material))
    except ValueError as exc:  # low-order point yields an all-zero secret
        raise DecryptionError("key agreement failed") from exc
    key, nonce = _derive(shared, own_public, envelope.ephemeral_key_material)
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, envelope.ciphertext,
                                             envelope.recipient + envelope.ephemeral_key_material)
    except InvalidTag as exc:
        raise DecryptionError("authentication failed") from exc
