"""Aggregatable signature schemes with a shared multiplicative algebra.

A signature on M under secret s is H(M)^s; an aggregate over a member set is
the product of the members' signatures and verifies against the product of
their public keys. Two backends implement the same interface:

* ``ArithmeticScheme`` works in the exponent space of a prime-order group.
  It is fast, deterministic and algebraically faithful, and trivially
  forgeable. Use it for simulation and exhaustive property tests only.
* ``BLS12381Scheme`` is a genuine pairing-based BLS instantiation (public
  keys in G1, signatures in G2) on top of ``py_ecc``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

from ..errors import ArgumentError, DecodeError


# -- member bitmap ---------------------------------------------------------

@dataclass(frozen=True)
class Bitmap:
    """Ordered bit vector over member ordinals ``0..size-1``."""
    size: int
    bits: int = 0

    def __post_init__(self):
        if self.size < 0 or self.bits < 0 or self.bits >> self.size:
            raise ArgumentError("bitmap bits outside member range")

    @classmethod
    def of(cls, size: int, members: Iterable[int]) -> "Bitmap":
        bits = 0
        for m in members:
            if not 0 <= m < size:
                raise ArgumentError(f"member {m} outside bitmap of size {size}")
            bits |= 1 << m
        return cls(size, bits)

    @classmethod
    def full(cls, size: int) -> "Bitmap":
        return cls(size, (1 << size) - 1)

    def __contains__(self, member: int) -> bool:
        return 0 <= member < self.size and bool(self.bits >> member & 1)

    def members(self) -> list[int]:
        return [i for i in range(self.size) if self.bits >> i & 1]

    @property
    def popcount(self) -> int:
        return bin(self.bits).count("1")

    def with_member(self, member: int) -> "Bitmap":
        return Bitmap.of(self.size, [*self.members(), member])

    def union(self, other: "Bitmap") -> "Bitmap":
        if other.size != self.size:
            raise ArgumentError("bitmap sizes differ")
        return Bitmap(self.size, self.bits | other.bits)

    def disjoint(self, other: "Bitmap") -> bool:
        return not self.bits & other.bits

    def to_bytes(self) -> bytes:
        raw = bytearray((self.size + 7) // 8)
        for i in self.members():
            raw[i // 8] |= 0x80 >> (i % 8)
        return self.size.to_bytes(4, "big") + bytes(raw)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitmap":
        if len(data) < 4:
            raise DecodeError("bitmap too short")
        size = int.from_bytes(data[:4], "big")
        raw = data[4:]
        if len(raw) != (size + 7) // 8:
            raise DecodeError("bitmap length does not match its size prefix")
        members = [i for i in range(len(raw) * 8) if raw[i // 8] & (0x80 >> (i % 8))]
        if any(m >= size for m in members):
            raise DecodeError("bitmap padding bits set")
        return cls.of(size, members)

    def __canonical__(self) -> bytes:
        return self.to_bytes()

    def __str__(self) -> str:
        return "".join("1" if i in self else "0" for i in range(self.size))


# -- value types -----------------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    secret: int = field(repr=False, metadata={"canonical": False})
    public: bytes


@dataclass(frozen=True)
class Signature:
    value: bytes


@dataclass(frozen=True)
class AggregateSignature:
    bitmap: Bitmap
    value: bytes

    def __post_init__(self):
        if self.bitmap.popcount < 1:
            raise ArgumentError("aggregate must cover at least one member")

    def to_bytes(self) -> bytes:
        bitmap = self.bitmap.to_bytes()
        return len(bitmap).to_bytes(4, "big") + bitmap + self.value


def _seed_bytes(seed) -> bytes:
    if isinstance(seed, str):
        seed = seed.encode()
    if isinstance(seed, int):
        seed = seed.to_bytes(max(1, (seed.bit_length() + 7) // 8), "big")
    if not seed:
        raise ArgumentError("seed material must be non-empty")
    return bytes(seed)


class SignatureScheme:
    """Backend-agnostic interface; subclasses provide the group arithmetic."""

    name = "abstract"
    public_size = 0
    signature_size = 0

    # group hooks -------------------------------------------------------
    def _scalar_order(self) -> int:
        raise NotImplementedError

    def _public_from_secret(self, secret: int) -> bytes:
        raise NotImplementedError

    def _hash_to_group(self, message: bytes):
        raise NotImplementedError

    def _sig_mul(self, elements: Sequence[bytes]) -> bytes:
        raise NotImplementedError

    def _pub_mul(self, elements: Sequence[bytes]) -> bytes:
        raise NotImplementedError

    def _sign_raw(self, secret: int, message: bytes) -> bytes:
        raise NotImplementedError

    def _pairing_check(self, public: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError

    def random_signature(self, rng) -> Signature:
        """An arbitrary group element, used to model corrupted contributions."""
        secret = rng.randrange(1, self._scalar_order())
        return self.sign(secret, b"random element %d" % rng.getrandbits(64))

    # public API --------------------------------------------------------
    def keygen(self, seed) -> KeyPair:
        material = hashlib.sha256(b"keygen|" + self.name.encode() + b"|" + _seed_bytes(seed)).digest()
        secret = int.from_bytes(material, "big") % (self._scalar_order() - 1) + 1
        return KeyPair(secret, self._public_from_secret(secret))

    def sign(self, secret: int, message: bytes) -> Signature:
        return Signature(self._sign_raw(secret, bytes(message)))

    def _check(self, public: bytes, message: bytes, signature: bytes) -> bool:
        # replicas re-verify the same endorsements; pairings are pure, so memoize
        key = (bytes(public), bytes(message), bytes(signature))
        cache = self.__dict__.setdefault("_verified", {})
        if key not in cache:
            if len(cache) >= 1 << 16:
                cache.clear()
            cache[key] = self._pairing_check(*key)
        return cache[key]

    def verify(self, public: bytes, message: bytes, signature: Signature) -> bool:
        return self._check(public, message, signature.value)

    def aggregate(self, signatures: Sequence[Signature], bitmap: Bitmap) -> AggregateSignature:
        if len(signatures) != bitmap.popcount:
            raise ArgumentError(
                f"{len(signatures)} signatures for a bitmap of {bitmap.popcount} members")
        if not signatures:
            raise ArgumentError("cannot aggregate zero signatures")
        return AggregateSignature(bitmap, self._sig_mul([s.value for s in signatures]))

    def combine(self, *parts: AggregateSignature) -> AggregateSignature:
        """Multiply partial aggregates over pairwise disjoint member sets."""
        if not parts:
            raise ArgumentError("nothing to combine")
        bitmap = parts[0].bitmap
        for part in parts[1:]:
            if not bitmap.disjoint(part.bitmap):
                raise ArgumentError("partial aggregates overlap")
            bitmap = bitmap.union(part.bitmap)
        return AggregateSignature(bitmap, self._sig_mul([p.value for p in parts]))

    def aggregate_pubkeys(self, bitmap: Bitmap, member_keys: Sequence[bytes]) -> bytes:
        if bitmap.popcount == 0:
            raise ArgumentError("empty bitmap")
        if bitmap.size > len(member_keys):
            raise ArgumentError("bitmap larger than the member key list")
        return self._pub_mul([member_keys[i] for i in bitmap.members()])

    def verify_aggregate(self, agg_pubkey: bytes, message: bytes, agg_sig: AggregateSignature) -> bool:
        return self._check(agg_pubkey, message, agg_sig.value)


# -- arithmetic stand-in ---------------------------------------------------

# prime order of the BLS12-381 scalar field, reused as the toy group order
_Q = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001
_G = 7  # exponent of the public generator


class ArithmeticScheme(SignatureScheme):
    """Exponent-space model: g^x is stored as x mod q, products are sums.

    Verification evaluates the bilinear map e(g^a, g^b) = a*b directly.
    Not secure: the secret is recoverable from the public key.
    """

    name = "arithmetic"
    public_size = 32
    signature_size = 32

    def _scalar_order(self) -> int:
        return _Q

    def _enc(self, x: int) -> bytes:
        return (x % _Q).to_bytes(32, "big")

    def _dec(self, raw: bytes) -> int:
        if len(raw) != 32:
            raise DecodeError(f"expected 32-byte element, got {len(raw)}")
        x = int.from_bytes(raw, "big")
        if x >= _Q:
            raise DecodeError("element not reduced modulo the group order")
        return x

    def _public_from_secret(self, secret: int) -> bytes:
        return self._enc(_G * secret)

    def _hash_to_group(self, message: bytes) -> int:
        h = int.from_bytes(hashlib.sha256(b"H2G|" + message).digest(), "big") % _Q
        return h or 1

    def _sign_raw(self, secret: int, message: bytes) -> bytes:
        return self._enc(self._hash_to_group(message) * secret)

    def _sig_mul(self, elements: Sequence[bytes]) -> bytes:
        return self._enc(sum(self._dec(e) for e in elements))

    _pub_mul = _sig_mul

    def _pairing_check(self, public: bytes, message: bytes, signature: bytes) -> bool:
        # e(sig, g) == e(H(M), pk)
        return self._dec(signature) * _G % _Q == self._hash_to_group(message) * self._dec(public) % _Q


# -- pairing backend -------------------------------------------------------

_DST = b"CONSORTIUM-BRIDGE-BLS-SIG-BLS12381G2-SHA256"


class BLS12381Scheme(SignatureScheme):
    """BLS over BLS12-381 via py_ecc; slow (pairings take ~0.4 s each)."""

    name = "bls12-381"
    public_size = 48
    signature_size = 96

    def __init__(self):
        from py_ecc import optimized_bls12_381 as curve
        from py_ecc.bls import g2_primitives as prims
        from py_ecc.bls.hash_to_curve import hash_to_G2
        self._curve = curve
        self._prims = prims
        self._hash_to_G2 = hash_to_G2

    def _scalar_order(self) -> int:
        return self._curve.curve_order

    def _dec_g1(self, raw: bytes):
        if len(raw) != 48:
            raise DecodeError("G1 element must be 48 bytes")
        try:
            point = self._prims.pubkey_to_G1(raw)
        except Exception as exc:  # py_ecc raises assorted types
            raise DecodeError(f"invalid G1 element: {exc}") from exc
        return point

    def _dec_g2(self, raw: bytes):
        if len(raw) != 96:
            raise DecodeError("G2 element must be 96 bytes")
        try:
            point = self._prims.signature_to_G2(raw)
        except Exception as exc:
            raise DecodeError(f"invalid G2 element: {exc}") from exc
        return point

    def _public_from_secret(self, secret: int) -> bytes:
        return self._prims.G1_to_pubkey(self._curve.multiply(self._curve.G1, secret))

    @lru_cache(maxsize=256)
    def _hash_to_group(self, message: bytes):
        return self._hash_to_G2(message, _DST, hashlib.sha256)

    def _sign_raw(self, secret: int, message: bytes) -> bytes:
        return self._prims.G2_to_signature(self._curve.multiply(self._hash_to_group(message), secret))

    def _sig_mul(self, elements: Sequence[bytes]) -> bytes:
        acc = self._curve.Z2
        for e in elements:
            acc = self._curve.add(acc, self._dec_g2(e))
        return self._prims.G2_to_signature(acc)

    def _pub_mul(self, elements: Sequence[bytes]) -> bytes:
        acc = self._curve.Z1
        for e in elements:
            acc = self._curve.add(acc, self._dec_g1(e))
        return self._prims.G1_to_pubkey(acc)

    def _pairing_check(self, public: bytes, message: bytes, signature: bytes) -> bool:
        c = self._curve
        pk = self._dec_g1(public)
        sig = self._dec_g2(signature)
        if c.is_inf(pk):
            return False
        lhs = c.pairing(sig, c.G1, final_exponentiate=False)
        rhs = c.pairing(self._hash_to_group(message), c.neg(pk), final_exponentiate=False)
        return c.final_exponentiate(lhs * rhs) == c.FQ12.one()


_SCHEMES = {"arithmetic": ArithmeticScheme, "bls12-381": BLS12381Scheme}


@lru_cache(maxsize=None)
def get_scheme(name: str) -> SignatureScheme:
    try:
        return _SCHEMES[name]()
    except KeyError:
        raise ArgumentError(f"unknown signature scheme {name!r}; choose from {sorted(_SCHEMES)}") from None
