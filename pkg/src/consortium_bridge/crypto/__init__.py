from .envelope import CipherEnvelope, ConsumerKeyPair, consumer_keygen, decrypt, encrypt_for
from .schemes import (
    AggregateSignature,
    ArithmeticScheme,
    Bitmap,
    BLS12381Scheme,
    KeyPair,
    Signature,
    SignatureScheme,
    get_scheme,
)

__all__ = [
    "AggregateSignature", "ArithmeticScheme", "Bitmap", "BLS12381Scheme", "CipherEnvelope",
    "ConsumerKeyPair", "KeyPair", "Signature", "SignatureScheme", "consumer_keygen", "decrypt",
    "encrypt_for", "get_scheme",
]
