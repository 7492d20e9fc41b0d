"""Primitive layer: short digests, AES-128-CBC, and secp256k1 ECIES/ECDSA.

Every function is stateless. Randomness comes from the operating system
unless an explicit ``random.Random`` is supplied, which makes whole runs
replayable from a seed; supplying a seeded generator is only appropriate
for simulation.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import random
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, padding
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import NssiaError

DEFAULT_HASH = "sha1"
DIGEST_LEN = 20

MASTER_KEY_LEN = 16
SYM_IV_LEN = 16
SYM_BLOCK_LEN = 16

PUBLIC_KEY_LEN = 33  # compressed point
SIGNATURE_LEN = 64  # fixed-width r || s, big-endian
ECIES_TAG_LEN = 32
ECIES_OVERHEAD = PUBLIC_KEY_LEN + SYM_IV_LEN + ECIES_TAG_LEN

_CURVE = ec.SECP256K1()
_CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141


class PaddingError(NssiaError):
    """Symmetric decryption failed: wrong key, truncation, or corruption."""


class TagMismatch(NssiaError):
    """Asymmetric decryption failed: the authentication tag did not verify."""


def _rand_bytes(n: int, rng: random.Random | None) -> bytes:
    return rng.randbytes(n) if rng is not None else os.urandom(n)


def digest(data: bytes, algorithm: str = DEFAULT_HASH) -> bytes:
    """Digest of ``data``: 20 bytes under the default profile."""
    return hashlib.new(algorithm, data).digest()


def digest_length(algorithm: str = DEFAULT_HASH) -> int:
    return hashlib.new(algorithm).digest_size


def new_master_key(rng: random.Random | None = None) -> bytes:
    return _rand_bytes(MASTER_KEY_LEN, rng)


@dataclass(frozen=True)
class PublicParams:
    """Published curve parameters: y^2 = x^3 + a*x + b over GF(prime)."""

    prime: int
    a: int
    b: int
    gx: int
    gy: int
    order: int

    @classmethod
    def secp256k1(cls) -> "PublicParams":
        return cls(
            prime=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F,
            a=0,
            b=7,
            gx=0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
            gy=0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
            order=_CURVE_ORDER,
        )


class KeyPair:
    """secp256k1 key pair; ``public_bytes`` is the 33-byte compressed point."""

    __slots__ = ("_private", "public_bytes")

    def __init__(self, private: ec.EllipticCurvePrivateKey):
        self._private = private
        self.public_bytes = private.public_key().public_bytes(
            Encoding.X962, PublicFormat.CompressedPoint
        )

    @classmethod
    def generate(cls, rng: random.Random | None = None) -> "KeyPair":
        if rng is None:
            return cls(ec.generate_private_key(_CURVE))
        return cls.from_scalar(rng.randrange(1, _CURVE_ORDER))

    @classmethod
    def from_scalar(cls, scalar: int) -> "KeyPair":
        return cls(ec.derive_private_key(scalar, _CURVE))

    @property
    def secret_scalar(self) -> int:
        return self._private.private_numbers().private_value

    def __repr__(self) -> str:  # never echo the secret
        return f"KeyPair(public={self.public_bytes.hex()})"


def _load_public(public_key: bytes) -> ec.EllipticCurvePublicKey:
    return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, public_key)


def sym_ciphertext_len(plaintext_len: int) -> int:
    """Total size of ``sym_encrypt`` output: IV plus padded blocks."""
    return SYM_IV_LEN + (plaintext_len // SYM_BLOCK_LEN + 1) * SYM_BLOCK_LEN


def sym_encrypt(plaintext: bytes, key: bytes, rng: random.Random | None = None) -> bytes:
    """AES-128-CBC with PKCS#7 padding; output is a fresh IV || ciphertext."""
    if len(key) != MASTER_KEY_LEN:
        raise ValueError(f"symmetric key must be {MASTER_KEY_LEN} bytes")
    iv = _rand_bytes(SYM_IV_LEN, rng)
    padder = padding.PKCS7(SYM_BLOCK_LEN * 8).padder()
    padded = padder.update(plaintext) + padder.finalize()
    encryptor = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
    return iv + encryptor.update(padded) + encryptor.finalize()


def sym_decrypt(ciphertext: bytes, key: bytes) -> bytes:
    if len(key) != MASTER_KEY_LEN:
        raise ValueError(f"symmetric key must be {MASTER_KEY_LEN} bytes")
    body = ciphertext[SYM_IV_LEN:]
    if len(ciphertext) < SYM_IV_LEN + SYM_BLOCK_LEN or len(body) % SYM_BLOCK_LEN:
        raise PaddingError("ciphertext truncated or misaligned")
    iv = ciphertext[:SYM_IV_LEN]
    decryptor = Cipher(algorithms.AES(key), modes.CBC(iv)).decryptor()
    padded = decryptor.update(body) + decryptor.finalize()
    unpadder = padding.PKCS7(SYM_BLOCK_LEN * 8).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError as exc:
        raise PaddingError("bad padding: wrong key or corrupted ciphertext") from exc


def _ecies_keys(private: ec.EllipticCurvePrivateKey, peer: ec.EllipticCurvePublicKey) -> tuple[bytes, bytes]:
    shared = private.exchange(ec.ECDH(), peer)
    kdf = hashlib.sha512(shared).digest()
    return kdf[:MASTER_KEY_LEN], kdf[32:]


def ec_encrypt(plaintext: bytes, public_key: bytes, rng: random.Random | None = None) -> bytes:
    """Ephemeral-ECDH encryption: 33-byte point || sym ciphertext || 32-byte MAC."""
    peer = _load_public(public_key)
    ephemeral = KeyPair.generate(rng)
    enc_key, mac_key = _ecies_keys(ephemeral._private, peer)
    body = ephemeral.public_bytes + sym_encrypt(plaintext, enc_key, rng)
    tag = hmac.new(mac_key, body, hashlib.sha256).digest()
    return body + tag


def ec_decrypt(ciphertext: bytes, keypair: KeyPair) -> bytes:
    if len(ciphertext) < ECIES_OVERHEAD + SYM_BLOCK_LEN:
        raise TagMismatch("ciphertext too short")
    body, tag = ciphertext[:-ECIES_TAG_LEN], ciphertext[-ECIES_TAG_LEN:]
    try:
        peer = _load_public(body[:PUBLIC_KEY_LEN])
    except ValueError as exc:
        raise TagMismatch("malformed ephemeral point") from exc
    enc_key, mac_key = _ecies_keys(keypair._private, peer)
    expected = hmac.new(mac_key, body, hashlib.sha256).digest()
    if not hmac.compare_digest(tag, expected):
        raise TagMismatch("authentication tag mismatch")
    return sym_decrypt(body[PUBLIC_KEY_LEN:], enc_key)


def sign(data: bytes, keypair: KeyPair) -> bytes:
    """ECDSA over the default digest, serialized as 32-byte r || 32-byte s."""
    der = keypair._private.sign(data, ec.ECDSA(hashes.SHA1()))
    r, s = decode_dss_signature(der)
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify(data: bytes, signature: bytes, public_key: bytes) -> bool:
    """True iff ``signature`` is valid for ``data`` under ``public_key``.

    Returns False (never raises) on malformed signatures or keys, so callers
    can treat any verification problem as a plain rejection.
    """
    if len(signature) != SIGNATURE_LEN:
        return False
    r = int.from_bytes(signature[:32], "big")
    s = int.from_bytes(signature[32:], "big")
    try:
        der = encode_dss_signature(r, s)
        _load_public(public_key).verify(der, data, ec.ECDSA(hashes.SHA1()))
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class SignedCiphertext:
    """A ciphertext together with a signature over the ciphertext bytes."""

    ciphertext: bytes
    signature: bytes
