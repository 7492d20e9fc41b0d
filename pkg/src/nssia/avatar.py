"""Digital avatars: seed-driven assembly from a code-module library.

An avatar is one template picked per slot of the library, selected by a
decimal seed string. Its identifier is the digest of the assembled code
region, so identical seeds and libraries always produce identical ids.
A face imprint can be bound to the avatar for activation checks; three
consecutive failed challenges lock it permanently.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .crypto import DIGEST_LEN, SIGNATURE_LEN, digest
from .errors import NssiaError

DA_MAGIC = b"NSSIA-DA"
LOCK_THRESHOLD = 3
SEED_DIGITS = 32
TEMPLATE_SIZE = 256

_SLOT_NAMES = ("identity-proof", "dynamic-verification", "file-transfer", "messaging")
_VARIANT_TAGS = ("baseline", "strict", "verbose", "minimal")


class NonDigitSeed(NssiaError):
    """Avatar seed contains characters other than 0-9."""


class Unbound(NssiaError):
    """Avatar has no bound face imprint."""


class Locked(NssiaError):
    """Avatar is locked after too many failed challenges."""


@dataclass(frozen=True)
class CodeModuleLibrary:
    """Ordered slots of interchangeable code templates."""

    slots: tuple[tuple[bytes, ...], ...]

    def __post_init__(self):
        if not self.slots:
            raise ValueError("library needs at least one slot")
        for idx, templates in enumerate(self.slots):
            if not templates:
                raise ValueError(f"slot {idx} has no templates")
            if len(set(templates)) != len(templates):
                raise ValueError(f"slot {idx} has duplicate templates")

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    @property
    def template_counts(self) -> tuple[int, ...]:
        return tuple(len(templates) for templates in self.slots)


def _template(slot: str, variant: int, size: int) -> bytes:
    tag = _VARIANT_TAGS[variant % len(_VARIANT_TAGS)]
    head = (
        f";; module {slot} build {variant} ({tag})\n"
        f";; entry {slot.replace('-', '_')}_main\n"
    ).encode("ascii")
    filler = f"{slot}/{variant} ".encode("ascii")
    body = head + filler * (size // len(filler) + 1)
    return body[:size]


def default_library(template_size: int = TEMPLATE_SIZE) -> CodeModuleLibrary:
    """Four slots of four templates each, every template ``template_size`` bytes."""
    return CodeModuleLibrary(
        tuple(
            tuple(_template(name, variant, template_size) for variant in range(4))
            for name in _SLOT_NAMES
        )
    )


def derive_seed(source: bytes, length: int = SEED_DIGITS, slot_count: int = 4) -> str:
    """Expand ``source`` into a decimal seed by counter hashing.

    The result is right-padded with '0' to a multiple of ``slot_count`` so
    every slot gets an equal slice.
    """
    if not source:
        raise ValueError("empty seed source")
    if length < 1 or slot_count < 1:
        raise ValueError("length and slot_count must be positive")
    digits: list[str] = []
    counter = 0
    while len(digits) < length:
        block = digest(source + counter.to_bytes(4, "big"))
        digits.extend(str(b % 10) for b in block)
        counter += 1
    seed = "".join(digits[:length])
    if length % slot_count:
        seed += "0" * (slot_count - length % slot_count)
    return seed


@dataclass
class DigitalAvatar:
    """An assembled avatar plus its activation state."""

    modules: tuple[bytes, ...]
    bound_face: bytes | None = None
    signature: bytes | None = None
    failures: int = 0
    locked: bool = False
    lock_threshold: int = LOCK_THRESHOLD

    def code_bytes(self) -> bytes:
        """The avatar proper: concatenation of its selected modules."""
        return b"".join(self.modules)

    def canonical_bytes(self) -> bytes:
        """Signed region: slot count, then each module length-prefixed."""
        out = bytearray([len(self.modules)])
        for module in self.modules:
            out += len(module).to_bytes(2, "big")
            out += module
        return bytes(out)

    def activate(self, live_face: bytes, tolerance: float = 0.0) -> bool:
        """Face check; a locked avatar refuses even a perfect match."""
        if self.bound_face is None:
            raise Unbound("no face imprint bound to this avatar")
        if self.locked:
            return False
        return bit_error_rate(self.bound_face, live_face) <= tolerance

    def challenge(self, live_face: bytes, tolerance: float = 0.0) -> bool:
        """Counted face check: consecutive failures lock the avatar."""
        if self.locked:
            raise Locked(f"avatar locked after {self.failures} failed challenges")
        ok = self.activate(live_face, tolerance)
        if ok:
            self.failures = 0
        else:
            self.failures += 1
            if self.failures >= self.lock_threshold:
                self.locked = True
        return ok


def generate_avatar(seed: str, library: CodeModuleLibrary) -> DigitalAvatar:
    """Assemble an avatar from a decimal seed, one template per slot.

    The seed splits into equal slices, one per slot; each slice, read as a
    decimal number, indexes the slot's templates modulo their count.
    """
    if not seed or any(c not in "0123456789" for c in seed):
        raise NonDigitSeed(f"seed must be nonempty decimal digits, got {seed!r}")
    k = library.slot_count
    if len(seed) % k:
        raise ValueError(f"seed length {len(seed)} is not divisible by {k} slots")
    width = len(seed) // k
    picks = []
    for i, templates in enumerate(library.slots):
        value = int(seed[i * width : (i + 1) * width])
        picks.append(templates[value % len(templates)])
    return DigitalAvatar(modules=tuple(picks))


def avatar_id(avatar: DigitalAvatar) -> bytes:
    """20-byte identifier: digest of the canonical code region."""
    return digest(avatar.canonical_bytes())


def bit_error_rate(a: bytes, b: bytes) -> float:
    """Fraction of differing bits; a length mismatch counts as a differing tail."""
    n = min(len(a), len(b))
    total = 8 * max(len(a), len(b))
    if total == 0:
        return 0.0
    diff = (int.from_bytes(a[:n], "big") ^ int.from_bytes(b[:n], "big")).bit_count()
    diff += 8 * (max(len(a), len(b)) - n)
    return diff / total


def add_face_noise(face: bytes, fraction: float, rng: random.Random) -> bytes:
    """Flip round(fraction * bits) distinct bits of ``face``."""
    bits = 8 * len(face)
    flips = round(fraction * bits)
    if flips == 0:
        return face
    out = bytearray(face)
    for pos in rng.sample(range(bits), flips):
        out[pos // 8] ^= 1 << (pos % 8)
    return bytes(out)


def pack_avatar(avatar: DigitalAvatar) -> bytes:
    """File form: magic, canonical region, bound face, 64-byte signature."""
    face = avatar.bound_face or b""
    signature = avatar.signature or bytes(SIGNATURE_LEN)
    if len(signature) != SIGNATURE_LEN:
        raise ValueError(f"signature must be {SIGNATURE_LEN} bytes")
    return (
        DA_MAGIC
        + avatar.canonical_bytes()
        + len(face).to_bytes(4, "big")
        + face
        + signature
    )


def unpack_avatar(data: bytes) -> DigitalAvatar:
    if not data.startswith(DA_MAGIC):
        raise ValueError("bad avatar file magic")
    off = len(DA_MAGIC)
    if len(data) < off + 1:
        raise ValueError("avatar file truncated")
    slot_count = data[off]
    off += 1
    if slot_count == 0:
        raise ValueError("avatar file declares zero slots")
    modules = []
    for _ in range(slot_count):
        if len(data) < off + 2:
            raise ValueError("avatar file truncated in module table")
        length = int.from_bytes(data[off : off + 2], "big")
        off += 2
        if len(data) < off + length:
            raise ValueError("avatar file truncated in module body")
        modules.append(data[off : off + length])
        off += length
    if len(data) < off + 4:
        raise ValueError("avatar file truncated at face length")
    face_len = int.from_bytes(data[off : off + 4], "big")
    off += 4
    if len(data) != off + face_len + SIGNATURE_LEN:
        raise ValueError("avatar file length does not match its header")
    face = data[off : off + face_len]
    signature = data[off + face_len :]
    return DigitalAvatar(
        modules=tuple(modules),
        bound_face=face or None,
        signature=None if signature == bytes(SIGNATURE_LEN) else signature,
    )
