"""Threshold secret sharing over prime fields.

Two field profiles matter here. Master-key subkeys live in the field of
SUBKEY_PRIME, the smallest prime above 2**128, whose residues serialize to
17 bytes. Escrow blobs are cut into 5-byte chunks shared in the field of
ESCROW_PRIME, the largest prime below 2**40, so every chunk of a uniformly
random blob is an in-range coefficient except with probability about 2**-33
per chunk (callers re-randomize the blob and retry on that rare overflow).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache

from .errors import NssiaError

SUBKEY_PRIME = (1 << 128) + 51  # smallest prime above 2**128
ESCROW_PRIME = (1 << 40) - 87  # largest prime below 2**40

_SMALL_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


class InvalidThreshold(NssiaError):
    """Threshold/share-count combination violates the sharing scheme."""


class DuplicateX(NssiaError):
    """Two supplied shares claim the same evaluation point."""


class ChunkOverflow(NssiaError):
    """A blob chunk is not a residue of the escrow field."""


class MalformedIRI(NssiaError):
    """A restoration record has the wrong shape or encoding."""


class InconsistentShares(NssiaError):
    """Surplus shares do not lie on the interpolated polynomial."""


def is_probable_prime(n: int, rounds: int = 128, rng: random.Random | None = None) -> bool:
    """Miller-Rabin with ``rounds`` random bases."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    draw = rng.randrange if rng is not None else random.randrange
    for _ in range(rounds):
        a = draw(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@lru_cache(maxsize=None)
def largest_prime_below(limit: int) -> int:
    """Largest prime strictly below ``limit`` (deterministic downward scan)."""
    candidate = limit - 1
    if candidate % 2 == 0:
        candidate -= 1
    while candidate >= 3:
        if is_probable_prime(candidate):
            return candidate
        candidate -= 2
    if limit > 2:
        return 2
    raise ValueError("no prime below limit")


@dataclass(frozen=True)
class FieldSpec:
    """A prime field plus the fixed big-endian byte width of its residues."""

    modulus: int
    element_width: int = field(init=False)

    def __post_init__(self):
        if not is_probable_prime(self.modulus):
            raise ValueError(f"modulus {self.modulus} is not prime")
        object.__setattr__(self, "element_width", (self.modulus.bit_length() + 7) // 8)

    def encode(self, value: int) -> bytes:
        return value.to_bytes(self.element_width, "big")

    def decode(self, data: bytes) -> int:
        return int.from_bytes(data, "big")


SUBKEY_FIELD = FieldSpec(SUBKEY_PRIME)


@lru_cache(maxsize=None)
def escrow_field(coeff_width: int = 5) -> FieldSpec:
    """Field whose residues fit ``coeff_width`` bytes (largest such prime)."""
    if coeff_width < 1:
        raise ValueError("coefficient width must be positive")
    return FieldSpec(largest_prime_below(1 << (8 * coeff_width)))


@dataclass(frozen=True)
class Share:
    """One evaluation point (x, f(x)) of a sharing polynomial."""

    x: int
    y: int


@dataclass(frozen=True)
class IRI:
    """Identity-restoration record: one x plus one y per escrow polynomial."""

    x: int
    ys: tuple[int, ...]


def eval_poly(coeffs: list[int], x: int, fieldspec: FieldSpec) -> int:
    """Evaluate sum(coeffs[i] * x**i) mod p; coefficients lowest degree first."""
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % fieldspec.modulus
    return acc


def _check_distinct_x(points) -> None:
    seen = set()
    for p in points:
        if p.x in seen:
            raise DuplicateX(f"duplicate evaluation point x={p.x}")
        seen.add(p.x)


def _sample_distinct(rng: random.Random, upper: int, count: int) -> list[int]:
    # rejection sampling; len(range) overflows for 128-bit moduli so no rng.sample
    xs: set[int] = set()
    while len(xs) < count:
        xs.add(rng.randrange(1, upper))
    return sorted(xs)


def split_secret(
    secret: int,
    threshold: int,
    share_count: int,
    fieldspec: FieldSpec,
    *,
    rng: random.Random | None = None,
    xs: list[int] | None = None,
) -> list[Share]:
    """Split ``secret`` into points on a random degree-(threshold-1) polynomial.

    Any ``threshold`` of the returned shares reconstruct the secret; fewer
    reveal nothing. ``xs`` pins the evaluation points (distinct, nonzero).
    """
    if threshold < 1 or threshold > share_count or share_count >= fieldspec.modulus:
        raise InvalidThreshold(
            f"need 1 <= threshold <= share_count < modulus, got t={threshold} n={share_count}"
        )
    if not 0 <= secret < fieldspec.modulus:
        raise ValueError("secret out of field range")
    rng = rng or random.SystemRandom()
    if xs is None:
        xs = _sample_distinct(rng, fieldspec.modulus, share_count)
    else:
        xs = list(xs)
        if len(xs) != share_count:
            raise InvalidThreshold("wrong number of evaluation points")
        if len(set(xs)) != len(xs):
            raise DuplicateX("evaluation points must be distinct")
        if any(not 0 < x < fieldspec.modulus for x in xs):
            raise ValueError("evaluation points must be nonzero field elements")
    coeffs = [secret] + [rng.randrange(fieldspec.modulus) for _ in range(threshold - 1)]
    return [Share(x, eval_poly(coeffs, x, fieldspec)) for x in xs]


def reconstruct_at_zero(
    shares,
    fieldspec: FieldSpec,
    *,
    threshold: int | None = None,
    strict: bool = False,
) -> int:
    """Lagrange-interpolate f(0) from the first ``threshold`` shares.

    Surplus shares are ignored unless ``strict``, in which case every one of
    them must lie on the interpolated polynomial.
    """
    shares = list(shares)
    used = shares if threshold is None else shares[:threshold]
    _check_distinct_x(shares if strict else used)
    m = fieldspec.modulus
    acc = 0
    for i, si in enumerate(used):
        num = den = 1
        for j, sj in enumerate(used):
            if i == j:
                continue
            num = num * -sj.x % m
            den = den * (si.x - sj.x) % m
        acc = (acc + si.y * num * pow(den, -1, m)) % m
    if strict and len(shares) > len(used):
        coeffs = interpolate_coefficients(used, fieldspec)
        for extra in shares[len(used):]:
            if eval_poly(coeffs, extra.x, fieldspec) != extra.y:
                raise InconsistentShares(f"share at x={extra.x} is off the polynomial")
    return acc


def _poly_mul_linear(poly: list[int], c: int, m: int) -> list[int]:
    # poly * (x + c), coefficients lowest degree first
    out = [0] * (len(poly) + 1)
    for i, a in enumerate(poly):
        out[i] = (out[i] + a * c) % m
        out[i + 1] = (out[i + 1] + a) % m
    return out


def _poly_div_linear(poly: list[int], root: int, m: int) -> list[int]:
    # poly / (x - root); exact by construction when root is a zero of poly
    n = len(poly) - 1
    quotient = [0] * n
    quotient[n - 1] = poly[n]
    for k in range(n - 1, 0, -1):
        quotient[k - 1] = (poly[k] + root * quotient[k]) % m
    return quotient


def interpolate_coefficients(points, fieldspec: FieldSpec) -> list[int]:
    """Coefficients (lowest degree first) of the unique polynomial through ``points``."""
    points = list(points)
    _check_distinct_x(points)
    m = fieldspec.modulus
    master = [1]
    for p in points:
        master = _poly_mul_linear(master, -p.x, m)
    coeffs = [0] * len(points)
    for p in points:
        basis = _poly_div_linear(master, p.x, m)
        scale = p.y * pow(eval_poly(basis, p.x, fieldspec), -1, m) % m
        for i, b in enumerate(basis):
            coeffs[i] = (coeffs[i] + b * scale) % m
    return coeffs


def split_secinfo(
    secinfo: bytes,
    threshold: int,
    share_count: int,
    poly_count: int,
    coeff_width: int,
    fieldspec: FieldSpec,
    *,
    rng: random.Random | None = None,
    random_xs: bool = False,
) -> list[IRI]:
    """Escrow a blob as ``share_count`` restoration records.

    The blob is read as ``poly_count`` polynomials of ``threshold``
    coefficients, each ``coeff_width`` bytes big-endian, all evaluated at a
    common set of one-byte x values (the server indexes by default). The
    share count is pinned to 2*threshold - 1 so a majority of record holders
    always spans a reconstructing set.
    """
    if threshold < 1 or share_count != 2 * threshold - 1:
        raise InvalidThreshold(
            f"record count must be 2t-1, got t={threshold} n={share_count}"
        )
    expected = poly_count * threshold * coeff_width
    if len(secinfo) != expected:
        raise ValueError(f"blob must be exactly {expected} bytes, got {len(secinfo)}")
    chunks = [
        int.from_bytes(secinfo[off : off + coeff_width], "big")
        for off in range(0, expected, coeff_width)
    ]
    for idx, chunk in enumerate(chunks):
        if chunk >= fieldspec.modulus:
            raise ChunkOverflow(f"chunk {idx} ({chunk:#x}) exceeds the field modulus")
    if random_xs:
        if rng is None:
            raise ValueError("random_xs requires an rng")
        xs = sorted(rng.sample(range(1, 256), share_count))
    else:
        if share_count > 255:
            raise InvalidThreshold("x values must fit one byte")
        xs = list(range(1, share_count + 1))
    polys = [chunks[j * threshold : (j + 1) * threshold] for j in range(poly_count)]
    return [IRI(x, tuple(eval_poly(p, x, fieldspec) for p in polys)) for x in xs]


def reconstruct_secinfo(
    iris,
    threshold: int,
    poly_count: int,
    coeff_width: int,
    fieldspec: FieldSpec,
) -> bytes:
    """Rebuild the escrowed blob from the first ``threshold`` records.

    With fewer records than the threshold the interpolation is underdetermined:
    the call still returns a correctly shaped blob, but its content matches the
    original only with negligible probability.
    """
    records = list(iris)[:threshold]
    if not records:
        raise MalformedIRI("no restoration records supplied")
    for rec in records:
        if len(rec.ys) != poly_count:
            raise MalformedIRI(
                f"record at x={rec.x} carries {len(rec.ys)} values, expected {poly_count}"
            )
    _check_distinct_x(records)
    out = bytearray()
    for j in range(poly_count):
        pts = [Share(rec.x, rec.ys[j]) for rec in records]
        coeffs = interpolate_coefficients(pts, fieldspec)
        coeffs += [0] * (threshold - len(coeffs))
        for c in coeffs[:threshold]:
            out += c.to_bytes(coeff_width, "big")
    return bytes(out)


def pack_iri(iri: IRI, coeff_width: int) -> bytes:
    """x as one byte, then each y big-endian in ``coeff_width`` bytes."""
    if not 0 < iri.x < 256:
        raise MalformedIRI(f"x={iri.x} does not fit one byte")
    try:
        body = b"".join(y.to_bytes(coeff_width, "big") for y in iri.ys)
    except OverflowError as exc:
        raise MalformedIRI("y value exceeds the record width") from exc
    return bytes([iri.x]) + body


def unpack_iri(data: bytes, poly_count: int, coeff_width: int) -> IRI:
    if len(data) != 1 + poly_count * coeff_width:
        raise MalformedIRI(
            f"record must be {1 + poly_count * coeff_width} bytes, got {len(data)}"
        )
    if data[0] == 0:
        raise MalformedIRI("x must be nonzero")
    ys = tuple(
        int.from_bytes(data[off : off + coeff_width], "big")
        for off in range(1, len(data), coeff_width)
    )
    return IRI(data[0], ys)


def pack_share(share: Share, fieldspec: FieldSpec) -> bytes:
    """x as one byte, then y big-endian at the field's element width."""
    if not 0 < share.x < 256:
        raise ValueError(f"x={share.x} does not fit one byte")
    return bytes([share.x]) + fieldspec.encode(share.y)


def unpack_share(data: bytes, fieldspec: FieldSpec) -> Share:
    if len(data) != 1 + fieldspec.element_width:
        raise ValueError(
            f"share must be {1 + fieldspec.element_width} bytes, got {len(data)}"
        )
    if data[0] == 0:
        raise ValueError("x must be nonzero")
    return Share(data[0], fieldspec.decode(data[1:]))
