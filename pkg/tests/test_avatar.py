"""Avatar assembly: seed expansion, slot selection, activation, file codec."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nssia.avatar import (
    DA_MAGIC,
    LOCK_THRESHOLD,
    CodeModuleLibrary,
    DigitalAvatar,
    Locked,
    NonDigitSeed,
    Unbound,
    add_face_noise,
    avatar_id,
    bit_error_rate,
    default_library,
    derive_seed,
    generate_avatar,
    pack_avatar,
    unpack_avatar,
)


def _tiny_library(counts=(5, 5, 5, 5)):
    """Distinct one-byte-tagged templates so selections are easy to read."""
    return CodeModuleLibrary(
        tuple(
            tuple(bytes([slot]) * 4 + bytes([variant]) for variant in range(count))
            for slot, count in enumerate(counts)
        )
    )


def _selection(seed, library):
    avatar = generate_avatar(seed, library)
    return [
        library.slots[i].index(module) for i, module in enumerate(avatar.modules)
    ]


def test_default_library_shape():
    lib = default_library()
    assert lib.slot_count == 4
    assert lib.template_counts == (4, 4, 4, 4)
    flat = [t for slot in lib.slots for t in slot]
    assert all(len(t) == 256 for t in flat)
    assert len(set(flat)) == 16


def test_default_avatar_is_one_kilobyte():
    avatar = generate_avatar("0" * 32, default_library())
    assert len(avatar.code_bytes()) == 4 * 256 == 1024


def test_library_validation():
    with pytest.raises(ValueError):
        CodeModuleLibrary(())
    with pytest.raises(ValueError):
        CodeModuleLibrary(((),))
    with pytest.raises(ValueError):
        CodeModuleLibrary(((b"a", b"a"),))


# -- seed expansion ---------------------------------------------------------


def test_derive_seed_deterministic_decimal():
    a = derive_seed(b"imprint", 32, 4)
    assert a == derive_seed(b"imprint", 32, 4)
    assert len(a) == 32 and a.isascii() and all(c in "0123456789" for c in a)


def test_derive_seed_source_sensitivity():
    assert derive_seed(b"imprint", 32, 4) != derive_seed(b"imprimt", 32, 4)


def test_derive_seed_pads_to_slot_multiple():
    seed = derive_seed(b"imprint", 10, 4)
    assert len(seed) == 12 and seed.endswith("00")
    assert len(derive_seed(b"imprint", 8, 4)) == 8


def test_derive_seed_rejects_empty():
    with pytest.raises(ValueError):
        derive_seed(b"", 32, 4)
    with pytest.raises(ValueError):
        derive_seed(b"x", 0, 4)


# -- slot selection -----------------------------------------------------------


def test_hand_traced_selection():
    # "12345678" over 4 slots of 5: 12%5, 34%5, 56%5, 78%5 = 2, 4, 1, 3
    assert _selection("12345678", _tiny_library()) == [2, 4, 1, 3]


def test_selection_brute_force_oracle():
    rng = random.Random(60)
    for _ in range(100):
        counts = tuple(rng.randrange(1, 9) for _ in range(rng.randrange(1, 6)))
        library = _tiny_library(counts)
        width = rng.randrange(1, 5)
        seed = "".join(rng.choice("0123456789") for _ in range(width * len(counts)))
        expected = [
            int(seed[i * width : (i + 1) * width]) % counts[i] for i in range(len(counts))
        ]
        assert _selection(seed, library) == expected


def test_selection_leading_zeros_and_single_template():
    assert _selection("0001", _tiny_library((2, 2, 2, 2))) == [0, 0, 0, 1]
    assert _selection("99", _tiny_library((1, 1))) == [0, 0]


def test_generate_avatar_rejects_bad_seeds():
    lib = _tiny_library()
    with pytest.raises(NonDigitSeed):
        generate_avatar("12a45678", lib)
    with pytest.raises(NonDigitSeed):
        generate_avatar("", lib)
    with pytest.raises(NonDigitSeed):
        generate_avatar("١٢٣٤", lib)  # non-ASCII digits are not decimal here
    with pytest.raises(ValueError):
        generate_avatar("123", lib)  # not divisible by slot count


def test_same_seed_same_avatar_id():
    lib = default_library()
    rng = random.Random(61)
    for _ in range(100):
        seed = derive_seed(rng.randbytes(64), 32, 4)
        assert avatar_id(generate_avatar(seed, lib)) == avatar_id(generate_avatar(seed, lib))


def test_avatar_id_properties():
    lib = _tiny_library()
    a = generate_avatar("12345678", lib)
    b = generate_avatar("12345679", lib)  # last slot picks a different template
    assert len(avatar_id(a)) == 20
    assert avatar_id(a) != avatar_id(b)
    # id covers the code region only, not activation state
    a.bound_face = b"face"
    a.failures = 2
    assert avatar_id(a) == avatar_id(generate_avatar("12345678", lib))


# -- activation ---------------------------------------------------------------


def _bound_avatar(face):
    avatar = generate_avatar("12345678", _tiny_library())
    avatar.bound_face = face
    return avatar


def test_activate_exact_match():
    face = random.Random(62).randbytes(30 * 1024)
    avatar = _bound_avatar(face)
    assert avatar.activate(face)
    assert not avatar.activate(face[:-1] + bytes([face[-1] ^ 1]))


def test_activate_tolerance_boundary():
    # 245760 bits: 2458 flips is past 1%, 1228 flips is 0.5%
    rng = random.Random(63)
    face = rng.randbytes(30 * 1024)
    avatar = _bound_avatar(face)
    noisy = add_face_noise(face, 0.01000213623046875, rng)  # 2458 bits exactly
    assert bit_error_rate(face, noisy) > 0.01
    assert not avatar.activate(noisy, tolerance=0.01)
    mild = add_face_noise(face, 0.005, rng)  # 1228.8 -> 1229 bits
    assert avatar.activate(mild, tolerance=0.01)


def test_activate_unbound():
    avatar = generate_avatar("12345678", _tiny_library())
    with pytest.raises(Unbound):
        avatar.activate(b"anything")


def test_challenge_lock_cycle():
    face = random.Random(64).randbytes(1024)
    wrong = add_face_noise(face, 0.25, random.Random(65))
    avatar = _bound_avatar(face)
    # two misses then a hit resets the counter
    assert not avatar.challenge(wrong)
    assert not avatar.challenge(wrong)
    assert avatar.challenge(face)
    assert avatar.failures == 0 and not avatar.locked
    # three consecutive misses lock it
    for _ in range(LOCK_THRESHOLD):
        avatar.challenge(wrong)
    assert avatar.locked
    # locked: matching face no longer activates, further challenges error out
    assert not avatar.activate(face)
    with pytest.raises(Locked):
        avatar.challenge(face)


def test_bit_error_rate_edges():
    assert bit_error_rate(b"", b"") == 0.0
    assert bit_error_rate(b"\x00", b"\xff") == 1.0
    assert bit_error_rate(b"\x00", b"\x01") == 0.125
    assert bit_error_rate(b"ab", b"a") == pytest.approx(0.5)  # missing tail differs


def test_add_face_noise_exact_flip_count():
    face = bytes(1000)
    noisy = add_face_noise(face, 0.01, random.Random(66))
    assert bit_error_rate(face, noisy) == pytest.approx(80 / 8000)
    assert add_face_noise(face, 0.0, random.Random(66)) == face


# -- file codec ---------------------------------------------------------------


def test_pack_layout():
    avatar = generate_avatar("12345678", _tiny_library())
    packed = pack_avatar(avatar)
    assert packed.startswith(DA_MAGIC)
    assert packed[len(DA_MAGIC)] == 4  # slot count
    assert packed.endswith(bytes(64))  # unsigned avatar carries a zero signature


@settings(max_examples=25)
@given(st.binary(min_size=0, max_size=64), st.binary(min_size=64, max_size=64))
def test_pack_round_trip(face, signature):
    avatar = generate_avatar("12345678", _tiny_library())
    avatar.bound_face = face or None
    avatar.signature = None if signature == bytes(64) else signature
    again = unpack_avatar(pack_avatar(avatar))
    assert again.modules == avatar.modules
    assert again.bound_face == avatar.bound_face
    assert again.signature == avatar.signature
    assert avatar_id(again) == avatar_id(avatar)


def test_unpack_rejects_malformed():
    avatar = generate_avatar("12345678", _tiny_library())
    packed = pack_avatar(avatar)
    with pytest.raises(ValueError):
        unpack_avatar(b"NOTMAGIC" + packed[8:])
    with pytest.raises(ValueError):
        unpack_avatar(packed[:-1])
    with pytest.raises(ValueError):
        unpack_avatar(packed + b"\x00")
    with pytest.raises(ValueError):
        unpack_avatar(DA_MAGIC + b"\x00" + bytes(68))
