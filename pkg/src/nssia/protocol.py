"""Protocol entities and the three identity flows.

Digitization: a verifier attests civil metadata and records its digest, then
a collector checks the person against that record, records the iris digest,
and hands over a signed, encrypted face imprint. Generation: the generator
re-checks both proofs, derives a deterministic avatar from the face imprint,
escrows the masked metadata across the storage servers under the shared
master key, and records the avatar on the ledger. Accountability: any
regulator, with enough peers and storage servers, reverses the escrow and
recovers the metadata for a given avatar id.

No single entity here ever holds the master key at rest; it exists only
transiently during generation and audits, reconstructed from subkey shares.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field as dataclass_field

from . import crypto
from .avatar import (
    CodeModuleLibrary,
    DigitalAvatar,
    add_face_noise,
    avatar_id,
    bit_error_rate,
    default_library,
    derive_seed,
    generate_avatar,
)
from .crypto import KeyPair, PublicParams, SignedCiphertext
from .errors import NssiaError
from .ledger import Ledger, TxKind, make_timestamp, new_transaction
from .shamir import (
    IRI,
    SUBKEY_FIELD,
    ChunkOverflow,
    FieldSpec,
    InvalidThreshold,
    Share,
    escrow_field,
    pack_share,
    reconstruct_at_zero,
    reconstruct_secinfo,
    split_secinfo,
    split_secret,
    unpack_share,
)

METADATA_LEN = 256
IRIS_LEN = 25 * 1024
FACE_LEN = 30 * 1024
SEED_LENGTH = 32  # decimal digits feeding avatar assembly

_ATTEST_PREFIX = b"metadata-attestation:"

ESCROW_RETRY_LIMIT = 8  # chunk overflow odds are ~2**-33 per chunk; one retry is already rare


class CertMismatch(NssiaError):
    """Metadata does not match its attestation."""


class MetadataMismatch(NssiaError):
    """Presented metadata does not match the recorded proof."""


class DuplicateRegistration(NssiaError):
    """The person (iris) or avatar is already registered."""


class ProofMismatch(NssiaError):
    """Identity proof bundle fails verification."""


class FaceMismatch(NssiaError):
    """Live face capture does not match the enrolled imprint."""


class InsufficientSubkeys(NssiaError):
    """Too few storage servers supplied master-key shares."""


class InsufficientAcks(NssiaError):
    """Not enough storage servers acknowledged the escrow records."""


class InsufficientIRIs(NssiaError):
    """Too few restoration records available to rebuild the escrow."""


class InsufficientRAs(NssiaError):
    """Too few regulators responded with master-key shares."""


class DecryptFailure(NssiaError):
    """Escrow blob did not decrypt to a well-formed metadata record."""


def xor_cyclic(data: bytes, key: bytes) -> bytes:
    """XOR ``data`` with ``key`` repeated to ``data``'s length (self-inverse)."""
    if not key:
        raise ValueError("empty key")
    reps = -(-len(data) // len(key))
    stream = (key * reps)[: len(data)]
    return (int.from_bytes(data, "big") ^ int.from_bytes(stream, "big")).to_bytes(
        len(data), "big"
    )


def make_metadata(name: str, id_number: str, address: str, gender: str) -> bytes:
    """Fixed 256-byte civil record: fields newline-joined, zero-padded."""
    blob = "\n".join((name, id_number, address, gender)).encode("utf-8")
    if len(blob) > METADATA_LEN:
        raise ValueError(f"metadata exceeds {METADATA_LEN} bytes")
    return blob.ljust(METADATA_LEN, b"\x00")


def attest(md: bytes) -> bytes:
    """Stand-in government credential the verifier can recompute."""
    return crypto.digest(_ATTEST_PREFIX + md)


@dataclass(frozen=True)
class IdentityProof:
    """What a person presents at generation: metadata, proof id, face bundle."""

    md: bytes
    tnum: bytes
    face_proof: SignedCiphertext


@dataclass
class NaturalPerson:
    name: str
    md: bytes
    iris: bytes
    face: bytes
    certificates: bytes
    tnum: bytes | None = None
    face_proof: SignedCiphertext | None = None
    avatar: DigitalAvatar | None = None
    avatar_sig: bytes | None = None

    @classmethod
    def enroll(cls, name: str, rng: random.Random) -> "NaturalPerson":
        """A person with random biometrics and plausible civil metadata."""
        md = make_metadata(
            name,
            f"{rng.randrange(10**17, 10**18)}",
            f"{rng.randrange(1, 999)} {rng.choice(('Elm', 'Oak', 'Lake', 'Hill'))} St",
            rng.choice(("F", "M", "X")),
        )
        return cls(
            name=name,
            md=md,
            iris=rng.randbytes(IRIS_LEN),
            face=rng.randbytes(FACE_LEN),
            certificates=attest(md),
        )

    def proof(self) -> IdentityProof:
        if self.tnum is None or self.face_proof is None:
            raise ValueError(f"{self.name} has not completed digitization")
        return IdentityProof(self.md, self.tnum, self.face_proof)

    def live_face(self, noise_fraction: float = 0.0, rng: random.Random | None = None) -> bytes:
        """Simulated capture: the enrolled face with optional bit noise."""
        if noise_fraction == 0.0:
            return self.face
        return add_face_noise(self.face, noise_fraction, rng or random.SystemRandom())


@dataclass(frozen=True)
class SystemParams:
    """Consortium sizing; counts are pinned to 2*threshold - 1."""

    storage_count: int = 5
    storage_threshold: int = 3
    regulator_count: int = 5
    regulator_threshold: int = 3
    escrow_polys: int = 20
    coeff_width: int = 5

    def validate(self) -> None:
        if self.storage_threshold < 1 or self.regulator_threshold < 1:
            raise InvalidThreshold("thresholds must be at least 1")
        if self.storage_count != 2 * self.storage_threshold - 1:
            raise InvalidThreshold(
                f"storage count must be 2t-1, got t={self.storage_threshold} n={self.storage_count}"
            )
        if self.regulator_count != 2 * self.regulator_threshold - 1:
            raise InvalidThreshold(
                f"regulator count must be 2t-1, got t={self.regulator_threshold} n={self.regulator_count}"
            )
        if self.escrow_capacity < crypto.sym_ciphertext_len(METADATA_LEN):
            raise ValueError(
                f"escrow capacity {self.escrow_capacity} cannot hold a "
                f"{crypto.sym_ciphertext_len(METADATA_LEN)}-byte sealed record"
            )

    @property
    def escrow_capacity(self) -> int:
        return self.escrow_polys * self.storage_threshold * self.coeff_width


@dataclass
class StorageServer:
    """Holds one master-key share and the escrow records it is sent."""

    index: int
    keys: KeyPair
    subkey: Share | None = None
    records: dict[bytes, IRI] = dataclass_field(default_factory=dict)
    online: bool = True
    accept_stores: bool = True  # may serve reads yet refuse new records

    def install_subkey(self, sealed_share: bytes) -> None:
        self.subkey = unpack_share(crypto.ec_decrypt(sealed_share, self.keys), SUBKEY_FIELD)

    def sealed_subkey(self, recipient: bytes, rng: random.Random | None = None) -> bytes | None:
        if not self.online or self.subkey is None:
            return None
        return crypto.ec_encrypt(pack_share(self.subkey, SUBKEY_FIELD), recipient, rng)

    def store_record(self, storage_index: bytes, record: IRI) -> bool:
        if not self.online or not self.accept_stores:
            return False
        self.records[storage_index] = record
        return True

    def get_record(self, storage_index: bytes) -> IRI | None:
        if not self.online:
            return None
        return self.records.get(storage_index)


@dataclass
class Regulator:
    """Holds one master-key share; any one of them can drive an audit."""

    index: int
    keys: KeyPair
    subkey: Share | None = None
    responsive: bool = True

    def install_subkey(self, sealed_share: bytes) -> None:
        self.subkey = unpack_share(crypto.ec_decrypt(sealed_share, self.keys), SUBKEY_FIELD)

    def sealed_subkey(self, recipient: bytes, rng: random.Random | None = None) -> bytes | None:
        if not self.responsive or self.subkey is None:
            return None
        return crypto.ec_encrypt(pack_share(self.subkey, SUBKEY_FIELD), recipient, rng)


class MetadataVerifier:
    """Checks civil metadata against its attestation and opens the chain."""

    def __init__(self, keys: KeyPair):
        self.keys = keys

    def register_metadata(
        self, md: bytes, certificates: bytes, ledger: Ledger, collector: bytes
    ) -> bytes:
        if attest(md) != certificates:
            raise CertMismatch("attestation does not match the presented metadata")
        tx = new_transaction(
            TxKind.METADATA_PROOF, self.keys, None, collector, crypto.digest(md)
        )
        ledger.append(tx)
        return tx.tid


class BiometricCollector:
    """Checks the person against the metadata proof and digitizes biometrics."""

    def __init__(self, keys: KeyPair):
        self.keys = keys

    def digitize_biometrics(
        self,
        md: bytes,
        tnum: bytes,
        iris: bytes,
        face: bytes,
        ledger: Ledger,
        generator: bytes,
        rng: random.Random | None = None,
    ) -> SignedCiphertext:
        proof = ledger.get(tnum)
        if proof.kind is not TxKind.METADATA_PROOF or proof.payload != crypto.digest(md):
            raise MetadataMismatch("metadata does not match the recorded proof")
        iris_digest = crypto.digest(iris)
        if ledger.has_iris_proof(iris_digest):
            raise DuplicateRegistration("this iris is already registered")
        tx = new_transaction(TxKind.IRIS_PROOF, self.keys, tnum, generator, iris_digest)
        ledger.append(tx)
        # the face travels masked by the iris digest and sealed for the generator
        sealed = crypto.ec_encrypt(xor_cyclic(face, iris_digest), generator, rng)
        return SignedCiphertext(sealed, crypto.sign(sealed, self.keys))


def escrow_secinfo(
    md: bytes,
    avatar_digest: bytes,
    master_key: bytes,
    params: SystemParams,
    fieldspec: FieldSpec,
    rng: random.Random | None = None,
    max_attempts: int = ESCROW_RETRY_LIMIT,
) -> tuple[bytes, list[IRI], int]:
    """Seal the masked metadata and split it into restoration records.

    Re-encrypts under a fresh IV whenever a ciphertext chunk falls outside
    the escrow field; returns (blob, records, attempts).
    """
    masked = xor_cyclic(md, avatar_digest)
    for attempt in range(1, max_attempts + 1):
        sealed = crypto.sym_encrypt(masked, master_key, rng)
        blob = sealed.ljust(params.escrow_capacity, b"\x00")
        try:
            records = split_secinfo(
                blob,
                params.storage_threshold,
                params.storage_count,
                params.escrow_polys,
                params.coeff_width,
                fieldspec,
                rng=rng,
            )
        except ChunkOverflow:
            continue
        return blob, records, attempt
    raise ChunkOverflow(f"no admissible ciphertext after {max_attempts} attempts")


def open_secinfo(secinfo: bytes, master_key: bytes, avatar_digest: bytes) -> bytes:
    """Inverse of escrow_secinfo's sealing: decrypt, then unmask."""
    sealed_len = crypto.sym_ciphertext_len(METADATA_LEN)
    try:
        masked = crypto.sym_decrypt(secinfo[:sealed_len], master_key)
    except crypto.PaddingError as exc:
        raise DecryptFailure(str(exc)) from exc
    if len(masked) != METADATA_LEN:
        raise DecryptFailure(f"recovered record is {len(masked)} bytes, expected {METADATA_LEN}")
    return xor_cyclic(masked, avatar_digest)


class AvatarGenerator:
    """Re-checks both proofs, assembles the avatar, escrows the identity."""

    def __init__(self, keys: KeyPair, library: CodeModuleLibrary, collector: bytes):
        self.keys = keys
        self.library = library
        self.collector = collector

    def build_avatar(
        self,
        proof: IdentityProof,
        live_face: bytes,
        ledger: Ledger,
        storages: list[StorageServer],
        params: SystemParams,
        fieldspec: FieldSpec,
        rng: random.Random | None = None,
        tolerance: float = 0.0,
    ) -> tuple[DigitalAvatar, bytes]:
        if not crypto.verify(proof.face_proof.ciphertext, proof.face_proof.signature, self.collector):
            raise ProofMismatch("face bundle signature does not verify")
        try:
            masked_face = crypto.ec_decrypt(proof.face_proof.ciphertext, self.keys)
        except crypto.TagMismatch as exc:
            raise ProofMismatch("face bundle does not decrypt") from exc
        metadata_proof = ledger.get(proof.tnum)
        if (
            metadata_proof.kind is not TxKind.METADATA_PROOF
            or metadata_proof.payload != crypto.digest(proof.md)
        ):
            raise ProofMismatch("metadata does not match the recorded proof")
        iris_proof = ledger.find_child(proof.tnum, TxKind.IRIS_PROOF)
        if iris_proof is None:
            raise ProofMismatch("no iris proof extends this metadata proof")
        face = xor_cyclic(masked_face, iris_proof.payload)
        if bit_error_rate(face, live_face) > tolerance:
            raise FaceMismatch("live capture does not match the enrolled face")

        seed = derive_seed(face, SEED_LENGTH, self.library.slot_count)
        avatar = generate_avatar(seed, self.library)
        digest_ = avatar_id(avatar)
        if ledger.has_avatar_record(digest_) or ledger.find_child(iris_proof.tid, TxKind.AVATAR_RECORD):
            raise DuplicateRegistration("an avatar is already recorded for this identity")

        master_key = self._collect_master_key(storages, params, rng)
        _, records, _ = escrow_secinfo(proof.md, digest_, master_key, params, fieldspec, rng)
        storage_index = crypto.digest(digest_ + iris_proof.tid)
        acks = sum(
            1
            for server, record in zip(storages, records)
            if server.store_record(storage_index, record)
        )
        if acks * 2 <= params.storage_count:
            raise InsufficientAcks(
                f"{acks} of {params.storage_count} servers acknowledged the escrow"
            )
        record_tx = new_transaction(
            TxKind.AVATAR_RECORD,
            self.keys,
            iris_proof.tid,
            self.keys.public_bytes,
            digest_ + storage_index,
        )
        ledger.append(record_tx)
        signature = crypto.sign(avatar.canonical_bytes(), self.keys)
        avatar.signature = signature
        avatar.bound_face = face
        return avatar, signature

    def _collect_master_key(
        self, storages: list[StorageServer], params: SystemParams, rng: random.Random | None
    ) -> bytes:
        shares: list[Share] = []
        for server in storages:
            sealed = server.sealed_subkey(self.keys.public_bytes, rng)
            if sealed is None:
                continue
            try:
                shares.append(unpack_share(crypto.ec_decrypt(sealed, self.keys), SUBKEY_FIELD))
            except (crypto.TagMismatch, ValueError):
                continue
            if len(shares) == params.storage_threshold:
                break
        if len(shares) < params.storage_threshold:
            raise InsufficientSubkeys(
                f"{len(shares)} subkeys collected, need {params.storage_threshold}"
            )
        secret = reconstruct_at_zero(shares, SUBKEY_FIELD, threshold=params.storage_threshold)
        return secret.to_bytes(crypto.MASTER_KEY_LEN, "big")


@dataclass(frozen=True)
class AuditResult:
    avatar_digest: bytes
    recovered_metadata: bytes
    audit_tid: bytes


def run_audit(
    auditor: Regulator,
    avatar_digest: bytes,
    ledger: Ledger,
    storages: list[StorageServer],
    regulators: list[Regulator],
    params: SystemParams,
    fieldspec: FieldSpec,
    rng: random.Random | None = None,
) -> AuditResult:
    """Joint recovery of the metadata behind an avatar, leaving an audit trail.

    The audit record is written as soon as the avatar is found, so even a
    recovery that later fails (offline servers, unresponsive peers) is on the
    ledger.
    """
    storage_index = ledger.find_storage_index(avatar_digest)
    audit_tx = new_transaction(
        TxKind.AUDIT_RECORD,
        auditor.keys,
        ledger.last_audit_record().tid if ledger.last_audit_record() else None,
        auditor.keys.public_bytes,
        make_timestamp() + avatar_digest,
    )
    ledger.append(audit_tx)

    records = []
    for server in storages:
        record = server.get_record(storage_index)
        if record is not None:
            records.append(record)
        if len(records) == params.storage_threshold:
            break
    if len(records) < params.storage_threshold:
        raise InsufficientIRIs(
            f"{len(records)} restoration records available, need {params.storage_threshold}"
        )
    secinfo = reconstruct_secinfo(
        records, params.storage_threshold, params.escrow_polys, params.coeff_width, fieldspec
    )

    if auditor.subkey is None:
        raise InsufficientRAs("auditor holds no subkey")
    shares = [auditor.subkey]
    for peer in regulators:
        if peer is auditor:
            continue
        sealed = peer.sealed_subkey(auditor.keys.public_bytes, rng)
        if sealed is None:
            continue
        try:
            shares.append(unpack_share(crypto.ec_decrypt(sealed, auditor.keys), SUBKEY_FIELD))
        except (crypto.TagMismatch, ValueError):
            continue
        if len(shares) == params.regulator_threshold:
            break
    if len(shares) < params.regulator_threshold:
        raise InsufficientRAs(
            f"{len(shares)} regulator subkeys gathered, need {params.regulator_threshold}"
        )
    secret = reconstruct_at_zero(shares, SUBKEY_FIELD, threshold=params.regulator_threshold)
    master_key = secret.to_bytes(crypto.MASTER_KEY_LEN, "big")
    metadata = open_secinfo(secinfo, master_key, avatar_digest)
    return AuditResult(avatar_digest, metadata, audit_tx.tid)


@dataclass(frozen=True)
class BehaviorEntry:
    subject: str
    action: str
    timestamp: str


class BehaviorLog:
    """Append-only record of avatar actions; no interaction semantics yet."""

    def __init__(self, entries: list[BehaviorEntry] | None = None):
        self._entries: list[BehaviorEntry] = list(entries or [])

    def append(self, subject: str, action: str) -> int:
        self._entries.append(
            BehaviorEntry(subject, action, make_timestamp().decode("ascii"))
        )
        return len(self._entries) - 1

    def for_subject(self, subject: str) -> list[BehaviorEntry]:
        return [e for e in self._entries if e.subject == subject]

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)


@dataclass
class NssiaSystem:
    """A wired consortium: entities, ledger, behavior log, and randomness."""

    params: SystemParams
    public_params: PublicParams
    ledger: Ledger
    verifier: MetadataVerifier
    collector: BiometricCollector
    generator: AvatarGenerator
    storages: list[StorageServer]
    regulators: list[Regulator]
    behavior: BehaviorLog
    fieldspec: FieldSpec
    rng: random.Random

    def digitize(self, person: NaturalPerson) -> tuple[bytes, SignedCiphertext]:
        tnum = self.verifier.register_metadata(
            person.md, person.certificates, self.ledger, self.collector.keys.public_bytes
        )
        bundle = self.collector.digitize_biometrics(
            person.md,
            tnum,
            person.iris,
            person.face,
            self.ledger,
            self.generator.keys.public_bytes,
            self.rng,
        )
        person.tnum, person.face_proof = tnum, bundle
        return tnum, bundle

    def generate(
        self,
        person: NaturalPerson,
        proof: IdentityProof | None = None,
        live_face: bytes | None = None,
        tolerance: float = 0.0,
    ) -> tuple[DigitalAvatar, bytes]:
        avatar, signature = self.generator.build_avatar(
            proof or person.proof(),
            person.face if live_face is None else live_face,
            self.ledger,
            self.storages,
            self.params,
            self.fieldspec,
            self.rng,
            tolerance,
        )
        person.avatar, person.avatar_sig = avatar, signature
        return avatar, signature

    def audit(self, regulator_index: int, avatar_digest: bytes) -> AuditResult:
        """Audit driven by the 1-based ``regulator_index``."""
        if not 1 <= regulator_index <= len(self.regulators):
            raise ValueError(f"regulator index out of range: {regulator_index}")
        return run_audit(
            self.regulators[regulator_index - 1],
            avatar_digest,
            self.ledger,
            self.storages,
            self.regulators,
            self.params,
            self.fieldspec,
            self.rng,
        )

    def log_behavior(self, subject: str, action: str) -> int:
        return self.behavior.append(subject, action)


def system_init(
    params: SystemParams | None = None,
    *,
    rng: random.Random | None = None,
    library: CodeModuleLibrary | None = None,
) -> NssiaSystem:
    """Stand up a consortium: keys, master key split twice, shares delivered.

    The master key never persists; it is split for the storage servers and
    for the regulators, delivered sealed to each holder, and dropped.
    """
    params = params or SystemParams()
    params.validate()
    rng = rng or random.SystemRandom()
    library = library or default_library()
    fieldspec = escrow_field(params.coeff_width)

    ledger = Ledger()
    verifier = MetadataVerifier(KeyPair.generate(rng))
    collector = BiometricCollector(KeyPair.generate(rng))
    generator = AvatarGenerator(KeyPair.generate(rng), library, collector.keys.public_bytes)
    storages = [StorageServer(i + 1, KeyPair.generate(rng)) for i in range(params.storage_count)]
    regulators = [Regulator(i + 1, KeyPair.generate(rng)) for i in range(params.regulator_count)]

    master_key = crypto.new_master_key(rng)
    secret = int.from_bytes(master_key, "big")
    xs = rng.sample(range(1, 256), params.storage_count + params.regulator_count)
    storage_shares = split_secret(
        secret,
        params.storage_threshold,
        params.storage_count,
        SUBKEY_FIELD,
        rng=rng,
        xs=xs[: params.storage_count],
    )
    regulator_shares = split_secret(
        secret,
        params.regulator_threshold,
        params.regulator_count,
        SUBKEY_FIELD,
        rng=rng,
        xs=xs[params.storage_count :],
    )
    for holder, share in zip(storages + regulators, storage_shares + regulator_shares):
        holder.install_subkey(
            crypto.ec_encrypt(pack_share(share, SUBKEY_FIELD), holder.keys.public_bytes, rng)
        )

    return NssiaSystem(
        params=params,
        public_params=PublicParams.secp256k1(),
        ledger=ledger,
        verifier=verifier,
        collector=collector,
        generator=generator,
        storages=storages,
        regulators=regulators,
        behavior=BehaviorLog(),
        fieldspec=fieldspec,
        rng=rng,
    )
