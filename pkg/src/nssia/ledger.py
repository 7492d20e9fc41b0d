"""Consortium ledger: four linked transaction kinds with signed bodies.

Metadata proofs (TM) open an identity chain, iris proofs (TI) extend it,
avatar records (TDA) close registration, and audit records (TA) form their
own linear chain. Appends are validated; journals load unvalidated so that
``verify_chain`` can report corruption instead of refusing to parse.
"""

from __future__ import annotations

import base64
import enum
import hashlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import crypto
from .crypto import KeyPair
from .errors import NssiaError

TID_LEN = 32
ZERO_TID = bytes(TID_LEN)
TIMESTAMP_LEN = 14  # ASCII YYYYMMDDHHMMSS, UTC


class TxKind(enum.Enum):
    METADATA_PROOF = 1
    IRIS_PROOF = 2
    AVATAR_RECORD = 3
    AUDIT_RECORD = 4


PAYLOAD_LENGTHS = {
    TxKind.METADATA_PROOF: crypto.DIGEST_LEN,
    TxKind.IRIS_PROOF: crypto.DIGEST_LEN,
    TxKind.AVATAR_RECORD: 2 * crypto.DIGEST_LEN,
    TxKind.AUDIT_RECORD: TIMESTAMP_LEN + crypto.DIGEST_LEN,
}

# each kind must extend a transaction of this kind (None = chain head)
_PREV_KIND = {
    TxKind.METADATA_PROOF: None,
    TxKind.IRIS_PROOF: TxKind.METADATA_PROOF,
    TxKind.AVATAR_RECORD: TxKind.IRIS_PROOF,
    TxKind.AUDIT_RECORD: TxKind.AUDIT_RECORD,
}


class NotFound(NssiaError):
    """No transaction matches the query."""


class Ambiguous(NssiaError):
    """More than one transaction matches a query that must be unique."""


class BadSignature(NssiaError):
    """Transaction signature does not verify under its input address."""


class BadLinkage(NssiaError):
    """Transaction does not extend the kind of predecessor it must."""


class DuplicateTid(NssiaError):
    """A transaction with this id is already on the ledger."""


class BadPayloadLength(NssiaError):
    """Payload size does not match the transaction kind."""


class JournalError(NssiaError):
    """Journal file is not parseable."""


def make_timestamp(now: datetime | None = None) -> bytes:
    """UTC wall clock as 14 ASCII digits, YYYYMMDDHHMMSS."""
    dt = now or datetime.now(timezone.utc)
    return dt.strftime("%Y%m%d%H%M%S").encode("ascii")


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    tid: bytes
    input_address: bytes  # signer's compressed public key
    prev_tid: bytes | None
    output_address: bytes
    payload: bytes
    signature: bytes
    in_script: bytes | None = None  # reserved slot; never set by the four kinds

    def signing_bytes(self) -> bytes:
        return (
            self.tid
            + self.input_address
            + (self.prev_tid or ZERO_TID)
            + self.output_address
            + self.payload
        )


def _body(kind: TxKind, input_address: bytes, prev_tid: bytes | None, output_address: bytes, payload: bytes) -> bytes:
    return bytes([kind.value]) + input_address + (prev_tid or ZERO_TID) + output_address + payload


def new_transaction(
    kind: TxKind,
    signer: KeyPair,
    prev_tid: bytes | None,
    output_address: bytes,
    payload: bytes,
) -> Transaction:
    """Build and sign a transaction; the id commits to the full body."""
    tid = hashlib.sha256(_body(kind, signer.public_bytes, prev_tid, output_address, payload)).digest()
    signing = tid + signer.public_bytes + (prev_tid or ZERO_TID) + output_address + payload
    return Transaction(
        kind=kind,
        tid=tid,
        input_address=signer.public_bytes,
        prev_tid=prev_tid,
        output_address=output_address,
        payload=payload,
        signature=crypto.sign(signing, signer),
    )


@dataclass(frozen=True)
class Finding:
    """One integrity problem located by verify_chain."""

    position: int
    tid: bytes
    code: str  # duplicate-tid | bad-payload-length | bad-linkage | bad-signature
    message: str


_ERROR_FOR_CODE = {
    "duplicate-tid": DuplicateTid,
    "bad-payload-length": BadPayloadLength,
    "bad-linkage": BadLinkage,
    "bad-signature": BadSignature,
}


class Ledger:
    """Append-only validated transaction log with id and avatar indexes."""

    def __init__(self):
        self._txs: list[Transaction] = []
        self._positions: dict[bytes, int] = {}
        self._avatar_records: dict[bytes, list[int]] = {}
        self._children: dict[tuple[bytes, TxKind], int] = {}
        self._iris_digests: set[bytes] = set()
        self._last_audit: Transaction | None = None

    def __len__(self) -> int:
        return len(self._txs)

    def __iter__(self):
        return iter(self._txs)

    def get(self, tid: bytes) -> Transaction:
        pos = self._positions.get(tid)
        if pos is None:
            raise NotFound(f"no transaction {tid.hex()}")
        return self._txs[pos]

    def append(self, tx: Transaction) -> int:
        """Validate and add ``tx``; returns its position."""
        problem = self._check_tx(tx, lambda tid: self._lookup(tid))
        if problem is None and tx.kind is TxKind.AUDIT_RECORD:
            # appends must extend the latest audit record, not just any earlier one
            expected = self._last_audit.tid if self._last_audit else None
            if tx.prev_tid != expected:
                problem = ("bad-linkage", "audit record must extend the latest audit record")
        if problem is not None:
            code, message = problem
            raise _ERROR_FOR_CODE[code](message)
        return self._insert(tx)

    def _lookup(self, tid: bytes):
        pos = self._positions.get(tid)
        return None if pos is None else (pos, self._txs[pos])

    def _insert(self, tx: Transaction) -> int:
        position = len(self._txs)
        self._txs.append(tx)
        self._positions.setdefault(tx.tid, position)
        if tx.kind is TxKind.AVATAR_RECORD:
            avatar_id = tx.payload[: crypto.DIGEST_LEN]
            self._avatar_records.setdefault(avatar_id, []).append(position)
        if tx.kind is TxKind.IRIS_PROOF:
            self._iris_digests.add(tx.payload)
        if tx.kind is TxKind.AUDIT_RECORD:
            self._last_audit = tx
        if tx.prev_tid is not None:
            self._children.setdefault((tx.prev_tid, tx.kind), position)
        return position

    def _check_tx(self, tx: Transaction, lookup) -> tuple[str, str] | None:
        """First failed check wins, so one corrupted record yields one finding."""
        if lookup(tx.tid) is not None:
            return ("duplicate-tid", f"transaction {tx.tid.hex()} already recorded")
        expected = PAYLOAD_LENGTHS[tx.kind]
        if len(tx.payload) != expected:
            return (
                "bad-payload-length",
                f"{tx.kind.name} payload must be {expected} bytes, got {len(tx.payload)}",
            )
        required = _PREV_KIND[tx.kind]
        if required is None:
            if tx.prev_tid is not None:
                return ("bad-linkage", f"{tx.kind.name} must not reference a predecessor")
        elif tx.kind is TxKind.AUDIT_RECORD:
            if tx.prev_tid is not None:  # first audit record opens the chain
                prev = lookup(tx.prev_tid)
                if prev is None or prev[1].kind is not TxKind.AUDIT_RECORD:
                    return ("bad-linkage", "audit record must extend an audit record")
        else:
            if tx.prev_tid is None:
                return ("bad-linkage", f"{tx.kind.name} requires a predecessor")
            prev = lookup(tx.prev_tid)
            if prev is None:
                return ("bad-linkage", f"predecessor {tx.prev_tid.hex()} not on the ledger")
            if prev[1].kind is not required:
                return (
                    "bad-linkage",
                    f"{tx.kind.name} must extend {required.name}, found {prev[1].kind.name}",
                )
        if len(tx.signature) != crypto.SIGNATURE_LEN or not crypto.verify(
            tx.signing_bytes(), tx.signature, tx.input_address
        ):
            return ("bad-signature", f"signature of {tx.tid.hex()} does not verify")
        return None

    def verify_chain(self) -> list[Finding]:
        """Re-validate every transaction; returns one finding per bad record."""
        findings: list[Finding] = []
        seen: dict[bytes, tuple[int, Transaction]] = {}
        for pos, tx in enumerate(self._txs):
            problem = self._check_tx(tx, seen.get)
            if problem is not None:
                findings.append(Finding(pos, tx.tid, *problem))
            seen.setdefault(tx.tid, (pos, tx))
        return findings

    # -- queries ----------------------------------------------------------

    def find_storage_index(self, avatar_id: bytes) -> bytes:
        """Storage index recorded for an avatar; unique by construction."""
        positions = self._avatar_records.get(avatar_id, [])
        if not positions:
            raise NotFound(f"no avatar record for {avatar_id.hex()}")
        if len(positions) > 1:
            raise Ambiguous(f"{len(positions)} avatar records for {avatar_id.hex()}")
        return self._txs[positions[0]].payload[crypto.DIGEST_LEN :]

    def has_avatar_record(self, avatar_id: bytes) -> bool:
        return bool(self._avatar_records.get(avatar_id))

    def find_child(self, prev_tid: bytes, kind: TxKind) -> Transaction | None:
        pos = self._children.get((prev_tid, kind))
        return None if pos is None else self._txs[pos]

    def has_iris_proof(self, iris_digest: bytes) -> bool:
        return iris_digest in self._iris_digests

    def last_audit_record(self) -> Transaction | None:
        return self._last_audit

    def count(self, kind: TxKind) -> int:
        return sum(1 for tx in self._txs if tx.kind is kind)

    def payload_byte_totals(self) -> dict[TxKind, int]:
        totals = {kind: 0 for kind in TxKind}
        for tx in self._txs:
            totals[tx.kind] += len(tx.payload)
        return totals

    # -- journal ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """One base64 line per transaction, append order preserved."""
        lines = []
        for tx in self._txs:
            record = (
                bytes([tx.kind.value])
                + tx.tid
                + tx.input_address
                + (tx.prev_tid or ZERO_TID)
                + tx.output_address
                + len(tx.payload).to_bytes(2, "big")
                + tx.payload
                + tx.signature
            )
            lines.append(base64.b64encode(record).decode("ascii"))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path: str | Path) -> "Ledger":
        """Parse a journal without validating; run verify_chain afterwards."""
        ledger = cls()
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                ledger._insert(_parse_record(base64.b64decode(line, validate=True)))
            except (ValueError, KeyError, IndexError) as exc:
                raise JournalError(f"{path}: line {lineno}: {exc}") from exc
        return ledger


def _parse_record(record: bytes) -> Transaction:
    fixed = 1 + TID_LEN + crypto.PUBLIC_KEY_LEN + TID_LEN + crypto.PUBLIC_KEY_LEN + 2
    if len(record) < fixed + crypto.SIGNATURE_LEN:
        raise ValueError(f"record too short ({len(record)} bytes)")
    kind = TxKind(record[0])
    off = 1
    tid = record[off : off + TID_LEN]
    off += TID_LEN
    input_address = record[off : off + crypto.PUBLIC_KEY_LEN]
    off += crypto.PUBLIC_KEY_LEN
    prev = record[off : off + TID_LEN]
    off += TID_LEN
    output_address = record[off : off + crypto.PUBLIC_KEY_LEN]
    off += crypto.PUBLIC_KEY_LEN
    payload_len = int.from_bytes(record[off : off + 2], "big")
    off += 2
    if len(record) != fixed + payload_len + crypto.SIGNATURE_LEN:
        raise ValueError(f"record length {len(record)} does not match payload length {payload_len}")
    payload = record[off : off + payload_len]
    signature = record[off + payload_len :]
    return Transaction(
        kind=kind,
        tid=tid,
        input_address=input_address,
        prev_tid=None if prev == ZERO_TID else prev,
        output_address=output_address,
        payload=payload,
        signature=signature,
    )
