"""Ledger: linked transaction kinds, validation, journal codec."""

import base64
import random
from datetime import datetime, timezone

import pytest

from nssia.crypto import KeyPair, PUBLIC_KEY_LEN, SIGNATURE_LEN
from nssia.ledger import (
    PAYLOAD_LENGTHS,
    TIMESTAMP_LEN,
    Ambiguous,
    BadLinkage,
    BadPayloadLength,
    BadSignature,
    DuplicateTid,
    JournalError,
    Ledger,
    NotFound,
    Transaction,
    TxKind,
    make_timestamp,
    new_transaction,
)

RNG = random.Random(1000)
SIGNER = KeyPair.generate(RNG)
OTHER = KeyPair.generate(RNG)


def _metadata_proof(payload=None):
    return new_transaction(
        TxKind.METADATA_PROOF, SIGNER, None, OTHER.public_bytes, payload or RNG.randbytes(20)
    )


def _chain(ledger):
    """One full identity chain; returns (tm, ti, tda)."""
    tm = _metadata_proof()
    ledger.append(tm)
    ti = new_transaction(TxKind.IRIS_PROOF, SIGNER, tm.tid, OTHER.public_bytes, RNG.randbytes(20))
    ledger.append(ti)
    tda = new_transaction(
        TxKind.AVATAR_RECORD, SIGNER, ti.tid, SIGNER.public_bytes, RNG.randbytes(40)
    )
    ledger.append(tda)
    return tm, ti, tda


def test_payload_length_table():
    assert PAYLOAD_LENGTHS[TxKind.METADATA_PROOF] == 20
    assert PAYLOAD_LENGTHS[TxKind.IRIS_PROOF] == 20
    assert PAYLOAD_LENGTHS[TxKind.AVATAR_RECORD] == 40
    assert PAYLOAD_LENGTHS[TxKind.AUDIT_RECORD] == 34


def test_timestamp_form():
    stamp = make_timestamp()
    assert len(stamp) == TIMESTAMP_LEN and stamp.isdigit()


def test_append_and_get():
    ledger = Ledger()
    tm = _metadata_proof()
    assert ledger.append(tm) == 0
    assert ledger.get(tm.tid) is tm
    assert len(ledger) == 1
    with pytest.raises(NotFound):
        ledger.get(bytes(32))


def test_identity_chain_accounting():
    ledger = Ledger()
    _chain(ledger)
    totals = ledger.payload_byte_totals()
    on_chain = sum(totals.values())
    assert on_chain == 80
    # one identity's ledger cost: chain payloads plus one audit timestamp allowance
    assert on_chain + len(make_timestamp()) == 94


def test_audit_records_form_their_own_chain():
    ledger = Ledger()
    _, _, tda = _chain(ledger)
    avatar_digest = tda.payload[:20]
    first = new_transaction(
        TxKind.AUDIT_RECORD, SIGNER, None, SIGNER.public_bytes, make_timestamp() + avatar_digest
    )
    ledger.append(first)
    second = new_transaction(
        TxKind.AUDIT_RECORD, SIGNER, first.tid, SIGNER.public_bytes, make_timestamp() + avatar_digest
    )
    ledger.append(second)
    assert ledger.last_audit_record() is second
    assert len(second.payload) == 34
    # a third record skipping the tip is refused
    stale = new_transaction(
        TxKind.AUDIT_RECORD,
        SIGNER,
        first.tid,
        SIGNER.public_bytes,
        make_timestamp(datetime(2031, 1, 2, 3, 4, 5, tzinfo=timezone.utc)) + avatar_digest,
    )
    with pytest.raises(BadLinkage):
        ledger.append(stale)


def test_linkage_rules():
    ledger = Ledger()
    tm = _metadata_proof()
    ledger.append(tm)
    # metadata proofs head a chain
    with pytest.raises(BadLinkage):
        ledger.append(
            new_transaction(TxKind.METADATA_PROOF, SIGNER, tm.tid, OTHER.public_bytes, bytes(20))
        )
    # iris proof must extend a metadata proof
    with pytest.raises(BadLinkage):
        ledger.append(
            new_transaction(TxKind.IRIS_PROOF, SIGNER, None, OTHER.public_bytes, bytes(20))
        )
    with pytest.raises(BadLinkage):
        ledger.append(
            new_transaction(TxKind.IRIS_PROOF, SIGNER, bytes(32), OTHER.public_bytes, bytes(20))
        )
    ti = new_transaction(TxKind.IRIS_PROOF, SIGNER, tm.tid, OTHER.public_bytes, bytes(20))
    ledger.append(ti)
    # avatar record must extend the iris proof, not the metadata proof
    with pytest.raises(BadLinkage):
        ledger.append(
            new_transaction(TxKind.AVATAR_RECORD, SIGNER, tm.tid, SIGNER.public_bytes, bytes(40))
        )


def test_payload_length_enforced():
    ledger = Ledger()
    tm = _metadata_proof()
    ledger.append(tm)
    ti = new_transaction(TxKind.IRIS_PROOF, SIGNER, tm.tid, OTHER.public_bytes, bytes(20))
    ledger.append(ti)
    with pytest.raises(BadPayloadLength):
        ledger.append(
            new_transaction(TxKind.AVATAR_RECORD, SIGNER, ti.tid, SIGNER.public_bytes, bytes(39))
        )


def test_bad_signature_rejected():
    ledger = Ledger()
    tm = _metadata_proof()
    forged = Transaction(
        kind=tm.kind,
        tid=tm.tid,
        input_address=tm.input_address,
        prev_tid=tm.prev_tid,
        output_address=tm.output_address,
        payload=tm.payload,
        signature=bytes([tm.signature[0] ^ 1]) + tm.signature[1:],
    )
    with pytest.raises(BadSignature):
        ledger.append(forged)


def test_duplicate_tid_rejected():
    ledger = Ledger()
    tm = _metadata_proof()
    ledger.append(tm)
    with pytest.raises(DuplicateTid):
        ledger.append(tm)


def test_storage_index_lookup():
    ledger = Ledger()
    _, _, tda = _chain(ledger)
    avatar_digest, storage_index = tda.payload[:20], tda.payload[20:]
    assert ledger.find_storage_index(avatar_digest) == storage_index
    assert ledger.has_avatar_record(avatar_digest)
    with pytest.raises(NotFound):
        ledger.find_storage_index(bytes(20))


def test_storage_index_ambiguity_detected():
    # duplicate avatar records cannot be appended, but a corrupt journal may carry them
    ledger = Ledger()
    _, _, tda = _chain(ledger)
    twin = Transaction(
        kind=tda.kind,
        tid=RNG.randbytes(32),
        input_address=tda.input_address,
        prev_tid=tda.prev_tid,
        output_address=tda.output_address,
        payload=tda.payload,
        signature=tda.signature,
    )
    ledger._insert(twin)
    with pytest.raises(Ambiguous):
        ledger.find_storage_index(tda.payload[:20])


def test_find_child_and_iris_index():
    ledger = Ledger()
    tm, ti, tda = _chain(ledger)
    assert ledger.find_child(tm.tid, TxKind.IRIS_PROOF) is ti
    assert ledger.find_child(ti.tid, TxKind.AVATAR_RECORD) is tda
    assert ledger.find_child(ti.tid, TxKind.IRIS_PROOF) is None
    assert ledger.has_iris_proof(ti.payload)
    assert not ledger.has_iris_proof(bytes(20))


def test_verify_chain_healthy():
    ledger = Ledger()
    _chain(ledger)
    _chain(ledger)
    assert ledger.verify_chain() == []


def test_verify_chain_reports_each_fault_once():
    ledger = Ledger()
    tm, ti, tda = _chain(ledger)
    # corrupt the iris proof's signature in place
    bad_sig = Transaction(
        kind=ti.kind,
        tid=ti.tid,
        input_address=ti.input_address,
        prev_tid=ti.prev_tid,
        output_address=ti.output_address,
        payload=ti.payload,
        signature=bytes(SIGNATURE_LEN),
    )
    ledger._txs[1] = bad_sig
    findings = ledger.verify_chain()
    assert [f.code for f in findings] == ["bad-signature"]
    assert findings[0].position == 1


def test_verify_chain_linkage_fault():
    ledger = Ledger()
    tm, ti, tda = _chain(ledger)
    ledger._txs[1], ledger._txs[2] = ledger._txs[2], ledger._txs[1]  # avatar record now precedes iris proof
    findings = ledger.verify_chain()
    assert [f.code for f in findings] == ["bad-linkage"]


def test_journal_round_trip(tmp_path):
    ledger = Ledger()
    _chain(ledger)
    tda = ledger._txs[2]
    first = new_transaction(
        TxKind.AUDIT_RECORD, SIGNER, None, SIGNER.public_bytes, make_timestamp() + tda.payload[:20]
    )
    ledger.append(first)
    path = tmp_path / "ledger.journal"
    ledger.save(path)
    loaded = Ledger.load(path)
    assert list(loaded) == list(ledger)
    assert loaded.verify_chain() == []
    assert loaded.last_audit_record() == first
    assert loaded.find_storage_index(tda.payload[:20]) == tda.payload[20:]


def test_journal_record_layout(tmp_path):
    ledger = Ledger()
    tm = _metadata_proof()
    ledger.append(tm)
    path = tmp_path / "ledger.journal"
    ledger.save(path)
    record = base64.b64decode(path.read_text().splitlines()[0])
    assert record[0] == 1  # kind code
    assert record[1:33] == tm.tid
    assert record[33 : 33 + PUBLIC_KEY_LEN] == tm.input_address
    assert record[66:98] == bytes(32)  # headless chain: zero predecessor
    length = int.from_bytes(record[131:133], "big")
    assert length == 20
    assert record[133:153] == tm.payload
    assert record[153:] == tm.signature


def test_journal_empty_and_corrupt(tmp_path):
    path = tmp_path / "ledger.journal"
    Ledger().save(path)
    assert list(Ledger.load(path)) == []
    path.write_text("!!! not base64 !!!\n")
    with pytest.raises(JournalError):
        Ledger.load(path)
    path.write_text(base64.b64encode(b"too short").decode() + "\n")
    with pytest.raises(JournalError):
        Ledger.load(path)


def test_journal_preserves_corruption_for_verify(tmp_path):
    ledger = Ledger()
    tm, ti, _ = _chain(ledger)
    path = tmp_path / "ledger.journal"
    ledger.save(path)
    # flip one byte inside the first record's signature region
    lines = path.read_text().splitlines()
    record = bytearray(base64.b64decode(lines[0]))
    record[-1] ^= 0x01
    lines[0] = base64.b64encode(bytes(record)).decode()
    path.write_text("\n".join(lines) + "\n")
    loaded = Ledger.load(path)  # loads fine
    findings = loaded.verify_chain()
    assert [f.code for f in findings] == ["bad-signature"]
    assert findings[0].position == 0
