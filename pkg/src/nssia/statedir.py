"""State-directory persistence for CLI runs.

Layout under the root:

    config.json        consortium sizing and the init seed
    library.json       code-module templates
    keys/*.key         entity secret scalars (hex, one file per entity)
    shares/*.share     sealed-at-rest master-key shares (raw share bytes)
    ledger.journal     one base64 transaction per line
    store/*.json       per-server escrow records
    users/*.json       enrolled people (no key material)
    avatars/*.da       packed avatar files
    behavior.json      behavior log entries
    timings.json       cumulative per-phase seconds and op counts
"""

from __future__ import annotations

import base64
import json
import random
from dataclasses import dataclass
from pathlib import Path

from .avatar import CodeModuleLibrary, default_library, pack_avatar, unpack_avatar
from .crypto import KeyPair, PublicParams, SignedCiphertext
from .ledger import Ledger
from .protocol import (
    AvatarGenerator,
    BehaviorEntry,
    BehaviorLog,
    BiometricCollector,
    MetadataVerifier,
    NaturalPerson,
    NssiaSystem,
    Regulator,
    StorageServer,
    SystemParams,
    system_init,
)
from .shamir import SUBKEY_FIELD, escrow_field, pack_iri, pack_share, unpack_iri, unpack_share

PHASES = ("digitization", "generation", "accountability")

# external config keys <-> internal sizing fields
_PARAM_KEYS = (
    ("n1", "storage_count"),
    ("t1", "storage_threshold"),
    ("n2", "regulator_count"),
    ("t2", "regulator_threshold"),
    ("n", "escrow_polys"),
    ("b", "coeff_width"),
)


def params_to_config(params: SystemParams) -> dict:
    return {key: getattr(params, attr) for key, attr in _PARAM_KEYS}


def params_from_config(config: dict) -> SystemParams:
    defaults = SystemParams()
    kwargs = {attr: int(config.get(key, getattr(defaults, attr))) for key, attr in _PARAM_KEYS}
    return SystemParams(**kwargs)


@dataclass
class SimulationState:
    root: Path
    system: NssiaSystem
    people: dict[str, NaturalPerson]
    timings: dict[str, dict[str, float]]
    seed: int | None = None


def _zero_timings() -> dict[str, dict[str, float]]:
    return {phase: {"seconds": 0.0, "ops": 0} for phase in PHASES}


def state_initialized(root: Path) -> bool:
    return (Path(root) / "config.json").is_file()


def _entity_names(params: SystemParams) -> list[str]:
    names = ["verifier", "collector", "generator"]
    names += [f"storage{i + 1}" for i in range(params.storage_count)]
    names += [f"regulator{i + 1}" for i in range(params.regulator_count)]
    return names


def init_state(
    root: Path,
    params: SystemParams | None = None,
    seed: int | None = None,
    library: CodeModuleLibrary | None = None,
    force: bool = False,
) -> SimulationState:
    """Create a fresh consortium under ``root``; refuses to clobber one."""
    root = Path(root)
    if state_initialized(root) and not force:
        raise FileExistsError(f"{root} is already initialized (use force to reset)")
    params = params or SystemParams()
    rng = random.Random(seed) if seed is not None else random.SystemRandom()
    system = system_init(params, rng=rng, library=library)

    for sub in ("keys", "shares", "store", "users", "avatars", "reports"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(
        json.dumps({"params": params_to_config(params), "seed": seed}, indent=2) + "\n"
    )
    _save_library(root, system.generator.library)

    entities = [system.verifier, system.collector, system.generator]
    entities += system.storages + system.regulators
    for name, entity in zip(_entity_names(params), entities):
        (root / "keys" / f"{name}.key").write_text(format(entity.keys.secret_scalar, "x") + "\n")
    for holder, name in zip(
        system.storages + system.regulators,
        _entity_names(params)[3:],
    ):
        (root / "shares" / f"{name}.share").write_bytes(pack_share(holder.subkey, SUBKEY_FIELD))

    state = SimulationState(root=root, system=system, people={}, timings=_zero_timings(), seed=seed)
    save_state(state)
    return state


def _save_library(root: Path, library: CodeModuleLibrary) -> None:
    data = {
        "slots": [
            [base64.b64encode(t).decode("ascii") for t in slot] for slot in library.slots
        ]
    }
    (root / "library.json").write_text(json.dumps(data) + "\n")


def _load_library(root: Path) -> CodeModuleLibrary:
    data = json.loads((root / "library.json").read_text())
    return CodeModuleLibrary(
        tuple(tuple(base64.b64decode(t) for t in slot) for slot in data["slots"])
    )


def load_library_file(path: Path) -> CodeModuleLibrary:
    """Library from a user-supplied JSON file: {"slots": [[base64, ...], ...]}."""
    data = json.loads(Path(path).read_text())
    return CodeModuleLibrary(
        tuple(tuple(base64.b64decode(t) for t in slot) for slot in data["slots"])
    )


def save_state(state: SimulationState) -> None:
    """Persist everything that changes during a run; keys never change."""
    root = state.root
    system = state.system
    system.ledger.save(root / "ledger.journal")
    for server in system.storages:
        records = {
            index.hex(): base64.b64encode(pack_iri(record, system.params.coeff_width)).decode()
            for index, record in server.records.items()
        }
        (root / "store" / f"storage{server.index}.json").write_text(
            json.dumps(records, indent=0) + "\n"
        )
    for person in state.people.values():
        _save_person(root, person)
    entries = [
        {"subject": e.subject, "action": e.action, "timestamp": e.timestamp}
        for e in system.behavior
    ]
    (root / "behavior.json").write_text(json.dumps(entries, indent=2) + "\n")
    (root / "timings.json").write_text(json.dumps(state.timings, indent=2) + "\n")


def _save_person(root: Path, person: NaturalPerson) -> None:
    record = {
        "name": person.name,
        "md": base64.b64encode(person.md).decode(),
        "iris": base64.b64encode(person.iris).decode(),
        "face": base64.b64encode(person.face).decode(),
        "certificates": base64.b64encode(person.certificates).decode(),
        "tnum": person.tnum.hex() if person.tnum else None,
        "face_proof": None
        if person.face_proof is None
        else {
            "ciphertext": base64.b64encode(person.face_proof.ciphertext).decode(),
            "signature": base64.b64encode(person.face_proof.signature).decode(),
        },
    }
    (root / "users" / f"{person.name}.json").write_text(json.dumps(record, indent=2) + "\n")
    if person.avatar is not None:
        (root / "avatars" / f"{person.name}.da").write_bytes(pack_avatar(person.avatar))


def _load_person(root: Path, path: Path) -> NaturalPerson:
    record = json.loads(path.read_text())
    proof = record.get("face_proof")
    person = NaturalPerson(
        name=record["name"],
        md=base64.b64decode(record["md"]),
        iris=base64.b64decode(record["iris"]),
        face=base64.b64decode(record["face"]),
        certificates=base64.b64decode(record["certificates"]),
        tnum=bytes.fromhex(record["tnum"]) if record.get("tnum") else None,
        face_proof=None
        if proof is None
        else SignedCiphertext(
            base64.b64decode(proof["ciphertext"]), base64.b64decode(proof["signature"])
        ),
    )
    avatar_path = root / "avatars" / f"{person.name}.da"
    if avatar_path.is_file():
        person.avatar = unpack_avatar(avatar_path.read_bytes())
        person.avatar_sig = person.avatar.signature
    return person


def load_state(root: Path, rng: random.Random | None = None) -> SimulationState:
    """Rebuild a consortium from disk; ``rng`` drives the resumed run."""
    root = Path(root)
    if not state_initialized(root):
        raise FileNotFoundError(f"{root} holds no initialized state (run init first)")
    config = json.loads((root / "config.json").read_text())
    params = params_from_config(config["params"])
    params.validate()
    library = _load_library(root)

    def keypair(name: str) -> KeyPair:
        scalar = int((root / "keys" / f"{name}.key").read_text().strip(), 16)
        return KeyPair.from_scalar(scalar)

    verifier = MetadataVerifier(keypair("verifier"))
    collector = BiometricCollector(keypair("collector"))
    generator = AvatarGenerator(keypair("generator"), library, collector.keys.public_bytes)
    storages = [
        StorageServer(i + 1, keypair(f"storage{i + 1}")) for i in range(params.storage_count)
    ]
    regulators = [
        Regulator(i + 1, keypair(f"regulator{i + 1}")) for i in range(params.regulator_count)
    ]
    for holder, name in zip(storages + regulators, _entity_names(params)[3:]):
        share_bytes = (root / "shares" / f"{name}.share").read_bytes()
        holder.subkey = unpack_share(share_bytes, SUBKEY_FIELD)

    for server in storages:
        store_path = root / "store" / f"storage{server.index}.json"
        if store_path.is_file():
            records = json.loads(store_path.read_text())
            server.records = {
                bytes.fromhex(index): unpack_iri(
                    base64.b64decode(packed), params.escrow_polys, params.coeff_width
                )
                for index, packed in records.items()
            }

    behavior = BehaviorLog(
        [
            BehaviorEntry(e["subject"], e["action"], e["timestamp"])
            for e in json.loads((root / "behavior.json").read_text())
        ]
        if (root / "behavior.json").is_file()
        else None
    )

    system = NssiaSystem(
        params=params,
        public_params=PublicParams.secp256k1(),
        ledger=Ledger.load(root / "ledger.journal"),
        verifier=verifier,
        collector=collector,
        generator=generator,
        storages=storages,
        regulators=regulators,
        behavior=behavior,
        fieldspec=escrow_field(params.coeff_width),
        rng=rng or random.SystemRandom(),
    )

    people = {
        path.stem: _load_person(root, path)
        for path in sorted((root / "users").glob("*.json"))
    }
    timings = _zero_timings()
    if (root / "timings.json").is_file():
        stored = json.loads((root / "timings.json").read_text())
        for phase in PHASES:
            if phase in stored:
                timings[phase] = {
                    "seconds": float(stored[phase]["seconds"]),
                    "ops": int(stored[phase]["ops"]),
                }
    return SimulationState(
        root=root, system=system, people=people, timings=timings, seed=config.get("seed")
    )
