"""Self-sovereign identity simulator.

Identities are digitized against attested civil metadata, turned into
deterministic digital avatars, escrowed across a storage consortium under a
threshold-shared master key, and recoverable by a quorum of regulators with
a full audit trail on a consortium ledger.
"""

from .avatar import (
    CodeModuleLibrary,
    DigitalAvatar,
    avatar_id,
    default_library,
    derive_seed,
    generate_avatar,
)
from .errors import NssiaError
from .ledger import Ledger, Transaction, TxKind
from .protocol import (
    AuditResult,
    BehaviorLog,
    IdentityProof,
    NaturalPerson,
    NssiaSystem,
    SystemParams,
    system_init,
)
from .shamir import IRI, FieldSpec, Share

__version__ = "0.1.0"

__all__ = [
    "AuditResult",
    "BehaviorLog",
    "CodeModuleLibrary",
    "DigitalAvatar",
    "FieldSpec",
    "IRI",
    "IdentityProof",
    "Ledger",
    "NaturalPerson",
    "NssiaError",
    "NssiaSystem",
    "Share",
    "SystemParams",
    "Transaction",
    "TxKind",
    "avatar_id",
    "default_library",
    "derive_seed",
    "generate_avatar",
    "system_init",
    "__version__",
]
