from .agentrank import (
    BASE_CREDIT,
    DAMPING,
    AgentRankResult,
    CreditGraph,
    Polarity,
    SignedEdge,
    agentrank,
    agentrank_direct,
    feedback_edge,
    record_feedback,
)
from .ledger import (
    EscrowCertificate,
    EscrowStatus,
    InsufficientFunds,
    Ledger,
    LedgerAccount,
    LedgerError,
    SettlementCosts,
    SettlementError,
    SettlementRecord,
)
from .mandate import (
    KeyRing,
    Mandate,
    MandateChain,
    Phase,
    UnknownSigner,
    VerifyReport,
    encode_payload,
    load_chain,
    verify_bytes,
    verify_chain,
)
