"""Integer micro-credit ledger: escrow, settlement, locked earnings, pool operations.

Every state change either completes in full or leaves the ledger untouched.
System total (withdrawable + locked + open escrow + platform sink) only moves
through :meth:`Ledger.inject` and :meth:`Ledger.burn`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Mapping

from .mandate import MandateChain, Phase

PLATFORM = "platform"
UNLOCK_FRACTION = (1, 2)


class LedgerError(ValueError):
    pass


class InsufficientFunds(LedgerError):
    pass


class SettlementError(LedgerError):
    pass


class EscrowStatus(Enum):
    OPEN = "open"
    SETTLED = "settled"
    REFUNDED = "refunded"


@dataclass
class LedgerAccount:
    entity_id: str
    withdrawable: int = 0
    locked: int = 0


@dataclass
class EscrowCertificate:
    cert_id: str
    user_id: str
    budget: int
    frozen: int
    status: EscrowStatus = EscrowStatus.OPEN


@dataclass
class SettlementCosts:
    agent_fees: Mapping[str, int]
    orchestrator_id: str
    orchestration_fee: int = 0
    platform_fee: int = 0

    @property
    def total(self) -> int:
        return sum(self.agent_fees.values()) + self.orchestration_fee + self.platform_fee


@dataclass
class SettlementRecord:
    cert_id: str
    spent: int
    refund: int
    deficit: int
    overrun: bool
    payouts: dict[str, int] = field(default_factory=dict)


class Ledger:
    def __init__(self, chain: MandateChain | None = None, unlock_fraction: tuple[int, int] = UNLOCK_FRACTION):
        self.accounts: dict[str, LedgerAccount] = {}
        self.escrows: dict[str, EscrowCertificate] = {}
        self._open: dict[str, EscrowCertificate] = {}  # index of escrows still OPEN
        self.platform_sink = 0
        self.injected = 0
        self.burned = 0
        self.chain = chain
        self.unlock_fraction = unlock_fraction
        self._next_cert = 0
        self._genesis_total = 0

    # -- bookkeeping ---------------------------------------------------------

    def account(self, entity_id) -> LedgerAccount:
        eid = str(entity_id)
        acct = self.accounts.get(eid)
        if acct is None:
            acct = self.accounts[eid] = LedgerAccount(eid)
            if self.chain is not None:
                self.chain.keyring.register(eid)
        return acct

    def open_account(self, entity_id, withdrawable: int = 0) -> LedgerAccount:
        """Create an account with a genesis balance that counts toward the baseline total."""
        if withdrawable < 0:
            raise LedgerError("opening balance must be non-negative")
        acct = self.account(entity_id)
        acct.withdrawable += withdrawable
        self._genesis_total += withdrawable
        return acct

    def open_escrow_total(self) -> int:
        return sum(c.frozen for c in self._open.values() if c.status is EscrowStatus.OPEN)

    def total(self) -> int:
        return (
            sum(a.withdrawable + a.locked for a in self.accounts.values())
            + self.open_escrow_total()
            + self.platform_sink
        )

    def expected_total(self) -> int:
        return self._genesis_total + self.injected - self.burned

    def conserved(self) -> bool:
        return self.total() == self.expected_total()

    def snapshot(self) -> bytes:
        state = {
            "accounts": {k: asdict(v) for k, v in sorted(self.accounts.items())},
            "escrows": {k: {**asdict(v), "status": v.status.value} for k, v in sorted(self.escrows.items())},
            "sink": self.platform_sink,
            "injected": self.injected,
            "burned": self.burned,
            "next_cert": self._next_cert,
            "chain_len": len(self.chain) if self.chain is not None else 0,
        }
        return json.dumps(state, sort_keys=True).encode()

    def _mandate(self, phase: Phase, payload, signers) -> None:
        if self.chain is not None:
            for s in signers:
                self.chain.keyring.register(s)
            self.chain.append(phase, payload, signers)

    # -- phases --------------------------------------------------------------

    def deposit(self, user_id, amount: int) -> None:
        """Economic entry: a user deposit from outside the system (counts as injection)."""
        if amount < 0:
            raise LedgerError("deposit must be non-negative")
        self.account(user_id).withdrawable += amount
        self.injected += amount
        self._mandate(Phase.ENTRY, [("user", str(user_id)), ("amount", amount)], [str(user_id)])

    def create_escrow(self, user_id, budget: int) -> EscrowCertificate:
        if budget < 0:
            raise LedgerError("budget must be non-negative")
        acct = self.account(user_id)
        if acct.withdrawable < budget:
            raise InsufficientFunds(f"{user_id} holds {acct.withdrawable}, budget {budget}")
        acct.withdrawable -= budget
        cert = EscrowCertificate(f"cert-{self._next_cert}", str(user_id), budget, budget)
        self._next_cert += 1
        self.escrows[cert.cert_id] = cert
        self._open[cert.cert_id] = cert
        self._mandate(
            Phase.CREATION,
            [("cert", cert.cert_id), ("user", cert.user_id), ("budget", budget)],
            [cert.user_id],
        )
        return cert

    def settle(self, cert: EscrowCertificate | str, costs: SettlementCosts) -> SettlementRecord:
        """Distribute an open escrow: agent fees and the orchestration fee go to
        locked earnings, the platform fee to the sink, the rest back to the user.

        A cost overrun is the orchestrator's liability: the deficit is drawn
        from its withdrawable balance, and the settlement is rejected if that
        balance cannot cover it.
        """
        cert = self.escrows[cert if isinstance(cert, str) else cert.cert_id]
        if cert.status is not EscrowStatus.OPEN:
            raise SettlementError(f"{cert.cert_id} is {cert.status.value}")
        fees = {str(k): int(v) for k, v in costs.agent_fees.items()}
        if any(v < 0 for v in fees.values()) or costs.orchestration_fee < 0 or costs.platform_fee < 0:
            raise SettlementError("negative cost component")
        spent = costs.total
        deficit = max(0, spent - cert.frozen)
        orch = self.account(costs.orchestrator_id)
        if deficit > orch.withdrawable:
            raise SettlementError(
                f"overrun of {deficit} exceeds orchestrator {costs.orchestrator_id} balance {orch.withdrawable}"
            )
        orch.withdrawable -= deficit
        for agent, fee in sorted(fees.items()):
            self.account(agent).locked += fee
        orch.locked += costs.orchestration_fee
        self.platform_sink += costs.platform_fee
        refund = cert.frozen + deficit - spent
        self.account(cert.user_id).withdrawable += refund
        cert.frozen = 0
        cert.status = EscrowStatus.SETTLED
        self._open.pop(cert.cert_id, None)
        payouts = dict(fees)
        payouts[str(costs.orchestrator_id)] = payouts.get(str(costs.orchestrator_id), 0) + costs.orchestration_fee
        record = SettlementRecord(cert.cert_id, spent, refund, deficit, deficit > 0, payouts)
        payload = [("cert", cert.cert_id), ("spent", spent), ("refund", refund), ("deficit", deficit)]
        payload += [(f"fee:{a}", f) for a, f in sorted(fees.items())]
        payload += [("orchestration", costs.orchestration_fee), ("platform", costs.platform_fee)]
        signers = [cert.user_id, str(costs.orchestrator_id), *sorted(fees)]
        self._mandate(Phase.SETTLEMENT, payload, signers)
        return record

    def refund(self, cert: EscrowCertificate | str) -> None:
        cert = self.escrows[cert if isinstance(cert, str) else cert.cert_id]
        if cert.status is not EscrowStatus.OPEN:
            raise SettlementError(f"{cert.cert_id} is {cert.status.value}")
        self.account(cert.user_id).withdrawable += cert.frozen
        cert.frozen = 0
        cert.status = EscrowStatus.REFUNDED
        self._open.pop(cert.cert_id, None)
        self._mandate(Phase.SETTLEMENT, [("cert", cert.cert_id), ("refund", cert.budget)], [cert.user_id])

    def unlock_earnings(self, entity_id) -> int:
        """One participation event unlocks ``floor(locked * u)`` (u = 1/2 by default)."""
        acct = self.account(entity_id)
        num, den = self.unlock_fraction
        amount = acct.locked * num // den
        acct.locked -= amount
        acct.withdrawable += amount
        return amount

    def inject(self, amount: int) -> None:
        if amount < 0:
            raise LedgerError("inject amount must be non-negative")
        self.platform_sink += amount
        self.injected += amount
        self._mandate(Phase.POOL_OP, [("op", "inject"), ("amount", amount)], [PLATFORM])

    def burn(self, amount: int) -> None:
        if amount < 0:
            raise LedgerError("burn amount must be non-negative")
        if amount > self.platform_sink:
            raise InsufficientFunds(f"burn {amount} exceeds sink {self.platform_sink}")
        self.platform_sink -= amount
        self.burned += amount
        self._mandate(Phase.POOL_OP, [("op", "burn"), ("amount", amount)], [PLATFORM])

    def clone(self) -> "Ledger":
        return copy.deepcopy(self)
