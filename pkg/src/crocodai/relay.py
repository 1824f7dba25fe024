"""Cross-chain transfer state machine with 2f+1 quorum certificates,
governance actions, fault injection, and abstract cost models for the three
relay signature designs.

Authentication is abstract: a vote is valid iff it carries the node id of a
registered relay, so Byzantine forgery of other ids is rejected by
construction. Commit is atomic within one relay step on both chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .errors import (
    InsufficientBalanceError,
    ProtocolError,
    QuorumError,
    StaleNonceError,
    UnknownChainError,
)
from .ledger import System

HONEST = "honest"
CRASHED = "crashed"
BYZ_EQUIVOCATE = "byzantine:equivocate"
BYZ_REFUSE = "byzantine:refuse"
BYZ_FORGE = "byzantine:forge"

BEHAVIORS = (HONEST, CRASHED, BYZ_EQUIVOCATE, BYZ_REFUSE, BYZ_FORGE)
BYZANTINE_STRATEGIES = (BYZ_EQUIVOCATE, BYZ_REFUSE, BYZ_FORGE)

REQUESTED = "requested"
ESCROWED = "escrowed"
COMMITTED = "committed"
ABORTED = "aborted"


@dataclass
class RelayNode:
    id: int
    behavior: str = HONEST

    def __post_init__(self):
        if self.behavior not in BEHAVIORS:
            raise ProtocolError(f"unknown relay behavior {self.behavior!r}")


@dataclass
class CrossChainTransfer:
    id: int
    source: int
    target: int
    sender: int
    target_addr: int
    amount: int
    state: str = REQUESTED
    commit_votes: set[int] = field(default_factory=set)
    abort_votes: set[int] = field(default_factory=set)
    request_slot: int = 0


@dataclass(frozen=True)
class GovernanceAction:
    kind: str  # add_ward | remove_ward | set_param | add_chain | deprecate_contract
    payload: dict[str, Any]
    nonce: int


def register_relays(system: System, behaviors: dict[int, str] | None = None) -> None:
    """Create the n relay nodes from system params; behaviors default to honest."""
    behaviors = behaviors or {}
    system.relays = {}
    for node_id in range(system.params.relay_n):
        system.relays[node_id] = RelayNode(node_id, behaviors.get(node_id, HONEST))


def quorum(system: System) -> int:
    return 2 * system.params.relay_f + 1


# ----------------------------------------------------------------------
# transfers


def request_transfer(
    system: System, source_chain: int, sender: int, amount: int, target_chain: int, target_addr: int
) -> int:
    chain = system.chain(source_chain)
    if target_chain not in system.chains:
        raise UnknownChainError(f"unknown target chain {target_chain}")
    if amount <= 0:
        raise ProtocolError("transfer amount must be > 0")
    if chain.balance(sender) < amount:
        raise InsufficientBalanceError(
            f"sender {sender} holds {chain.balance(sender)}, needs {amount}"
        )
    tid = system.new_transfer_id()
    transfer = CrossChainTransfer(
        tid, source_chain, target_chain, sender, target_addr, amount, request_slot=system.slot
    )
    system.apply(
        source_chain,
        "escrow_create",
        {"transfer": tid, "sender": sender, "amount": amount, "slot": system.slot},
    )
    transfer.state = ESCROWED
    system.transfers[tid] = transfer
    return tid


def _node_validates(system: System, transfer: CrossChainTransfer) -> bool:
    # an honest node re-reads the source chain and votes only if the escrow
    # is actually there with the advertised amount
    chain = system.chains.get(transfer.source)
    if chain is None:
        return False
    rec = chain.escrows.get(transfer.id)
    return rec is not None and rec.amount == transfer.amount


def relay_step(system: System, slot: int | None = None) -> list[dict[str, Any]]:
    """One relay round at the given slot (defaults to the system clock).

    Honest nodes vote on every escrowed transfer they can validate; a
    transfer commits once 2f+1 distinct authenticated votes accumulate
    (burn on source and mint on target happen atomically within the step).
    Escrows that reach the timeout expire: commits are no longer accepted
    and the escrow is refunded in the same deterministic step.
    """
    slot = system.slot if slot is None else slot
    out: list[dict[str, Any]] = []
    needed = quorum(system)
    timeout = system.params.transfer_timeout

    for tid in sorted(system.transfers):
        transfer: CrossChainTransfer = system.transfers[tid]
        if transfer.state != ESCROWED:
            continue

        if slot - transfer.request_slot >= timeout:
            # expired: refund if the escrow still exists, then close the
            # transfer so late commit certificates can never race the abort
            for node_id in sorted(system.relays):
                if system.relays[node_id].behavior == HONEST:
                    transfer.abort_votes.add(node_id)
            refunded = False
            source = system.chains.get(transfer.source)
            if source is not None and tid in source.escrows:
                system.apply(transfer.source, "escrow_refund", {"transfer": tid})
                refunded = True
            transfer.state = ABORTED
            out.append({"type": "abort", "transfer": tid, "slot": slot, "refunded": refunded})
            continue

        for node_id in sorted(system.relays):
            node: RelayNode = system.relays[node_id]
            if node.behavior == HONEST:
                if _node_validates(system, transfer):
                    transfer.commit_votes.add(node.id)
            elif node.behavior == BYZ_EQUIVOCATE:
                transfer.commit_votes.add(node.id)
                transfer.abort_votes.add(node.id)
            elif node.behavior == BYZ_FORGE:
                # votes under ids it does not own are rejected by
                # authentication; log the attempts for the monitor
                for forged in sorted(system.relays):
                    if forged != node.id:
                        out.append(
                            {
                                "type": "forged_vote_rejected",
                                "transfer": tid,
                                "by": node.id,
                                "claimed": forged,
                                "slot": slot,
                            }
                        )
            # CRASHED and BYZ_REFUSE contribute nothing

        if len(transfer.commit_votes) >= needed and _node_validates(system, transfer):
            system.apply(transfer.source, "escrow_burn", {"transfer": tid})
            system.apply(
                transfer.target,
                "mint",
                {"account": transfer.target_addr, "amount": transfer.amount, "by": "relay", "transfer": tid},
            )
            transfer.state = COMMITTED
            out.append(
                {
                    "type": "commit",
                    "transfer": tid,
                    "slot": slot,
                    "votes": sorted(transfer.commit_votes),
                }
            )
    return out


def step(system: System) -> list[dict[str, Any]]:
    """Advance one slot: tick clocks, apply due governance, run the relay round."""
    system.tick()
    events = _apply_staged_governance(system)
    events.extend(relay_step(system))
    return events


# ----------------------------------------------------------------------
# governance


def submit_governance(system: System, action: GovernanceAction, votes: set[int]) -> bool:
    """Validate and stage an action; it takes effect at the next slot boundary.

    Returns True iff the certificate carried a 2f+1 quorum of registered
    relay votes. The nonce is consumed only on acceptance.
    """
    if action.nonce in system.applied_nonces:
        raise StaleNonceError(f"nonce {action.nonce} already used")
    valid_votes = {v for v in votes if v in system.relays}
    if len(valid_votes) < quorum(system):
        return False
    _validate_action(system, action)
    system.applied_nonces.add(action.nonce)
    system.staged_governance.append((system.slot + 1, action))
    return True


def _validate_action(system: System, action: GovernanceAction) -> None:
    kind, payload = action.kind, action.payload
    if kind == "set_param":
        system.params.with_param(payload["name"], payload["value"])  # raises if invalid
    elif kind in ("add_ward", "remove_ward"):
        if "chain" in payload:
            system.chain(payload["chain"])
    elif kind == "add_chain":
        name = payload.get("config", {}).get("name")
        if name is not None and name in system._chain_names:
            raise ProtocolError(f"chain name already registered: {name!r}")
    elif kind == "deprecate_contract":
        if "contract" not in payload:
            raise ProtocolError("deprecate_contract needs a 'contract' field")
    else:
        raise ProtocolError(f"unknown governance action kind {kind!r}")


def _apply_staged_governance(system: System) -> list[dict[str, Any]]:
    due = [(s, a) for s, a in system.staged_governance if s <= system.slot]
    system.staged_governance = [(s, a) for s, a in system.staged_governance if s > system.slot]
    out = []
    for _, action in due:
        kind, payload = action.kind, action.payload
        if kind == "set_param":
            system.params = system.params.with_param(payload["name"], payload["value"])
        elif kind in ("add_ward", "remove_ward"):
            event = "ward_add" if kind == "add_ward" else "ward_remove"
            targets = [payload["chain"]] if "chain" in payload else sorted(system.chains)
            for chain_id in targets:
                system.apply(chain_id, event, {"account": payload["account"]})
        elif kind == "add_chain":
            system.create_chain(payload.get("config", {}))
        elif kind == "deprecate_contract":
            system.deprecated_contracts.add(payload["contract"])
        out.append({"type": "governance_applied", "kind": kind, "nonce": action.nonce})
    return out


# ----------------------------------------------------------------------
# invariant monitor


@dataclass(frozen=True)
class AuditReport:
    unbacked_minted: int  # committed transfers whose source burn was reverted
    unmatched_burns: list[int]  # committed transfers burned but never minted
    stuck_escrows: list[int]  # aborted transfers that never got a refund
    circulating: int
    ok: bool


def audit(system: System) -> AuditReport:
    """Cross-check every transfer against the surviving chain event logs."""
    burn_seen: set[int] = set()
    mint_seen: dict[int, int] = {}
    refund_seen: set[int] = set()
    for chain in system.chains.values():
        for ev in chain.events:
            if ev.kind == "escrow_burn":
                burn_seen.add(ev.payload["transfer"])
            elif ev.kind == "escrow_refund":
                refund_seen.add(ev.payload["transfer"])
            elif ev.kind == "mint" and ev.payload.get("by") == "relay":
                tid = ev.payload.get("transfer")
                if tid is not None:
                    mint_seen[tid] = mint_seen.get(tid, 0) + ev.payload["amount"]

    unbacked = 0
    unmatched = []
    stuck = []
    for tid, transfer in sorted(system.transfers.items()):
        if transfer.state == COMMITTED:
            if tid in mint_seen and tid not in burn_seen:
                unbacked += mint_seen[tid]
            if tid in burn_seen and tid not in mint_seen:
                unmatched.append(tid)
        elif transfer.state == ABORTED:
            source = system.chains.get(transfer.source)
            still_escrowed = source is not None and tid in source.escrows
            if tid not in refund_seen and still_escrowed:
                stuck.append(tid)
    return AuditReport(
        unbacked_minted=unbacked,
        unmatched_burns=unmatched,
        stuck_escrows=stuck,
        circulating=system.total_circulating(),
        ok=(unbacked == 0 and not unmatched and not stuck),
    )


# ----------------------------------------------------------------------
# cost models for the three relay signature designs (abstract units)

N_OF_N = "NofN"  # every relay node sends its own approval transaction
N_OF_1 = "Nof1"  # one transaction carrying a batch of 2f+1 signatures
ONE_OF_1 = "1of1"  # one transaction carrying a single threshold signature

STRATEGIES = (N_OF_N, N_OF_1, ONE_OF_1)

SIGNATURE_BYTES = 65
TX_UNITS = 21.0
VERIFY_UNITS = 3.0
BYTE_UNITS = 0.016
SIGN_SECONDS = 0.01  # per ordinary signature
THRESHOLD_SECONDS = 0.1  # coefficient of the ~n^2 threshold signing model


@dataclass(frozen=True)
class CostRecord:
    strategy: str
    transactions: int
    verifications: int
    message_bytes: int
    offchain_seconds: float

    @property
    def on_chain_units(self) -> float:
        return (
            self.transactions * TX_UNITS
            + self.verifications * VERIFY_UNITS
            + self.message_bytes * BYTE_UNITS
        )


def cost_of_commit(strategy: str, n: int, f: int) -> CostRecord:
    """Abstract cost of committing one transfer under each signature design.

    Per-quorum batches scale with 2f+1; the threshold scheme verifies one
    signature regardless of n but its off-chain signing grows ~n^2.
    """
    if f < 0 or n < 3 * f + 1:
        raise QuorumError(f"quorum arithmetic violated: n={n}, f={f} needs n >= 3f+1")
    q = 2 * f + 1
    if strategy == N_OF_N:
        return CostRecord(N_OF_N, transactions=q, verifications=q, message_bytes=0,
                          offchain_seconds=SIGN_SECONDS * q)
    if strategy == N_OF_1:
        return CostRecord(N_OF_1, transactions=1, verifications=q,
                          message_bytes=SIGNATURE_BYTES * q, offchain_seconds=SIGN_SECONDS * q)
    if strategy == ONE_OF_1:
        return CostRecord(ONE_OF_1, transactions=1, verifications=1,
                          message_bytes=SIGNATURE_BYTES, offchain_seconds=THRESHOLD_SECONDS * n * n)
    raise ProtocolError(f"unknown relay cost strategy {strategy!r}")
