"""Effect-hash voting and the commit decision rule.

Each organization signs one vote per block: (org, block id, effect hash).
A block reaches consensus when some hash is reported by at least
policy.min_matching organizations; the deciding organization commits only if
that hash equals its own.  If two distinct hashes reach the threshold (possible
when min_matching <= n/2) the round counts as having no global consensus.

Votes are idempotent per (org, block): duplicates count once, and the latest
verified vote from an organization wins, which lets a recovered organization
replace its earlier divergent vote.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

from . import keys
from .errors import ConfigError


@dataclass(frozen=True)
class ConsensusPolicy:
    """min_matching organizations must report equal effect hashes."""

    min_matching: int

    def __post_init__(self):
        if self.min_matching < 1:
            raise ConfigError("min_matching must be at least 1")

    def validate(self, org_count: int):
        if self.min_matching > org_count:
            raise ConfigError(
                f"min_matching {self.min_matching} exceeds {org_count} organizations"
            )


@dataclass(frozen=True)
class HashVote:
    org: str
    block_id: int
    effect_hash: bytes
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        raw_org = self.org.encode("utf-8")
        return struct.pack(">I", len(raw_org)) + raw_org + struct.pack(
            ">Q", self.block_id
        ) + self.effect_hash


def make_vote(org: str, block_id: int, effect_hash: bytes, private_key) -> HashVote:
    vote = HashVote(org, block_id, effect_hash)
    return HashVote(org, block_id, effect_hash, keys.sign(private_key, vote.signed_payload()))


def vote_is_valid(vote: HashVote, expected_org: str, block_id: int, registry) -> bool:
    if vote.org != expected_org or vote.block_id != block_id:
        return False
    if len(vote.effect_hash) != 32:
        return False
    return registry.verify_as(vote.org, vote.signature, vote.signed_payload())


class VoteStore:
    """One organization's own signed votes, served to peers on request.

    Serving is passive: peers may fetch votes for long-committed blocks at any
    time, which is what lets a lagging organization finish old rounds.  A vote
    may be re-recorded after recovery recomputes the block's effect.
    """

    def __init__(self):
        self._votes: dict[int, HashVote] = {}

    def record(self, vote: HashVote):
        self._votes[vote.block_id] = vote

    def serve_hash_request(self, block_id: int) -> HashVote | None:
        """The organization's vote, or None when not ready."""
        return self._votes.get(block_id)

    def __contains__(self, block_id: int) -> bool:
        return block_id in self._votes


def quorum_hashes(votes, min_matching: int) -> set[bytes]:
    """All hashes reported by at least min_matching organizations.

    `votes` is a mapping org -> hash or an iterable of hashes; a mapping
    guarantees one vote per organization.
    """
    values = votes.values() if isinstance(votes, dict) else votes
    counts = Counter(values)
    return {h for h, n in counts.items() if n >= min_matching}


@dataclass
class Decision:
    quorum_hash: bytes | None  # unique hash at threshold, if any
    consenting: bool  # quorum hash equals the local hash
    ambiguous: bool  # two or more hashes reached threshold
    complete: bool  # every organization's vote was present

    @property
    def decided(self) -> bool:
        return self.quorum_hash is not None


def decide(votes: dict[str, bytes], local_org: str, policy: ConsensusPolicy,
           org_count: int | None = None) -> Decision:
    """Apply the commit rule to one round's verified votes."""
    quorum = quorum_hashes(votes, policy.min_matching)
    complete = org_count is None or len(votes) >= org_count
    if len(quorum) == 1:
        winner = next(iter(quorum))
        return Decision(winner, votes.get(local_org) == winner, False, complete)
    return Decision(None, False, len(quorum) > 1, complete)


class ConsensusStatus(str, Enum):
    COMMITTED = "consenting_committed"
    NON_CONSENTING = "non_consenting_local"
    NO_CONSENSUS = "no_global_consensus"


@dataclass
class ConsensusTranscript:
    """Audit record of one consensus attempt for one block."""

    block_id: int
    local_org: str
    votes: dict[str, bytes] = field(default_factory=dict)  # verified votes only
    invalid: list[str] = field(default_factory=list)  # orgs whose votes failed checks
    missing: list[str] = field(default_factory=list)  # never answered
    status: ConsensusStatus = ConsensusStatus.NO_CONSENSUS
    quorum_hash: bytes | None = None

    def matching_votes(self, effect_hash: bytes) -> int:
        return sum(1 for h in self.votes.values() if h == effect_hash)


def run_consensus(
    block_id: int,
    local_org: str,
    local_hash: bytes,
    peers,
    policy: ConsensusPolicy,
    fetch_vote,
    registry,
    max_retries: int = 10,
    on_retry=None,
) -> tuple[Decision, ConsensusTranscript]:
    """One bounded consensus attempt.

    fetch_vote(peer, block_id) returns a HashVote, or None when the peer is
    not ready or unreachable.  Peers answering None are re-polled up to
    max_retries times with on_retry() called between polls (the simulator's
    tick hook).  Invalid votes (wrong fields or bad signature) are discarded
    without retry.  The caller is expected to re-run the attempt for the same
    block for as long as it wants to wait on missing peers.
    """
    peers = list(peers)
    transcript = ConsensusTranscript(block_id, local_org)
    transcript.votes[local_org] = local_hash
    pending = list(peers)
    retries = 0
    while True:
        still_pending = []
        for peer in pending:
            vote = fetch_vote(peer, block_id)
            if vote is None:
                still_pending.append(peer)
            elif vote_is_valid(vote, peer, block_id, registry):
                transcript.votes[peer] = vote.effect_hash
            else:
                transcript.invalid.append(peer)
        pending = still_pending
        if not pending or retries >= max_retries:
            break
        retries += 1
        if on_retry is not None:
            on_retry()
    transcript.missing = pending

    decision = decide(transcript.votes, local_org, policy, 1 + len(peers))
    transcript.quorum_hash = decision.quorum_hash
    if decision.consenting:
        transcript.status = ConsensusStatus.COMMITTED
    elif decision.decided:
        transcript.status = ConsensusStatus.NON_CONSENTING
    else:
        transcript.status = ConsensusStatus.NO_CONSENSUS
    return decision, transcript
