"""Per-organization round pipeline: execute, vote, commit, replay."""

import pytest

from effectledger.agreement import ChainedTransaction, TransactionProposal, make_proposal
from effectledger.engine.types import QuirkConfig
from effectledger.errors import DuplicateRound, EngineFailure, OutOfOrderAction
from effectledger.org import Action, RoundStatus

from conftest import CLIENT, Cluster

DDL = "CREATE TABLE acct (id INT, bal DECIMAL(12, 2), PRIMARY KEY (id));"
SEED_ROWS = "INSERT INTO acct (id, bal) VALUES (1, 100), (2, 200);"


def test_clean_round_commits_everywhere(cluster):
    outcomes = cluster.round(1, DDL, SEED_ROWS)
    assert all(o.status is RoundStatus.COMMITTED for o in outcomes.values())
    heads = {node.ledger.head_hash() for node in cluster.nodes.values()}
    assert len(heads) == 1
    assert all(node.height == 1 for node in cluster.nodes.values())


def test_round_outcome_reports_votes(cluster):
    outcomes = cluster.round(1, DDL)
    o1 = outcomes["O1"]
    assert o1.block_id == 1
    assert o1.consensus_hash == o1.local_hash
    assert o1.transcript.matching_votes(o1.local_hash) == 3
    assert cluster["O1"].transcripts[1].status.value == "consenting_committed"


def test_committed_block_lists_signers(cluster):
    cluster.round(1, DDL)
    block = cluster["O2"].ledger.block(1)
    assert block.transactions[0].client == CLIENT
    assert block.successful == (True,)


def test_duplicate_round_raises(cluster):
    cluster.round(1, DDL)
    with pytest.raises(DuplicateRound):
        cluster["O1"].execute_action(cluster.action(1, SEED_ROWS))


def test_future_round_raises(cluster):
    cluster.round(1, DDL)
    with pytest.raises(OutOfOrderAction):
        cluster["O1"].execute_action(cluster.action(3, SEED_ROWS))


def test_second_execute_with_round_pending_raises(cluster):
    cluster["O1"].execute_action(cluster.action(1, DDL))
    with pytest.raises(OutOfOrderAction):
        cluster["O1"].execute_action(cluster.action(2, SEED_ROWS))


def test_complete_without_pending_raises(cluster):
    with pytest.raises(OutOfOrderAction):
        cluster["O1"].complete_round(cluster.peers_of("O1"), cluster.fetch_vote)


def test_engine_failure_surfaces(cluster):
    cluster["O1"].db.failed = True
    with pytest.raises(EngineFailure):
        cluster["O1"].execute_action(cluster.action(1, DDL))


def test_receive_buffers_by_round(cluster):
    later = cluster.action(2, SEED_ROWS)
    first = cluster.action(1, DDL)
    node = cluster["O1"]
    node.receive_action(later)
    assert node.executable_action() is None
    node.receive_action(first)
    assert node.executable_action() is first


def test_no_consensus_then_late_commit(cluster):
    """A node alone in a round keeps it pending until peers catch up."""
    action = cluster.action(1, DDL)
    early = cluster["O1"]
    early.execute_action(action)
    outcome = early.complete_round(cluster.peers_of("O1"), cluster.fetch_vote, max_retries=0)
    assert outcome.status is RoundStatus.NO_CONSENSUS
    assert early.pending is not None
    assert early.height == 0

    for org in ("O2", "O3"):
        cluster[org].execute_action(action)
    late = early.complete_round(cluster.peers_of("O1"), cluster.fetch_vote)
    assert late.status is RoundStatus.COMMITTED
    assert early.height == 1 and early.pending is None


def test_quirk_divergence_is_non_consenting():
    cluster = Cluster(
        quirks=[
            QuirkConfig(decimal_rounding="truncate"),
            QuirkConfig(),
            QuirkConfig(),
        ]
    )
    cluster.round(1, DDL, SEED_ROWS)
    # third fractional digit 6: ties-to-even and truncation disagree
    outcomes = cluster.round(2, "UPDATE acct SET bal = bal + 0.016 WHERE id = 1;")
    assert outcomes["O1"].status is RoundStatus.NON_CONSENTING
    assert outcomes["O2"].status is RoundStatus.COMMITTED
    assert outcomes["O3"].status is RoundStatus.COMMITTED
    assert outcomes["O1"].consensus_hash == outcomes["O2"].local_hash

    diverged = cluster["O1"]
    assert diverged.pending is not None  # kept for recovery to resolve
    assert diverged.height == 1
    diverged.abandon_pending()
    assert diverged.pending is None


def test_unverifiable_transaction_fails_deterministically(cluster):
    cluster.round(1, DDL, SEED_ROWS)
    unsigned = ChainedTransaction(TransactionProposal(CLIENT, "DELETE FROM acct;"), ())
    signed = make_proposal(CLIENT, "UPDATE acct SET bal = 0 WHERE id = 1;", cluster.client_key)
    action_2 = Action(2, (unsigned, ChainedTransaction(signed, ())))
    for node in cluster.nodes.values():
        node.execute_action(action_2)
    outcomes = {
        org: node.complete_round(cluster.peers_of(org), cluster.fetch_vote)
        for org, node in cluster.nodes.items()
    }
    assert all(o.status is RoundStatus.COMMITTED for o in outcomes.values())
    block = cluster["O1"].ledger.block(2)
    assert block.successful == (False, True)
    # the refused DELETE had no effect anywhere
    assert all(len(n.db.table("acct").rows) == 2 for n in cluster.nodes.values())


def test_unknown_client_signature_fails_bit(cluster):
    from effectledger.keys import derive_private_key

    cluster.round(1, DDL, SEED_ROWS)
    rogue = make_proposal("mallory", "DELETE FROM acct;", derive_private_key("mallory"))
    action = Action(2, (ChainedTransaction(rogue, ()),))
    for node in cluster.nodes.values():
        node.execute_action(action)
    for org, node in cluster.nodes.items():
        assert node.complete_round(cluster.peers_of(org), cluster.fetch_vote).status is RoundStatus.COMMITTED
    assert cluster["O1"].ledger.block(2).successful == (False,)


@pytest.mark.parametrize("parallel", [False, True])
def test_replay_matches_committed_hashes(cluster, parallel):
    cluster.round(1, DDL, SEED_ROWS)
    cluster.round(2, "UPDATE acct SET bal = bal + 7 WHERE id = 1;")
    node = Cluster(count=1)["O1"]
    for block_id in (1, 2):
        block = cluster["O2"].ledger.block(block_id)
        replayed = node.replay_committed_block(block, parallel=parallel)
        assert replayed == cluster.fetch_vote("O2", block_id).effect_hash
        node.ledger.append(block)
    assert node.db.state_hash() == cluster["O2"].db.state_hash()


def test_replay_skips_failed_transactions(cluster):
    cluster.round(1, DDL, SEED_ROWS)
    outcomes = cluster.round(
        2,
        "INSERT INTO acct (id, bal) VALUES (1, 0);",  # duplicate pk, bit 0
        "UPDATE acct SET bal = bal + 5 WHERE id = 2;",
    )
    assert outcomes["O1"].status is RoundStatus.COMMITTED
    block = cluster["O1"].ledger.block(2)
    assert block.successful == (False, True)

    fresh = Cluster(count=1)["O1"]
    for block_id in (1, 2):
        committed = cluster["O1"].ledger.block(block_id)
        assert fresh.replay_committed_block(committed, parallel=False) == cluster.fetch_vote(
            "O1", block_id
        ).effect_hash
        fresh.ledger.append(committed)
    # the failed INSERT was never re-attempted: row 1 still holds the original balance
    assert fresh.db.table("acct").rows == cluster["O1"].db.table("acct").rows


def test_evaluate_agreement_checks_client_signature(cluster):
    proposal = TransactionProposal(CLIENT, "SELECT * FROM acct;", b"bad sig")
    agreement = cluster["O1"].evaluate_agreement(proposal)
    assert not agreement.verdict
    good = make_proposal(CLIENT, "SELECT * FROM acct;", cluster.client_key)
    assert cluster["O1"].evaluate_agreement(good).verdict
