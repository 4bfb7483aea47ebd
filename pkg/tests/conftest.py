"""Shared fixtures: engines, multi-org clusters, and round-driving helpers."""

import pytest

from effectledger.agreement import ChainedTransaction, make_proposal
from effectledger.consensus import ConsensusPolicy
from effectledger.engine.database import Database
from effectledger.engine.parser import parse_script
from effectledger.engine.types import QuirkConfig
from effectledger.keys import KeyRegistry, derive_private_key
from effectledger.org import Action, OrgNode

CLIENT = "client"


@pytest.fixture
def db():
    return Database()


def run_sql(database, sql):
    """Parse and execute one transaction, returning its TransactionResult."""
    return database.execute_transaction(parse_script(sql))


@pytest.fixture
def bank_db():
    """Engine with a two-row accounts table, handy for predicate tests."""
    database = Database()
    for sql in (
        "CREATE TABLE acct (id INT, owner TEXT, bal DECIMAL(10, 2), PRIMARY KEY (id));",
        "INSERT INTO acct (id, owner, bal) VALUES (1, 'alice', 100), (2, 'bob', 250.50);",
    ):
        result = run_sql(database, sql)
        assert result.success, result.error
    return database


class Cluster:
    """A handful of organization nodes wired together without the simulator."""

    def __init__(self, count=3, min_matching=2, quirks=None, **node_kwargs):
        self.registry = KeyRegistry()
        policy = ConsensusPolicy(min_matching)
        quirks = quirks or [QuirkConfig()] * count
        self.client_key = derive_private_key(f"test:{CLIENT}")
        self.registry.register(CLIENT, self.client_key)
        self.nodes = {}
        for i in range(count):
            org = f"O{i + 1}"
            key = derive_private_key(f"test:{org}")
            self.registry.register(org, key)
            self.nodes[org] = OrgNode(
                org,
                quirks=quirks[i],
                policy=policy,
                registry=self.registry,
                private_key=key,
                **node_kwargs,
            )

    def __getitem__(self, org):
        return self.nodes[org]

    def peers_of(self, org):
        return [o for o in self.nodes if o != org]

    def fetch_vote(self, responder, block_id):
        return self.nodes[responder].serve_hash_request(block_id)

    def fetch_state(self, responder, block_id):
        node = self.nodes[responder]
        if node.height != block_id:
            return None
        return node.db.snapshot_all(), node.ledger.block(block_id)

    def action(self, block_id, *sqls):
        return Action(
            block_id,
            tuple(
                ChainedTransaction(make_proposal(CLIENT, sql, self.client_key), ())
                for sql in sqls
            ),
        )

    def round(self, block_id, *sqls):
        """Execute and complete one block of signed transactions everywhere."""
        action = self.action(block_id, *sqls)
        outcomes = {}
        for node in self.nodes.values():
            node.execute_action(action)
        for org, node in self.nodes.items():
            outcomes[org] = node.complete_round(self.peers_of(org), self.fetch_vote)
        return outcomes


@pytest.fixture
def cluster():
    return Cluster()
