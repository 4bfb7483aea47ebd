"""Access analysis, conflict staging, and staged parallel execution."""

import random
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from effectledger.engine.database import Database
from effectledger.ledger import BlockDigest, compute_hash_digest
from effectledger.scheduler import (
    ALL_COLUMNS,
    AccessInterval,
    Interval,
    analyze_transaction,
    build_dependency_graph,
    execute_staged,
)

from conftest import run_sql

CATALOG_SQL = (
    "CREATE TABLE acct (id INT, owner TEXT, bal DECIMAL(10, 2), PRIMARY KEY (id));",
    "CREATE TABLE audit (seq INT, note TEXT, PRIMARY KEY (seq));",
)


def fresh_db(rows=()):
    db = Database()
    for sql in CATALOG_SQL:
        assert run_sql(db, sql).success
    for rid, bal in rows:
        assert run_sql(
            db, f"INSERT INTO acct (id, owner, bal) VALUES ({rid}, 'u{rid}', {bal});"
        ).success
    return db


def catalog_of(db):
    return {name: db.table(name).schema for name in db.table_names()}


def analyze_all(db, sqls):
    catalog = catalog_of(db)
    return [analyze_transaction(i, sql, catalog) for i, sql in enumerate(sqls)]


# ---- interval extraction ----


def test_point_write_on_pk_equality():
    db = fresh_db()
    (acc,) = analyze_all(db, ["UPDATE acct SET bal = 0 WHERE id = 7;"])
    assert acc.analyzable
    (only,) = acc.intervals
    assert only.write
    assert only.column == "id"
    assert only.interval.is_point and only.interval.low == 7


def test_open_int_bound_normalizes_to_closed():
    db = fresh_db()
    (acc,) = analyze_all(db, ["SELECT * FROM acct WHERE id > 42;"])
    read = next(ai for ai in acc.intervals if ai.column == "id")
    assert (read.interval.low, read.interval.low_open) == (43, False)
    assert read.interval.high is None


def test_insert_is_point_write_per_row():
    db = fresh_db()
    (acc,) = analyze_all(
        db, ["INSERT INTO acct (id, owner, bal) VALUES (3, 'x', 1), (9, 'y', 2);"]
    )
    id_writes = [
        ai for ai in acc.intervals if ai.column == "id" and ai.write and ai.interval.is_point
    ]
    assert sorted(ai.interval.low for ai in id_writes) == [3, 9]


def test_ddl_claims_whole_table():
    db = fresh_db()
    (acc,) = analyze_all(db, ["CREATE TABLE fresh (k INT, PRIMARY KEY (k));"])
    assert acc.analyzable
    assert any(
        ai.table == "fresh" and ai.column == ALL_COLUMNS and ai.write
        for ai in acc.intervals
    )


def test_unknown_table_claims_whole_table_conservatively():
    db = fresh_db()
    (acc,) = analyze_all(db, ["UPDATE ghost SET x = 1 WHERE k = 2;"])
    assert acc.analyzable
    assert any(ai.table == "ghost" and ai.column == ALL_COLUMNS for ai in acc.intervals)


def test_unparseable_sql_is_excluded():
    db = fresh_db()
    (acc,) = analyze_all(db, ["THIS IS NOT SQL"])
    assert not acc.analyzable
    assert acc.parse_error
    assert acc.intervals == ()


def test_full_table_scan_without_where():
    db = fresh_db()
    (acc,) = analyze_all(db, ["UPDATE acct SET bal = 0;"])
    assert any(ai.interval == Interval() or ai.column == ALL_COLUMNS for ai in acc.intervals)


# ---- pairwise conflict rules ----


def ai(table, column, low, high, write, low_open=False, high_open=False):
    return AccessInterval(table, column, Interval(low, high, low_open, high_open), write)


def test_read_read_never_conflicts():
    a = ai("t", "k", 1, 10, write=False)
    b = ai("t", "k", 5, 20, write=False)
    assert not a.conflicts_with(b)


def test_write_overlap_conflicts():
    a = ai("t", "k", 1, 10, write=True)
    b = ai("t", "k", 10, 20, write=False)
    assert a.conflicts_with(b) and b.conflicts_with(a)


def test_disjoint_ranges_do_not_conflict():
    a = ai("t", "k", 1, 10, write=True)
    b = ai("t", "k", 11, 20, write=True)
    assert not a.conflicts_with(b)


def test_open_endpoints_touching_do_not_conflict():
    a = ai("t", "k", 1, 10, write=True, high_open=True)
    b = ai("t", "k", 10, 20, write=True)
    assert not a.conflicts_with(b)


def test_different_tables_or_columns_do_not_conflict():
    a = ai("t", "k", 1, 10, write=True)
    assert not a.conflicts_with(ai("u", "k", 1, 10, write=True))
    assert not a.conflicts_with(ai("t", "v", 1, 10, write=True))


def test_star_column_conflicts_with_everything_on_table():
    star = ai("t", ALL_COLUMNS, None, None, write=True)
    assert star.conflicts_with(ai("t", "k", 1, 2, write=False))
    assert not star.conflicts_with(ai("u", "k", 1, 2, write=True))


# ---- graph construction ----


def test_figure_like_chain_and_island():
    db = fresh_db(rows=[(1, 100), (2, 100), (3, 100)])
    sqls = [
        "UPDATE acct SET bal = bal + 1 WHERE id = 1;",
        "UPDATE acct SET bal = bal + 1 WHERE id = 1;",
        "UPDATE acct SET bal = bal + 1 WHERE id = 2;",
        "INSERT INTO audit (seq, note) VALUES (1, 'n');",
    ]
    graph = build_dependency_graph(analyze_all(db, sqls))
    assert (0, 1) in graph.edges
    assert (0, 2) not in graph.edges and (1, 2) not in graph.edges
    assert graph.stage_of(0) == 0 and graph.stage_of(1) == 1
    assert graph.stage_of(2) == 0 and graph.stage_of(3) == 0
    assert graph.predecessors(1) == [0]


def test_parse_failed_transactions_stay_out_of_graph():
    db = fresh_db()
    sqls = ["garbage", "UPDATE acct SET bal = 0 WHERE id = 1;"]
    graph = build_dependency_graph(analyze_all(db, sqls))
    assert graph.parse_failed == [0]
    assert graph.nodes == [1]
    with pytest.raises(KeyError):
        graph.stage_of(0)


def test_stage_soundness_no_intra_stage_conflicts_randomized():
    """Randomized blocks: members of one stage never conflict pairwise."""
    rng = random.Random(7)
    db = fresh_db(rows=[(i, 100) for i in range(1, 9)])
    catalog = catalog_of(db)
    for _ in range(40):
        sqls = []
        for _ in range(rng.randint(2, 24)):
            src, dst = rng.randint(1, 8), rng.randint(1, 8)
            sqls.append(
                rng.choice(
                    [
                        f"UPDATE acct SET bal = bal + 1 WHERE id = {src};",
                        f"UPDATE acct SET bal = bal - 1 WHERE id BETWEEN {min(src, dst)} AND {max(src, dst)};",
                        f"SELECT bal FROM acct WHERE id = {src};",
                        f"DELETE FROM acct WHERE id = {src};",
                    ]
                )
            )
        sets = [analyze_transaction(i, sql, catalog) for i, sql in enumerate(sqls)]
        graph = build_dependency_graph(sets)
        for members in graph.stages:
            for i in members:
                for j in members:
                    if i < j:
                        assert (i, j) not in graph.edges


def test_stage_is_one_plus_max_conflicting_predecessor_randomized():
    """Stage assignment matches the edge relation it summarizes."""
    rng = random.Random(21)
    db = fresh_db(rows=[(i, 100) for i in range(1, 7)])
    catalog = catalog_of(db)
    for _ in range(30):
        sqls = [
            f"UPDATE acct SET bal = bal + 1 WHERE id = {rng.randint(1, 6)};"
            if rng.random() < 0.7
            else f"SELECT * FROM acct WHERE id <= {rng.randint(1, 6)};"
            for _ in range(rng.randint(1, 18))
        ]
        sets = [analyze_transaction(i, sql, catalog) for i, sql in enumerate(sqls)]
        graph = build_dependency_graph(sets)
        for j in graph.nodes:
            preds = graph.predecessors(j)
            expected = 0 if not preds else 1 + max(graph.stage_of(i) for i in preds)
            assert graph.stage_of(j) == expected


def test_to_dot_mentions_nodes_and_edges():
    db = fresh_db(rows=[(1, 100)])
    sqls = [
        "UPDATE acct SET bal = bal + 1 WHERE id = 1;",
        "UPDATE acct SET bal = bal + 2 WHERE id = 1;",
    ]
    dot = build_dependency_graph(analyze_all(db, sqls)).to_dot()
    assert dot.startswith("digraph")
    assert "t0 -> t1;" in dot
    assert 'label="T1 stage 1"' in dot


# ---- staged execution vs serial oracle ----


def run_serial(db, sqls):
    digest = BlockDigest()
    bits = []
    for sql in sqls:
        result = db.execute_transaction(sql, digest)
        bits.append(result.success)
    return bits, compute_hash_digest(digest), db.state_hash()


def run_parallel(db, sqls, sessions):
    sets = analyze_all(db, sqls)
    graph = build_dependency_graph(sets)
    digest = BlockDigest()
    bits = execute_staged(graph, sets, db, sessions=sessions, digest=digest)
    return list(bits), compute_hash_digest(digest), db.state_hash()


TRANSFER_POOL = [
    "UPDATE acct SET bal = bal + 5 WHERE id = {a};",
    "UPDATE acct SET bal = bal - 5 WHERE id = {a}; UPDATE acct SET bal = bal + 5 WHERE id = {b};",
    "SELECT bal FROM acct WHERE id = {a};",
    "INSERT INTO audit (seq, note) VALUES ({seq}, 'm');",
    "DELETE FROM acct WHERE id = {a};",
    "UPDATE acct SET bal = 0 WHERE id BETWEEN {a} AND {c};",
]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 8]))
def test_staged_execution_equals_serial(seed, sessions):
    rng = random.Random(seed)
    rows = [(i, 100) for i in range(1, 10)]
    sqls = []
    for n in range(rng.randint(2, 20)):
        a, b = rng.randint(1, 9), rng.randint(1, 9)
        sqls.append(
            rng.choice(TRANSFER_POOL).format(a=a, b=b, c=a + rng.randint(0, 3), seq=n)
        )
    serial_bits, serial_digest, serial_state = run_serial(fresh_db(rows), sqls)
    par_bits, par_digest, par_state = run_parallel(fresh_db(rows), sqls, sessions)
    assert par_bits == serial_bits
    assert par_digest == serial_digest
    assert par_state == serial_state


def test_parse_failed_bit_stays_zero():
    db = fresh_db(rows=[(1, 100)])
    sqls = ["nonsense;;;", "UPDATE acct SET bal = bal + 1 WHERE id = 1;"]
    sets = analyze_all(db, sqls)
    graph = build_dependency_graph(sets)
    bits = execute_staged(graph, sets, db)
    assert bits == [False, True]
    assert db.table("acct").rows[b"1"][2] == Decimal("101.00")


def test_failed_transaction_keeps_bit_zero_but_block_continues():
    db = fresh_db(rows=[(1, 100)])
    sqls = [
        "INSERT INTO acct (id, owner, bal) VALUES (1, 'dup', 0);",  # duplicate pk
        "UPDATE acct SET bal = bal + 1 WHERE id = 1;",
    ]
    sets = analyze_all(db, sqls)
    bits = execute_staged(build_dependency_graph(sets), sets, db)
    assert bits == [False, True]
