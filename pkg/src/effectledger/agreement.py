"""Pre-ordering agreement: organizations endorse transactions before they ship.

Tables carry an AgreementPolicy naming the organizations whose signed approval
a transaction touching that table needs.  Each organization may register
predicates per table, written in a restricted condition language: comparisons
between the transaction's literal fields and either literals or single-row
lookups into the evaluating organization's own committed state.  Evaluation is
deterministic and side-effect free; anything unresolvable (missing field, row
not found, unreachable organization) conservatively refuses.

A fully endorsed proposal becomes a ChainedTransaction carrying the client
signature plus one signed agreement per required organization; execution later
re-verifies the whole bundle and marks transactions with missing or invalid
agreements failed.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from decimal import Decimal
from typing import Union

from . import keys
from .engine.parser import CreateTable, Delete, Insert, Select, Update, parse_script
from .errors import ConfigError, ParseError


def _len_prefixed(*parts: bytes) -> bytes:
    return b"".join(struct.pack(">I", len(p)) + p for p in parts)


@dataclass(frozen=True)
class TransactionProposal:
    client: str
    sql: str
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return _len_prefixed(self.client.encode("utf-8"), self.sql.encode("utf-8"))

    def digest(self) -> bytes:
        return hashlib.sha256(self.signed_payload()).digest()


def make_proposal(client: str, sql: str, private_key) -> TransactionProposal:
    proposal = TransactionProposal(client, sql)
    return TransactionProposal(
        client, sql, keys.sign(private_key, proposal.signed_payload())
    )


@dataclass(frozen=True)
class Agreement:
    org: str
    txn_digest: bytes
    verdict: bool
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return _len_prefixed(
            self.org.encode("utf-8"), self.txn_digest, b"\x01" if self.verdict else b"\x00"
        )


def make_agreement(org: str, txn_digest: bytes, verdict: bool, private_key) -> Agreement:
    agreement = Agreement(org, txn_digest, verdict)
    return Agreement(
        org, txn_digest, verdict, keys.sign(private_key, agreement.signed_payload())
    )


@dataclass(frozen=True)
class ChainedTransaction:
    proposal: TransactionProposal
    agreements: tuple[Agreement, ...] = ()

    @property
    def agreed_orgs(self) -> tuple[str, ...]:
        return tuple(a.org for a in self.agreements)


@dataclass(frozen=True)
class Rejected:
    proposal: TransactionProposal
    dissenting: tuple[str, ...]
    reasons: tuple[str, ...] = ()


# ---- condition language ----

@dataclass(frozen=True)
class FieldRef:
    """A literal field of the proposed transaction, e.g. T.amount."""

    name: str


@dataclass(frozen=True)
class LookupRef:
    """Single-row lookup in the evaluator's committed state."""

    table: str
    column: str
    match_column: str | None = None
    match_value: Union[FieldRef, int, str, Decimal, None] = None


Operand = Union[FieldRef, LookupRef, int, str, Decimal]

_OPS = {
    "=": lambda a, b: a == b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class PredicateCondition:
    lhs: Operand
    op: str
    rhs: Operand


_TOKEN = r"""(?:'[^']*'|"[^"]*"|-?\d+\.\d+|-?\d+|[A-Za-z_][A-Za-z0-9_.]*)"""
_COND_RE = re.compile(
    rf"^\s*(?P<lhs>{_TOKEN})\s*(?P<op><=|>=|[=<>])\s*(?P<rhs>{_TOKEN})\s*"
    rf"(?:[Ww][Hh][Ee][Rr][Ee]\s+(?P<mcol>[A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(?P<mval>{_TOKEN})\s*)?$"
)


def _parse_operand(text: str):
    if text.startswith(("'", '"')):
        return text[1:-1]
    if re.fullmatch(r"-?\d+\.\d+", text):
        return Decimal(text)
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    if "." not in text:
        raise ConfigError(f"operand {text!r} needs a T. or table. qualifier")
    qualifier, name = text.split(".", 1)
    if qualifier in ("T", "t"):
        return FieldRef(name.lower())
    return LookupRef(qualifier.lower(), name.lower())


def parse_condition(text: str) -> PredicateCondition:
    """One comparison, e.g. "T.amount <= stocks.amount WHERE stocks.product = T.product"."""
    m = _COND_RE.match(text)
    if m is None:
        raise ConfigError(f"cannot parse condition {text!r}")
    lhs = _parse_operand(m.group("lhs"))
    rhs = _parse_operand(m.group("rhs"))
    if m.group("mcol") is not None:
        mcol = _parse_operand(m.group("mcol"))
        mval = _parse_operand(m.group("mval"))
        if not isinstance(mcol, LookupRef):
            raise ConfigError("WHERE key must be a table.column reference")

        def bind(ref):
            if isinstance(ref, LookupRef) and ref.table == mcol.table:
                return LookupRef(ref.table, ref.column, mcol.column, mval)
            return ref

        new_lhs, new_rhs = bind(lhs), bind(rhs)
        if new_lhs is lhs and new_rhs is rhs:
            raise ConfigError("WHERE clause does not match any lookup in the condition")
        lhs, rhs = new_lhs, new_rhs
    return PredicateCondition(lhs, m.group("op"), rhs)


@dataclass(frozen=True)
class AgreementPredicate:
    """Conjunction of conditions an organization applies to one table."""

    table: str
    conditions: tuple[PredicateCondition, ...]

    @classmethod
    def parse(cls, table: str, lines) -> "AgreementPredicate":
        return cls(table, tuple(parse_condition(line) for line in lines))


def transaction_fields(sql: str, catalog) -> dict[str, object]:
    """Literal fields visible to predicates: inserted values, SET literals,
    and WHERE equality literals.  Later statements win on name clashes."""
    fields: dict[str, object] = {}
    try:
        statements = parse_script(sql)
    except ParseError:
        return fields
    for stmt in statements:
        if isinstance(stmt, Insert):
            names = stmt.columns
            if names is None:
                schema = catalog.get(stmt.table)
                if schema is None:
                    continue
                names = tuple(c.name for c in schema.columns)
            for row in stmt.rows:
                for name, value in zip(names, row):
                    fields[name] = value
        elif isinstance(stmt, Update):
            for name, expr in stmt.assignments:
                if expr.is_literal:
                    fields[name] = expr.terms[0][1]
            for cond in stmt.where:
                if cond.op == "=":
                    fields[cond.column] = cond.value
        elif isinstance(stmt, (Delete, Select)):
            for cond in stmt.where:
                if cond.op == "=":
                    fields[cond.column] = cond.value
    return fields


def touched_tables(sql: str) -> set[str]:
    try:
        statements = parse_script(sql)
    except ParseError:
        return set()
    out = set()
    for stmt in statements:
        table = stmt.schema.name if hasattr(stmt, "schema") else stmt.table
        out.add(table)
    return out


def dml_tables(sql: str) -> set[str]:
    """Tables a transaction operates on with data statements.

    Creating a table is the act that installs its policy, not an operation
    against existing rows, so DDL never triggers predicate evaluation (the
    predicates' transaction fields would be vacuously unresolvable anyway).
    """
    try:
        statements = parse_script(sql)
    except ParseError:
        return set()
    return {stmt.table for stmt in statements if not isinstance(stmt, CreateTable)}


class _Unresolved(Exception):
    pass


def _resolve(operand, fields: dict, db):
    if isinstance(operand, FieldRef):
        try:
            return fields[operand.name]
        except KeyError:
            raise _Unresolved(f"transaction has no field {operand.name}") from None
    if isinstance(operand, LookupRef):
        table = db.tables.get(operand.table)
        if table is None:
            raise _Unresolved(f"no table {operand.table}")
        schema = table.schema
        try:
            col_idx = schema.column_index(operand.column)
        except Exception:
            raise _Unresolved(f"no column {operand.table}.{operand.column}") from None
        rows = list(table.rows.values())
        if operand.match_column is not None:
            match_value = _resolve(operand.match_value, fields, db)
            try:
                key_idx = schema.column_index(operand.match_column)
            except Exception:
                raise _Unresolved(
                    f"no column {operand.table}.{operand.match_column}"
                ) from None
            rows = [r for r in rows if r[key_idx] == match_value]
        if len(rows) != 1:
            raise _Unresolved(
                f"lookup {operand.table}.{operand.column} matched {len(rows)} rows"
            )
        return rows[0][col_idx]
    return operand


def evaluate_predicate(predicate: AgreementPredicate, fields: dict, db) -> bool:
    """True only when every condition resolves and holds."""
    for cond in predicate.conditions:
        try:
            lhs = _resolve(cond.lhs, fields, db)
            rhs = _resolve(cond.rhs, fields, db)
            if not _OPS[cond.op](lhs, rhs):
                return False
        except (_Unresolved, TypeError):
            return False
    return True


def required_orgs(sql: str, policies: dict[str, "AgreementPolicy"]) -> tuple[str, ...]:
    orgs: set[str] = set()
    for table in touched_tables(sql):
        policy = policies.get(table)
        if policy is not None:
            orgs.update(policy.required_orgs)
    return tuple(sorted(orgs))


@dataclass(frozen=True)
class AgreementPolicy:
    table: str
    required_orgs: tuple[str, ...]


def collect_agreements(
    proposal: TransactionProposal,
    policies: dict[str, AgreementPolicy],
    evaluators: dict[str, object],
) -> Union[ChainedTransaction, Rejected]:
    """Gather signed agreements from every required organization.

    evaluators maps org id to a callable(proposal) -> Agreement | None; None
    models an unreachable organization and refuses conservatively.
    """
    needed = required_orgs(proposal.sql, policies)
    agreements = []
    dissenting = []
    reasons = []
    for org in needed:
        evaluator = evaluators.get(org)
        agreement = evaluator(proposal) if evaluator is not None else None
        if agreement is None:
            dissenting.append(org)
            reasons.append(f"{org}: unreachable")
        elif not agreement.verdict:
            dissenting.append(org)
            reasons.append(f"{org}: predicate refused")
        else:
            agreements.append(agreement)
    if dissenting:
        return Rejected(proposal, tuple(dissenting), tuple(reasons))
    return ChainedTransaction(proposal, tuple(agreements))


def verify_chained_transaction(
    ct: ChainedTransaction,
    policies: dict[str, AgreementPolicy],
    registry: keys.KeyRegistry,
) -> bool:
    """Execution-time check: client signature plus every required agreement."""
    proposal = ct.proposal
    if not registry.known(proposal.client):
        return False
    if not registry.verify_as(proposal.client, proposal.signature, proposal.signed_payload()):
        return False
    digest = proposal.digest()
    by_org = {}
    for agreement in ct.agreements:
        if agreement.txn_digest != digest or not agreement.verdict:
            return False
        if not registry.known(agreement.org):
            return False
        if not registry.verify_as(agreement.org, agreement.signature, agreement.signed_payload()):
            return False
        by_org[agreement.org] = agreement
    for org in required_orgs(proposal.sql, policies):
        if org not in by_org:
            return False
    return True
