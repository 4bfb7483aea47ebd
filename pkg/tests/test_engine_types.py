"""Value coercion, canonical encodings, and quirk plumbing."""

from decimal import Decimal

import pytest

from effectledger.engine.types import (
    Column,
    ColumnType,
    DecimalRounding,
    QuirkConfig,
    TableSchema,
    TextCollation,
    UNIT_SEP,
    canonical_value_bytes,
    coerce_value,
    encode_row,
    ordering_key,
    pk_bytes,
)
from effectledger.errors import BindError, ConstraintViolation

INT_COL = Column("n", ColumnType.INT)
TEXT_COL = Column("t", ColumnType.TEXT)
MONEY = Column("m", ColumnType.DECIMAL, scale=2)
DEFAULTS = QuirkConfig()


def test_int_range_is_signed_64_bit():
    assert coerce_value(INT_COL, 2**63 - 1, DEFAULTS) == 2**63 - 1
    assert coerce_value(INT_COL, -(2**63), DEFAULTS) == -(2**63)
    with pytest.raises(ConstraintViolation):
        coerce_value(INT_COL, 2**63, DEFAULTS)
    with pytest.raises(ConstraintViolation):
        coerce_value(INT_COL, -(2**63) - 1, DEFAULTS)


def test_int_rejects_non_integer_values():
    # type mismatches are binding errors, distinct from range violations
    with pytest.raises(BindError):
        coerce_value(INT_COL, Decimal("1.5"), DEFAULTS)
    with pytest.raises(BindError):
        coerce_value(INT_COL, "7", DEFAULTS)
    with pytest.raises(BindError):
        coerce_value(INT_COL, True, DEFAULTS)


def test_decimal_rounding_quirk_half_even_vs_truncate():
    half_even = QuirkConfig(decimal_rounding=DecimalRounding.HALF_EVEN)
    truncate = QuirkConfig(decimal_rounding=DecimalRounding.TRUNCATE)
    value = Decimal("1.005")
    assert coerce_value(MONEY, value, half_even) == Decimal("1.00")  # ties to even
    assert coerce_value(MONEY, Decimal("1.015"), half_even) == Decimal("1.02")
    assert coerce_value(MONEY, Decimal("1.019"), truncate) == Decimal("1.01")
    # third digit >= 6 always splits the two modes
    assert coerce_value(MONEY, Decimal("1.006"), half_even) != coerce_value(
        MONEY, Decimal("1.006"), truncate
    )


def test_decimal_negative_zero_normalizes():
    assert str(coerce_value(MONEY, Decimal("-0.001"), DEFAULTS)) == "0.00"


def test_canonical_bytes_stable_across_value_forms():
    assert canonical_value_bytes(INT_COL, 7) == b"7"
    assert canonical_value_bytes(MONEY, Decimal("1.50")) == b"1.50"
    assert canonical_value_bytes(TEXT_COL, "héllo") == "héllo".encode("utf-8")


def test_encode_row_length_prefixed_and_separated():
    schema = TableSchema("x", (INT_COL, TEXT_COL), ("n",))
    row = (5, "ab")
    assert encode_row(schema, row) == b"2" + UNIT_SEP + b"5" + UNIT_SEP + b"ab"


def test_pk_bytes_composite():
    schema = TableSchema("x", (INT_COL, TEXT_COL, MONEY), ("n", "t"))
    row = (5, "k", Decimal("1.00"))
    assert pk_bytes(schema, row) == b"5" + UNIT_SEP + b"k"


def test_text_ordering_quirk_only_affects_order_key():
    ci = QuirkConfig(text_collation_for_order=TextCollation.CASE_INSENSITIVE)
    assert ordering_key(TEXT_COL, "Apple", ci) == ordering_key(TEXT_COL, "apple", ci)
    assert ordering_key(TEXT_COL, "Apple", DEFAULTS) != ordering_key(
        TEXT_COL, "apple", DEFAULTS
    )


def test_quirk_config_from_dict_round_trip():
    quirks = QuirkConfig.from_dict(
        {"decimal_rounding": "truncate", "text_collation_for_order": "case_insensitive",
         "update_noop_emits_digest": False}
    )
    assert quirks.decimal_rounding is DecimalRounding.TRUNCATE
    assert quirks.text_collation_for_order is TextCollation.CASE_INSENSITIVE
    assert quirks.update_noop_emits_digest is False


def test_schema_requires_known_pk_columns():
    with pytest.raises(BindError):
        TableSchema("x", (INT_COL,), ("missing",))


def test_decimal_scale_bounds():
    with pytest.raises(BindError):
        Column("m", ColumnType.DECIMAL, scale=-1)
