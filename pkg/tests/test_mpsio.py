"""MPS parsing and the canonical JSON interchange format."""

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from neuromip.core import BINARY, CONTINUOUS, INTEGER, MipInstance
from neuromip.generators import knapsack_instance, set_cover_instance
from neuromip.mpsio import (
    MpsParseError,
    instance_from_dict,
    instance_to_dict,
    parse_mps,
    read_assignment,
    read_canonical,
    read_mps,
    write_assignment,
    write_canonical,
)

BASIC_MPS = """\
NAME          TINY
ROWS
 N  COST
 L  LIM1
 G  LIM2
 E  EQ1
COLUMNS
    X1        COST          1.0    LIM1          2.0
    X1        LIM2          1.0
    MARKER                  'MARKER'             'INTORG'
    Y1        COST         -3.0    LIM1          1.0
    Y1        EQ1           1.0
    MARKER                  'MARKER'             'INTEND'
RHS
    RHS       LIM1          8.0    LIM2          1.0
    RHS       EQ1           2.0
BOUNDS
 UP BND       X1            4.0
ENDATA
"""


class TestParseBasics:
    def test_shapes_and_name(self):
        inst = parse_mps(BASIC_MPS)
        assert inst.name == "TINY"
        assert inst.n == 2 and inst.m == 3

    def test_objective_row_excluded_from_matrix(self):
        inst = parse_mps(BASIC_MPS)
        np.testing.assert_array_equal(inst.c, [1.0, -3.0])
        dense = inst.A.toarray()
        np.testing.assert_array_equal(dense, [[2.0, 1.0], [1.0, 0.0],
                                              [0.0, 1.0]])

    def test_row_senses_become_intervals(self):
        inst = parse_mps(BASIC_MPS)
        np.testing.assert_array_equal(inst.b_l, [-np.inf, 1.0, 2.0])
        np.testing.assert_array_equal(inst.b_u, [8.0, np.inf, 2.0])

    def test_marker_block_sets_integrality(self):
        inst = parse_mps(BASIC_MPS)
        assert inst.var_kinds[0] == CONTINUOUS
        assert inst.var_kinds[1] == INTEGER

    def test_integer_without_bounds_defaults_to_unit_box(self):
        inst = parse_mps(BASIC_MPS)
        assert (inst.l[1], inst.u[1]) == (0.0, 1.0)

    def test_continuous_default_and_up_bound(self):
        inst = parse_mps(BASIC_MPS)
        assert (inst.l[0], inst.u[0]) == (0.0, 4.0)

    def test_name_hint_used_when_no_name_token(self):
        inst = parse_mps("NAME\nROWS\n N  C\nCOLUMNS\n    X  C  1.0\nENDATA\n",
                         name_hint="fallback")
        assert inst.name == "fallback"

    def test_comment_and_blank_lines_ignored(self):
        text = "* header comment\n\n" + BASIC_MPS.replace(
            "RHS\n    RHS", "RHS\n* inline comment\n    RHS")
        inst = parse_mps(text)
        assert inst.n == 2

    def test_fortran_exponent(self):
        text = BASIC_MPS.replace("2.0    LIM2          1.0",
                                 "2.0    LIM2          1.0D0")
        inst = parse_mps(text)
        assert inst.b_l[1] == 1.0

    def test_repeated_entries_accumulate(self):
        text = """\
NAME T
ROWS
 N  C
 L  R
COLUMNS
    X  C  1.0  R  2.0
    X  R  3.0
RHS
    RHS  R  10.0
ENDATA
"""
        inst = parse_mps(text)
        assert inst.A.toarray()[0, 0] == 5.0


class TestBounds:
    def make(self, bounds_block):
        return parse_mps(
            "NAME T\nROWS\n N  C\n L  R\nCOLUMNS\n    X  C  1.0  R  1.0\n"
            "RHS\n    RHS  R  5.0\nBOUNDS\n" + bounds_block + "ENDATA\n")

    def test_bv_makes_binary_unit_box(self):
        inst = self.make(" BV BND X\n")
        assert inst.var_kinds[0] == BINARY
        assert (inst.l[0], inst.u[0]) == (0.0, 1.0)

    def test_fx_pins_both_sides(self):
        inst = self.make(" FX BND X 2.5\n")
        assert (inst.l[0], inst.u[0]) == (2.5, 2.5)

    def test_mi_opens_lower_side(self):
        inst = self.make(" MI BND X\n")
        assert inst.l[0] == -np.inf and inst.u[0] == np.inf

    def test_fr_opens_both_sides(self):
        inst = self.make(" FR BND X\n")
        assert inst.l[0] == -np.inf and inst.u[0] == np.inf

    def test_negative_up_without_lower_opens_lower_side(self):
        inst = self.make(" UP BND X -1.0\n")
        assert inst.u[0] == -1.0
        assert inst.l[0] == -np.inf

    def test_negative_up_after_explicit_lower_keeps_it(self):
        inst = self.make(" LO BND X -5.0\n UP BND X -1.0\n")
        assert (inst.l[0], inst.u[0]) == (-5.0, -1.0)

    def test_ui_li_switch_kind_to_integer(self):
        inst = self.make(" LI BND X 1\n UI BND X 9\n")
        assert inst.var_kinds[0] == INTEGER
        assert (inst.l[0], inst.u[0]) == (1.0, 9.0)

    def test_any_bounds_entry_disables_integer_unit_default(self):
        text = ("NAME T\nROWS\n N  C\n L  R\nCOLUMNS\n"
                "    MARKER  'MARKER'  'INTORG'\n    X  C  1.0  R  1.0\n"
                "    MARKER  'MARKER'  'INTEND'\nRHS\n    RHS  R  5.0\n"
                "BOUNDS\n LO BND X 2.0\nENDATA\n")
        inst = parse_mps(text)
        assert (inst.l[0], inst.u[0]) == (2.0, np.inf)


class TestRangesAndRhs:
    def make(self, sense, rhs, rng):
        return parse_mps(
            f"NAME T\nROWS\n N  C\n {sense}  R\nCOLUMNS\n    X  C  1.0  R  1.0\n"
            f"RHS\n    RHS  R  {rhs}\nRANGES\n    RNG  R  {rng}\nENDATA\n")

    def test_l_row_range(self):
        inst = self.make("L", 10.0, -4.0)
        assert (inst.b_l[0], inst.b_u[0]) == (6.0, 10.0)

    def test_g_row_range(self):
        inst = self.make("G", 3.0, 2.0)
        assert (inst.b_l[0], inst.b_u[0]) == (3.0, 5.0)

    def test_e_row_positive_range(self):
        inst = self.make("E", 1.0, 2.0)
        assert (inst.b_l[0], inst.b_u[0]) == (1.0, 3.0)

    def test_e_row_negative_range(self):
        inst = self.make("E", 1.0, -2.0)
        assert (inst.b_l[0], inst.b_u[0]) == (-1.0, 1.0)

    def test_objective_rhs_becomes_negated_constant(self):
        text = ("NAME T\nROWS\n N  C\n L  R\nCOLUMNS\n    X  C  1.0  R  1.0\n"
                "RHS\n    RHS  C  7.0  R  5.0\nENDATA\n")
        inst = parse_mps(text)
        assert inst.objective_constant == -7.0

    def test_missing_rhs_defaults_to_zero(self):
        text = "NAME T\nROWS\n N  C\n L  R\nCOLUMNS\n    X  C  1.0  R  1.0\nENDATA\n"
        inst = parse_mps(text)
        assert inst.b_u[0] == 0.0


class TestParseErrors:
    @pytest.mark.parametrize("text, lineno, fragment", [
        ("NAME T\nBOGUS\n", 2, "unknown section"),
        ("NAME T\nROWS\n N  C\nCOLUMNS\n    X  C  1.0  R  2.0\nENDATA\n",
         5, "undeclared row"),
        ("NAME T\nROWS\n N  C\n L  R\nCOLUMNS\n    X  C  zap\nENDATA\n",
         6, "malformed number"),
        ("NAME T\nROWS\n N  C\n N  C2\n", 4, "second objective"),
        ("NAME T\nROWS\n L  R\n L  R\n", 4, "duplicate row"),
        ("NAME T\nROWS\n N  C\n Q  R\n", 4, "unknown row sense"),
        ("NAME T\nROWS\n N  C\n L  R\nCOLUMNS\n    X  C  1.0\n"
         "BOUNDS\n ZZ BND X 1.0\nENDATA\n", 8, "unknown bound code"),
        ("NAME T\nROWS\n N  C\n L  R\nCOLUMNS\n    X  C  1.0\n"
         "BOUNDS\n UP BND Y 1.0\nENDATA\n", 8, "undeclared column"),
        (" LEADING DATA\n", 1, "data before any section"),
    ])
    def test_error_location_and_message(self, text, lineno, fragment):
        with pytest.raises(MpsParseError) as exc:
            parse_mps(text)
        assert exc.value.line_number == lineno
        assert fragment in str(exc.value)

    def test_unclosed_intorg_points_at_marker(self):
        text = ("NAME T\nROWS\n N  C\n L  R\nCOLUMNS\n"
                "    MARKER  'MARKER'  'INTORG'\n    X  C  1.0\nENDATA\n")
        with pytest.raises(MpsParseError) as exc:
            parse_mps(text)
        assert exc.value.line_number == 6
        assert "INTORG" in str(exc.value)

    def test_missing_objective_row(self):
        with pytest.raises(MpsParseError, match="no objective"):
            parse_mps("NAME T\nROWS\n L  R\nCOLUMNS\n    X  R  1.0\nENDATA\n")


class TestReadMps:
    def test_file_round_trip_uses_stem_as_hint(self, tmp_path):
        path = tmp_path / "widget.mps"
        path.write_text(BASIC_MPS.replace("NAME          TINY", "NAME"))
        inst = read_mps(path)
        assert inst.name == "widget"
        assert inst.n == 2


class TestCanonicalFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        inst = knapsack_instance(n_vars=7, n_rows=3, seed=5)
        path = tmp_path / "inst.json"
        write_canonical(inst, path)
        back = read_canonical(path)
        assert back.equals(inst)

    def test_round_trip_preserves_infinities(self, tmp_path):
        inst = set_cover_instance(n_items=4, n_sets=6, seed=2)
        assert np.any(np.isinf(inst.b_u))
        path = tmp_path / "inst.json"
        write_canonical(inst, path)
        assert read_canonical(path).equals(inst)

    def test_round_trip_empty_matrix(self, tmp_path):
        inst = MipInstance(name="boxes", c=[1.0, -1.0],
                           A=sp.csr_matrix((0, 2)), b_l=[], b_u=[],
                           l=[0.0, -np.inf], u=[np.inf, 3.0],
                           var_kinds=[CONTINUOUS, INTEGER])
        path = tmp_path / "inst.json"
        write_canonical(inst, path)
        assert read_canonical(path).equals(inst)

    def test_awkward_floats_survive(self, tmp_path):
        vals = [0.1, 1 / 3, math.pi, 1e-300, -2.2250738585072014e-308]
        inst = MipInstance(name="f", c=vals[:2] + [vals[2]],
                           A=sp.csr_matrix(np.array([vals[:3]])),
                           b_l=[vals[3]], b_u=[vals[4] + 1.0],
                           l=[0, 0, 0], u=[1, 1, 1],
                           var_kinds=[CONTINUOUS] * 3)
        path = tmp_path / "f.json"
        write_canonical(inst, path)
        assert read_canonical(path).equals(inst)

    def test_nan_refused(self):
        inst = knapsack_instance(n_vars=3, n_rows=1, seed=0)
        inst.b_u[0] = math.nan
        with pytest.raises(ValueError, match="NaN"):
            instance_to_dict(inst)

    def test_wrong_format_tag_rejected(self):
        doc = instance_to_dict(knapsack_instance(n_vars=3, n_rows=1, seed=0))
        doc["format"] = "something-else"
        with pytest.raises(ValueError, match="not an instance"):
            instance_from_dict(doc)

    def test_wrong_version_rejected(self):
        doc = instance_to_dict(knapsack_instance(n_vars=3, n_rows=1, seed=0))
        doc["version"] = 99
        with pytest.raises(ValueError, match="version"):
            instance_from_dict(doc)

    def test_matrix_entries_sorted_row_major(self):
        inst = knapsack_instance(n_vars=6, n_rows=4, seed=8)
        doc = instance_to_dict(inst)
        keys = list(zip(doc["matrix"]["row"], doc["matrix"]["col"]))
        assert keys == sorted(keys)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 8),
           m=st.integers(1, 5))
    def test_round_trip_property(self, tmp_path_factory, seed, n, m):
        inst = knapsack_instance(n_vars=n, n_rows=m, seed=seed)
        assert instance_from_dict(instance_to_dict(inst)).equals(inst)


class TestAssignments:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "sol.json"
        write_assignment([1.0, 0.0, 2.5], path, instance_name="k",
                         objective=-4.5)
        np.testing.assert_array_equal(read_assignment(path), [1.0, 0.0, 2.5])

    def test_wrong_format_tag_rejected(self, tmp_path):
        inst = knapsack_instance(n_vars=3, n_rows=1, seed=0)
        path = tmp_path / "inst.json"
        write_canonical(inst, path)
        with pytest.raises(ValueError, match="not an assignment"):
            read_assignment(path)


class TestMpsCanonicalPipeline:
    def test_mps_to_canonical_preserves_solution(self, tmp_path):
        # A tiny knapsack written by hand: max 10a + 6b (min the negation)
        # with 5a + 4b <= 8 picks a = 1, b = 0.
        text = """\
NAME KNAP
ROWS
 N  OBJ
 L  CAP
COLUMNS
    MARKER  'MARKER'  'INTORG'
    A  OBJ  -10.0  CAP  5.0
    B  OBJ  -6.0   CAP  4.0
    MARKER  'MARKER'  'INTEND'
RHS
    RHS  CAP  8.0
ENDATA
"""
        inst = parse_mps(text)
        path = tmp_path / "k.json"
        write_canonical(inst, path)
        back = read_canonical(path)
        from oracles import enumerate_binary_optimum
        obj, x = enumerate_binary_optimum(back)
        assert obj == -10.0
        np.testing.assert_array_equal(x, [1.0, 0.0])
