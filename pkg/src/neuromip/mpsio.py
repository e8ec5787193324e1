"""Reading MPS files and the canonical JSON interchange format.

The MPS reader handles free-format files: whitespace-separated tokens, the
sections NAME / ROWS / COLUMNS / RHS / RANGES / BOUNDS / ENDATA, integrality
markers, and RANGES with the standard semantics.  Errors carry the offending
line number.

The canonical JSON format is the versioned document every command and module
uses for file exchange.  Finite floats round-trip bit-exactly (shortest-repr
encoding); infinities are encoded as the strings "inf" / "-inf" because bare
Infinity is not valid JSON.
"""

from __future__ import annotations

import json
import math

import numpy as np
import scipy.sparse as sp

from .core import BINARY, CONTINUOUS, INTEGER, MipInstance

INSTANCE_FORMAT = "neuromip-instance"
ASSIGNMENT_FORMAT = "neuromip-assignment"
FORMAT_VERSION = 1


class MpsParseError(ValueError):
    """A defect in an MPS file, located by line number."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


_SECTIONS = {"NAME", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA"}
_BOUND_CODES_WITH_VALUE = {"UP", "LO", "FX", "UI", "LI"}
_BOUND_CODES_BARE = {"BV", "MI", "PL", "FR"}


def _number(token, lineno):
    try:
        return float(token)
    except ValueError:
        pass
    try:  # Fortran-style exponents (1.5D+02) appear in older files
        return float(token.replace("D", "E").replace("d", "e"))
    except ValueError:
        raise MpsParseError(lineno, f"malformed number {token!r}") from None


def parse_mps(text, name_hint="instance"):
    """Parse free-format MPS text into a MipInstance.

    Row senses: N (objective, exactly one), L (<=), G (>=), E (=).  RANGES
    turn a one-sided row with rhs b and range R into an interval: L rows get
    [b - |R|, b], G rows [b, b + |R|], E rows [b, b + R] for R >= 0 and
    [b + R, b] otherwise.  Variables default to [0, +inf); integer variables
    with no BOUNDS entry at all default to [0, 1], while any BOUNDS entry
    switches their default to [0, +inf) before entries apply.  An RHS entry r
    on the objective row is stored as an objective constant of -r.
    """
    name = name_hint
    section = None
    row_sense = {}
    row_order = []
    obj_row = None
    obj_coeffs = {}
    entries = {}
    col_order = []
    col_integer = {}
    rhs = {}
    obj_rhs = 0.0
    ranges = {}
    bound_entries = []
    in_integer_block = False
    marker_open_line = None
    saw_endata = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if saw_endata:
            break
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        is_header = not raw[0].isspace()
        tokens = raw.split()

        if is_header:
            head = tokens[0].upper()
            if head not in _SECTIONS:
                raise MpsParseError(lineno, f"unknown section {tokens[0]!r}")
            section = head
            if head == "NAME":
                if len(tokens) > 1:
                    name = tokens[1]
            elif head == "ENDATA":
                saw_endata = True
            continue

        if section is None:
            raise MpsParseError(lineno, "data before any section header")

        if section == "ROWS":
            if len(tokens) != 2:
                raise MpsParseError(lineno, "ROWS lines need a sense and a name")
            sense, rname = tokens[0].upper(), tokens[1]
            if sense not in ("N", "L", "G", "E"):
                raise MpsParseError(lineno, f"unknown row sense {tokens[0]!r}")
            if rname in row_sense or rname == obj_row:
                raise MpsParseError(lineno, f"duplicate row {rname!r}")
            if sense == "N":
                if obj_row is not None:
                    raise MpsParseError(
                        lineno, f"second objective row {rname!r}; exactly one N row allowed")
                obj_row = rname
            else:
                row_sense[rname] = sense
                row_order.append(rname)

        elif section == "COLUMNS":
            if len(tokens) >= 3 and tokens[1].strip("'\"").upper() == "MARKER":
                kind = tokens[2].strip("'\"").upper()
                if kind == "INTORG":
                    if in_integer_block:
                        raise MpsParseError(lineno, "nested INTORG marker")
                    in_integer_block = True
                    marker_open_line = lineno
                elif kind == "INTEND":
                    if not in_integer_block:
                        raise MpsParseError(lineno, "INTEND without matching INTORG")
                    in_integer_block = False
                else:
                    raise MpsParseError(lineno, f"unknown marker {tokens[2]!r}")
                continue
            if len(tokens) < 3 or len(tokens) % 2 == 0:
                raise MpsParseError(lineno, "COLUMNS lines need row/value pairs")
            col = tokens[0]
            if col not in col_integer:
                col_integer[col] = in_integer_block
                col_order.append(col)
            for rname, vtok in zip(tokens[1::2], tokens[2::2]):
                val = _number(vtok, lineno)
                if rname == obj_row:
                    obj_coeffs[col] = obj_coeffs.get(col, 0.0) + val
                elif rname in row_sense:
                    entries[(rname, col)] = entries.get((rname, col), 0.0) + val
                else:
                    raise MpsParseError(lineno, f"undeclared row {rname!r}")

        elif section == "RHS":
            if len(tokens) < 3 or len(tokens) % 2 == 0:
                raise MpsParseError(lineno, "RHS lines need row/value pairs")
            for rname, vtok in zip(tokens[1::2], tokens[2::2]):
                val = _number(vtok, lineno)
                if rname == obj_row:
                    obj_rhs = val
                elif rname in row_sense:
                    rhs[rname] = val
                else:
                    raise MpsParseError(lineno, f"undeclared row {rname!r}")

        elif section == "RANGES":
            if len(tokens) < 3 or len(tokens) % 2 == 0:
                raise MpsParseError(lineno, "RANGES lines need row/value pairs")
            for rname, vtok in zip(tokens[1::2], tokens[2::2]):
                val = _number(vtok, lineno)
                if rname not in row_sense:
                    raise MpsParseError(lineno, f"undeclared row {rname!r}")
                ranges[rname] = val

        elif section == "BOUNDS":
            code = tokens[0].upper()
            if code in _BOUND_CODES_WITH_VALUE:
                if len(tokens) < 4:
                    raise MpsParseError(lineno, f"bound code {code} needs a value")
                col, val = tokens[2], _number(tokens[3], lineno)
            elif code in _BOUND_CODES_BARE:
                if len(tokens) < 3:
                    raise MpsParseError(lineno, "BOUNDS lines need a set name and column")
                col, val = tokens[2], None
            else:
                raise MpsParseError(lineno, f"unknown bound code {tokens[0]!r}")
            if col not in col_integer:
                raise MpsParseError(lineno, f"undeclared column {col!r}")
            bound_entries.append((lineno, code, col, val))

        else:
            raise MpsParseError(lineno, f"data inside {section} not recognized")

    if in_integer_block:
        raise MpsParseError(marker_open_line, "INTORG marker never closed by INTEND")
    if obj_row is None:
        raise MpsParseError(0, "no objective (N) row declared")

    n = len(col_order)
    m = len(row_order)
    col_index = {cname: j for j, cname in enumerate(col_order)}
    row_index = {rname: i for i, rname in enumerate(row_order)}

    c = np.zeros(n)
    for cname, val in obj_coeffs.items():
        c[col_index[cname]] = val

    mat = sp.lil_matrix((m, n))
    for (rname, cname), val in entries.items():
        mat[row_index[rname], col_index[cname]] = val

    b_l = np.empty(m)
    b_u = np.empty(m)
    for rname in row_order:
        i = row_index[rname]
        b = rhs.get(rname, 0.0)
        sense = row_sense[rname]
        if sense == "L":
            b_l[i], b_u[i] = -np.inf, b
        elif sense == "G":
            b_l[i], b_u[i] = b, np.inf
        else:
            b_l[i], b_u[i] = b, b
        if rname in ranges:
            r = ranges[rname]
            if sense == "L":
                b_l[i] = b - abs(r)
            elif sense == "G":
                b_u[i] = b + abs(r)
            else:
                b_l[i], b_u[i] = (b, b + r) if r >= 0 else (b + r, b)

    has_bound_entry = {cname: False for cname in col_order}
    for _, _, cname, _ in bound_entries:
        has_bound_entry[cname] = True

    l = np.zeros(n)
    u = np.full(n, np.inf)
    kinds = np.array([CONTINUOUS] * n, dtype="U16")
    for cname in col_order:
        j = col_index[cname]
        if col_integer[cname]:
            kinds[j] = INTEGER
            if not has_bound_entry[cname]:
                u[j] = 1.0  # marker-integer columns without bounds default to [0, 1]

    explicit_lower = set()
    for lineno, code, cname, val in bound_entries:
        j = col_index[cname]
        if code == "UP":
            u[j] = val
            # classic rule: a negative upper bound with an untouched default
            # lower bound opens the lower side
            if val < 0 and cname not in explicit_lower:
                l[j] = -np.inf
        elif code == "LO":
            l[j] = val
            explicit_lower.add(cname)
        elif code == "FX":
            l[j] = u[j] = val
            explicit_lower.add(cname)
        elif code == "BV":
            l[j], u[j] = 0.0, 1.0
            kinds[j] = BINARY
        elif code == "MI":
            l[j] = -np.inf
            explicit_lower.add(cname)
        elif code == "PL":
            u[j] = np.inf
        elif code == "FR":
            l[j], u[j] = -np.inf, np.inf
            explicit_lower.add(cname)
        elif code == "UI":
            u[j] = val
            kinds[j] = INTEGER
        elif code == "LI":
            l[j] = val
            kinds[j] = INTEGER
            explicit_lower.add(cname)

    return MipInstance(
        name=name, c=c, A=mat.tocsr(), b_l=b_l, b_u=b_u, l=l, u=u,
        var_kinds=kinds, objective_constant=-obj_rhs)


def read_mps(path):
    with open(path, "r") as fh:
        text = fh.read()
    import os
    return parse_mps(text, name_hint=os.path.splitext(os.path.basename(path))[0])


def _encode_float(v):
    if math.isnan(v):
        raise ValueError("NaN cannot be serialized")
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _decode_float(v):
    if isinstance(v, str):
        if v == "inf":
            return math.inf
        if v == "-inf":
            return -math.inf
        raise ValueError(f"unexpected float encoding {v!r}")
    return float(v)


def instance_to_dict(instance):
    """The canonical dictionary form of an instance (see write_canonical)."""
    A = instance.A.tocsr()
    A.sum_duplicates()
    A.sort_indices()
    coo = A.tocoo()
    return {
        "format": INSTANCE_FORMAT,
        "version": FORMAT_VERSION,
        "name": instance.name,
        "n": int(instance.n),
        "m": int(instance.m),
        "objective": {
            "coefficients": [float(v) for v in instance.c],
            "constant": float(instance.objective_constant),
        },
        "matrix": {
            "shape": [int(instance.m), int(instance.n)],
            "row": [int(i) for i in coo.row],
            "col": [int(j) for j in coo.col],
            "data": [float(v) for v in coo.data],
        },
        "rows": {
            "lower": [_encode_float(v) for v in instance.b_l],
            "upper": [_encode_float(v) for v in instance.b_u],
        },
        "variables": {
            "lower": [_encode_float(v) for v in instance.l],
            "upper": [_encode_float(v) for v in instance.u],
            "kinds": [str(k) for k in instance.var_kinds],
        },
    }


def instance_from_dict(doc):
    if doc.get("format") != INSTANCE_FORMAT:
        raise ValueError(f"not an instance document: format={doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported instance document version {doc.get('version')!r}")
    m, n = doc["matrix"]["shape"]
    A = sp.coo_matrix(
        (np.array(doc["matrix"]["data"], dtype=float),
         (np.array(doc["matrix"]["row"], dtype=int),
          np.array(doc["matrix"]["col"], dtype=int))),
        shape=(m, n)).tocsr()
    return MipInstance(
        name=doc["name"],
        c=np.array(doc["objective"]["coefficients"], dtype=float),
        A=A,
        b_l=np.array([_decode_float(v) for v in doc["rows"]["lower"]]),
        b_u=np.array([_decode_float(v) for v in doc["rows"]["upper"]]),
        l=np.array([_decode_float(v) for v in doc["variables"]["lower"]]),
        u=np.array([_decode_float(v) for v in doc["variables"]["upper"]]),
        var_kinds=np.array(doc["variables"]["kinds"], dtype="U16"),
        objective_constant=float(doc["objective"]["constant"]),
    )


def write_canonical(instance, path):
    """Write the versioned JSON instance document.

    Finite floats are emitted with shortest-repr encoding and parse back to
    the identical bit pattern; infinities become "inf" / "-inf" strings.  The
    matrix is stored as row-major sorted COO triplets with duplicates merged.
    """
    with open(path, "w") as fh:
        json.dump(instance_to_dict(instance), fh, indent=1)
        fh.write("\n")


def read_canonical(path):
    with open(path, "r") as fh:
        return instance_from_dict(json.load(fh))


def assignment_to_dict(values, instance_name="", objective=None):
    doc = {
        "format": ASSIGNMENT_FORMAT,
        "version": FORMAT_VERSION,
        "instance": instance_name,
        "values": [float(v) for v in np.asarray(values, dtype=float)],
    }
    if objective is not None:
        doc["objective"] = float(objective)
    return doc


def assignment_from_dict(doc):
    if doc.get("format") != ASSIGNMENT_FORMAT:
        raise ValueError(f"not an assignment document: format={doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported assignment document version {doc.get('version')!r}")
    return np.array(doc["values"], dtype=float)


def write_assignment(values, path, instance_name="", objective=None):
    with open(path, "w") as fh:
        json.dump(assignment_to_dict(values, instance_name, objective), fh, indent=1)
        fh.write("\n")


def read_assignment(path):
    with open(path, "r") as fh:
        return assignment_from_dict(json.load(fh))
