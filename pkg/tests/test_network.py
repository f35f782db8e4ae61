import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbpse.network import (
    Branch,
    Bus,
    CaseFormatError,
    Network,
    build_admittance,
    format_network,
    load_network,
    neighbors,
    parse_network,
)

from conftest import DATA

TWO_BUS_CASE = """\
# two buses, one line
BUS
1 1
2 0
BRANCH
1 2 5 -15 0
"""


def test_load_two_bus(tmp_path):
    path = tmp_path / "two.case"
    path.write_text(TWO_BUS_CASE)
    net = load_network(path)
    assert net.n_bus == 2
    assert net.branches == (Branch(0, 1, 5.0, -15.0, 0.0),)
    assert net.labels == (1, 2)
    assert net.slack == 0


def test_load_ieee14():
    net = load_network(DATA / "ieee14.case")
    assert net.n_bus == 14
    assert len(net.branches) == 20
    assert net.slack == 0


def test_unknown_bus_reports_line():
    text = "BUS\n1 1\n2 0\nBRANCH\n1 99 1 -2 0\n"
    with pytest.raises(CaseFormatError, match="unknown bus 99") as exc:
        parse_network(text)
    assert exc.value.line == 5


def test_duplicate_bus():
    with pytest.raises(CaseFormatError, match="duplicate bus id 1"):
        parse_network("BUS\n1 1\n1 0\n")


@pytest.mark.parametrize(
    "text, line",
    [
        ("BUS\n1 x\n", 2),
        ("BUS\n1 1\nBRANCH\n1 1 1 1 0\n", 4),
        ("1 1\n", 1),
        ("BUS\n1 1\n2 0\nBRANCH\n1 2 -1 -2 0\n", 5),
        ("BUS\n1 1\n2 0\nBRANCH\n1 2 1 -2\n", 5),
    ],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(CaseFormatError) as exc:
        parse_network(text)
    assert exc.value.line == line


def test_noncontiguous_ids_are_normalized():
    net = parse_network("BUS\n10 0\n3 1\n7 0\nBRANCH\n3 10 1 -2 0\n")
    assert net.labels == (3, 7, 10)
    assert net.slack == 0
    assert net.branches[0].from_bus == 0 and net.branches[0].to_bus == 2
    assert net.bus_index(10) == 2


def test_round_trip_is_bit_exact():
    net = load_network(DATA / "ieee14.case")
    again = parse_network(format_network(net))
    assert again.branches == net.branches
    assert again.buses == net.buses
    assert again.labels == net.labels


def test_single_branch_admittance():
    net = Network(buses=(Bus(0), Bus(1)), branches=(Branch(0, 1, 5.0, -15.0, 0.0),))
    adm = build_admittance(net)
    assert adm.G == {(0, 1): -5.0, (1, 0): -5.0, (0, 0): 5.0, (1, 1): 5.0}
    assert adm.B == {(0, 1): 15.0, (1, 0): 15.0, (0, 0): -15.0, (1, 1): -15.0}


def test_no_branches():
    net = Network(buses=(Bus(0), Bus(1)), branches=())
    adm = build_admittance(net)
    assert adm.G == {(0, 0): 0.0, (1, 1): 0.0}
    assert adm.B == {(0, 0): 0.0, (1, 1): 0.0}


def test_parallel_branches_sum():
    net = Network(buses=(Bus(0), Bus(1)), branches=(Branch(0, 1, 1.0, -2.0), Branch(0, 1, 1.0, -2.0)))
    adm = build_admittance(net)
    assert adm.G[0, 1] == -2.0
    assert adm.G[0, 0] == 2.0
    assert len(net.branches) == 2


def test_shunt_on_both_ends():
    net = Network(buses=(Bus(0), Bus(1)), branches=(Branch(0, 1, 0.0, -10.0, 0.2),))
    adm = build_admittance(net)
    assert adm.B[0, 0] == pytest.approx(-9.8)
    assert adm.B[1, 1] == pytest.approx(-9.8)
    assert adm.B[0, 1] == 10.0


def test_neighbors():
    net = Network(buses=(Bus(0), Bus(1), Bus(2)), branches=(Branch(0, 1, 5.0, -15.0),))
    assert neighbors(net, 0) == {0, 1}
    assert neighbors(net, 0, include_self=False) == {1}
    assert neighbors(net, 2, include_self=False) == set()
    with pytest.raises(KeyError):
        neighbors(net, 5)


@st.composite
def networks(draw, shunts=True):
    n = draw(st.integers(2, 8))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1])
    values = st.floats(0.0, 50.0, allow_nan=False)
    raw = draw(st.lists(st.tuples(pairs, values, values, values if shunts else st.just(0.0)), max_size=12))
    branches = tuple(Branch(i, j, g, -b, sh) for (i, j), g, b, sh in raw)
    return Network(buses=tuple(Bus(k) for k in range(n)), branches=branches)


@settings(max_examples=200, deadline=None)
@given(networks())
def test_admittance_symmetric_and_same_pattern(net):
    adm = build_admittance(net)
    assert adm.G.keys() == adm.B.keys()
    for (i, j), v in adm.G.items():
        assert adm.G[j, i] == v
        assert adm.B[j, i] == adm.B[i, j]
    expected = {(i, i) for i in range(net.n_bus)}
    for br in net.branches:
        expected |= {(br.from_bus, br.to_bus), (br.to_bus, br.from_bus)}
    assert set(adm.G) == expected


@settings(max_examples=200, deadline=None)
@given(networks(shunts=False))
def test_row_consistency_exact(net):
    adm = build_admittance(net)
    for i in range(net.n_bus):
        others = sorted(neighbors(net, i, include_self=False))
        g, b = 0.0, 0.0
        for j in others:
            g -= adm.G[i, j]
            b -= adm.B[i, j]
        assert adm.G[i, i] == g
        assert adm.B[i, i] == b


@settings(max_examples=50, deadline=None)
@given(networks())
def test_rebuild_is_identical(net):
    a, b = build_admittance(net), build_admittance(net)
    assert a.G == b.G and a.B == b.B
    ga, ba = a.dense()
    gb, bb = b.dense()
    assert np.array_equal(ga, gb) and np.array_equal(ba, bb)
