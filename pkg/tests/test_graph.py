"""Graph construction, Laplacian spectra, components and ICAR draws."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsrlab.datasets import us48_graph
from rsrlab.errors import DataFormatError, DisconnectedGraph, InvalidEdge, InvalidParameter
from rsrlab.graph import (connected_components, laplacian_eigen, load_graph, read_edge_list,
                          require_connected, sample_icar, write_edge_list)

from conftest import cycle_graph, path_graph

# Contiguous-US neighbours typed in by hand from a state map (shared border
# or shared corner, so the Four Corners pairs AZ-CO and NM-UT are present).
HAND_NEIGHBOURS = """
AL: FL GA MS TN
AZ: CA CO NM NV UT
AR: LA MO MS OK TN TX
CA: AZ NV OR
CO: AZ KS NE NM OK UT WY
CT: MA NY RI
DE: MD NJ PA
FL: AL GA
GA: AL FL NC SC TN
ID: MT NV OR UT WA WY
IL: IA IN KY MO WI
IN: IL KY MI OH
IA: IL MN MO NE SD WI
KS: CO MO NE OK
KY: IL IN MO OH TN VA WV
LA: AR MS TX
ME: NH
MD: DE PA VA WV
MA: CT NH NY RI VT
MI: IN OH WI
MN: IA ND SD WI
MS: AL AR LA TN
MO: AR IA IL KS KY NE OK TN
MT: ID ND SD WY
NE: CO IA KS MO SD WY
NV: AZ CA ID OR UT
NH: MA ME VT
NJ: DE NY PA
NM: AZ CO OK TX UT
NY: CT MA NJ PA VT
NC: GA SC TN VA
ND: MN MT SD
OH: IN KY MI PA WV
OK: AR CO KS MO NM TX
OR: CA ID NV WA
PA: DE MD NJ NY OH WV
RI: CT MA
SC: GA NC
SD: IA MN MT ND NE WY
TN: AL AR GA KY MO MS NC VA
TX: AR LA NM OK
UT: AZ CO ID NM NV WY
VT: MA NH NY
VA: KY MD NC TN WV
WA: ID OR
WV: KY MD OH PA VA
WI: IA IL MI MN
WY: CO ID MT NE SD UT
"""


def _hand_pairs():
    pairs = set()
    for line in HAND_NEIGHBOURS.strip().splitlines():
        a, rest = line.split(":")
        for b in rest.split():
            pairs.add(tuple(sorted((a, b))))
    return pairs


class TestLoadGraph:
    def test_path_degrees(self):
        g = load_graph([(0, 1), (1, 2)], 3)
        np.testing.assert_array_equal(g.degrees, [1, 2, 1])

    def test_duplicate_edges_collapse(self):
        g = load_graph([(0, 1), (1, 0)], 2)
        assert g.A[0, 1] == g.A[1, 0] == 1
        assert g.edges.shape == (1, 2)

    def test_self_loop_rejected(self):
        with pytest.raises(InvalidEdge, match="self-loop"):
            load_graph([(0, 0)], 2)

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidEdge, match="outside"):
            load_graph([(0, 3)], 3)

    def test_names_length_checked(self):
        with pytest.raises(InvalidParameter):
            load_graph([(0, 1)], 2, names=["a"])

    def test_adjacency_is_read_only(self):
        g = path_graph(3)
        with pytest.raises(ValueError):
            g.A[0, 1] = 0


class TestEdgeListFiles:
    def test_round_trip(self, tmp_path):
        g = cycle_graph(6)
        f = tmp_path / "c6.edges"
        write_edge_list(g, f, header="six cycle")
        h = read_edge_list(f)
        np.testing.assert_array_equal(g.A, h.A)

    def test_vertex_count_comment(self, tmp_path):
        f = tmp_path / "g.edges"
        f.write_text("# n 5\n0 1\n1 2\n")
        assert read_edge_list(f).n == 5

    def test_bad_line_reports_line_number(self, tmp_path):
        f = tmp_path / "g.edges"
        f.write_text("0 1\n1 two\n")
        with pytest.raises(DataFormatError, match=":2:"):
            read_edge_list(f)

    def test_three_fields_rejected(self, tmp_path):
        f = tmp_path / "g.edges"
        f.write_text("# comment\n0 1 2\n")
        with pytest.raises(DataFormatError, match=":2:"):
            read_edge_list(f)


class TestUs48:
    def test_matches_hand_list(self):
        g = us48_graph()
        assert g.n == 48
        got = {tuple(sorted((g.names[i], g.names[j]))) for i, j in g.edges}
        assert got == _hand_pairs()

    def test_connected(self):
        g = us48_graph()
        assert len(connected_components(g)) == 1
        assert laplacian_eigen(g).kernel_dim == 1


class TestLaplacianSpectrum:
    def test_path3_by_hand(self):
        # Q = [[1,-1,0],[-1,2,-1],[0,-1,1]] has characteristic roots 3, 1, 0
        eig = laplacian_eigen(path_graph(3))
        np.testing.assert_allclose(eig.lam, [3.0, 1.0, 0.0], atol=1e-12)

    def test_complete4(self):
        g = load_graph([(i, j) for i in range(4) for j in range(i + 1, 4)], 4)
        np.testing.assert_allclose(laplacian_eigen(g).lam, [4, 4, 4, 0], atol=1e-12)

    def test_two_components_two_zeros(self):
        g = load_graph([(0, 1), (2, 3)], 4)
        eig = laplacian_eigen(g)
        assert eig.kernel_dim == 2

    def test_cycle_closed_form(self):
        n = 7
        want = np.sort(2 - 2 * np.cos(2 * np.pi * np.arange(n) / n))[::-1]
        np.testing.assert_allclose(laplacian_eigen(cycle_graph(n)).lam, want, atol=1e-12)

    def test_laplacian_kills_constants_exactly(self):
        Q = us48_graph().laplacian()
        assert np.all(Q @ np.ones(48) == 0.0)


class TestComponents:
    def test_path_one(self):
        assert len(connected_components(path_graph(4))) == 1

    def test_isolated_edges(self):
        comps = connected_components(load_graph([(0, 1), (2, 3)], 4))
        assert [list(c) for c in comps] == [[0, 1], [2, 3]]

    def test_require_connected(self):
        with pytest.raises(DisconnectedGraph):
            require_connected(load_graph([(0, 1)], 3))


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(2, 12))
    # random spanning tree plus extra edges keeps the graph connected
    parents = [draw(st.integers(0, k - 1)) for k in range(1, n)]
    edges = [(k, parents[k - 1]) for k in range(1, n)]
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    edges += [(i, j) for i, j in extra if i != j]
    return load_graph(edges, n)


class TestLaplacianProperties:
    @settings(max_examples=60, deadline=None)
    @given(connected_graphs())
    def test_psd_one_kernel_vector(self, g):
        eig = laplacian_eigen(g)
        assert eig.lam[-1] == pytest.approx(0.0, abs=1e-10)
        assert np.all(eig.lam >= -1e-10)
        assert eig.kernel_dim == 1
        np.testing.assert_allclose(eig.V.T @ eig.V, np.eye(g.n), atol=1e-10)
        np.testing.assert_allclose(eig.V @ np.diag(eig.lam) @ eig.V.T, eig.Q, atol=1e-10)
        assert np.all(np.diff(eig.lam) <= 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(connected_graphs(), st.floats(0.1, 10.0))
    def test_icar_draw_sums_to_zero(self, g, tau):
        d = sample_icar(laplacian_eigen(g), tau, np.random.default_rng(0), size=3)
        np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-10)


class TestIcarDraws:
    def test_precision_scaling(self):
        eig = laplacian_eigen(path_graph(6))
        d1 = sample_icar(eig, 1.0, np.random.default_rng(3))
        d4 = sample_icar(eig, 4.0, np.random.default_rng(3))
        np.testing.assert_allclose(d4, d1 / 2, atol=1e-14)

    def test_covariance_is_pseudo_inverse(self):
        g = path_graph(5)
        tau = 2.0
        d = sample_icar(laplacian_eigen(g), tau, np.random.default_rng(11), size=100_000)
        target = np.linalg.pinv(tau * g.laplacian())
        S = d.T @ d / d.shape[0]
        assert np.linalg.norm(S - target) / np.linalg.norm(target) < 0.05

    def test_rejects_bad_precision(self):
        with pytest.raises(InvalidParameter):
            sample_icar(laplacian_eigen(path_graph(3)), 0.0, np.random.default_rng(0))

    def test_rejects_disconnected(self):
        eig = laplacian_eigen(load_graph([(0, 1), (2, 3)], 4))
        with pytest.raises(DisconnectedGraph):
            sample_icar(eig, 1.0, np.random.default_rng(0))
