from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from geowalk.alignment import (
    AlignmentParams,
    SegmentItem,
    alignment_margins,
    check_local_to_global,
    find_linkage_set,
    is_aligned,
    segment_item,
    translate_chain,
    verify_linkage_set,
)
from geowalk.errors import HypothesisViolated, PreconditionError, SearchExhausted, WindowTooSmall
from geowalk.geometry import axis_segment, exact_oracle
from geowalk.group import free_group

from strategies import words


def _axis(G, m, n, origin=None, period="a"):
    return SegmentItem(G.identity if origin is None else G.reduce(origin), G.word(period), m, n)


def test_two_points_vacuously_aligned(F2, OF2):
    res = is_aligned(OF2, [F2.element("a"), F2.element("b")], 0)
    assert res.aligned and res.margins == ()


def test_chain_through_axis_aligned(F2, OF2):
    chain = [F2.element("a^-1 b"), _axis(F2, 0, 10), F2.element("a^11 b")]
    res = is_aligned(OF2, chain, 0)
    assert res
    # x projects to gamma(-1), y to gamma(11)
    assert [m.margin for m in res.margins] == [1, 1]


def test_reversed_chain_needs_large_slack(F2, OF2):
    chain = [F2.element("a^11 b"), _axis(F2, 0, 10), F2.element("a^-1 b")]
    assert not is_aligned(OF2, chain, 10)
    assert is_aligned(OF2, chain, 11)


def test_chain_needs_two_items(F2, OF2):
    with pytest.raises(PreconditionError):
        is_aligned(OF2, [F2.identity], 0)
    with pytest.raises(PreconditionError):
        SegmentItem(F2.identity, (1,), 3, 2)


def test_window_margin_enforced(F2, OF2):
    seg = axis_segment(F2, "a", (0, 10))
    chain = [F2.element("b"), segment_item(seg, 2, 8, use_window=True), F2.element("a^8 b")]
    with pytest.raises(WindowTooSmall):
        is_aligned(OF2, chain, 0)


def test_window_projection_agrees_inside_margin(F2, OF2):
    seg = axis_segment(F2, "a", (-20, 30))
    x, y = F2.element("a^2 b"), F2.element("a^9 b^-1")
    whole = alignment_margins(OF2, [x, segment_item(seg, 3, 8), y], 0)
    win = alignment_margins(OF2, [x, segment_item(seg, 3, 8, use_window=True), y], 0)
    assert whole == win


@given(st.data())
def test_alignment_translation_invariant(data):
    G = free_group(2)
    O = exact_oracle(G)
    x = G.reduce(data.draw(words(G, 6)))
    y = G.reduce(data.draw(words(G, 6)))
    m = data.draw(st.integers(-4, 4))
    chain = [x, _axis(G, m, m + data.draw(st.integers(0, 6)), period="ab"), y]
    g = G.reduce(data.draw(words(G, 8)))
    K = data.draw(st.integers(0, 3))
    a = is_aligned(O, chain, K)
    b = is_aligned(O, translate_chain(G, chain, g), K)
    assert a.aligned == b.aligned and a.margins == b.margins


# -- local to global ---------------------------------------------------------


def test_local_to_global_three_windows(F2, OF2):
    chain = [F2.element("a^-2 b"), _axis(F2, 0, 6), _axis(F2, 10, 16), _axis(F2, 20, 26), F2.element("a^30 b")]
    rep = check_local_to_global(OF2, chain, AlignmentParams(eps=0.09, eta=0.09))
    assert rep.holds and rep.witness is None
    assert rep.diameter == 26


def test_local_to_global_single_segment(F2, OF2):
    chain = [F2.element("b"), _axis(F2, 0, 5), F2.element("a^5 b")]
    rep = check_local_to_global(OF2, chain, AlignmentParams(eps=0.09, eta=0.09))
    assert rep.holds


def test_local_to_global_short_segment(F2, OF2):
    chain = [F2.element("b"), _axis(F2, 0, 0), _axis(F2, 3, 40), F2.element("a^41 b")]
    with pytest.raises(HypothesisViolated) as e:
        check_local_to_global(OF2, chain, AlignmentParams(eps=0.09, eta=0.09))
    assert e.value.which == 2 and e.value.index == 1


def test_local_to_global_param_range(F2, OF2):
    chain = [F2.element("b"), _axis(F2, 0, 5), F2.element("a^5 b")]
    with pytest.raises(HypothesisViolated):
        check_local_to_global(OF2, chain, AlignmentParams(eps=0.5, eta=0.05))


def test_local_to_global_unaligned_hypothesis(F2, OF2):
    chain = [F2.element("a^9 b"), _axis(F2, 0, 5), F2.element("b")]
    with pytest.raises(HypothesisViolated) as e:
        check_local_to_global(OF2, chain, AlignmentParams(eps=0.09, eta=0.09))
    assert e.value.which == 3


# -- linkage sets ------------------------------------------------------------


@pytest.fixture(scope="module")
def linkage(F2, OF2):
    seg = axis_segment(F2, "a", (-10, 10))
    return seg, find_linkage_set(OF2, seg, K=6, m=8, eps=0.3, size=4)


def _leading_power(word, letter):
    n = 0
    for c in word:
        if abs(c) != letter:
            break
        n += 1
    return n


def test_linkage_set_shape(F2, linkage):
    _, S = linkage
    assert len(S.elements) == 4
    assert all(len(a.word) == 6 for a in S.elements)
    assert [F2.format_word(a) for a in S.elements] == ["abaaab", "abaaba", "abaab^-1a", "ababab"]


def test_linkage_set_reverifies(OF2, linkage):
    assert verify_linkage_set(OF2, linkage[1])


def test_linkage_axis_powers_bounded(linkage):
    # the end-projection checks with eps*K = 1.8 allow at most one a-letter before leaving the axis at either end
    _, S = linkage
    for a in S.elements:
        assert _leading_power(a.word, 1) <= 1
        assert _leading_power(a.word[::-1], 1) <= 1
    for row in S.rows:
        assert row.cond2_dist <= 1.8 and row.cond3_dist <= 1.8
        assert row.cond1_min_separation >= 3


def test_linkage_small_eps_forces_b_first(F2, OF2):
    # eps*K < 1: no a-letter may sit at either end
    seg = axis_segment(F2, "a", (-10, 10))
    S = find_linkage_set(OF2, seg, K=6, m=8, eps=0.1, size=4)
    for a in S.elements:
        assert abs(a.word[0]) == 2 and abs(a.word[-1]) == 2
    assert verify_linkage_set(OF2, S)


def test_linkage_single_element(F2, OF2):
    seg = axis_segment(F2, "a", (-10, 10))
    S = find_linkage_set(OF2, seg, K=4, m=8, eps=0.3, size=1)
    assert len(S.elements) == 1 and S.pairs == ()
    assert S.rows[0].cond1_min_separation is None


def test_linkage_search_exhausted(F2, OF2):
    seg = axis_segment(F2, "a", (-10, 10))
    with pytest.raises(SearchExhausted):
        find_linkage_set(OF2, seg, K=1, m=8, eps=0.3, size=100)
