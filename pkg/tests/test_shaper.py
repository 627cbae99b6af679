import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multihop.distributions import Geometric, HopCountPmf, Rayleigh, scaling_law_stats
from multihop.shaper import (
    CONFORMED, DROPPED, OVERSIZE, QUEUED, ParallelShaper, TokenBucket, bucket_sizing,
    run_parallel, run_single,
)


@pytest.fixture(scope="module")
def saturated():
    return {rule: run_parallel(ParallelShaper.build(0.03, 5, 4, rule), "saturated", 200_000, 3)
            for rule in ("equal", "prop")}


@pytest.fixture(scope="module")
def traces():
    return [
        run_parallel(ParallelShaper.build(0.3, 4, 6, "equal"), [0.06] * 6, 100_000, 11),
        run_parallel(ParallelShaper.build(0.5, 3, 4, "prop", drop=True), [0.1] * 4, 100_000, 12),
        run_parallel(ParallelShaper.build(0.03, 5, 4, "equal"), "saturated", 100_000, 13),
        run_single(TokenBucket(0.4, 6), 8, [0.03] * 8, 100_000, 14),
        run_single(TokenBucket(0.2, 4), 3, "saturated", 100_000, 15, class_pmf=[3, 2, 1]),
    ]


class TestBucketMechanics:
    def test_conform_takes_tokens(self):
        b = TokenBucket(1, 5, tokens=5)
        assert b.offer(3) == CONFORMED
        assert b.tokens == 2

    def test_oversize(self):
        b = TokenBucket(1, 5)
        assert b.offer(7) == OVERSIZE
        assert b.tokens == 5 and not b.queue

    def test_queued_until_refill(self):
        b = TokenBucket(1, 5, tokens=2)
        assert b.offer(3, slot=0) == QUEUED
        assert b.tick() == [(3, 0)]
        assert b.tokens == 0

    def test_fifo_blocks_smaller_followers(self):
        b = TokenBucket(1, 5, tokens=2)
        assert b.offer(4) == QUEUED
        # one token would suffice, but the head of the line waits first
        assert b.offer(1) == QUEUED
        assert b.tick() == []
        assert b.tick() == [(4, 0)]

    def test_drop_mode(self):
        b = TokenBucket(1, 5, tokens=0, drop=True)
        assert b.offer(2) == DROPPED
        assert not b.queue

    def test_refill_caps_at_size(self):
        b = TokenBucket(2, 5)
        b.tick()
        assert b.tokens == 5

    def test_fractional_refill(self):
        b = TokenBucket(0.5, 5, tokens=0)
        b.tick()
        assert b.tokens == 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            TokenBucket(0, 5)
        with pytest.raises(ValueError):
            TokenBucket(1, 5, tokens=6)
        with pytest.raises(ValueError):
            TokenBucket(1, 5).offer(0)

    @given(st.floats(0.1, 20), st.lists(st.integers(1, 30), min_size=1, max_size=40),
           st.randoms())
    def test_oversize_iff_exceeds_size(self, size, hops, rnd):
        order = list(hops)
        rnd.shuffle(order)
        for seq in (hops, order):
            b = TokenBucket(0.7, size, tokens=rnd.uniform(0, size))
            for h in seq:
                assert (b.offer(h) == OVERSIZE) == (h > size)

    @given(st.floats(0.05, 3), st.floats(1, 12),
           st.lists(st.lists(st.integers(1, 12), max_size=3), min_size=1, max_size=60))
    def test_level_stays_in_range(self, rate, size, slots):
        b = TokenBucket(rate, size)
        for offers in slots:
            b.tick()
            assert 0 <= b.tokens <= size
            for h in offers:
                b.offer(h)
                assert 0 <= b.tokens <= size


class TestParallelShaper:
    @pytest.mark.parametrize("rule", ["equal", "prop"])
    def test_rates_sum_to_total(self, rule):
        ps = ParallelShaper.build(0.37, 5, 7, rule)
        assert sum(b.rate for b in ps.buckets) == pytest.approx(0.37, abs=1e-12)

    def test_bucket_holds_its_class(self):
        ps = ParallelShaper.build(1.0, 2, 5)
        assert [b.size for b in ps.buckets] == [2, 2, 3, 4, 5]

    def test_equal_split_equalizes_backlog(self, saturated):
        tr = saturated["equal"]
        backlog = tr.measured_rates * np.arange(1, 5)
        assert np.ptp(backlog) <= 0.05 * backlog.mean()

    def test_proportional_rule_equalizes_rates(self, saturated):
        rates = saturated["prop"].measured_rates
        assert np.ptp(rates) <= 0.05 * rates.mean()

    def test_equal_split_throughput_higher(self, saturated):
        assert (saturated["equal"].measured_rates.sum()
                >= saturated["prop"].measured_rates.sum())

    def test_saturated_spends_whole_rate(self, saturated):
        for tr in saturated.values():
            assert tr.measured_load == pytest.approx(0.03, rel=0.01)


class TestTraceLaws:
    def test_prefix_inequality_every_window(self, traces):
        for tr in traces:
            assert tr.prefix_violation() <= 0

    def test_levels_in_range(self, traces):
        for tr in traces:
            assert (tr.tokens >= 0).all()
            assert (tr.tokens <= tr.sizes + 1e-12).all()

    def test_prefix_check_detects_cheating(self, traces):
        tr = traces[2]
        tr.conformed[100, 0] += 50
        try:
            assert tr.prefix_violation() > 0
        finally:
            tr.conformed[100, 0] -= 50

    def test_prefix_check_brute_force_small(self):
        tr = run_single(TokenBucket(0.7, 3, tokens=1), 3, [0.4, 0.3, 0.2], 300, 5)
        spent = tr.spent()[:, 0]
        levels = np.concatenate(([tr.initial_tokens[0]], tr.tokens[:, 0]))
        worst = max(spent[t:s].sum() - levels[t] - tr.rates[0] * (s - t)
                    for t in range(300) for s in range(t + 1, 301))
        assert tr.prefix_violation(slack=0) == pytest.approx(worst, abs=1e-9)
        assert worst <= 1e-9

    @pytest.mark.parametrize("tau", [10**3, 10**4, 10**5])
    def test_windowed_load_bound(self, traces, tau):
        tr = traces[2]
        spent = tr.spent().sum(axis=1)
        c = np.concatenate(([0.0], np.cumsum(spent)))
        window_load = (c[tau:] - c[:-tau]) / tau
        # each of the four buckets can burst its full size once
        assert window_load.max() <= 0.03 + tr.sizes.sum() / tau + 1e-12

    def test_oversize_counts(self):
        tr = run_single(TokenBucket(1.0, 3), 5, [0.2] * 5, 5000, 2)
        assert tr.oversize[:3].sum() == 0
        assert (tr.oversize[3:] == tr.offered[:, 3:].sum(axis=0)).all()

    def test_deterministic(self):
        ps = lambda: ParallelShaper.build(0.3, 4, 3, "equal")  # noqa: E731
        a = run_parallel(ps(), [0.1] * 3, 5000, 9)
        b = run_parallel(ps(), [0.1] * 3, 5000, 9)
        assert (a.conformed == b.conformed).all()

    def test_csv(self, tmp_path):
        tr = run_parallel(ParallelShaper.build(0.3, 4, 2, "equal"), [0.2, 0.2], 10, 1)
        path = tmp_path / "trace.csv"
        tr.write_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["slot", "class", "offered", "conformed", "tokens"]
        assert len(rows) == 1 + 10 * 2


class TestBucketSizing:
    def test_rayleigh(self):
        law = Rayleigh(3.0)
        s = bucket_sizing(law, math.exp(-6))
        assert s.b_max / s.b_min == pytest.approx(2 * math.sqrt(6 / math.pi), rel=1e-9)
        assert s.b_max / s.b_min == pytest.approx(2.76, abs=0.01)
        assert s.b_min == pytest.approx(scaling_law_stats(law).mean)

    def test_geometric_law(self):
        assert bucket_sizing(Geometric(0.2), 0.01).b_max == 21

    def test_geometric_pmf_matches_law(self):
        pmf = HopCountPmf.geometric(0.2)
        assert bucket_sizing(pmf, 0.01).b_max == 21

    def test_point_mass(self):
        s = bucket_sizing(HopCountPmf.point_mass(7), 0.05)
        assert s.b_min == s.b_max == 7

    @given(st.floats(0.02, 0.9), st.floats(1e-6, 0.5))
    def test_threshold_definition(self, g, eps):
        lm = bucket_sizing(Geometric(g), eps).b_max
        tail = lambda m: (1 - g) ** m  # noqa: E731
        assert tail(lm) <= eps * (1 + 1e-9)
        assert lm == 1 or tail(lm - 1) > eps * (1 - 1e-9)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            bucket_sizing(Geometric(0.2), 1.0)
