import numpy as np
import pytest
from types import SimpleNamespace

from protobft import adversary as adv
from protobft import consensus as cs
from protobft.aggregation import aggregate, discrepancy, stats_from_protosets
from protobft.client import PrototypeSet
from protobft.errors import ConfigError


def honest_sets(rng, n=8, J=3, dim=4, noise=0.1):
    centers = rng.normal(size=(J, dim)) * 3
    return {k: PrototypeSet({j: centers[j] + noise * rng.normal(size=dim) for j in range(J)},
                            {j: 8 for j in range(J)}) for k in range(n)}


def test_poison_norm_and_counts(rng):
    p = PrototypeSet({0: rng.normal(size=5), 4: rng.normal(size=5)}, {0: 3, 4: 9})
    for seed in range(50):
        out = adv.poison(p, 2.5, seed)
        for j in p.classes:
            assert np.linalg.norm(out.protos[j] - p.protos[j]) == pytest.approx(2.5, abs=1e-9)
        assert out.counts == p.counts


def test_poison_zero_and_determinism(rng):
    p = PrototypeSet({1: rng.normal(size=3)}, {1: 1})
    assert adv.poison(p, 0.0, 1).equals(p)
    assert adv.poison(p, 1.0, 7).equals(adv.poison(p, 1.0, 7))
    assert not adv.poison(p, 1.0, 7).equals(adv.poison(p, 1.0, 8))
    with pytest.raises(ValueError):
        adv.poison(p, -1.0, 0)


def test_attack_config_validation():
    with pytest.raises(ConfigError):
        adv.AttackConfig(zeta=-1)
    with pytest.raises(ConfigError):
        adv.AttackConfig(attack_eps=-0.5)


def test_server_plan_roundtrip():
    plan = adv.parse_server_plan("0:crash@1, 2:tamper*2.0,3:amnesia")
    assert plan[0] == adv.ServerFault("crash", from_view=1)
    assert plan[2].factor == 2.0
    assert adv.parse_server_plan(adv.format_server_plan(plan)) == plan
    assert adv.parse_server_plan("") == {}
    for bad in ("0:explode", "x:crash", "1:crash@z", "crash"):
        with pytest.raises(ConfigError):
            adv.parse_server_plan(bad)


def test_behavior_requires_declared_fault():
    honest = SimpleNamespace(server_id=3, view=0, fault=None, peers=(0, 1, 2, 3))
    with pytest.raises(ConfigError):
        adv.apply_server_behavior(honest, "respond")


def test_behavior_effects(rng):
    peers = (0, 1, 2, 3)
    p = PrototypeSet({0: np.ones(2)}, {0: 1})
    srv = lambda b, view=0, **kw: SimpleNamespace(server_id=0, view=view, fault=adv.ServerFault(b, **kw), peers=peers)
    assert not adv.apply_server_behavior(srv("crash"), "respond")
    assert adv.apply_server_behavior(srv("crash", view=0, from_view=2), "respond")
    assert adv.apply_server_behavior(srv("amnesia"), "store", {1: p}) == {}
    (recips, tampered), = adv.apply_server_behavior(srv("tamper"), "propose", p)
    assert list(recips) == list(peers) and np.all(tampered.protos[0] == 1.5)
    halves = adv.apply_server_behavior(srv("equivocate"), "propose", p)
    assert [list(r) for r, _ in halves] == [[0, 1], [2, 3]]
    assert adv.apply_server_behavior(srv("amnesia"), "vote", b"d") == {}
    votes = adv.apply_server_behavior(srv("equivocate"), "vote", b"d")
    assert votes[0] == b"d" and votes[3] != b"d"
    with pytest.raises(ValueError):
        adv.apply_server_behavior(srv("crash"), "dance")


def test_honest_spread(rng):
    sets = {0: PrototypeSet({0: np.array([0.0, 0.0])}), 1: PrototypeSet({0: np.array([2.0, 0.0])}),
            2: PrototypeSet({0: np.array([50.0, 0.0])})}
    assert adv.honest_spread(sets, [0, 1]) == 1.0
    assert adv.honest_spread(sets, [0]) == 0.0


def test_discrepancy_grows_with_attack_eps():
    eps_grid = [0.0, 0.05, 0.1, 0.2, 0.5, 1.0]
    mean_d = np.zeros(len(eps_grid))
    for seed in range(200):
        rng = np.random.default_rng(seed)
        base = honest_sets(rng, noise=0.0)  # symmetric: every client starts at the class centre
        for i, eps in enumerate(eps_grid):
            sets = dict(base)
            sets[0] = adv.poison(base[0], eps, seed)
            g = aggregate(sets, stats_from_protosets(sets))
            mean_d[i] += discrepancy(sets[0], g) / 200
    assert np.all(np.diff(mean_d) > 0)


def test_small_attack_stays_in_honest_range():
    # each coordinate moves by at most eps, so a spread-sized attack stays
    # within one spread of the honest per-class value range
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sets = honest_sets(rng, noise=0.5)
        spread = adv.honest_spread(sets, list(sets))
        bad = adv.poison(sets[0], spread, seed)
        for j in bad.classes:
            vals = np.stack([s.protos[j] for s in sets.values()])
            assert np.all(bad.protos[j] >= vals.min(axis=0) - spread)
            assert np.all(bad.protos[j] <= vals.max(axis=0) + spread)


@pytest.mark.parametrize("zeta", [1, 2, 3])
def test_filtered_consensus_equals_honest_only_aggregate(zeta):
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sets = honest_sets(rng, n=10)
        honest_ids = list(range(zeta, 10))
        eps = 10 * adv.honest_spread(sets, honest_ids)
        sent = dict(sets)
        for k in range(zeta):
            sent[k] = adv.poison(sets[k], eps, (seed, k))
        cfg = cs.ConsensusConfig(N=4, psi=zeta)
        out = cs.consensus_round(cs.make_servers(cfg), sent, cfg)
        assert out.filtered == tuple(range(zeta))
        honest = {k: sets[k] for k in honest_ids}
        assert out.confirmed.equals(aggregate(honest, stats_from_protosets(honest)))
