import itertools
import heapq
import math

import numpy as np
import pytest

from ikt.tan import (Discretizer, TanModel, TanStructure,
                     conditional_mutual_information, estimate_cpts, explain,
                     fit_discretizer, fit_tan, learn_structure, load_model,
                     max_spanning_parents, mdlp_cutpoints, predict_many,
                     predict_proba, save_model)


# ---------------------------------------------------------------------------
# oracles

def entropy_bits(labels):
    labels = np.asarray(labels)
    h = 0.0
    for c in np.unique(labels):
        p = (labels == c).mean()
        h -= p * math.log2(p)
    return h


def best_cut_by_scan(values, labels):
    """Exhaustive candidate scan: the cut with maximal information gain."""
    order = np.argsort(values, kind="stable")
    v, y = np.asarray(values)[order], np.asarray(labels)[order]
    n = len(v)
    best = (-1.0, None)
    for i in range(n - 1):
        if v[i] == v[i + 1]:
            continue
        gain = entropy_bits(y) - ((i + 1) / n * entropy_bits(y[:i + 1])
                                  + (n - i - 1) / n * entropy_bits(y[i + 1:]))
        if gain > best[0]:
            best = (gain, (v[i] + v[i + 1]) / 2.0)
    return best


def prufer_to_edges(seq, n):
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    heap = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(heap)
    edges = []
    for v in seq:
        leaf = heapq.heappop(heap)
        edges.append((leaf, v))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(heap, v)
    a = heapq.heappop(heap)
    b = heapq.heappop(heap)
    edges.append((a, b))
    return edges


def enumerate_spanning_tree_weights(weight):
    """Total weight of every labelled spanning tree (Prufer enumeration)."""
    n = len(weight)
    totals = []
    for seq in itertools.product(range(n), repeat=n - 2):
        totals.append(sum(weight[u][v] for u, v in prufer_to_edges(seq, n)))
    return totals


def joint_oracle(model, evidence):
    """Posterior from the fully enumerated joint distribution."""
    feats = model.features
    domains = [list(model.domains[f]) for f in feats]
    total = {0: 0.0, 1: 0.0}
    target = {0: 0.0, 1: 0.0}
    for combo in itertools.product(*domains):
        assign = dict(zip(feats, combo))
        for y in (0, 1):
            p = float(model.class_prior[y])
            for fi, f in enumerate(feats):
                vi = domains[fi].index(assign[f])
                parent = model.structure.parent[f]
                pi = (domains[feats.index(parent)].index(assign[parent])
                      if parent is not None else 0)
                p *= float(model.cpts[f][vi, pi, y])
            total[y] += p
            if all(assign[f] == evidence[f] for f in feats):
                target[y] += p
    posterior = target[1] / (target[0] + target[1])
    return posterior, total[0] + total[1]


def random_model(rng, n_features=4, max_domain=6):
    feats = tuple(f"f{i}" for i in range(n_features))
    sizes = [int(rng.integers(2, max_domain + 1)) for _ in feats]
    parent = {feats[0]: None}
    for j in range(1, n_features):
        parent[feats[j]] = feats[int(rng.integers(0, j))]
    cpts = {}
    for i, f in enumerate(feats):
        psize = sizes[feats.index(parent[f])] if parent[f] is not None else 1
        arr = rng.random((sizes[i], psize, 2)) + 0.05
        arr /= arr.sum(axis=0, keepdims=True)
        cpts[f] = arr
    prior = rng.random(2) + 0.1
    prior /= prior.sum()
    return TanModel(
        structure=TanStructure(features=feats, parent=parent),
        domains={f: np.arange(sizes[i]) for i, f in enumerate(feats)},
        class_prior=prior,
        cpts=cpts,
        discretizer=Discretizer(),
        alpha=1.0,
    ), sizes


def uniform_model(prior=(0.5, 0.5)):
    feats = ("a", "b")
    return TanModel(
        structure=TanStructure(features=feats, parent={"a": None, "b": "a"}),
        domains={"a": np.arange(3), "b": np.arange(2)},
        class_prior=np.array(prior, dtype=float),
        cpts={"a": np.full((3, 1, 2), 1 / 3), "b": np.full((2, 3, 2), 1 / 2)},
        discretizer=Discretizer(),
        alpha=1.0,
    )


# ---------------------------------------------------------------------------

class TestMdlp:
    def test_perfect_separation_single_cut_in_gap(self):
        rng = np.random.default_rng(0)
        low = rng.uniform(0.0, 0.55, 80)
        high = rng.uniform(0.65, 1.0, 80)
        values = np.concatenate([low, high])
        labels = np.concatenate([np.zeros(80, int), np.ones(80, int)])
        cuts = mdlp_cutpoints(values, labels)
        assert len(cuts) == 1
        assert low.max() < cuts[0] < high.min()
        # the accepted cut is the gain-maximizing candidate
        _, oracle_cut = best_cut_by_scan(values, labels)
        assert cuts[0] == pytest.approx(oracle_cut, abs=1e-12)

    def test_random_labels_rejected(self):
        rng = np.random.default_rng(1)
        values = rng.random(500)
        labels = rng.integers(0, 2, 500)
        assert mdlp_cutpoints(values, labels) == []

    def test_constant_column(self):
        assert mdlp_cutpoints(np.full(100, 0.4), np.arange(100) % 2) == []

    def test_cutpoints_strictly_increasing(self):
        rng = np.random.default_rng(2)
        values = rng.random(2000)
        labels = (values > 0.3).astype(int) ^ (values > 0.7).astype(int)
        cuts = mdlp_cutpoints(values, labels)
        assert len(cuts) >= 2
        assert all(a < b for a, b in zip(cuts, cuts[1:]))

    def test_bins_partition_training_values(self):
        rng = np.random.default_rng(3)
        values = rng.random(400)
        labels = (values > 0.5).astype(int)
        disc = fit_discretizer({"mastery": values}, labels)
        bins = disc.transform_column("mastery", values)
        n_bins = disc.n_bins("mastery")
        assert bins.min() >= 0 and bins.max() <= n_bins - 1
        assert set(np.unique(bins)) == set(range(n_bins))


class TestConditionalMutualInformation:
    def test_copy_equals_conditional_entropy(self):
        rng = np.random.default_rng(4)
        a = rng.integers(0, 2, 4000)
        y = rng.integers(0, 2, 4000)
        got = conditional_mutual_information(a, a.copy(), y)
        h = 0.0
        for yy in (0, 1):
            mask = y == yy
            for aa in (0, 1):
                paa = (a[mask] == aa).mean()
                if paa > 0:
                    h -= mask.mean() * paa * math.log(paa)
        assert got == pytest.approx(h, abs=1e-12)

    def test_independent_given_class(self):
        rng = np.random.default_rng(5)
        n = 100_000
        y = rng.integers(0, 2, n)
        a = rng.integers(0, 3, n)
        b = rng.integers(0, 4, n)
        assert conditional_mutual_information(a, b, y) < 0.01

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(6)
        a = rng.integers(0, 5, 3000)
        b = rng.integers(0, 3, 3000)
        y = rng.integers(0, 2, 3000)
        assert (conditional_mutual_information(a, b, y)
                == conditional_mutual_information(b, a, y))

    def test_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.integers(0, 4, 200)
            b = rng.integers(0, 4, 200)
            y = rng.integers(0, 2, 200)
            assert conditional_mutual_information(a, b, y) >= -1e-12


class TestLearnStructure:
    def test_three_node_known_weights(self):
        # AB=0.9, BC=0.5, AC=0.1 -> unique maximum tree {AB, BC}
        w = np.array([[0.0, 0.9, 0.1],
                      [0.9, 0.0, 0.5],
                      [0.1, 0.5, 0.0]])
        parent = max_spanning_parents(w)
        edges = {tuple(sorted((j, i))) for j, i in enumerate(parent) if i is not None}
        assert edges == {(0, 1), (1, 2)}

    def test_five_node_weight_is_enumerated_maximum(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            w = rng.random((5, 5))
            w = (w + w.T) / 2
            np.fill_diagonal(w, 0.0)
            parent = max_spanning_parents(w)
            got = sum(w[i][j] for j, i in enumerate(parent) if i is not None)
            assert got == pytest.approx(max(enumerate_spanning_tree_weights(w)), abs=1e-12)

    def test_equal_weights_deterministic_star(self):
        w = np.ones((4, 4))
        np.fill_diagonal(w, 0.0)
        assert max_spanning_parents(w) == [None, 0, 0, 0]

    def test_structure_is_tree_with_class_parent_implicit(self):
        rng = np.random.default_rng(9)
        cols = {f"f{i}": rng.integers(0, 3, 500) for i in range(4)}
        st = learn_structure(cols, rng.integers(0, 2, 500))
        assert st.is_tree()
        assert sum(1 for f in st.features if st.parent[f] is None) == 1
        assert st.root == "f0"

    def test_needs_two_features(self):
        with pytest.raises(ValueError):
            learn_structure({"only": np.zeros(10, int)}, np.zeros(10, int))


class TestEstimateCpts:
    def test_laplace_counts(self):
        cols = {"b": np.zeros(4, int), "a": np.array([0, 0, 0, 1])}
        labels = np.ones(4, int)
        st = TanStructure(features=("b", "a"), parent={"b": None, "a": "b"})
        model = estimate_cpts(cols, labels, st, alpha=1.0)
        # counts {3,1} in the (b=0, y=1) context, domain size 2
        assert model.cpts["a"][0, 0, 1] == pytest.approx(4 / 6)
        assert model.cpts["a"][1, 0, 1] == pytest.approx(2 / 6)
        # zero observations for y=0 -> uniform
        assert model.cpts["a"][0, 0, 0] == pytest.approx(1 / 2)

    def test_alpha_zero_maximum_likelihood(self):
        cols = {"b": np.zeros(4, int), "a": np.array([0, 0, 0, 1])}
        labels = np.ones(4, int)
        st = TanStructure(features=("b", "a"), parent={"b": None, "a": "b"})
        model = estimate_cpts(cols, labels, st, alpha=0.0)
        assert model.cpts["a"][0, 0, 1] == pytest.approx(3 / 4)
        # empty context stays uniform even without smoothing
        assert model.cpts["a"][0, 0, 0] == pytest.approx(1 / 2)

    def test_columns_normalized_and_positive(self):
        rng = np.random.default_rng(10)
        cols = {f"f{i}": rng.integers(0, 4, 300) for i in range(3)}
        labels = rng.integers(0, 2, 300)
        model = fit_tan(cols, labels, continuous=())
        for f, cpt in model.cpts.items():
            assert np.allclose(cpt.sum(axis=0), 1.0, atol=1e-9)
            assert np.all(cpt > 0.0)


class TestPredict:
    def test_uniform_cpts_give_half(self):
        model = uniform_model()
        assert predict_proba(model, {"a": 1, "b": 0}) == 0.5

    def test_prior_only_inference(self):
        model = uniform_model(prior=(0.3, 0.7))
        assert predict_proba(model, {"a": 2, "b": 1}) == pytest.approx(0.7, abs=1e-12)

    def test_matches_joint_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            model, sizes = random_model(rng)
            evidence = {f: int(rng.integers(sizes[i]))
                        for i, f in enumerate(model.features)}
            want, mass = joint_oracle(model, evidence)
            assert mass == pytest.approx(1.0, abs=1e-9)
            assert predict_proba(model, evidence) == pytest.approx(want, abs=1e-9)

    def test_never_exactly_zero_or_one_with_smoothing(self):
        rng = np.random.default_rng(12)
        cols = {"a": rng.integers(0, 3, 60), "b": rng.integers(0, 2, 60)}
        labels = (cols["a"] > 0).astype(int)
        model = fit_tan(cols, labels, continuous=())
        for a in range(3):
            for b in range(2):
                p = predict_proba(model, {"a": a, "b": b})
                assert 0.0 < p < 1.0

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(13)
        model, sizes = random_model(rng)
        cols = {f: rng.integers(0, sizes[i], 200)
                for i, f in enumerate(model.features)}
        batch = predict_many(model, cols)
        for row in range(200):
            single = predict_proba(model, {f: int(cols[f][row]) for f in model.features})
            assert batch[row] == pytest.approx(single, abs=1e-12)

    def test_out_of_domain_uses_uniform_and_flags(self):
        model = uniform_model(prior=(0.4, 0.6))
        record = explain(model, {"a": 99, "b": 0})
        assert record.flags
        assert predict_proba(model, {"a": 99, "b": 0}) == pytest.approx(0.6, abs=1e-12)


class TestExplain:
    def test_uniform_contributions_zero(self):
        record = explain(uniform_model(), {"a": 0, "b": 1})
        assert all(c.log_ratio == 0.0 for c in record.contributions)
        assert record.posterior == 0.5

    def test_contributions_sum_to_log_odds(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            model, sizes = random_model(rng)
            evidence = {f: int(rng.integers(sizes[i]))
                        for i, f in enumerate(model.features)}
            record = explain(model, evidence)
            total = record.prior_log_odds + sum(c.log_ratio for c in record.contributions)
            assert abs(total - record.log_odds) < 1e-12
            p = predict_proba(model, evidence)
            assert record.posterior == pytest.approx(p, abs=1e-12)

    def test_dominant_node_has_largest_contribution(self):
        model = uniform_model()
        strong = model.cpts["b"].copy()
        strong[:, :, 1] = np.array([[0.95] * 3, [0.05] * 3])
        strong[:, :, 0] = np.array([[0.05] * 3, [0.95] * 3])
        model.cpts["b"] = strong
        record = explain(model, {"a": 0, "b": 0})
        by_feature = {c.feature: abs(c.log_ratio) for c in record.contributions}
        assert by_feature["b"] > by_feature["a"]


class TestSerialization:
    def test_round_trip_exact_bytes_and_predictions(self, tmp_path):
        rng = np.random.default_rng(15)
        cols = {"skill": rng.integers(0, 5, 400), "mastery": rng.random(400),
                "profile": rng.integers(1, 9, 400), "difficulty": rng.integers(0, 11, 400)}
        labels = (rng.random(400) < 0.3 + 0.5 * cols["mastery"]).astype(int)
        model = fit_tan(cols, labels)
        p1 = tmp_path / "m1.model"
        p2 = tmp_path / "m2.model"
        save_model(model, str(p1))
        loaded = load_model(str(p1))
        save_model(loaded, str(p2))
        assert p1.read_bytes() == p2.read_bytes()
        ev = {"skill": 2, "mastery": 0.8, "profile": 1, "difficulty": 5}
        assert predict_proba(loaded, ev) == predict_proba(model, ev)

    def test_zero_cutpoint_feature_stays_continuous(self, tmp_path):
        rng = np.random.default_rng(16)
        cols = {"skill": rng.integers(0, 3, 200), "mastery": rng.random(200)}
        labels = rng.integers(0, 2, 200)  # no signal: no cutpoints
        model = fit_tan(cols, labels)
        assert model.discretizer.cutpoints["mastery"] == ()
        path = tmp_path / "m.model"
        save_model(model, str(path))
        loaded = load_model(str(path))
        assert loaded.discretizer.cutpoints["mastery"] == ()
        assert predict_proba(loaded, {"skill": 1, "mastery": 0.3}) == \
            predict_proba(model, {"skill": 1, "mastery": 0.3})

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "junk.model"
        path.write_text("not a model\n")
        with pytest.raises(ValueError):
            load_model(str(path))
