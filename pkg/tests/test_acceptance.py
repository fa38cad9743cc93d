"""Ten acceptance checks, one test per criterion; `pytest -v` prints a
one-line verdict for each.

Every check re-derives its expected values through an independent route:
high-precision arithmetic, brute-force enumeration, central finite
differences, or Monte-Carlo estimation. None of them lets the code under
test grade itself.
"""

import itertools
import json
import math
import random
import time
from collections import Counter
from pathlib import Path

import mpmath
import numpy as np
import pytest

from focusrank.baselines import rank_random
from focusrank.cli import main as cli_main
from focusrank.dataset import (
    BalanceConfig,
    balance,
    group_by_project,
    label_pairs,
    split_cross_project,
    split_temporal,
)
from focusrank.datagen import GenConfig, build_corpus
from focusrank.embedding import ProviderConfig, make_provider
from focusrank.evaluation import (
    NeuralScorer,
    RandomScorer,
    RankedList,
    SemanticScorer,
    evaluate,
    precision_at_k,
    radius_rows,
)
from focusrank.graphs import ModelGraph, diff, union_graph
from focusrank.ranker import (
    LossConfig,
    RankerParams,
    TrainConfig,
    batch_loss,
    forward,
    grad,
    per_sample_loss,
    train,
)
from focusrank.stats import mann_whitney_u, spearman_rho


@pytest.fixture(scope="module")
def default_corpus():
    corpus, _ = build_corpus(GenConfig())
    return corpus


def all_diff_keys(corpus):
    return [(name, i) for name in sorted(corpus) for i in range(corpus[name].n_diffs)]


# --- 1. loss formula against 50-digit arithmetic -------------------------


def reference_loss(z, y, alpha, beta, lam):
    """The four loss factors recomputed with 50 decimal digits."""
    with mpmath.workdps(50):
        zm, ym = mpmath.mpf(z), mpmath.mpf(y)
        p = 1 / (1 + mpmath.exp(-zm))
        bce = max(zm, mpmath.mpf(0)) - zm * ym + mpmath.log(1 + mpmath.exp(-abs(zm)))
        t = p * ym + (1 - p) * (1 - ym)
        w = 1 - t ** mpmath.mpf(beta)
        a = mpmath.mpf(alpha) * ym + (1 - mpmath.mpf(alpha)) * (1 - ym)
        m = (1 - ym) * p * mpmath.mpf(lam) + 1
        return float(a * w * bce * m)


def test_01_loss_matches_high_precision_arithmetic():
    rng = np.random.default_rng(101)
    cases = []
    for _ in range(1000):
        cfg = LossConfig(
            alpha=float(rng.uniform(0.05, 0.95)),
            beta=float(rng.choice([0.0, 0.5, 1.0, 2.0, 3.0, 4.0])),
            lambda_penalty=float(rng.uniform(0.0, 8.0)),
        )
        cases.append((float(rng.uniform(-20.0, 20.0)), float(rng.integers(0, 2)), cfg))

    start = time.perf_counter()
    got = [per_sample_loss(z, y, cfg) for z, y, cfg in cases]
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0

    worst = max(
        abs(value - reference_loss(z, y, cfg.alpha, cfg.beta, cfg.lambda_penalty))
        for value, (z, y, cfg) in zip(got, cases)
    )
    assert worst <= 1e-9

    extreme = LossConfig()
    for z in (-500.0, 500.0):
        for y in (0.0, 1.0):
            assert math.isfinite(per_sample_loss(z, y, extreme))


# --- 2. analytic gradients against central differences -------------------


def loss_of(params, anchors, cands, labels, cfg):
    return batch_loss(forward(params, anchors, cands), labels, cfg)


def central_difference_grads(params, anchors, cands, labels, cfg, eps=1e-4):
    """Coordinate-wise central differences over every parameter."""
    grads = []
    for name in ("wq", "wk", "wv", "w_out"):
        arr = getattr(params, name)
        out = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            kept = arr[idx]
            arr[idx] = kept + eps
            up = loss_of(params, anchors, cands, labels, cfg)
            arr[idx] = kept - eps
            down = loss_of(params, anchors, cands, labels, cfg)
            arr[idx] = kept
            out[idx] = (up - down) / (2.0 * eps)
        grads.append(out)
    kept = params.b_out
    params.b_out = kept + eps
    up = loss_of(params, anchors, cands, labels, cfg)
    params.b_out = kept - eps
    down = loss_of(params, anchors, cands, labels, cfg)
    params.b_out = kept
    grads.append(np.asarray([(up - down) / (2.0 * eps)]))
    return grads


def test_02_gradients_match_central_differences():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    for trial in range(20):
        d = int(rng.integers(2, 9))
        h = int(rng.integers(1, 5))
        n = int(rng.integers(1, 17))
        params = RankerParams(
            wq=rng.normal(0.0, 0.5, size=(d, h)),
            wk=rng.normal(0.0, 0.5, size=(d, h)),
            wv=rng.normal(0.0, 0.5, size=(d, h)),
            w_out=rng.normal(0.0, 0.5, size=h),
            b_out=float(rng.normal(0.0, 0.5)),
        )
        anchors = rng.normal(0.0, 1.0, size=(n, d))
        cands = rng.normal(0.0, 1.0, size=(n, d))
        labels = rng.integers(0, 2, size=n).astype(np.float64)
        cfg = LossConfig(
            alpha=float(rng.uniform(0.1, 0.9)),
            beta=float(rng.choice([0.0, 1.0, 2.0, 3.0])),
            lambda_penalty=float(rng.uniform(0.0, 6.0)),
        )
        _, analytic = grad(params, anchors, cands, labels, cfg)
        numeric = central_difference_grads(params, anchors, cands, labels, cfg)
        for got, expected in zip(analytic.arrays(), numeric):
            err = np.abs(got - expected)
            ok = (err <= 1e-7) | (err <= 1e-4 * np.maximum(np.abs(got), np.abs(expected)))
            assert ok.all(), f"trial {trial}: worst error {err.max():.3e}"
    assert time.perf_counter() - start < 10.0


# --- 3. pair labeling against triple enumeration -------------------------


def graph_elements(g):
    nodes = {("node", node_id, g.label(node_id)) for node_id in g.node_ids}
    arcs = {("edge",) + e for e in g.edges}
    return nodes | arcs


def random_version_pair(rng):
    node_vocab = ["alpha", "beta", "gamma", "delta"]
    edge_vocab = ["uses", "holds"]
    labels = {f"n{i}": rng.choice(node_vocab) for i in range(rng.randint(2, 12))}
    ids = sorted(labels)
    arcs = set()
    for src in ids:
        for dst in ids:
            if src != dst and rng.random() < 0.12:
                arcs.add((src, dst, rng.choice(edge_vocab)))
    before = ModelGraph(labels, sorted(arcs))

    after_labels = dict(labels)
    for node_id in ids:
        roll = rng.random()
        if roll < 0.12 and len(after_labels) > 1:
            del after_labels[node_id]
        elif roll < 0.30:
            # a suffix the base vocabulary never uses, so the label differs
            after_labels[node_id] = rng.choice(node_vocab) + "X"
    room = 12 - len(after_labels)
    for j in range(rng.randint(0, max(0, min(2, room)))):
        after_labels[f"m{j}"] = rng.choice(node_vocab)
    after_arcs = {
        e
        for e in arcs
        if e[0] in after_labels and e[1] in after_labels and rng.random() > 0.15
    }
    pool = sorted(after_labels)
    for _ in range(rng.randint(0, 3)):
        src, dst = rng.choice(pool), rng.choice(pool)
        if src != dst:
            after_arcs.add((src, dst, rng.choice(edge_vocab)))
    return before, ModelGraph(after_labels, sorted(after_arcs))


def test_03_labeling_matches_triple_enumeration():
    rng = random.Random(303)
    start = time.perf_counter()
    nontrivial = 0
    for _ in range(200):
        before, after = random_version_pair(rng)
        elements_before = graph_elements(before)
        elements_after = graph_elements(after)
        changed = elements_before ^ elements_after
        changed_nodes = {e[1] for e in changed if e[0] == "node"}
        preserved_nodes = {
            e[1] for e in (elements_before & elements_after) if e[0] == "node"
        }
        if not changed_nodes:
            continue
        nontrivial += 1

        target_arcs = {(src, dst) for src, dst, _ in after.edges}
        anchors = sorted(changed_nodes)
        expected = []
        for anchor in anchors:
            for candidate in sorted(preserved_nodes):
                if candidate == anchor:
                    continue
                positive = any(
                    (candidate, successor) in target_arcs
                    for successor in changed_nodes
                )
                expected.append((anchor, candidate, int(positive)))

        pairs = label_pairs(diff(before, after), after, anchors)
        assert [(p.anchor, p.candidate, p.label) for p in pairs] == expected
    assert nontrivial >= 150
    assert time.perf_counter() - start < 5.0


# --- 4. Precision@k against a literal recount -----------------------------


def test_04_precision_matches_brute_force():
    rng = random.Random(404)
    for _ in range(500):
        n = rng.randint(1, 10)
        ordered = [f"c{i}" for i in range(n)]
        rng.shuffle(ordered)
        positives = frozenset(rng.sample(ordered, rng.randint(1, n)))
        ranking = RankedList(anchor="a", ordered=tuple(ordered), positives=positives)
        for k in range(1, n + 3):
            hits = sum(1 for c in ordered[:k] if c in positives)
            assert precision_at_k(ranking, k) == hits / min(k, len(positives))


# --- 5. random baseline converges to the prevalence -----------------------


def test_05_random_baseline_mean_precision_tracks_prevalence():
    cfg = GenConfig(
        projects=2,
        commits_per_project=6,
        base_nodes=120,
        pattern_size_c=12,
        target_dispersion_s=2,
        noise_rate=0.0,
        seed=5,
    )
    corpus, _ = build_corpus(cfg)
    cases = []
    for name in sorted(corpus):
        project = corpus[name]
        for i in range(project.n_diffs):
            d = project.diff_at(i)
            anchor = sorted(d.changed_nodes())[0]
            pairs = label_pairs(d, project.versions[i + 1], [anchor], project=name)
            candidates = [p.candidate for p in pairs]
            positives = frozenset(p.candidate for p in pairs if p.label == 1)
            # at least k positives, so the k=10 estimator stays unbiased
            assert len(positives) >= 10
            cases.append((anchor, candidates, positives))

    prevalence = sum(len(p) / len(c) for _, c, p in cases) / len(cases)
    assert 0.08 <= prevalence <= 0.12

    total = 0.0
    trials = 0
    for anchor, candidates, positives in cases:
        for seed in range(1000):
            ordered = tuple(rank_random(candidates, seed=seed, anchor=anchor))
            ranking = RankedList(anchor=anchor, ordered=ordered, positives=positives)
            total += precision_at_k(ranking, 10)
            trials += 1
    assert abs(total / trials - prevalence) <= 0.02


# --- 6. trained ranker separates from both baselines ----------------------


def collect_pairs(corpus, items):
    out = []
    for name, index in items:
        d = corpus[name].diff_at(index)
        anchors = sorted(d.changed_nodes())
        if anchors:
            out.extend(
                label_pairs(d, corpus[name].versions[index + 1], anchors, project=name)
            )
    return out


def embed_pairs(corpus, pairs, provider):
    texts = []
    unions = {}
    for pair in pairs:
        key = (pair.project, pair.diff_index)
        if key not in unions:
            project = corpus[pair.project]
            unions[key] = union_graph(
                project.versions[pair.diff_index],
                project.versions[pair.diff_index + 1],
            )
        texts.append(unions[key].label(pair.anchor))
        texts.append(unions[key].label(pair.candidate))
    unique = sorted(set(texts))
    by_text = dict(zip(unique, provider.embed(unique)))
    anchors = np.stack([by_text[texts[2 * i]] for i in range(len(pairs))])
    cands = np.stack([by_text[texts[2 * i + 1]] for i in range(len(pairs))])
    labels = np.asarray([pair.label for pair in pairs], dtype=np.float64)
    return anchors, cands, labels


def test_06_trained_ranker_separates_from_baselines():
    start = time.perf_counter()
    corpus, _ = build_corpus(GenConfig())
    provider = make_provider(ProviderConfig())
    split = split_temporal(all_diff_keys(corpus))

    train_pairs = collect_pairs(corpus, split.train)
    balanced = balance(
        group_by_project(train_pairs),
        BalanceConfig(target_pairs_per_project=400, seed=7),
    )
    checkpoint = train(
        embed_pairs(corpus, balanced, provider),
        embed_pairs(corpus, collect_pairs(corpus, split.validation), provider),
        TrainConfig(),
        provider_fingerprint=provider.fingerprint,
    )

    scorers = {
        "trained": NeuralScorer(checkpoint, provider),
        "random": RandomScorer(seed=7),
        "semantic": SemanticScorer(provider),
    }
    ks = range(1, 11)
    per_anchor = {}
    for name, scorer in scorers.items():
        report = evaluate(scorer, corpus, split.test, k_max=10)
        per_anchor[name] = [r.mean_precision(ks) for r in report.results]
        assert len(per_anchor[name]) == len(split.test)
    means = {name: sum(vals) / len(vals) for name, vals in per_anchor.items()}

    assert means["trained"] >= 0.80
    assert means["trained"] > means["semantic"]
    assert means["trained"] - means["random"] >= 0.5
    _, p_vs_random = mann_whitney_u(
        per_anchor["trained"], per_anchor["random"], alternative="greater"
    )
    _, p_vs_semantic = mann_whitney_u(
        per_anchor["trained"], per_anchor["semantic"], alternative="greater"
    )
    assert p_vs_random < 0.01
    assert p_vs_semantic < 0.01
    assert time.perf_counter() - start < 300.0


# --- 7. split integrity, exhaustively --------------------------------------


def test_07_split_integrity(default_corpus):
    split = split_temporal(all_diff_keys(default_corpus))
    for name in sorted(default_corpus):
        n = default_corpus[name].n_diffs
        train_idx = sorted(i for p, i in split.train if p == name)
        val_idx = [i for p, i in split.validation if p == name]
        test_idx = [i for p, i in split.test if p == name]
        assert train_idx == list(range(n - 2))
        assert val_idx == [n - 2]
        assert test_idx == [n - 1]
        assert max(train_idx) < val_idx[0] < test_idx[0]

    counts = {name: default_corpus[name].n_diffs for name in default_corpus}
    for n_folds in (4, 8):
        folds = split_cross_project(counts, n_folds, seed=7)
        assert len(folds) == n_folds
        tested = Counter()
        for fold in folds:
            train_projects = {p for p, _ in fold.train}
            test_projects = {p for p, _ in fold.test}
            assert train_projects and test_projects
            assert train_projects.isdisjoint(test_projects)
            assert train_projects | test_projects == set(counts)
            assert {p for p, _ in fold.validation} <= train_projects
            tested.update(test_projects)
        assert tested == Counter({name: 1 for name in counts})


# --- 8. rank statistics against permutation enumeration --------------------


def pairwise_u(a, b):
    u = 0.0
    for x in a:
        for z in b:
            if x > z:
                u += 1.0
            elif x == z:
                u += 0.5
    return u


def enumerated_p_greater(a, b):
    pooled = list(a) + list(b)
    u_obs = pairwise_u(a, b)
    indices = range(len(pooled))
    hits = total = 0
    for combo in itertools.combinations(indices, len(a)):
        chosen = set(combo)
        first = [pooled[i] for i in combo]
        second = [pooled[i] for i in indices if i not in chosen]
        if pairwise_u(first, second) >= u_obs - 1e-12:
            hits += 1
        total += 1
    return hits / total


def mean_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for idx in order[i : j + 1]:
            ranks[idx] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def test_08_statistics_match_enumeration():
    assert spearman_rho((1, 2, 3), (10, 20, 30)) == (1.0, 0.0)
    assert spearman_rho((1, 2, 3), (30, 20, 10)) == (-1.0, 0.0)
    rho, _ = spearman_rho((1, 2, 3, 4, 5), (1, 3, 2, 5, 4))
    assert rho == 0.8

    rng = random.Random(808)
    cases = [
        ((10.0, 11.0, 12.0), (1.0, 2.0, 3.0)),
        (tuple(float(v) for v in range(8)), tuple(float(v) for v in range(4, 12))),
    ]
    while len(cases) < 50:
        n1, n2 = rng.randint(1, 8), rng.randint(1, 8)
        a = tuple(float(rng.randint(0, 5)) for _ in range(n1))
        b = tuple(float(rng.randint(0, 5)) for _ in range(n2))
        cases.append((a, b))
    for a, b in cases:
        u, p = mann_whitney_u(a, b, alternative="greater")
        assert u == pairwise_u(a, b)
        assert abs(p - enumerated_p_greater(a, b)) <= 1e-9

    # normal-approximation branch at n = 20, against the same enumeration
    draws = np.random.default_rng(88)
    a = [float(v) for v in draws.normal(0.6, 1.0, size=10)]
    b = [float(v) for v in draws.normal(0.0, 1.0, size=10)]
    pooled = a + b
    assert len(set(pooled)) == 20
    ranks = mean_ranks(pooled)
    u_obs = pairwise_u(a, b)
    base = 10 * 11 / 2.0
    assert abs(sum(ranks[:10]) - base - u_obs) < 1e-9

    hits = total = 0
    for combo in itertools.combinations(range(20), 10):
        if sum(ranks[i] for i in combo) - base >= u_obs - 1e-12:
            hits += 1
        total += 1
    _, p_normal = mann_whitney_u(a, b, alternative="greater")
    assert abs(p_normal - hits / total) <= 0.01


# --- 9. identical configs give byte-identical runs -------------------------


def test_09_identical_runs_are_byte_identical(tmp_path, monkeypatch):
    config_text = json.dumps(
        {
            "out_dir": "out",
            "corpus_dir": "corpus",
            "gen": {"projects": 3, "commits_per_project": 6, "seed": 11},
            "provider": {"dimension": 64},
            "balance": {"target_pairs_per_project": 120},
            "train": {"epochs": 25, "h": 16, "batch_size": 32, "early_stop_patience": 5},
        }
    )

    def run(base):
        base.mkdir()
        (base / "config.json").write_text(config_text)
        monkeypatch.chdir(base)
        for argv in (
            ["gen"],
            ["prepare"],
            ["train"],
            ["eval", "--approach", "nextfocus"],
            ["eval", "--approach", "random"],
        ):
            assert cli_main(["--config", "config.json"] + argv) == 0

    first, second = tmp_path / "first", tmp_path / "second"
    run(first)
    run(second)

    def files_of(base):
        return sorted(p.relative_to(base) for p in base.rglob("*") if p.is_file())

    names = files_of(first)
    assert names == files_of(second)
    assert Path("out/checkpoint.json") in names
    assert Path("out/report-nextfocus.csv") in names
    assert Path("out/report-nextfocus.json") in names
    for rel in names:
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), str(rel)


# --- 10. radius sweep emits every metric; infinite radius is identity ------


def test_10_radius_sweep_reports_all_metrics(default_corpus):
    split = split_temporal(all_diff_keys(default_corpus))
    scorer = RandomScorer(seed=7)
    ks = range(1, 11)

    reports = [
        evaluate(scorer, default_corpus, split.test, k_max=10, tau=tau)
        for tau in (1.0, 2.0, 3.0, math.inf)
    ]
    assert all(report.results for report in reports)
    rows = radius_rows(reports, ks)
    assert {str(row["tau"]) for row in rows} == {"1.0", "2.0", "3.0", "inf"}
    assert len(rows) == 4 * 10
    for row in rows:
        assert set(row) == {"tau", "k", "precision", "prevalence", "ratio", "margin"}
        for metric in ("precision", "prevalence", "ratio", "margin"):
            assert math.isfinite(row[metric])
        assert abs(row["margin"] - (row["precision"] - row["prevalence"])) <= 1e-12
        assert abs(row["ratio"] * max(row["prevalence"], 1e-12) - row["precision"]) <= 1e-9

    unrestricted = evaluate(scorer, default_corpus, split.test, k_max=10, tau=None)
    infinite = next(r for r in reports if r.tau == math.inf)
    assert len(infinite.results) == len(unrestricted.results)
    for r_inf, r_none in zip(infinite.results, unrestricted.results):
        assert r_inf.ranking.ordered == r_none.ranking.ordered
        assert r_inf.ranking.positives == r_none.ranking.positives
