"""Synthetic benchmark: base task, shifts, sequences, CSV ingestion."""

import dataclasses

import numpy as np
import pytest

from driftlab.config import default_config
from driftlab.domainstream import (
    Dataset,
    DomainSpec,
    StreamConfig,
    apply_domain_shift,
    build_sequence,
    default_domain_specs,
    invert_domain_shift,
    load_domain_csv,
    load_external,
    make_base_task,
    save_domain_csv,
)
from driftlab.errors import ConfigError, IngestError
from driftlab.persist import save_json


def test_base_task_counts():
    dd = make_base_task(seed=0, k=3, d_in=8, n_per_class=100)
    total = dd.train.n + dd.test.n
    assert total == 300
    for split in (dd.train, dd.test):
        assert split.X.shape[1] == 8
    joint_labels = np.concatenate([dd.train.y, dd.test.y])
    for c in range(3):
        assert (joint_labels == c).sum() == 100


def test_base_task_split_ratio():
    dd = make_base_task(seed=3, k=5, d_in=16, n_per_class=100)
    # 80/20 per class
    for c in range(5):
        assert (dd.train.y == c).sum() == 80
        assert (dd.test.y == c).sum() == 20


def test_base_task_deterministic():
    a = make_base_task(seed=11, k=4, d_in=10, n_per_class=40)
    b = make_base_task(seed=11, k=4, d_in=10, n_per_class=40)
    np.testing.assert_array_equal(a.train.X, b.train.X)
    np.testing.assert_array_equal(a.train.y, b.train.y)
    np.testing.assert_array_equal(a.test.X, b.test.X)
    c = make_base_task(seed=12, k=4, d_in=10, n_per_class=40)
    assert not np.array_equal(a.train.X, c.train.X)


def test_base_task_mean_geometry():
    # class means must sit on the stated sphere with pairwise separation;
    # recover them empirically from a low-noise draw
    sep = 6.0
    dd = make_base_task(seed=5, k=4, d_in=12, n_per_class=500, class_sep=sep, sigma=0.01)
    X = np.concatenate([dd.train.X, dd.test.X])
    y = np.concatenate([dd.train.y, dd.test.y])
    means = np.stack([X[y == c].mean(axis=0) for c in range(4)])
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), sep, atol=0.01)
    for a in range(4):
        for b in range(a + 1, 4):
            assert np.linalg.norm(means[a] - means[b]) >= sep - 0.02


def test_base_task_infeasible_placement():
    # far more classes than a 2-sphere of radius sep can hold at spacing sep
    with pytest.raises(ConfigError):
        make_base_task(seed=0, k=40, d_in=2, n_per_class=2, class_sep=4.0)


def test_base_task_validation():
    with pytest.raises(ConfigError):
        make_base_task(seed=0, k=1, d_in=8, n_per_class=10)
    with pytest.raises(ConfigError):
        make_base_task(seed=0, k=3, d_in=1, n_per_class=10)
    with pytest.raises(ConfigError):
        make_base_task(seed=0, k=3, d_in=8, n_per_class=10, class_sep=0.0)


def test_linear_probe_on_default_base_task():
    # the default geometry must be learnable by a plain linear model
    from sklearn.linear_model import LogisticRegression

    cfg = StreamConfig()
    dd = make_base_task(
        seed=0, k=cfg.k, d_in=cfg.d_in, n_per_class=cfg.n_per_class,
        class_sep=cfg.class_sep, sigma=cfg.sigma,
    )
    probe = LogisticRegression(max_iter=2000).fit(dd.train.X, dd.train.y)
    assert probe.score(dd.test.X, dd.test.y) >= 0.95


def test_identity_shift_is_exact():
    dd = make_base_task(seed=2, k=3, d_in=6, n_per_class=20)
    spec = DomainSpec(rotations=(), scale=1.0, bias=0.0, noise_sigma=0.0)
    shifted = apply_domain_shift(dd.train, spec, seed=7)
    np.testing.assert_array_equal(shifted.X, dd.train.X)
    np.testing.assert_array_equal(shifted.y, dd.train.y)


def test_pure_rotation_is_isometry():
    dd = make_base_task(seed=2, k=3, d_in=6, n_per_class=20)
    spec = DomainSpec(
        rotations=((0, 1, 0.8), (2, 3, 1.1), (4, 5, 0.3)),
        scale=1.0, bias=0.0, noise_sigma=0.0,
    )
    shifted = apply_domain_shift(dd.train, spec, seed=7)
    before = np.linalg.norm(dd.train.X, axis=1)
    after = np.linalg.norm(shifted.X, axis=1)
    np.testing.assert_allclose(after, before, atol=1e-9)


def test_shift_preserves_labels_and_tags():
    dd = make_base_task(seed=2, k=3, d_in=6, n_per_class=20)
    spec = DomainSpec(rotations=((0, 1, 0.5),), scale=2.0, bias=1.0, noise_sigma=0.1)
    shifted = apply_domain_shift(dd.train, spec, seed=7, domain_id="elsewhere")
    np.testing.assert_array_equal(shifted.y, dd.train.y)
    assert shifted.domain_id == "elsewhere"
    assert shifted.split == "train"


def test_shift_invertibility():
    dd = make_base_task(seed=9, k=4, d_in=10, n_per_class=30)
    spec = DomainSpec(
        rotations=((0, 3, 0.9), (1, 2, -0.4), (5, 8, 1.2)),
        scale=tuple(0.5 + 0.2 * i for i in range(10)),
        bias=tuple(float(i) - 4.0 for i in range(10)),
        noise_sigma=0.0,
    )
    shifted = apply_domain_shift(dd.train, spec, seed=3)
    back = invert_domain_shift(shifted, spec)
    np.testing.assert_allclose(back.X, dd.train.X, atol=1e-9)


def test_shift_noise_is_seeded():
    dd = make_base_task(seed=2, k=3, d_in=6, n_per_class=20)
    spec = DomainSpec(rotations=(), scale=1.0, bias=0.0, noise_sigma=0.5)
    a = apply_domain_shift(dd.train, spec, seed=7)
    b = apply_domain_shift(dd.train, spec, seed=7)
    c = apply_domain_shift(dd.train, spec, seed=8)
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.X, c.X)


def test_hard_domain_drops_pretrained_accuracy():
    # the difficulty tag must be earned: the source model loses at least
    # twenty points on the hard domain's test split
    from driftlab.metrics import evaluate
    from driftlab.netcore import classifier_from_doc, extractor_from_doc
    from driftlab.trainer import materialize_sequence, pretrain_source

    exp = default_config()
    exp = dataclasses.replace(exp, run=dataclasses.replace(exp.run, seed=1))
    seq = materialize_sequence(exp)
    ck = pretrain_source(exp, seq.source)
    theta = extractor_from_doc(ck["theta"])
    phi = classifier_from_doc(ck["phi"])
    assert exp.stream.specs["murk"].difficulty == "hard"
    murk_acc = evaluate(theta, phi, seq.domain_tests["murk"])
    assert ck["source_test_accuracy"] - murk_acc >= 0.20


def test_sequence_shape_and_half_order():
    seq = build_sequence(StreamConfig(), seed=0)
    assert len(seq.entries) == 6
    assert [e.half for e in seq.entries] == [1, 1, 1, 2, 2, 2]
    assert [e.domain_id for e in seq.entries] == [
        "tilt", "stretch", "murk", "tilt", "stretch", "murk",
    ]
    assert set(seq.domain_tests) == {"tilt", "stretch", "murk"}
    assert seq.source.train.domain_id == "base"


def test_sequence_two_domain_variant():
    cfg = StreamConfig(domains=("tilt", "murk"))
    seq = build_sequence(cfg, seed=0)
    assert len(seq.entries) == 4
    assert [(e.domain_id, e.half) for e in seq.entries] == [
        ("tilt", 1), ("murk", 1), ("tilt", 2), ("murk", 2),
    ]


def test_halves_partition_pool():
    cfg = StreamConfig()
    seq = build_sequence(cfg, seed=4)
    for dom in cfg.domains:
        halves = [e.train for e in seq.entries if e.domain_id == dom]
        assert len(halves) == 2
        assert abs(halves[0].n - halves[1].n) <= 1
        stacked = np.concatenate([halves[0].X, halves[1].X])
        # every pooled row appears exactly once across the two halves
        order_a = np.lexsort(stacked.T)
        pool_n = halves[0].n + halves[1].n
        assert stacked.shape[0] == pool_n
        dedup = np.unique(stacked[order_a], axis=0)
        assert dedup.shape[0] == pool_n


def test_halves_disjoint_from_test_split():
    cfg = StreamConfig()
    seq = build_sequence(cfg, seed=4)
    for dom in cfg.domains:
        test_rows = {tuple(r) for r in seq.domain_tests[dom].X}
        for e in seq.entries:
            if e.domain_id != dom:
                continue
            train_rows = {tuple(r) for r in e.train.X}
            assert not (train_rows & test_rows)


def test_sequence_deterministic():
    a = build_sequence(StreamConfig(), seed=6)
    b = build_sequence(StreamConfig(), seed=6)
    for ea, eb in zip(a.entries, b.entries):
        assert ea.domain_id == eb.domain_id and ea.half == eb.half
        np.testing.assert_array_equal(ea.train.X, eb.train.X)
        np.testing.assert_array_equal(ea.train.y, eb.train.y)
    for dom in a.domain_tests:
        np.testing.assert_array_equal(a.domain_tests[dom].X, b.domain_tests[dom].X)


def test_stream_config_rejects_duplicates_and_short_lineups():
    with pytest.raises(ConfigError):
        StreamConfig(domains=("tilt", "tilt", "murk"))
    with pytest.raises(ConfigError):
        StreamConfig(domains=("tilt",))
    with pytest.raises(ConfigError):
        StreamConfig(domains=("tilt", "nowhere"))


def test_default_specs_cover_lineup():
    specs = default_domain_specs(16)
    assert set(specs) >= {"base", "tilt", "stretch", "murk"}
    assert specs["murk"].difficulty == "hard"
    assert specs["base"].difficulty == "source"


def test_csv_round_trip_bit_exact(tmp_path):
    dd = make_base_task(seed=13, k=4, d_in=7, n_per_class=25)
    path = str(tmp_path / "dom.csv")
    save_domain_csv(path, dd.train)
    back = load_domain_csv(path, k=4, d_in=7, split="train", domain_id="dom")
    np.testing.assert_array_equal(back.X, dd.train.X)
    np.testing.assert_array_equal(back.y, dd.train.y)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("labl,f0,f1\n0,1.0,2.0\n")
    with pytest.raises(IngestError, match="line 1.*bad header"):
        load_domain_csv(str(path), k=2, d_in=2, split="train", domain_id="d")


def test_csv_wrong_cell_count(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,f0,f1\n0,1.0,2.0\n1,3.0\n")
    with pytest.raises(IngestError, match="line 3"):
        load_domain_csv(str(path), k=2, d_in=2, split="train", domain_id="d")


def test_csv_non_integer_label(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,f0,f1\nx,1.0,2.0\n")
    with pytest.raises(IngestError, match="line 2.*not an integer"):
        load_domain_csv(str(path), k=2, d_in=2, split="train", domain_id="d")


def test_csv_label_out_of_range(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,f0,f1\n0,1.0,2.0\n2,3.0,4.0\n")
    with pytest.raises(IngestError, match="line 3.*label out of range"):
        load_domain_csv(str(path), k=2, d_in=2, split="train", domain_id="d")


def test_csv_non_numeric_cell(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,f0,f1\n0,1.0,huh\n")
    with pytest.raises(IngestError, match="line 2.*non-numeric"):
        load_domain_csv(str(path), k=2, d_in=2, split="train", domain_id="d")


def _write_domain(tmp_path, name, dd):
    save_domain_csv(str(tmp_path / f"{name}_train.csv"), dd.train)
    save_domain_csv(str(tmp_path / f"{name}_test.csv"), dd.test)
    return {
        "domain_id": name,
        "train_csv": f"{name}_train.csv",
        "test_csv": f"{name}_test.csv",
    }


def test_manifest_round_trip(tmp_path):
    a = make_base_task(seed=1, k=3, d_in=5, n_per_class=20)
    b = make_base_task(seed=2, k=3, d_in=5, n_per_class=20)
    manifest = {
        "k": 3,
        "d_in": 5,
        "domains": [_write_domain(tmp_path, "alpha", a), _write_domain(tmp_path, "beta", b)],
    }
    mpath = str(tmp_path / "manifest.json")
    save_json(mpath, manifest)
    domains = load_external(mpath)
    assert [d.domain_id for d in domains] == ["alpha", "beta"]
    assert domains[0].train.n == a.train.n and domains[0].test.n == a.test.n
    np.testing.assert_array_equal(domains[1].train.X, b.train.X)


def test_manifest_duplicate_ids(tmp_path):
    a = make_base_task(seed=1, k=3, d_in=5, n_per_class=20)
    entry = _write_domain(tmp_path, "alpha", a)
    mpath = str(tmp_path / "manifest.json")
    save_json(mpath, {"k": 3, "d_in": 5, "domains": [entry, dict(entry)]})
    with pytest.raises(IngestError, match="duplicate"):
        load_external(mpath)


def test_manifest_missing_file(tmp_path):
    mpath = str(tmp_path / "manifest.json")
    save_json(mpath, {"k": 3, "d_in": 5, "domains": [
        {"domain_id": "a", "train_csv": "nope.csv", "test_csv": "nope2.csv"},
    ]})
    with pytest.raises(IngestError, match="not found"):
        load_external(mpath)
    with pytest.raises(IngestError, match="not found"):
        load_external(str(tmp_path / "absent.json"))


def test_dataset_validation():
    with pytest.raises(ConfigError):
        Dataset(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), "train", "d")
    with pytest.raises(ConfigError):
        Dataset(np.zeros((2, 3)), np.zeros(2, dtype=np.int64), "limbo", "d")
