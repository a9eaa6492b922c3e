import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierclf.datagen import (
    Dataset,
    DatasetFormatError,
    SyntheticSpec,
    degrade,
    dumps_dataset,
    generate,
    load_dataset,
    loads_dataset,
    nearest_centroid_predict,
    node_centers,
    relabel,
    relabel_selection,
    save_dataset,
    stratified_split,
)

SPEC = SyntheticSpec()  # [3, 3], separations (8, 4), sigma 0.5


@pytest.fixture(scope="module")
def data():
    return generate(SPEC)


def test_sizes(data):
    t, train, test = data
    assert len(t.leaves) == 9
    assert len(train) == 180 and len(test) == 180
    assert np.array_equal(train.observed, train.truth_leaf)
    assert np.bincount(train.truth_leaf, minlength=t.n)[list(t.leaves)].tolist() == [20] * 9
    train.validate(t)


def test_generation_is_seeded(data):
    _, a, _ = data
    _, b, _ = generate(SPEC)
    assert np.array_equal(a.features, b.features)
    _, c, _ = generate(SyntheticSpec(seed=1))
    assert not np.array_equal(a.features, c.features)


def test_centroid_oracle_on_well_separated_data(data):
    t, _, test = data
    pred = nearest_centroid_predict(test.features, node_centers(SPEC, t), t.leaves)
    assert np.mean(pred == test.truth_leaf) > 0.99


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(branching=(3, 3), separations=(1.0,))
    with pytest.raises(ValueError):
        SyntheticSpec(noise_sigma=-1.0)
    with pytest.raises(ValueError):
        SyntheticSpec(branching=(0, 2), separations=(1, 1))


def test_relabel_exact_counts(data):
    t, train, _ = data
    out = relabel(train, t, 0.5, seed=3)
    internal = ~np.isin(out.observed, t.leaves)
    for leaf in t.leaves:
        members = train.truth_leaf == leaf
        assert internal[members].sum() == 10
        assert set(out.observed[members & internal]) == {t.parents[leaf]}
    assert np.array_equal(out.truth_leaf, train.truth_leaf)
    assert np.array_equal(out.features, train.features)
    out.validate(t)


def test_relabel_endpoints(data):
    t, train, _ = data
    same = relabel(train, t, 0.0)
    assert np.array_equal(same.observed, train.observed)
    everything = relabel(train, t, 1.0)
    assert not np.isin(everything.observed, t.leaves).any()


def test_relabel_rounds_half_up(data):
    t, train, _ = data
    # 0.7 * 20 = 13.999999999999998 in floating point
    assert relabel_selection(train, t, 0.7, 0).size == 14 * 9
    assert relabel_selection(train.subset(np.arange(0, 180, 4)), t, 0.5, 0).size == 27


def test_relabel_preconditions(data):
    t, train, _ = data
    with pytest.raises(ValueError):
        relabel(train, t, 1.5)
    with pytest.raises(ValueError):
        relabel(relabel(train, t, 0.5), t, 0.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), p=st.sampled_from([0.3, 0.5, 0.9]))
def test_relabel_commutes_with_shuffle(data, seed, p):
    t, train, _ = data
    perm = np.random.default_rng(seed).permutation(len(train))
    a = relabel(train, t, p, seed).subset(perm)
    b = relabel(train.subset(perm), t, p, seed)
    assert np.array_equal(a.observed, b.observed)


def test_degrade_identity_and_constant(data):
    _, train, _ = data
    rows = np.arange(len(train))
    same = degrade(train, rows, 1)
    assert np.array_equal(same.features, train.features)
    flat = degrade(train, rows[:5], 16)
    assert np.allclose(flat.features[:5], flat.features[:5, :1])
    assert np.array_equal(flat.features[5:], train.features[5:])


def test_degrade_hurts_centroid_oracle():
    spec = SyntheticSpec(separations=(2.0, 1.0), noise_sigma=0.25)
    t, _, test = generate(spec)
    centers = node_centers(spec, t)
    rows = np.arange(len(test))
    accs = []
    for factor in (1, 4, 16):
        d = degrade(test, rows, factor)
        accs.append(np.mean(nearest_centroid_predict(d.features, centers, t.leaves) == d.truth_leaf))
    assert accs[0] > accs[1] > accs[2]


def test_degrade_errors(data):
    _, train, _ = data
    with pytest.raises(ValueError):
        degrade(train, [0], 3)
    with pytest.raises(ValueError):
        degrade(train, [0], 2, mode="blur")
    with pytest.raises(IndexError):
        degrade(train, [len(train)], 2)


def test_noise_degrade_is_seeded(data):
    _, train, _ = data
    a = degrade(train, [0, 1], 1, mode="noise", seed=4)
    b = degrade(train, [0, 1], 1, mode="noise", seed=4)
    assert np.array_equal(a.features, b.features)
    assert not np.array_equal(a.features[:2], train.features[:2])


def test_stratified_split(data):
    t, train, _ = data
    fit_part, val = stratified_split(train, 0.2, seed=0)
    assert len(val) == 36 and len(fit_part) == 144
    assert np.bincount(val.truth_leaf)[list(t.leaves)].tolist() == [4] * 9


def test_file_round_trip(tmp_path, data):
    t, train, _ = data
    d = relabel(train, t, 0.3)
    save_dataset(d, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert back.features.tobytes() == d.features.tobytes()
    assert np.array_equal(back.observed, d.observed)
    assert back.taxonomy_digest == t.digest
    assert dumps_dataset(back) == dumps_dataset(d)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "0,0,1.0\n",
        "# hierclf-dataset version=2 input_dim=1 taxonomy_sha256=x\n",
        "# hierclf-dataset version=1 taxonomy_sha256=x\n",
        "# hierclf-dataset version=1 input_dim=2 taxonomy_sha256=x\n0,0,1.0\n",
        "# hierclf-dataset version=1 input_dim=1 taxonomy_sha256=x\n0,a,1.0\n",
    ],
)
def test_bad_files(text):
    with pytest.raises(DatasetFormatError):
        loads_dataset(text)


def test_dataset_shape_checks():
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), [0], [0], "x")
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), [0], [0, 0], "x")
