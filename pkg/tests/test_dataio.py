import numpy as np
import pytest

from fairhinge import (
    DataError,
    Dataset,
    ParseError,
    denormalize,
    derive_groups,
    make_folds,
    normalize,
    parse_movielens,
    preprocess,
)
from fairhinge.dataio import (
    MovieInfo,
    Rating,
    UserInfo,
    load_dataset_csv,
    load_folds,
    save_dataset_csv,
    save_folds,
)
from fairhinge.fairness import PROTECTED, UNPROTECTED


def write(path, text):
    path.write_text(text)
    return path


def make_dir(tmp_path, ratings, users, movies):
    write(tmp_path / "ratings.dat", ratings)
    write(tmp_path / "users.dat", users)
    write(tmp_path / "movies.dat", movies)
    return str(tmp_path)


BASIC_USERS = "1::F::1::10::48067\n2::M::25::4::00000\n"
BASIC_MOVIES = "1193::One Flew Over the Cuckoo's Nest (1975)::Drama\n5::Some Action (1999)::Action|Thriller\n"


def test_parse_rating_line(tmp_path):
    d = make_dir(tmp_path, "1::1193::5::978300760\n", BASIC_USERS, BASIC_MOVIES)
    ds = parse_movielens(d)
    assert ds.ratings == (Rating(user=1, item=1193, value=5.0, timestamp=978300760),)


def test_parse_user_line(tmp_path):
    d = make_dir(tmp_path, "", BASIC_USERS, BASIC_MOVIES)
    ds = parse_movielens(d)
    assert ds.users[1] == UserInfo(gender="F", age=1, occupation=10)
    assert ds.users[2].gender == "M"


def test_parse_movie_genres(tmp_path):
    d = make_dir(tmp_path, "", BASIC_USERS, BASIC_MOVIES)
    ds = parse_movielens(d)
    assert ds.movies[5] == MovieInfo(
        title="Some Action (1999)", genres=frozenset({"Action", "Thriller"})
    )


def test_parse_empty_ratings(tmp_path):
    d = make_dir(tmp_path, "", BASIC_USERS, BASIC_MOVIES)
    ds = parse_movielens(d)
    assert ds.ratings == ()


def test_parse_drops_orphan_ratings(tmp_path):
    d = make_dir(
        tmp_path, "1::1193::5::1\n9::1193::4::2\n1::777::3::3\n", BASIC_USERS, BASIC_MOVIES
    )
    ds = parse_movielens(d)
    assert len(ds.ratings) == 1


def test_parse_malformed_line_reports_number(tmp_path):
    d = make_dir(tmp_path, "1::1193::5::1\n1::5::bad::2\n", BASIC_USERS, BASIC_MOVIES)
    with pytest.raises(ParseError) as err:
        parse_movielens(d)
    assert err.value.line == 2


def test_parse_missing_file(tmp_path):
    with pytest.raises(DataError):
        parse_movielens(str(tmp_path))


def test_parse_rejects_out_of_range_rating(tmp_path):
    d = make_dir(tmp_path, "1::1193::9::1\n", BASIC_USERS, BASIC_MOVIES)
    with pytest.raises(ParseError):
        parse_movielens(d)


def make_dataset(n_ratings_per_user, genres_by_movie, genders=None):
    users = {
        u: UserInfo(gender=(genders or {}).get(u, "F"), age=25, occupation=0)
        for u in n_ratings_per_user
    }
    movies = {m: MovieInfo(title=f"M{m}", genres=frozenset(g)) for m, g in genres_by_movie.items()}
    ratings = []
    ts = 0
    movie_ids = sorted(genres_by_movie)
    for u, count in n_ratings_per_user.items():
        for j in range(count):
            m = movie_ids[j % len(movie_ids)]
            ratings.append(Rating(user=u, item=m, value=float(1 + (j % 5)), timestamp=ts))
            ts += 1
    return Dataset(ratings=tuple(ratings), users=users, movies=movies)


def test_preprocess_genre_filter():
    ds = make_dataset({1: 100}, {1: ["Comedy"], 2: ["Action"]})
    out = preprocess(ds)
    assert 1 not in out.movies
    assert all(r.item != 1 for r in out.ratings)


def test_preprocess_user_threshold_boundary():
    # user 1 keeps 50 ratings of kept-genre movies, user 2 only 49
    ds = make_dataset({1: 50, 2: 49}, {1: ["Romance"], 2: ["Sci-Fi"]})
    out = preprocess(ds)
    assert 1 in out.users
    assert 2 not in out.users
    assert all(r.user == 1 for r in out.ratings)


def test_preprocess_idempotent():
    ds = make_dataset({1: 60, 2: 55, 3: 10}, {1: ["Action"], 2: ["Comedy"], 3: ["Crime"]})
    once = preprocess(ds)
    twice = preprocess(once)
    assert once == twice


def test_normalize_endpoints_and_formula():
    assert normalize(1) == 0.0
    assert normalize(5) == 1.0
    assert normalize(3) == 0.5
    assert np.allclose(normalize(np.array([1.0, 2.0, 4.0])), [0.0, 0.25, 0.75])
    with pytest.raises(ValueError):
        normalize(6)
    with pytest.raises(ValueError):
        normalize(2.5)


def test_normalize_denormalize_round_trip():
    for v in (1, 2, 3, 4, 5):
        assert denormalize(normalize(v)) == float(v)


def test_make_folds_sizes_and_partition():
    ds = make_dataset({1: 60}, {1: ["Action"], 2: ["Action"]})
    assert len(ds.ratings) == 60
    folds = make_folds(ds, k=5, seed=0)
    assert [len(f.test) for f in folds] == [12] * 5
    union = set()
    for f in folds:
        assert set(f.train) | set(f.test) == set(range(60))
        assert not set(f.train) & set(f.test)
        assert not union & set(f.test)
        union |= set(f.test)
    assert union == set(range(60))


def test_make_folds_partition_fuzz_over_seeds():
    ds = make_dataset({1: 53}, {1: ["Action"]})
    n = len(ds.ratings)
    for seed in range(20):
        folds = make_folds(ds, k=5, seed=seed)
        tests = [set(f.test) for f in folds]
        assert set().union(*tests) == set(range(n))
        for a in range(len(tests)):
            for b in range(a + 1, len(tests)):
                assert not tests[a] & tests[b]
        sizes = sorted(len(t) for t in tests)
        assert sizes[-1] - sizes[0] <= 1


def test_make_folds_deterministic():
    ds = make_dataset({1: 30}, {1: ["Action"]})
    assert make_folds(ds, k=3, seed=7) == make_folds(ds, k=3, seed=7)


def test_make_folds_errors():
    ds = make_dataset({1: 3}, {1: ["Action"]})
    with pytest.raises(DataError):
        make_folds(ds, k=5, seed=0)
    with pytest.raises(ValueError):
        make_folds(ds, k=1, seed=0)


def test_derive_groups():
    ds = make_dataset({1: 1, 2: 1}, {1: ["Action"]}, genders={1: "F", 2: "M"})
    groups = derive_groups(ds)
    assert groups.membership[1] == PROTECTED
    assert groups.membership[2] == UNPROTECTED


def test_derive_groups_rejects_unknown_code():
    ds = make_dataset({1: 1, 2: 1}, {1: ["Action"]}, genders={1: "F", 2: "X"})
    with pytest.raises(DataError):
        derive_groups(ds)


def test_dataset_csv_round_trip(tmp_path):
    ds = make_dataset({1: 5, 2: 3}, {1: ["Action", "Crime"], 2: ["Comedy"]}, genders={1: "F", 2: "M"})
    path = tmp_path / "cache.csv"
    save_dataset_csv(path, ds)
    loaded = load_dataset_csv(path)
    assert loaded == ds


def test_dataset_csv_handles_commas_in_titles(tmp_path):
    movies = {1: MovieInfo(title="Movie, The (2000)", genres=frozenset({"Action"}))}
    ds = Dataset(
        ratings=(Rating(1, 1, 4.0, 0),),
        users={1: UserInfo("F", 25, 0)},
        movies=movies,
    )
    path = tmp_path / "cache.csv"
    save_dataset_csv(path, ds)
    assert load_dataset_csv(path) == ds


def test_fold_manifest_round_trip(tmp_path):
    ds = make_dataset({1: 20}, {1: ["Action"]})
    folds = make_folds(ds, k=4, seed=1)
    path = tmp_path / "folds.csv"
    save_folds(path, folds)
    assert load_folds(path) == folds


def test_synthetic_fixture_parses(synthetic_dataset):
    ds = synthetic_dataset
    assert len(ds.users) == 20
    assert len(ds.movies) == 10
    assert len(ds.ratings) == 200
    groups = derive_groups(ds)
    labels = set(groups.membership.values())
    assert labels == {PROTECTED, UNPROTECTED}
