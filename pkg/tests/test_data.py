import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rl2r.data import (ClampPolicy, DataError, ResponseParseError, SyntheticWorldConfig,
                       compose_response, generate_world, linear_rescale, load_mos_csv,
                       load_response_groups, load_score_csv, parse_response, split_ids,
                       write_latent_csv, write_mos_csv)
from rl2r.evaluation import srcc
from rl2r.quality_core import preference_matrix


def test_noiseless_world_ranks_match_latent():
    w = generate_world(SyntheticWorldConfig(n_images=50, mos_noise_std=0.0, seed=3))
    assert srcc(w.mos(), w.latent_array()) == 1.0


def test_scale_change_preserves_preferences():
    a = generate_world(SyntheticWorldConfig(n_images=40, seed=1, mos_scale=(1, 5)))
    b = generate_world(SyntheticWorldConfig(n_images=40, seed=1, mos_scale=(0, 100)))
    assert np.array_equal(a.features(), b.features())
    assert np.array_equal(preference_matrix(a.mos()), preference_matrix(b.mos()), equal_nan=True)
    assert b.mos().min() == 0.0 and b.mos().max() == 100.0


def test_world_deterministic(tmp_path):
    cfg = SyntheticWorldConfig(n_images=30, seed=9)
    write_mos_csv(generate_world(cfg).records, tmp_path / "a.csv")
    write_mos_csv(generate_world(cfg).records, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_compressed_world_keeps_order():
    a = generate_world(SyntheticWorldConfig(n_images=30, seed=2))
    b = generate_world(SyntheticWorldConfig(n_images=30, seed=2, compress=True))
    assert srcc(a.mos(), b.mos()) == 1.0


@pytest.mark.parametrize("kwargs", [
    {"n_images": 1}, {"mos_scale": (5, 1)}, {"mos_scale": (2, 2)}, {"mos_noise_std": -1},
    {"feature_dim": 2, "latent_weights": (1.0,)}, {"feature_dim": 2, "latent_weights": (0.0, 0.0)},
])
def test_world_config_validation(kwargs):
    with pytest.raises(ValueError):
        SyntheticWorldConfig(**kwargs)


def test_csv_round_trip(tmp_path):
    w = generate_world(SyntheticWorldConfig(n_images=25, feature_dim=4, seed=4))
    write_mos_csv(w.records, tmp_path / "w.csv")
    assert load_mos_csv(tmp_path / "w.csv") == w.records
    write_latent_csv(w.latent, tmp_path / "z.csv")
    assert load_score_csv(tmp_path / "z.csv") == w.latent


def test_csv_small_file(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("image_id,mos,dataset_id,f0\na,3.5,kadid,0.1\nb,70,spaq,0.2\nc,1.2,kadid,-1\n")
    recs = load_mos_csv(p)
    assert len(recs) == 3
    # mixed scales load side by side, untouched
    assert [r.dataset_id for r in recs] == ["kadid", "spaq", "kadid"]
    assert recs[1].mos == 70.0


def test_csv_nan_names_line(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("image_id,mos,dataset_id,f0\na,NaN,d,0.1\n")
    with pytest.raises(DataError, match="line 2"):
        load_mos_csv(p)


@pytest.mark.parametrize("text, match", [
    ("image_id,dataset_id\na,d\n", "missing columns"),
    ("image_id,mos,dataset_id,f0\na,3,d,x\n", "line 2"),
    ("image_id,mos,dataset_id\na,3,d\na,4,d\n", "duplicate"),
    ("image_id,mos,dataset_id,f1\na,3,d,1\n", "feature columns"),
    ("", "empty"),
    ("image_id,mos,dataset_id\n", "no data"),
])
def test_csv_errors(tmp_path, text, match):
    p = tmp_path / "m.csv"
    p.write_text(text)
    with pytest.raises(DataError, match=match):
        load_mos_csv(p)


def test_linear_rescale():
    assert np.allclose(linear_rescale([0, 50, 100]), [1, 3, 5])
    assert np.allclose(linear_rescale([0, 50], source_range=(0, 100)), [1, 3])
    with pytest.raises(ValueError):
        linear_rescale([2, 2])


def test_parse_response_examples():
    assert parse_response("<think>sharp, well exposed</think><answer>3.75</answer>") == 3.75
    assert parse_response("<answer>0.2</answer>", ClampPolicy.CLAMP) == 1.0
    with pytest.raises(ResponseParseError):
        parse_response("<answer>0.2</answer>", ClampPolicy.REJECT)
    with pytest.raises(ResponseParseError):
        parse_response("<answer>great image</answer>")


@pytest.mark.parametrize("raw, expected", [
    ("<answer>2.0</answer> on reflection <answer>4.10</answer>", 4.10),
    ("<answer> Score: 3.3 out of 5 </answer>", 3.3),
    ("<ANSWER>\n4\n</ANSWER>", 4.0),
    ("<answer>7.5</answer>", 5.0),
])
def test_parse_response_variants(raw, expected):
    assert parse_response(raw) == expected


@pytest.mark.parametrize("raw", ["no tags at all", "<answer></answer>", "<answer>   </answer>", ""])
def test_parse_response_failures(raw):
    with pytest.raises(ResponseParseError):
        parse_response(raw)


@given(st.integers(100, 500))
def test_compose_parse_round_trip(cents):
    x = cents / 100
    assert parse_response(compose_response(x, "looks fine")) == x
    assert parse_response(compose_response(x), "reject") == x


def _write_log(path, rows):
    path.write_text("".join(json.dumps({"image_id": i, "text": t}) + "\n" for i, t in rows))


def test_response_groups(tmp_path):
    rows = [(iid, compose_response(2 + 0.1 * k)) for iid in ("a", "b") for k in range(6)]
    _write_log(tmp_path / "r.jsonl", rows)
    log = load_response_groups(tmp_path / "r.jsonl", 6)
    assert [g.image_id for g in log.groups] == ["a", "b"]
    assert all(len(g) == 6 for g in log.groups)
    assert log.clamped == 0 and log.failed == 0


def test_response_groups_reject_underfilled(tmp_path):
    rows = [(iid, compose_response(3.0)) for iid in ("a", "b") for _ in range(6)]
    rows[7] = ("b", "<answer>oops</answer>")
    _write_log(tmp_path / "r.jsonl", rows)
    with pytest.raises(DataError, match="'b'"):
        load_response_groups(tmp_path / "r.jsonl", 6, "reject")


def test_response_groups_clamp_counter(tmp_path):
    rows = [(iid, compose_response(3.0)) for iid in ("a", "b") for _ in range(6)]
    rows[2] = ("a", "<think>odd</think><answer>0.2</answer>")
    _write_log(tmp_path / "r.jsonl", rows)
    log = load_response_groups(tmp_path / "r.jsonl", 6, "clamp")
    assert log.clamped == 1
    assert log.groups[0].scores[2] == 1.0


def test_response_groups_bad_json(tmp_path):
    (tmp_path / "r.jsonl").write_text('{"image_id": "a"}\n')
    with pytest.raises(DataError, match="line 1"):
        load_response_groups(tmp_path / "r.jsonl", 2)
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(DataError):
        load_response_groups(tmp_path / "e.jsonl", 2)


def test_split_ids_partition():
    ids = [f"i{n}" for n in range(100)]
    s = split_ids(ids, np.random.default_rng(0))
    assert (len(s["train"]), len(s["val"]), len(s["test"])) == (60, 20, 20)
    assert sorted(s["train"] + s["val"] + s["test"]) == sorted(ids)
