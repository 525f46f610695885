import pytest

from capscore.config import load_config
from capscore.errors import ConfigError, EmptyInput, IdMismatch


def write_config(tmp_path, text):
    path = tmp_path / "config.yaml"
    path.write_text(text, encoding="utf-8")
    return path


BASIC = """
seed: 7
cache_dir: cache
backends:
  - name: judge
    kind: mock-fixture
    model_id: m
    fixtures_dir: mock/judge
roster:
  decompose: judge
  match: judge
  verify: judge
"""


class TestLoadConfig:
    def test_basic_roundtrip(self, tmp_path):
        cfg = load_config(write_config(tmp_path, BASIC))
        assert cfg.seed == 7
        assert cfg.cache_dir == str(tmp_path / "cache")
        assert cfg.backend("judge").fixtures_dir == str(tmp_path / "mock/judge")

    def test_seed_override(self, tmp_path):
        cfg = load_config(write_config(tmp_path, BASIC), seed_override=99)
        assert cfg.seed == 99

    def test_env_interpolation(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MY_CACHE", str(tmp_path / "elsewhere"))
        cfg = load_config(write_config(tmp_path, BASIC.replace(
            "cache_dir: cache", "cache_dir: ${MY_CACHE}")))
        assert cfg.cache_dir == str(tmp_path / "elsewhere")

    def test_missing_env_var_fails(self, tmp_path, monkeypatch):
        monkeypatch.delenv("NOT_SET_ANYWHERE", raising=False)
        with pytest.raises(ConfigError, match="NOT_SET_ANYWHERE"):
            load_config(write_config(tmp_path, BASIC.replace(
                "cache_dir: cache", "cache_dir: ${NOT_SET_ANYWHERE}")))

    def test_unknown_roster_backend(self, tmp_path):
        with pytest.raises(ConfigError, match="ghost"):
            load_config(write_config(tmp_path, BASIC.replace(
                "decompose: judge", "decompose: ghost")))

    def test_unknown_ensemble_backend(self, tmp_path):
        text = BASIC + "  generate: judge\n  ensemble: [judge, ghost]\n"
        with pytest.raises(ConfigError, match="ghost"):
            load_config(write_config(tmp_path, text))

    def test_bad_ppo_settings(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, BASIC + "ppo:\n  clip_eps: 2.0\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")

    def test_duplicate_backend_names(self, tmp_path):
        text = BASIC + (
            "  - name: judge\n"
            "    kind: mock-fixture\n"
            "    model_id: m2\n"
            "    fixtures_dir: other\n"
        )
        # appended entry lands under backends thanks to yaml block structure
        bad = text.replace(
            "roster:", "  - name: judge\n    kind: mock-fixture\n    model_id: m2\n"
                       "    fixtures_dir: other\nroster:", 1
        )
        with pytest.raises(ConfigError, match="duplicate"):
            load_config(write_config(tmp_path, bad))

    def test_snapshot_has_no_secrets(self, tmp_path):
        text = BASIC + (
            "  generate: judge\n"
            "channels:\n"
            "  alpha_r: 0.25\n"
        )
        cfg = load_config(write_config(tmp_path, text))
        snapshot = cfg.to_snapshot()
        assert snapshot["channels"]["alpha_r"] == 0.25
        assert "credentials_env" not in str(snapshot)


class TestDataFiles:
    def test_score_csv_and_alignment(self, tmp_path):
        from capscore.datafiles import aligned_score_vectors, read_score_csv

        m = tmp_path / "m.csv"
        m.write_text("sample_id,system,score\ns1,a,0.5\ns1,b,0.75\n")
        scores = read_score_csv(m)
        assert scores[("s1", "b")] == 0.75
        vec_m, vec_h, samples, systems = aligned_score_vectors(scores, scores)
        assert vec_m == vec_h and samples == ["s1"] and systems == ["a", "b"]

    def test_alignment_mismatch(self, tmp_path):
        from capscore.datafiles import aligned_score_vectors

        with pytest.raises(IdMismatch) as err:
            aligned_score_vectors({("s1", "a"): 1.0}, {("s2", "a"): 1.0})
        assert ("s1", "a") in err.value.offenders

    def test_empty_files_rejected(self, tmp_path):
        from capscore.datafiles import load_samples, read_score_csv

        empty = tmp_path / "e.jsonl"
        empty.write_text("")
        with pytest.raises(EmptyInput):
            load_samples(empty)
        csv_file = tmp_path / "e.csv"
        csv_file.write_text("sample_id,system,score\n")
        with pytest.raises(EmptyInput):
            read_score_csv(csv_file)

    def test_duplicate_sample_ids_rejected(self, tmp_path):
        from capscore.datafiles import load_samples

        path = tmp_path / "dupes.jsonl"
        path.write_text(
            '{"sample_id": "s1", "caption": "a"}\n{"sample_id": "s1", "caption": "b"}\n'
        )
        with pytest.raises(ValueError, match="duplicate"):
            load_samples(path)

    def test_score_matrix_drops_partial_rows(self, tmp_path):
        from capscore.datafiles import score_matrices

        scores = {("s1", "a"): 1.0, ("s1", "b"): 2.0, ("s2", "a"): 3.0, ("s2", "b"): 4.0}
        m, h, kept, systems = score_matrices(scores, scores)
        assert m.shape == (2, 2) and kept == ["s1", "s2"]
