"""CLI driver: schemas, exit codes, artifacts, goldens, determinism."""

import json
import pathlib

import numpy as np
import pytest

from ovfree import cli, linalg, measures, ovdist

DATA = pathlib.Path(__file__).parent / "data"


def _write_config(tmp_path, config):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)


def _run(tmp_path, monkeypatch, config):
    monkeypatch.chdir(tmp_path)
    return cli.main(["run", _write_config(tmp_path, config)])


class TestGoldenArtifacts:
    @pytest.mark.parametrize("name", ["fbcs", "truncate", "convolve"])
    def test_rerun_is_byte_identical(self, name, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        rc = cli.main(["run", str(DATA / f"config_{name}.json")])
        assert rc == 0
        produced = (tmp_path / "out.csv").read_bytes()
        assert produced == (DATA / f"golden_{name}.csv").read_bytes()

    def test_verify_accepts_the_frozen_pair(self, capsys):
        rc = cli.main(["verify", "--config", str(DATA / "config_fbcs.json"),
                       "--artifact", str(DATA / "golden_fbcs.csv")])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["verified"] is True
        assert out["command"] == "fbcs"

    def test_verify_rejects_a_mismatched_pair(self, capsys):
        rc = cli.main(["verify", "--config", str(DATA / "config_fbcs.json"),
                       "--artifact", str(DATA / "golden_truncate.csv")])
        assert rc == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "HashMismatch"

    def test_json_artifacts_are_reproducible(self, tmp_path, monkeypatch):
        config = {"command": "certify", "seed": 0,
                  "params": {"dist": {"kind": "scalar",
                                      "law": {"variant": "cauchy",
                                              "location": 0.0, "scale": 1.0}},
                             "lam": 0.5, "n_pairs": 1},
                  "output": "cert.json"}
        assert _run(tmp_path, monkeypatch, config) == 0
        first = (tmp_path / "cert.json").read_bytes()
        assert cli.main(["run", _write_config(tmp_path, config)]) == 0
        assert (tmp_path / "cert.json").read_bytes() == first
        doc = json.loads(first)
        assert doc["result"]["domain_radius"] > 0
        assert doc["result"]["image_radius"] > 0

    def test_thread_count_does_not_change_bytes(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("OVFREE_THREADS", "3")
        assert cli.main(["run", str(DATA / "config_convolve.json")]) == 0
        assert ((tmp_path / "out.csv").read_bytes()
                == (DATA / "golden_convolve.csv").read_bytes())


class TestSchemaGate:
    base = {"command": "fbcs", "seed": 7, "params": {}, "output": "out.csv"}

    def test_unknown_top_level_key(self, tmp_path, monkeypatch, capsys):
        config = dict(self.base, extra=1)
        assert _run(tmp_path, monkeypatch, config) == 2
        assert json.loads(capsys.readouterr().err)["error"]["exit"] == 2

    def test_unknown_command(self, tmp_path, monkeypatch):
        assert _run(tmp_path, monkeypatch, dict(self.base, command="nope")) == 2

    def test_missing_required_param(self, tmp_path, monkeypatch):
        config = {"command": "certify", "seed": 0,
                  "params": {"dist": {"kind": "scalar",
                                      "law": {"variant": "cauchy",
                                              "location": 0.0, "scale": 1.0}}},
                  "output": "o.json"}
        assert _run(tmp_path, monkeypatch, config) == 2

    def test_malformed_law_object(self, tmp_path, monkeypatch, capsys):
        config = {"command": "truncate-sweep", "seed": 0,
                  "params": {"law": {"variant": "cauchy"},
                             "b": {"dim": 1, "re": [[0.0]], "im": [[2.0]]}},
                  "output": "o.csv"}
        assert _run(tmp_path, monkeypatch, config) == 2
        assert json.loads(capsys.readouterr().err)["error"]["type"] == "SchemaError"

    def test_matrix_shape_disagreement(self, tmp_path, monkeypatch):
        config = {"command": "g-eval", "seed": 0,
                  "params": {"dist": {"kind": "scalar",
                                      "law": {"variant": "cauchy",
                                              "location": 0.0, "scale": 1.0}},
                             "b": {"dim": 2, "re": [[0.0]], "im": [[2.0]]}},
                  "output": "o.json"}
        assert _run(tmp_path, monkeypatch, config) == 2

    def test_unreadable_config_path(self):
        assert cli.main(["run", "/nonexistent/config.json"]) == 2

    def test_invalid_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OVFREE_THREADS", "zap")
        assert _run(tmp_path, monkeypatch, self.base) == 2


class TestNumericalFailures:
    def test_neumann_without_dominance(self, tmp_path, monkeypatch, capsys):
        config = {"command": "neumann", "seed": 0,
                  "params": {"B": {"dim": 2, "re": [[0, 9], [9, 0]],
                                   "im": [[1, 0], [0, 1]]},
                             "laws": [{"variant": "cauchy", "location": 0.0,
                                       "scale": 1.0}],
                             "mode": "free", "p_max": 3},
                  "output": "o.json"}
        assert _run(tmp_path, monkeypatch, config) == 3
        err = json.loads(capsys.readouterr().err)["error"]
        assert err["type"] == "NotDominant"

    def test_killer_target_off_the_half_plane(self, tmp_path, monkeypatch, capsys):
        config = {"command": "killer", "seed": 0,
                  "params": {"targets": [[1.0, -1.0]]}, "output": "o.json"}
        assert _run(tmp_path, monkeypatch, config) == 3
        assert (json.loads(capsys.readouterr().err)["error"]["type"]
                == "UnsupportedPoint")


class TestFlagForms:
    def test_moments_word_evaluates_against_reference(self, capsys):
        rc = cli.main(["moments", "--word", "[(2i,1),(3i,2),(2i,1)]",
                       "--mode", "free"])
        assert rc == 0
        result = json.loads(capsys.readouterr().out)["result"]
        value = complex(*result["value"])
        reference = complex(*result["reference"])
        assert abs(value - reference) <= 1e-12
        assert value == pytest.approx(1j / 36)
        assert result["mode"] == "free"

    def test_moments_accepts_json_law(self, capsys):
        rc = cli.main(["moments", "--word", "[(2i,1)]", "--mode", "classical",
                       "--law", '{"variant": "semicircle", "variance": 1.0}'])
        assert rc == 0
        result = json.loads(capsys.readouterr().out)["result"]
        assert result["reference"] is None
        expected = measures.g_scalar(measures.Semicircle(1.0), 2j)
        assert complex(*result["value"]) == pytest.approx(expected)

    def test_moments_bad_word_string(self, capsys):
        assert cli.main(["moments", "--word", "[(2i,"]) == 2
        assert json.loads(capsys.readouterr().err)["error"]["exit"] == 2

    def test_killer_parses_mixed_notation(self, capsys):
        rc = cli.main(["killer", "--targets", "i, 1+i, 0.3+2i"])
        assert rc == 0
        result = json.loads(capsys.readouterr().out)["result"]
        assert len(result["stages"]) == 3
        assert result["max_abs_derivative_at_targets"] <= 1e-12
        assert result["halfplane_check"] is True
        assert result["stages"][0] == {"shift": 0.0, "radius": 1.0}

    def test_killer_empty_targets(self, capsys):
        assert cli.main(["killer", "--targets", " , "]) == 2


class TestArtifactContents:
    def test_g_eval_matches_direct_evaluation(self, tmp_path, monkeypatch):
        law = {"variant": "semicircle", "variance": 1.0}
        config = {"command": "g-eval", "seed": 0,
                  "params": {"dist": {"kind": "scalar", "law": law},
                             "b": {"dim": 2, "re": [[0.0, 0.3], [0.3, 0.0]],
                                   "im": [[2.0, 0.0], [0.0, 2.5]]}},
                  "output": "g.json"}
        assert _run(tmp_path, monkeypatch, config) == 0
        doc = json.loads((tmp_path / "g.json").read_text())
        value = linalg.matrix_from_json(doc["result"]["value"])
        b = np.array([[2j, 0.3], [0.3, 2.5j]])
        direct = ovdist.ScalarEmbedded(measures.Semicircle(1.0)).eval_G(b)
        assert np.allclose(value, direct, atol=1e-12)
        assert doc["meta"]["config_sha256"] == cli._config_hash(config)
        assert doc["meta"]["command"] == "g-eval"

    def test_convergence_flags_escaping_mass(self, tmp_path, monkeypatch):
        def atomic(n):
            return {"kind": "scalar",
                    "law": {"variant": "atomic",
                            "atoms": [[0.0, 0.5], [float(n), 0.5]]}}
        config = {"command": "convergence", "seed": 0,
                  "params": {"dists": [atomic(n) for n in (4, 16, 64)],
                             "probes": [{"dim": 1, "re": [[0.0]],
                                         "im": [[2.0]]}],
                             "limit": {"kind": "scaled-inverse",
                                       "factor": 0.5}},
                  "output": "c.json"}
        assert _run(tmp_path, monkeypatch, config) == 0
        result = json.loads((tmp_path / "c.json").read_text())["result"]
        assert result["mass_deficit"] is True
        assert result["limit_mass"] == pytest.approx(0.5, abs=1e-9)
        errs = result["sup_errors"]
        assert all(a > b for a, b in zip(errs, errs[1:]))

    def test_block_identity_artifact(self, tmp_path, monkeypatch):
        config = {"command": "block-identity", "seed": 0,
                  "params": {"law": {"variant": "pointmass", "position": 0.0},
                             "B": {"dim": 2, "re": [[0.0, 0.0], [0.0, 0.0]],
                                   "im": [[3.0, 0.0], [0.0, 3.0]]}},
                  "output": "b.json"}
        assert _run(tmp_path, monkeypatch, config) == 0
        result = json.loads((tmp_path / "b.json").read_text())["result"]
        assert result["deviation"] <= 1e-10
        lhs = linalg.matrix_from_json(result["lhs"])
        assert np.allclose(lhs, np.diag([-0.5j, -0.25j]), atol=1e-10)

    def test_r_eval_returns_ball_and_value(self, tmp_path, monkeypatch):
        # For a deterministic operator c*I the R-transform is constantly c*I,
        # and the certified patch is centered at (d - c*I)^{-1}.
        w = np.linalg.inv(np.diag([0.4j, -0.4j]) - 0.02 * np.eye(2))
        config = {"command": "r-eval", "seed": 0,
                  "params": {"dist": {"kind": "dirac",
                                      "operator": {"dim": 1, "re": [[0.02]],
                                                   "im": [[0.0]]}},
                             "lam": 0.4, "n_pairs": 1,
                             "w": linalg.matrix_to_json(w)},
                  "output": "r.json"}
        assert _run(tmp_path, monkeypatch, config) == 0
        result = json.loads((tmp_path / "r.json").read_text())["result"]
        value = linalg.matrix_from_json(result["value"])
        assert np.allclose(value, 0.02 * np.eye(2), atol=1e-9)
        assert result["ball"]["image_radius"] > 0


class TestEmitPlotdata:
    def test_format_contract(self):
        meta = {"config_sha256": "ab12", "version": "9.9.9", "command": "demo"}
        text = cli.emit_plotdata(["name", "x", "ok"],
                                 [["row", 1.0 / 3.0, True],
                                  ["second", 2.0, False]], meta)
        lines = text.split("\r\n")
        assert lines[0] == "# ovfree-meta config_sha256=ab12 version=9.9.9 command=demo"
        assert lines[1] == "name,x,ok"
        assert lines[2] == "row,0.33333333333333331,true"
        assert lines[3] == "second,2,false"
        assert text.endswith("\r\n")
