import json
import textwrap

import numpy as np
import pytest

from smallbody.cli import main, run
from smallbody.config import build_field, build_laurent, config_from_dict, load_config
from smallbody.errors import ValidationError
from smallbody.report import RunReport, Table, dumps, emit, from_plain, read_csv_table, to_plain


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def test_minimal_single_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "scenario: single\n"))
    assert cfg.scenario == "single"
    assert cfg.k == 1.0 and cfg.seed == 0
    assert cfg.particle().radius == 0.05
    assert cfg.raw["output"]["format"] == "json"


def test_transversality_rejected(tmp_path):
    p = write(tmp_path, "scenario: single\nphysics: {amplitude: [0, 0, 1], direction: [0, 0, 1]}\n")
    with pytest.raises(ValidationError, match="transversality"):
        load_config(p)


def test_kappa_rejected(tmp_path):
    p = write(tmp_path, "scenario: single\nparticle: {kappa: 3.5}\n")
    with pytest.raises(ValidationError, match=r"kappa out of \(0,3\)"):
        load_config(p)


def test_parse_error_has_position(tmp_path):
    p = write(tmp_path, "scenario: single\nphysics: {k: [1, 2\n")
    with pytest.raises(ValidationError, match=r"line \d+, column \d+"):
        load_config(p)


@pytest.mark.parametrize(
    "text",
    [
        "scenario: single\nbogus: 1\n",
        "scenario: single\nphysics: {kk: 1}\n",
        "scenario: effective\nlaw: {density: {kind: constant, valu: 1}}\n",
        "scenario: nope\n",
        "physics: {k: 1}\n",
        "scenario: nrcheck\n",
        "scenario: single\nnumerics: {solver: magic}\n",
    ],
)
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ValidationError):
        load_config(write(tmp_path, text))


def test_builtin_fields():
    x = np.array([[0.5, 0.5, 0.5], [0.0, 1.0, 2.0]])
    np.testing.assert_allclose(build_field(2.0, "f")(x), [2, 2])
    bump = build_field({"kind": "gaussian-bump", "amplitude": 3, "width": 0.1, "base": 1}, "f")
    assert bump(x)[0] == pytest.approx(4.0)
    poly = build_field({"kind": "polynomial", "terms": [[2, [1, 0, 0]], [{"re": 0, "im": 1}, [0, 1, 1]]]}, "f")
    assert poly(x)[1] == pytest.approx(2j)
    n = build_laurent({"terms": {-2: 1, 0: 0.5}}, "n")
    assert n(2.0) == pytest.approx(0.75)


def test_single_zero_gamma_report():
    cfg = config_from_dict({"scenario": "single", "particle": {"gamma": 0}, "probes": [[0, 0, 1.0]]})
    rep = run(cfg)
    assert rep.results["V"].tolist() == [0, 0, 0] and rep.results["nu"] == 0
    np.testing.assert_allclose(rep.tables["field"].columns["Ex"], np.exp(1j))


def test_nrcheck_report():
    cfg = config_from_dict({"scenario": "nrcheck", "nrcheck": {"omega": 2.0, "index": {"terms": {-2: 1}}}})
    rep = run(cfg)
    assert rep.results["negative"] is True
    assert rep.results["value"] == -0.25


def test_nrcheck_from_coefficient():
    # C(omega) = 1 - omega^2 with k = omega gives n = 1/omega, value 0
    cfg = config_from_dict({"scenario": "nrcheck", "nrcheck": {"omega": 2.0, "coefficient": {"terms": {0: 1, 2: -1}}}})
    rep = run(cfg)
    assert rep.results["n"] == pytest.approx(0.5)
    assert rep.results["value"] == pytest.approx(0.0, abs=1e-8)


HALF_CUBE_CONVERGE = {
    "scenario": "converge",
    "law": {"domain": {"lo": [0, 0, 0], "hi": [0.5, 0.5, 0.5]}},
    "a_sequence": [0.05, 0.025, 0.0125],
    "probes": [[0.25, 0.25, 1.0], [1.0, 0.25, 0.25]],
    "numerics": {"mesh": 16},
}


def test_converge_three_rows():
    rep = run(config_from_dict(HALF_CUBE_CONVERGE))
    t = rep.tables["convergence"]
    assert len(t) == 3
    err = t.columns["max_error"]
    assert err[0] > err[1] > err[2]
    assert rep.results["strictly_decreasing"]


def test_warnings_reach_report():
    cfg = config_from_dict({
        "scenario": "multi",
        "particles": [{"center": [0, 0, 0], "radius": 0.05}, {"center": [0.2, 0, 0], "radius": 0.05}],
        "probes": [[0, 0, 2.0]],
    })
    rep = run(cfg)
    assert any("10a" in w for w in rep.warnings)
    assert any("|b_m|" not in w for w in rep.warnings)


def test_json_encoding_rules():
    assert to_plain(1 + 2j) == {"re": 1.0, "im": 2.0}
    assert from_plain({"re": 1.0, "im": 2.0}) == 1 + 2j
    rep = RunReport("x", {}, {"z": np.complex128(0.1 + 1 / 3j)})
    back = from_plain(json.loads(dumps(rep)))
    assert back["results"]["z"] == 0.1 + 1 / 3j


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    z = rng.normal(size=5) + 1j * rng.normal(size=5)
    t = Table({"a": rng.normal(size=5), "z": z, "n": np.arange(5), "s": np.array(list("abcde"), dtype=object)})
    rep = RunReport("x", {}, tables={"t": t, "empty": Table({"Ex": np.zeros(0, complex)})})
    emit(rep, tmp_path, "csv")
    back = read_csv_table(tmp_path / "report_t.csv")
    np.testing.assert_array_equal(back.columns["z"], z)
    np.testing.assert_array_equal(back.columns["a"], t.columns["a"])
    assert (tmp_path / "report_empty.csv").read_text() == "Ex_re,Ex_im\n"


def test_complex_csv_columns(tmp_path):
    rep = RunReport("x", {}, tables={"t": Table({"v": np.array([1 + 2j])})})
    emit(rep, tmp_path, "csv")
    assert (tmp_path / "report_t.csv").read_text().splitlines() == ["v_re,v_im", "1.0,2.0"]


def test_cli_exit_codes(tmp_path, capsys):
    good = write(tmp_path, "scenario: nrcheck\nnrcheck: {omega: 2.0, index: {terms: {-2: 1}}}\n", "good.yaml")
    bad = write(tmp_path, "scenario: single\nparticle: {kappa: 3.5}\n", "bad.yaml")
    numeric = write(tmp_path, "scenario: single\nparticle: {radius: 0.5, gamma: 10000, kappa: 0.1}\n", "num.yaml")
    assert main(["validate", "--config", str(good)]) == 0
    assert main(["validate", "--config", str(bad)]) == 1
    assert main(["run", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["results"]["value"] == -0.25
    assert "timestamp" in json.loads((tmp_path / "o" / "report.meta.json").read_text())
    assert main(["run", "--config", str(numeric), "--out", str(tmp_path / "n")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_threads_option(tmp_path, monkeypatch):
    good = write(tmp_path, "scenario: nrcheck\nnrcheck: {omega: 2.0, index: {terms: {-2: 1}}}\n")
    assert main(["run", "--config", str(good), "--out", str(tmp_path), "--threads", "1"]) == 0
    monkeypatch.setenv("SMALLBODY_THREADS", "0")
    assert main(["run", "--config", str(good), "--out", str(tmp_path)]) == 1
    monkeypatch.setenv("SMALLBODY_THREADS", "2")
    assert main(["run", "--config", str(good), "--out", str(tmp_path)]) == 0


def test_seed_override_changes_cloud(tmp_path):
    p = write(tmp_path, "scenario: lemma3\na_sequence: [0.05]\nfunction: {kind: polynomial, terms: [[1, [2, 0, 0]]]}\n")
    main(["run", "--config", str(p), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["run", "--config", str(p), "--out", str(tmp_path / "b"), "--seed", "2"])
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert a["config"]["seed"] == 1
    assert a["tables"]["lemma3"]["weighted_sum"] != b["tables"]["lemma3"]["weighted_sum"]


@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_byte_identical_reports(tmp_path, fmt):
    p = write(tmp_path, """\
        scenario: multi
        law: {a: 0.05}
        probes: [[0.5, 0.5, 1.5]]
        """)
    for d in ("a", "b"):
        assert main(["run", "--config", str(p), "--out", str(tmp_path / d), "--format", fmt, "--seed", "3"]) == 0
    files = sorted(f.name for f in (tmp_path / "a").iterdir() if "meta" not in f.name)
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
