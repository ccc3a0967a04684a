import json

import pytest

from vista.cli import (
    ConfigError,
    compare,
    defaults_text,
    format_table,
    main,
    parse_config,
    parse_config_text,
    rows_to_csv,
    run_suite,
)

BASE = {"data": {"per_class": "30"}, "noise": {"kind": "symmetric", "rate": "0.4"}, "train": {"epochs": "6"}}


def small(**overrides):
    """Config text for a short noisy run; ``overrides`` maps section to extra keys."""
    sections = {k: dict(v) for k, v in BASE.items()}
    for section, keys in overrides.items():
        sections.setdefault(section, {}).update(keys)
    return "".join(f"[{s}]\n" + "".join(f"{k} = {v}\n" for k, v in kv.items()) for s, kv in sections.items())


SMALL = small()
DIVERGING = small(train={"lr": "1e30", "lr_schedule": "constant"})


def _cfg(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestParseConfig:
    def test_empty_matches_defaults(self):
        a = parse_config_text("")
        b = parse_config_text(defaults_text())
        assert a.train == b.train and a.data == b.data
        assert a.train.method == "vista" and a.train.batch_size == 32 and a.train.lr_schedule == "cosine"

    def test_noise_selects_noisy_regime(self):
        s = parse_config_text("[noise]\nkind = symmetric\nrate = 0.4\n")
        assert (s.train.batch_size, s.train.lr, s.train.lr_schedule, s.train.per_batch_lr) == (
            64, 0.1, "cosine-warm-restarts", True)

    def test_explicit_value_beats_auto(self):
        s = parse_config_text("[noise]\nkind = symmetric\nrate = 0.4\n[train]\nlr = 0.05\n")
        assert s.train.lr == 0.05

    def test_light(self):
        s = parse_config_text("[train]\nmethod = vista-light\n[vista]\ntau = 0.01\n")
        assert s.train.method == "vista-light" and s.train.tau == 0.01

    def test_fix1(self):
        b = parse_config_text("[vista]\nbeta = fix-1\n").train.beta_schedule()
        assert b.kind == "fixed" and b.fixed_value == 1.0

    @pytest.mark.parametrize(
        "text,match",
        [
            ("[train]\nbogus = 1\n", "unknown key"),
            ("[extras]\nx = 1\n", "unknown section"),
            ("[vista]\ntau = -0.1\n", "tau"),
            ("[data]\nval_fraction = 0.3\n", "sum to 1"),
            ("[train]\nmethod = boost\n", "method"),
            ("[train]\nepochs = ten\n", "epochs"),
            ("[output]\ndiagnostics = maybe\n", "boolean"),
            ("[noise]\nkind = pink\n", "noise"),
        ],
    )
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "nope.ini")

    def test_csv_source(self, tmp_path):
        (tmp_path / "d.csv").write_text("f0,label\n0.1,0\n0.2,1\n")
        s = parse_config_text(f"[data]\nsource = csv\npath = {tmp_path / 'd.csv'}\n")
        assert s.data["source"] == "csv"


class TestRunSuite:
    def test_three_seeds(self, tmp_path):
        spec = parse_config_text(SMALL)
        m = run_suite(spec, [0, 1, 2], tmp_path)
        assert m["schema_version"] == 1 and m["status"] == "ok"
        assert len(m["runs"]) == 3
        agg = m["aggregate"]["final_test_acc"]
        assert agg["n"] == 3 and agg["se"] >= 0
        for s in (0, 1, 2):
            d = tmp_path / "run" / str(s)
            for f in ("epochs.csv", "trajectory.csv", "lifespans.csv", "eot_coverage.csv", "summary.json"):
                assert (d / f).exists()

    def test_single_seed_zero_se(self, tmp_path):
        m = run_suite(parse_config_text(SMALL), [4], tmp_path)
        assert m["aggregate"]["final_test_acc"]["se"] == 0.0

    def test_same_seed_twice(self, tmp_path):
        m = run_suite(parse_config_text(SMALL), [3, 3], tmp_path)
        a, b = m["runs"]
        assert a == b

    def test_byte_for_byte_replay(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VISTA_DETERMINISTIC", "1")
        spec = parse_config_text(small(output={"spill_predictions": "true"}))
        run_suite(spec, [0, 1], tmp_path / "a")
        run_suite(spec, [0, 1], tmp_path / "b")
        ta, tb = _tree(tmp_path / "a"), _tree(tmp_path / "b")
        assert ta == tb
        assert any(k.endswith(".pred") for k in ta) and any(k.endswith(".bits") for k in ta)

    def test_parallel_matches_sequential(self, tmp_path):
        spec = parse_config_text(SMALL)
        a = run_suite(spec, [0, 1], tmp_path / "a", jobs=1)
        b = run_suite(spec, [0, 1], tmp_path / "b", jobs=2)
        assert a["runs"] == b["runs"]

    def test_failed_seed_recorded(self, tmp_path):
        spec = parse_config_text(DIVERGING)
        m = run_suite(spec, [0], tmp_path)
        assert m["status"] == "failed"
        assert "TrainingDiverged" in m["runs"][0]["error"]
        assert (tmp_path / "run" / "manifest.json").exists()


class TestCompare:
    def _manifest(self, tmp_path, overrides, name):
        spec = parse_config_text(small(**overrides))
        spec.name = name
        run_suite(spec, [0, 1], tmp_path)
        return tmp_path / name / "manifest.json"

    def test_self_compare(self, tmp_path):
        p = self._manifest(tmp_path, {}, "v")
        rows = compare([p, p])
        assert rows[1]["delta_final_acc"] == 0.0 and rows[1]["delta_oracle_es_acc"] == 0.0

    def test_order_and_light_equivalence(self, tmp_path):
        van = self._manifest(tmp_path, {"train": {"method": "vanilla"}}, "van")
        basic = self._manifest(tmp_path, {}, "basic")
        light = self._manifest(tmp_path, {"train": {"method": "vista-light"}}, "light")
        rows = compare([van, basic, light])
        assert [r["name"] for r in rows] == ["van", "basic", "light"]
        assert rows[1]["final_acc"] == rows[2]["final_acc"]
        assert rows[1]["oracle_es_acc"] == rows[2]["oracle_es_acc"]
        text = format_table(rows)
        assert text.splitlines()[0].startswith("name")
        assert rows_to_csv(rows).count("\n") == 4

    def test_fingerprint_mismatch(self, tmp_path):
        a = self._manifest(tmp_path, {}, "a")
        b = self._manifest(tmp_path, {"data": {"dim": "4"}}, "b")
        with pytest.raises(ValueError, match="fingerprint"):
            compare([a, b])

    def test_needs_two(self, tmp_path):
        with pytest.raises(ValueError):
            compare([tmp_path / "x.json"])


class TestMain:
    def test_print_defaults(self, capsys):
        assert main(["print-defaults"]) == 0
        out = capsys.readouterr().out
        assert "[vista]" in out and "beta = exp:2" in out
        assert parse_config_text(out).train == parse_config_text("").train

    def test_run_and_compare(self, tmp_path, capsys):
        cfg = _cfg(tmp_path, SMALL)
        assert main(["run", str(cfg), "--seeds", "0,1", "--out", str(tmp_path), "--name", "x"]) == 0
        m = json.loads((tmp_path / "x" / "manifest.json").read_text())
        assert m["seeds"] == [0, 1]
        man = str(tmp_path / "x" / "manifest.json")
        assert main(["compare", man, man, "--csv", str(tmp_path / "t.csv")]) == 0
        assert (tmp_path / "t.csv").read_text().startswith("name,method")

    def test_config_error_exit(self, tmp_path):
        assert main(["run", str(_cfg(tmp_path, "[train]\nbogus = 1\n"))]) == 2

    def test_failed_seed_exit(self, tmp_path):
        cfg = _cfg(tmp_path, DIVERGING)
        assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
