import json
from fractions import Fraction

import pytest

from nematiq import cli
from nematiq.config import SCHEMA, ConfigError, load_config, parse_config

FAST = {"nx": "16", "ny": "16", "T": "0.01", "output_stride": "5"}


def test_empty_text_gives_defaults():
    cfg = parse_config("")
    for key, (_, default) in SCHEMA.items():
        assert getattr(cfg, key) == default
    assert cfg.dealias == Fraction(2, 3)


def test_dt_zero_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("dt = 0")
    assert "dt" in str(exc.value) and "line 1" in str(exc.value)


def test_gl_preset_expands():
    p = parse_config("poly = gl(0.5)").polynomial
    assert p.N == 1 and p.coeffs == (4.0, -4.0)
    assert parse_config("poly = coeffs(1, 0, -2)").polynomial.coeffs == (1.0, 0.0, -2.0)


@pytest.mark.parametrize(
    "text, key",
    [
        ("bogus = 1", "bogus"),
        ("nx = 9", "nx"),
        ("T = 0.0015", "T"),
        ("k_levels = 10, 5", "k_levels"),
        ("poly = coeffs(1, 2)", "poly"),
        ("scheme = leapfrog", "scheme"),
        ("vnoise = smoothed(0.2, 0.5, 8)", "vnoise"),
        ("dt = 1e-3\ndt = 2e-3", "dt"),
        ("kappa = 1,2", "kappa"),
        ("vnoise = additive(0.1, 0)", "vnoise"),
        ("dnoise = default(-1)", "dnoise"),
    ],
)
def test_invalid_configs(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key


def test_window_checked_for_picard_only():
    parse_config("window_len = 0.0015")
    with pytest.raises(ConfigError):
        parse_config("window_len = 0.0015", command="picard")


def test_overrides_win_and_comments_ignored():
    cfg = parse_config("# header\nseeds = 3  # trailing\n", {"seeds": "1,5"})
    assert cfg.seed_list == (1, 5)
    assert parse_config("seeds = 3").seed_list == (0, 1, 2)


def test_digest_depends_on_values():
    assert parse_config("").digest() == parse_config("").digest()
    assert parse_config("").digest() != parse_config("dt = 5e-4").digest()


def test_split_overrides():
    assert cli._split_overrides(["--dt", "1e-3", "--k-levels=1,2"]) == {"dt": "1e-3", "k_levels": "1,2"}
    with pytest.raises(ConfigError):
        cli._split_overrides(["--dt"])
    with pytest.raises(ConfigError):
        cli._split_overrides(["stray"])


def argv(command, out, **extra):
    opts = dict(FAST, output_dir=str(out))
    opts.update(extra)
    args = [command]
    for k, v in opts.items():
        args += [f"--{k}", str(v)]
    return args


def test_simulate_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(argv("simulate", a, seeds=2)) == 0
    assert cli.main(argv("simulate", b, seeds=2)) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == ["manifest.json", "stopping_times.ndjson", "trace_000000.csv", "trace_000001.csv"]
    for name in files:
        if name != "manifest.json":
            assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = json.loads((a / "manifest.json").read_text()), json.loads((b / "manifest.json").read_text())
    ma.pop("config")
    mb.pop("config")
    assert ma == mb


def test_manifest_replay(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(argv("simulate", a, seeds=1, format="ndjson")) == 0
    cfg = load_config(a / "manifest.json", {"output_dir": str(b)})
    assert cfg.digest() != ""
    assert cli.run(cfg) == 0
    assert (a / "trace_000000.ndjson").read_bytes() == (b / "trace_000000.ndjson").read_bytes()
    first = json.loads((a / "trace_000000.ndjson").read_text().splitlines()[0])
    assert set(first) == set(cli.CSV_COLUMNS)


def test_ensemble_file_count(tmp_path):
    assert cli.main(argv("ensemble", tmp_path, seeds=4)) == 0
    traces = list(tmp_path.glob("trace_*.csv"))
    assert len(traces) == 4
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seeds"] == 4 and summary["moments"] is None


def test_ensemble_with_moments(tmp_path):
    assert cli.main(argv("ensemble", tmp_path, seeds=30, T="0.005")) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert all(summary["checks"].values())


def test_verify_defaults(tmp_path, capsys):
    assert cli.main(["verify", "--output_dir", str(tmp_path)]) == 0
    report = [json.loads(x) for x in (tmp_path / "verify_report.ndjson").read_text().splitlines()]
    assert len(report) >= 12 and all(r["pass"] for r in report)
    assert "FAIL" not in capsys.readouterr().out


def test_convolution_command(tmp_path):
    assert cli.main(["convolution-test", "--output_dir", str(tmp_path), "--probe_samples", "20"]) == 0
    assert (tmp_path / "convolution_report.ndjson").exists()


def test_picard_command(tmp_path):
    extra = dict(
        T="0.02",
        seeds=1,
        poly="gl(0.5)",
        velocity_amplitude="0.1",
        director_amplitude="0.05",
        picard_levels="2,4",
    )
    assert cli.main(argv("picard", tmp_path, **extra)) == 0
    rows = (tmp_path / "tau_table.csv").read_text().splitlines()
    assert rows[0] == "seed,n,tau,grid_index" and len(rows) == 3
    assert (tmp_path / "picard_000000_n2.ndjson").exists()


def test_exit_codes(tmp_path):
    assert cli.main(["simulate", "--dt", "0", "--output_dir", str(tmp_path)]) == 2
    assert cli.main(argv("simulate", tmp_path, k_max="1")) == 3
    assert cli.main(argv("simulate", tmp_path, k_max="1", blowup_fatal="false")) == 0


def test_workers_do_not_change_bytes(tmp_path, monkeypatch):
    outs = []
    for w in ("1", "2"):
        monkeypatch.setenv(cli.WORKERS_ENV, w)
        out = tmp_path / w
        assert cli.main(argv("simulate", out, seeds=60, T="0.005")) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("trace_*.csv"))
    assert len(names) == 60
    for name in names + ["stopping_times.ndjson"]:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_bad_worker_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "many")
    assert cli.main(argv("simulate", tmp_path, seeds=1)) == 2
