"""Tests for core.experiment, core.results and the branchlln CLI."""
import csv
import json
import math

import pytest

import branch_cli
from config import CSV_HEADERS, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, PRESETS_DIR
from core.errors import InvalidConfig, UnknownKey
from core.experiment import load_config, parse_config, read_config_text, run_experiment, validate
from core.model import Interval
from core.results import deterministic_view, format_value, output_stem
from core.spine import two_spine_second_moment

BASE = {"experiment": "simulate", "model": "single_state", "offspring": {"2": 1.0}, "r": 1.0, "x0": 0}


def _cfg(**changes):
    return parse_config({**BASE, **changes})


# ── Parsing ──────────────────────────────────────────────────────────────────

def test_flat_text():
    raw = read_config_text(
        "# comment\n"
        "experiment = lln\n"
        "model = killed_drifted_bm\n"
        "model_params = {c: 1.0}\n"
        "B = [0, 2]\n"
        "B_prime = [2, \"inf\"]\n"
        "n_rep = 200\n"
    )
    assert raw["experiment"] == "lln"
    assert raw["model_params"] == {"c": 1.0}
    assert raw["B_prime"] == [2, "inf"]
    assert raw["n_rep"] == 200


def test_json5_document():
    raw = read_config_text('{\n  // comment\n  experiment: "phi", r: 1.5,\n}')
    assert raw == {"experiment": "phi", "r": 1.5}


def test_flat_text_rejects_duplicates_and_garbage():
    with pytest.raises(InvalidConfig, match="duplicate"):
        read_config_text("r = 1\nr = 2\n")
    with pytest.raises(InvalidConfig, match="key = value"):
        read_config_text("just words\n")


def test_unknown_key_gets_a_suggestion():
    with pytest.raises(UnknownKey, match="did you mean 'n_rep'"):
        parse_config({**BASE, "n_reps": 10})


def test_unknown_experiment_gets_a_suggestion():
    with pytest.raises(InvalidConfig, match="did you mean 'extinction'"):
        _cfg(experiment="extinctoin")


def test_missing_and_mistyped_keys():
    with pytest.raises(InvalidConfig, match="missing"):
        parse_config({"experiment": "phi"})
    with pytest.raises(InvalidConfig, match="integer"):
        _cfg(n_rep=2.5)
    with pytest.raises(InvalidConfig, match="number"):
        _cfg(r="fast")
    with pytest.raises(InvalidConfig, match="needs key 'K'"):
        _cfg(experiment="local-survival")


def test_echo_reparses_to_equal_config():
    cfg = _cfg(experiment="lln", model="killed_drifted_bm", model_params={"c": 1.0}, r=1.5, x0=1.0,
               B=[0, 2], B_prime=[2, "inf"], snapshot_times=[1, 2], t_end=2)
    again = parse_config(json.loads(json.dumps(cfg.echo())))
    assert again == cfg
    assert cfg.B_prime == (2.0, math.inf)


# ── Validation ───────────────────────────────────────────────────────────────

def test_validate_rejects_absorbing_start():
    with pytest.raises(InvalidConfig, match="absorbing"):
        validate(_cfg(model="killed_drifted_bm", model_params={"c": 1.0}, r=1.5, x0=0.0))


def test_validate_rejects_fractional_chain_state():
    with pytest.raises(InvalidConfig, match="integer state"):
        validate(_cfg(model="subcritical_gw", model_params={"rho": {"-1": 0.75, "1": 0.25}}, x0=2.5))


def test_validate_rejects_slow_growth():
    with pytest.raises(InvalidConfig, match="growth rate"):
        validate(_cfg(model="killed_recurrent_ou", model_params={"lam": 1.0}, r=1.0, x0=1.0))


def test_every_preset_parses_and_validates():
    presets = sorted(p for p in PRESETS_DIR.iterdir() if p.suffix in (".json", ".cfg"))
    assert presets
    for path in presets:
        validate(load_config(path))


# ── Experiments ──────────────────────────────────────────────────────────────

def test_phi_experiment_on_chain():
    cfg = _cfg(experiment="phi", model="ergodic_ctmc",
               model_params={"Q": [[-1.0, 1.0], [1.0, -1.0]], "pi": [0.5, 0.5]}, tol=1e-10)
    result = run_experiment(cfg, workers=1)
    assert result.quadratures["phi"].value == pytest.approx(2.0, abs=1e-8)
    assert result.extra["phi_closed_form"] == 2.0
    assert len(result.rows[0]) == len(CSV_HEADERS["phi"])


def test_spine_check_on_single_state():
    result = run_experiment(_cfg(experiment="spine-check", t_end=1.0, step_dt=1.0, n_rep=2000, n_mc=4000), workers=1)
    target = 2 * math.e ** 2 - math.e
    assert result.estimators["yule_second_moment"].mean == pytest.approx(target)
    for name in ("engine_second_moment", "two_spine_second_moment"):
        est = result.estimators[name]
        assert abs(est.mean - target) <= 4 * est.stderr


def test_spine_check_on_killed_bm():
    cfg = _cfg(experiment="spine-check", model="killed_drifted_bm", model_params={"c": 1.0}, r=1.5, x0=1.0,
               t_end=1.0, step_dt=0.1, B=[0, 2], n_rep=3000, n_mc=40_000, seed=81)
    result = run_experiment(cfg, workers=1)
    engine, spine = result.estimators["engine_second_moment"], result.estimators["two_spine_second_moment"]
    assert abs(engine.mean - spine.mean) <= 4 * math.hypot(engine.stderr, spine.stderr)


def test_lln_w_second_moment_matches_two_spine():
    cfg = _cfg(experiment="lln", model="killed_recurrent_ou", model_params={"lam": 1.0, "crossing": "image"},
               r=1.5, x0=1.0, t_end=2.0, step_dt=0.1, B=[0, 1], B_prime=[1, "inf"], n_rep=3000, seed=55)
    result = run_experiment(cfg, workers=1)
    bc = validate(cfg)
    expected = result.extra["E_xi_Bprime(t=2)"]
    oracle = two_spine_second_moment(bc.motion, 1.0, Interval(0, 1), 2.0, 1.5, bc.offspring, n_mc=40_000, seed=56,
                                     step_dt=0.1)
    w2 = result.estimators["W2(t=2)"]
    target, target_se = oracle.mean / expected ** 2, oracle.stderr / expected ** 2
    assert abs(w2.mean - target) <= 4 * math.hypot(w2.stderr, target_se)
    assert result.extra["nu_ratio"] == pytest.approx(math.e - 1)
    phi = result.quadratures["phi"]
    assert not phi.diverged
    assert result.extra["E_W2_target"] == pytest.approx((math.e - 1) ** 2 * phi.value)


def test_simulate_rows(tmp_path):
    result = run_experiment(_cfg(t_end=2.0, snapshot_times=[1.0, 2.0], step_dt=1.0, n_rep=30), workers=1)
    assert len(result.rows) == 60
    assert {row[1] for row in result.rows} == {1.0, 2.0}
    for row in result.rows:
        _, _, live, absorbed, dead, branched, births, _ = row
        assert births == live + absorbed + dead + branched


# ── Results ──────────────────────────────────────────────────────────────────

def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(float("nan")) == "nan"
    assert format_value(3) == "3"
    assert format_value(True) == "1"


def test_output_stem(tmp_path):
    assert output_stem(tmp_path / "run.csv") == tmp_path / "run"
    assert output_stem(tmp_path / "run") == tmp_path / "run"


# ── CLI ──────────────────────────────────────────────────────────────────────

def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


SIMULATE = (
    "experiment = simulate\nmodel = single_state\noffspring = {\"2\": 1.0}\n"
    "r = 1.0\nx0 = 0\nt_end = 1.0\nstep_dt = 1.0\nn_rep = 40\nseed = 3\n"
)


def test_cli_writes_outputs(tmp_path):
    cfg = _write(tmp_path, SIMULATE)
    stem = tmp_path / "out" / "sim"
    assert branch_cli.main(["run", str(cfg), "--out", str(stem), "--workers", "1"]) == EXIT_OK
    with stem.with_suffix(".csv").open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_HEADERS["simulate"]
    assert len(rows) == 41
    summary = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    assert summary["seed"] == 3
    assert summary["config"]["n_rep"] == 40
    assert "D(t=1)" in summary["estimators"]


def test_cli_outputs_do_not_depend_on_workers(tmp_path):
    cfg = _write(tmp_path, SIMULATE)
    a, b = tmp_path / "w1" / "sim", tmp_path / "w4" / "sim"
    assert branch_cli.main(["run", str(cfg), "--out", str(a), "--workers", "1"]) == EXIT_OK
    assert branch_cli.main(["run", str(cfg), "--out", str(b), "--workers", "4"]) == EXIT_OK
    assert a.with_suffix(".csv").read_bytes() == b.with_suffix(".csv").read_bytes()
    assert deterministic_view(a.with_suffix(".json")) == deterministic_view(b.with_suffix(".json"))
    for stem in (a, b):
        summary = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        assert summary["wall_time_s"] >= 0
        assert not stem.with_name(stem.name + ".timing.json").exists()


def test_deterministic_view_drops_only_wall_time(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"seed": 1, "wall_time_s": 2.5, "estimators": {}}), encoding="utf-8")
    assert deterministic_view(path) == {"seed": 1, "estimators": {}}


def test_cli_seed_override(tmp_path):
    cfg = _write(tmp_path, SIMULATE)
    stem = tmp_path / "seeded"
    assert branch_cli.main(["run", str(cfg), "--out", str(stem), "--seed", "99", "--workers", "1"]) == EXIT_OK
    assert json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))["seed"] == 99


def test_cli_validation_error(tmp_path):
    cfg = _write(tmp_path, SIMULATE + "n_reps = 5\n")
    stem = tmp_path / "bad" / "sim"
    assert branch_cli.main(["run", str(cfg), "--out", str(stem)]) == EXIT_VALIDATION
    assert not stem.with_suffix(".csv").exists()
    errors = json.loads((stem.parent / "errors.json").read_text(encoding="utf-8"))
    assert errors[-1]["type"] == "UnknownKey"


def test_cli_runtime_error(tmp_path):
    text = SIMULATE.replace("experiment = simulate", "experiment = qsd") + "condition = d_positive\neps = 1e9\n"
    cfg = _write(tmp_path, text)
    stem = tmp_path / "rt" / "qsd"
    assert branch_cli.main(["run", str(cfg), "--out", str(stem), "--workers", "1"]) == EXIT_RUNTIME
    errors = json.loads((stem.parent / "errors.json").read_text(encoding="utf-8"))
    assert errors[-1]["type"] == "NoSurvivors"


STEEP_PHI = (
    "experiment = phi\nmodel = killed_drifted_bm\nmodel_params = {\"c\": 2}\noffspring = {\"2\": 1.0}\n"
    "r = 3\nx0 = 1\nt_end = 1.0\nseed = 5\n"
)


def test_cli_reports_divergent_phi(tmp_path):
    cfg = _write(tmp_path, STEEP_PHI)
    stem = tmp_path / "phi" / "steep"
    assert branch_cli.main(["run", str(cfg), "--out", str(stem), "--workers", "1"]) == EXIT_OK
    summary = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    assert summary["quadratures"]["phi"]["diverged"] is True
    assert summary["quadratures"]["phi"]["value"] is None
    assert not (stem.parent / "errors.json").exists()


def test_cli_unexpected_error_is_a_runtime_error(tmp_path, monkeypatch):
    def broken(cfg, workers=None):
        raise OverflowError("math range error")

    monkeypatch.setattr(branch_cli, "run_experiment", broken)
    cfg = _write(tmp_path, SIMULATE)
    stem = tmp_path / "boom" / "sim"
    assert branch_cli.main(["run", str(cfg), "--out", str(stem), "--workers", "1"]) == EXIT_RUNTIME
    assert not stem.with_suffix(".csv").exists()
    errors = json.loads((stem.parent / "errors.json").read_text(encoding="utf-8"))
    assert errors[-1]["type"] == "OverflowError"
