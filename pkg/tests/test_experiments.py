import csv
import io

import numpy as np
import pytest

from anisofem.experiments import (
    CSV_COLUMNS, ConfigError, ExperimentConfig, LevelCapExceeded, emit_table, load_config, parse_config_text,
    run_experiment,
)
from anisofem.weights import a_from_kappa


@pytest.fixture(scope="module")
def prism_table():
    return run_experiment(ExperimentConfig("prism", kappa_edge=0.2, levels=4))


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(levels=1)
    with pytest.raises(LevelCapExceeded):
        ExperimentConfig(levels=6)
    assert ExperimentConfig(levels=6, allow_large=True).levels == 6
    with pytest.raises(ConfigError):
        ExperimentConfig(kappa_edge=0.6)
    with pytest.raises(ConfigError):
        ExperimentConfig(domain="cube")
    with pytest.raises(ConfigError):
        ExperimentConfig(format="xml")
    with pytest.raises(ConfigError):
        ExperimentConfig(a_edge=1.5)
    with pytest.raises(ConfigError):
        ExperimentConfig(kappa_edge=0.2, a_edge=0.9)
    cfg = ExperimentConfig(a_edge=a_from_kappa(0.3))
    assert cfg.kappa_e == pytest.approx(0.3, abs=1e-14)
    assert cfg.updated(kappa_edge=0.2).kappa_e == 0.2


def test_config_file(tmp_path):
    text = """
    # comment
    domain = fichera   # trailing comment
    kappa_edge = 0.3
    kappa_vertex = 0.3
    levels = 3
    allow_large = no
    out =
    """
    cfg = ExperimentConfig.from_mapping(parse_config_text(text))
    assert (cfg.domain, cfg.kappa_e, cfg.kappa_v, cfg.levels, cfg.out) == ("fichera", 0.3, 0.3, 3, None)
    with pytest.raises(ConfigError):
        parse_config_text("levels 3")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"colour": "red"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_shipped_config_parses():
    from pathlib import Path

    cfg = ExperimentConfig.from_mapping(load_config(Path(__file__).parents[1] / "configs" / "study.cfg"))
    assert cfg.domain == "prism" and cfg.kappa_e == 0.2


def test_run_records(prism_table):
    t = prism_table
    recs = t.records
    assert [r.level for r in recs] == [0, 1, 2, 3, 4]
    assert [r.tets for r in recs] == [18 * 8**j for j in range(5)]
    assert recs[0].dofs == 0 and recs[0].h1_diff is None and recs[0].cg_iters == 0
    assert all(r.conformity == [] for r in recs)
    assert all(sum(r.census.values()) == r.tets for r in recs)
    assert all(r.residual <= 1e-10 for r in recs)
    for r in recs[1:]:
        assert r.pythagoras_defect < 1e-6
    # rate_j = log2(d_j / d_{j+1})
    d = t.diffs
    for j, rate in t.rates.items():
        assert rate == pytest.approx(np.log2(d[j] / d[j + 1]), abs=1e-15)
    assert sorted(t.rates) == [1, 2, 3]
    # dofs grow like 8^j
    ratio = [recs[j].points / 8**j for j in range(1, 5)]
    assert max(ratio) / min(ratio) < 4
    md = t.metadata()
    assert md["kappa_edge"] == 0.2 and md["tol"] == 1e-10


def test_rates_match_reference_run(prism_table):
    # regression values frozen from a level-4 run
    np.testing.assert_allclose([prism_table.rates[j] for j in (1, 2, 3)], [-0.108, 0.621, 0.866], atol=2e-3)


def test_bit_reproducible(prism_table):
    again = run_experiment(ExperimentConfig("prism", kappa_edge=0.2, levels=4))
    assert [r.h1_diff for r in again.records] == [r.h1_diff for r in prism_table.records]


def test_emit_text_layout(prism_table):
    other = run_experiment(ExperimentConfig("prism", kappa_edge=0.5, levels=3))
    text = emit_table([prism_table, other])
    lines = text.splitlines()
    assert lines[1].split() == ["j", "κe=0.2", "κe=0.5"]
    row1 = lines[2].split()
    assert row1[0] == "1" and row1[1] == f"{prism_table.rates[1]:.2f}" and row1[2] == f"{other.rates[1]:.2f}"
    # j = 3 has no κe=0.5 value at 3 levels
    assert lines[4].split() == ["3", f"{prism_table.rates[3]:.2f}"]


def test_emit_csv(prism_table):
    text = emit_table(prism_table, "csv")
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(io.StringIO("\n".join(body))))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 6
    assert rows[2][4] == f"{prism_table.rates[1]:.2f}"
    assert "# kappa_edge=0.2" in text
    with pytest.raises(ValueError):
        emit_table(prism_table, "json")
    with pytest.raises(ValueError):
        emit_table([])


def test_fichera_short_run():
    t = run_experiment(ExperimentConfig("fichera", kappa_edge=0.3, kappa_vertex=0.3, levels=2))
    assert t.records[0].dofs > 0
    assert t.records[2].tets == 336 * 64
    assert 0.6 < t.rates[1] < 0.9
