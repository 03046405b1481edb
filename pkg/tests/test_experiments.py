import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdnewton.cli import main, parse_levels
from vdnewton.experiments import (
    ConfigError,
    EocTable,
    ExperimentConfig,
    emit,
    emit_matrix,
    eoc,
    parse_csv,
    run_convergence_study,
)

SQ2 = math.sqrt(2.0)
# L2 errors and EOC column of the Dirichlet table (alpha = 1e-3)
TABLE1_ERR = [2.5865e-03, 6.5043e-04, 1.6090e-04, 4.0844e-05, 1.0025e-05, 2.5318e-06]
TABLE1_EOC = [1.99, 2.02, 1.98, 2.03, 1.99]


def test_eoc_examples():
    assert eoc(2.5865e-03, 6.5043e-04, SQ2 / 16, SQ2 / 32) == pytest.approx(1.99, abs=0.005)
    assert eoc(1.0, 0.5, 0.2, 0.1) == pytest.approx(1.0)
    assert eoc(0.3, 0.3, 0.2, 0.1) == 0.0
    assert math.isnan(eoc(0.0, 1.0, 0.2, 0.1))
    assert math.isnan(eoc(1.0, -1.0, 0.2, 0.1))
    assert math.isnan(eoc(1.0, 1.0, 0.1, 0.1))


def test_eoc_reproduces_table_column():
    hs = [SQ2 / 2 ** (k + 4) for k in range(6)]
    rates = [eoc(TABLE1_ERR[i], TABLE1_ERR[i + 1], hs[i], hs[i + 1]) for i in range(5)]
    np.testing.assert_allclose(rates, TABLE1_EOC, atol=0.01)


def test_table_rows_and_empty_csv(tmp_path):
    t = EocTable()
    assert emit(t) == "h,err_l2,err_linf,eoc_l2,eoc_linf,iterations,quality\n"
    for k, e in enumerate(TABLE1_ERR):
        t.add(SQ2 / 2 ** (k + 4), e, 5 * e, 4, 2e-15)
    assert len(t) == 6
    assert math.isnan(t.rows[0].eoc_l2)
    text = emit(t, tmp_path / "t.csv")
    assert len(text.splitlines()) == 7
    assert (tmp_path / "t.csv").read_text() == text
    pretty = emit(t, fmt="text")
    assert "sqrt(2)/16" in pretty and "sqrt(2)/512" in pretty


finite = st.floats(1e-12, 1e3, allow_nan=False)


@given(st.lists(st.tuples(finite, finite, finite, st.integers(0, 99), finite), max_size=8))
def test_csv_round_trip(rows):
    t = EocTable()
    for h, e2, einf, its, q in sorted(rows, reverse=True):
        t.add(h, e2, einf, its, q)
    text = emit(t)
    back = parse_csv(text)
    assert emit(back) == text
    # values agree to the printed precision
    for a, b in zip(t.rows, back.rows):
        for name in ("h", "err_l2", "err_linf", "quality"):
            assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-4)
        assert a.iterations == b.iterations


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(levels=(4, 2))
    with pytest.raises(ConfigError):
        ExperimentConfig(alphas=[0.0])
    with pytest.raises(ConfigError):
        ExperimentConfig(solver="newton")
    with pytest.raises(ConfigError):
        ExperimentConfig(ssn={"stop_tol": -1})
    assert ExperimentConfig(example="neumann").initial_guess == -1.0
    assert parse_levels("3:7") == (3, 7) and parse_levels("4") == (4, 4)


def test_study_is_deterministic_and_flags_failures(tmp_path):
    cfg = ExperimentConfig(example="neumann", alphas=[1.0], levels=(1, 3), out=str(tmp_path), samples=True)
    a = emit(run_convergence_study(cfg))
    b = emit(run_convergence_study(cfg))
    assert a == b
    assert (tmp_path / "neumann_undamped_a1_l3_log.csv").exists()
    assert (tmp_path / "neumann_undamped_a1_l3_samples.csv").exists()
    assert (tmp_path / "neumann_undamped_a1_l3_segments.csv").exists()
    bad = ExperimentConfig(example="dirichlet", alphas=[1e-3], levels=(1, 2), ssn={"max_newton": 1})
    table = run_convergence_study(bad)
    assert not table.all_converged and len(table) == 2


def test_matrix_emitter():
    text = emit_matrix([SQ2 / 8, SQ2 / 16], [1.0, 0.01], np.array([[1.78, 1.75], [1.95, np.nan]]))
    assert text.splitlines() == ["h,1,0.01", "1.7678e-01,1.78,1.75", "8.8388e-02,1.95,nan"]


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["study", "--example", "neumann", "--alpha", "1", "--levels", "1:2"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("h,err_l2,err_linf")
    assert main(["study", "--levels", "3:1"]) == 3
    assert main(["study", "--example", "nosuch"]) == 3
    assert main(["study", "--v0", "not-a-number"]) == 3
    cfg = tmp_path / "run.ini"
    cfg.write_text("example = dirichlet\nalpha = 1e-3\nlevels = 1:2\nmax_newton = 1\n")
    assert main(["study", "--config", str(cfg)]) == 2
    cfg.write_text("example = dirichlet\nbogus = 1\n")
    assert main(["study", "--config", str(cfg)]) == 3
    assert main(["postproc", "--alpha", "1", "--levels", "1:2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "dirichlet_postproc_eoc.csv").exists()
    # flags override the file
    cfg.write_text("example = dirichlet\nlevels = 1:1\n")
    assert main(["study", "--config", str(cfg), "--example", "neumann", "--alpha", "1", "--format", "text"]) == 0
    assert "mesh param. h" in capsys.readouterr().out
