import csv
import io
from fractions import Fraction

import pytest

from momentlab import cli
from momentlab.relations import MomentRelation, derive_relation
from momentlab.systems import cubic_attractor


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.reader(io.StringIO(text)))


# -- parsing -----------------------------------------------------------------

def test_parse_derive():
    spec = cli.parse_args(["derive", "cubic", "--sigma", "1/10", "--k", "1", "--dt-mode", "leading"])
    assert (spec.subcommand, spec.system_kind, spec.sigma, spec.k, spec.dt_mode) == \
        ("derive", "cubic", Fraction(1, 10), 1, "leading")


def test_parse_check():
    spec = cli.parse_args(["check", "cubic", "--sigma", "0.1", "--T", "100", "--width-stds", "20"])
    assert spec.subcommand == "check" and spec.sigma == Fraction(1, 10)
    assert spec.T == 100 and spec.width_stds == 20


def test_parse_custom_system():
    spec = cli.parse_args(["closure", "--drift", "0,-1", "--noise-sq", "1/4"])
    sys_ = spec.system()
    assert sys_.noise_sq.coeffs == (Fraction(1, 4),)


def test_decimal_sigma_snaps_to_rational():
    assert cli.parse_sigma("0.1") == Fraction(1, 10)
    assert cli.parse_sigma("0.4714045207910317").denominator <= 10 ** 6
    assert cli.parse_sigma("2/9") == Fraction(2, 9)


@pytest.mark.parametrize("argv, flag", [
    (["derive", "--sigma", "0.1"], "system"),
    (["derive", "cubic"], "--sigma"),
    (["derive", "cubic", "--sigma", "0.1", "--drift", "0,-1", "--noise-sq", "1"], "--drift"),
    (["derive", "--drift", "0,-1"], "--noise-sq"),
    (["derive", "cubic", "--sigma", "-1"], "--sigma"),
    (["derive", "cubic", "--sigma", "0.1", "--k", "0"], "--k"),
    (["derive", "cubic", "--sigma", "0.1", "--dt-mode", "full"], "--dt"),
    (["mc", "cubic", "--sigma", "0.1", "--T", "10", "--burn-in", "10"], "--burn-in"),
    (["fpe", "cubic", "--sigma", "0.1", "--n", "10"], "--n"),
    (["derive", "cubic", "--sigma", "0.1", "--bogus"], "--bogus"),
])
def test_usage_errors_name_the_flag(argv, flag, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(argv)
    assert exc.value.code == 1
    assert flag in capsys.readouterr().err


# -- derive ------------------------------------------------------------------

def test_derive_text(capsys):
    code, out, _ = run(["derive", "cubic", "--sigma", "1/10", "--k", "1"], capsys)
    assert code == 0
    assert out == "0 = 3/200000 + (-141/2500)·m2 + (-191/100)·m4\n"


@pytest.mark.parametrize("extra", [[], ["--dt-mode", "symbolic"], ["--k", "3"],
                                   ["--variant", "paper_general", "--k", "2"]])
def test_derive_round_trip(extra, capsys):
    code, out, _ = run(["derive", "cubic", "--sigma", "2/7"] + extra, capsys)
    assert code == 0
    spec = cli.parse_args(["derive", "cubic", "--sigma", "2/7"] + extra)
    if spec.variant == "paper_general":
        from momentlab.relations import paper_general_relation
        want = paper_general_relation(cubic_attractor(Fraction(2, 7)), spec.k).reduced()
    else:
        want = derive_relation(cubic_attractor(Fraction(2, 7)), spec.k, spec.dt_mode).reduced()
    back = MomentRelation.from_text(out.strip(), k=spec.k, variant=want.variant)
    assert back.terms == want.terms


# -- schemas -----------------------------------------------------------------

def test_closure_infeasible(capsys):
    code, out, _ = run(["closure", "cubic", "--sigma", "0.5"], capsys)
    assert code == 2
    header, row = rows(out)
    assert header == ["sigma", "mu2_closure", "mu4_closure", "feasible"]
    assert row == ["1/2", "", "", "false"]


def test_closure_feasible_prints_17_digits(capsys):
    code, out, _ = run(["closure", "cubic", "--sigma", "1/10"], capsys)
    assert code == 0
    row = rows(out)[1]
    assert row[0] == "1/10" and row[3] == "true"
    assert float(row[1]) == pytest.approx(2.592e-4, rel=1e-3)
    assert len(row[1].split("e")[0].replace(".", "").lstrip("0")) >= 16


def test_fpe_header_and_row(capsys):
    code, out, _ = run(["fpe", "cubic", "--sigma", "1/5", "--T", "50", "--n-per-std", "20"], capsys)
    header, row = rows(out)
    assert header == ["sigma", "mu2", "mu2_se", "mu4", "mu4_se", "mu6", "mu6_se", "method",
                      "dt", "T", "N_or_n", "W", "truncation", "flags"]
    assert row[7] == "fpe" and row[10] == "401"
    assert code in (0, 2) and (code == 2) == bool(row[13])


def test_mc_header_and_row(capsys):
    code, out, _ = run(["mc", "cubic", "--sigma", "1/5", "--T", "5", "--N", "4", "--dt", "0.01"], capsys)
    header, row = rows(out)
    assert header == cli.ESTIMATE_COLUMNS
    assert row[7] == "mc" and row[10] == "4"


def test_sweep_sigma_header(capsys):
    code, out, _ = run(["sweep-sigma", "cubic", "--sigmas", "0.1,0.6", "--T", "10",
                        "--n-per-std", "10"], capsys)
    table = rows(out)
    assert table[0] == cli.ESTIMATE_COLUMNS + ["mu2_closure", "mu4_closure", "feasible", "verdict"]
    assert [r[0] for r in table[1:]] == ["1/10", "3/5"]
    assert table[2][-1] == "contradictory" and table[2][-2] == "false"
    assert code == 2


def test_sweep_width_header(capsys):
    code, out, _ = run(["sweep-width", "cubic", "--sigma", "0.2", "--widths", "10,20",
                        "--T", "10", "--n-per-std", "10"], capsys)
    table = rows(out)
    assert table[0] == ["sigma", "W", "mu2", "mu4", "truncation"]
    assert [r[1] for r in table[1:]] == ["10", "20"]


def test_check_header(capsys):
    code, out, err = run(["check", "cubic", "--sigma", "0.2", "--k", "2", "--T", "20",
                          "--n-per-std", "10"], capsys)
    table = rows(out)
    assert table[0] == ["relation_variant", "k", "raw_residual", "normalized_residual"]
    assert [(r[0], r[1]) for r in table[1:]] == [
        ("expansion", "1"), ("paper_general", "1"), ("expansion", "2"), ("paper_general", "2")]
    # k=1 rows are the same relation
    assert table[1][2:] == table[2][2:]


def test_output_file_uses_lf(tmp_path, capsys):
    path = tmp_path / "c.csv"
    code, out, _ = run(["closure", "cubic", "--sigma", "0.1", "-o", str(path)], capsys)
    assert out == ""
    data = path.read_bytes()
    assert b"\r" not in data and data.endswith(b"\n")


def test_threads_env_does_not_change_output(monkeypatch, capsys):
    argv = ["sweep-sigma", "cubic", "--sigmas", "0.1,0.2", "--T", "5", "--n-per-std", "10"]
    monkeypatch.setenv("MOMENTLAB_THREADS", "1")
    _, one, _ = run(argv, capsys)
    monkeypatch.setenv("MOMENTLAB_THREADS", "3")
    _, three, _ = run(argv, capsys)
    assert one == three
