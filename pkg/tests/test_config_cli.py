import numpy as np
import pytest

from hpmri.cli import main
from hpmri.config import (
    ExperimentConfig,
    load_schedule_csv,
    read_config,
    write_config,
)
from hpmri.errors import ConfigError
from hpmri.kinetics import AcquisitionDesign, SignalSeries


BASIC_CONFIG = """\
[model]
T1P = 30.0
kPL = 0.15

[design]
N = 30
TR = 3.0
thetaP = 20.0
thetaL = 30.0

[prior]
mean = 0.15 0.05 4.0
std = 0.03 0.01 1.3

[noise]
snr = 2 5 10 15 20
s_ref = 0.6173

[run]
seed = 0
replicates = 25
"""


class TestReadConfig:
    def test_round_trip_defaults(self, tmp_path):
        path = tmp_path / "exp.ini"
        write_config(ExperimentConfig(), path)
        cfg = read_config(path)
        assert cfg.model.T1P == 30.0
        assert cfg.design.n == 30
        assert cfg.prior.std == (0.03, 0.01, 1.3)
        assert cfg.snr_list == (2.0, 5.0, 10.0, 15.0, 20.0)
        assert cfg.s_ref == 0.6173

    def test_basic_parse(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(BASIC_CONFIG)
        cfg = read_config(path)
        assert cfg.design.tr[0] == 0.0
        assert cfg.design.tr[1] == 3.0
        assert set(cfg.design.theta_p_deg) == {20.0}
        assert cfg.replicates == 25

    def test_unknown_key_reports_line_number(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[model]\nT1P = 30.0\nbogus = 1\n")
        with pytest.raises(ConfigError) as err:
            read_config(path)
        assert ":3:" in str(err.value)
        assert "bogus" in str(err.value)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[model]\nT1P = 30.0\n\n[mystery]\nx = 1\n")
        with pytest.raises(ConfigError) as err:
            read_config(path)
        assert "mystery" in str(err.value)

    def test_angle_schedule_lengths_checked(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[design]\nN = 4\nthetaP = 10 20 30\n")
        with pytest.raises(ConfigError):
            read_config(path)

    def test_per_scan_schedule(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[design]\nN = 3\nTR = 2.0\n"
                        "thetaP = 10 20 30\nthetaL = 5 5 5\n")
        cfg = read_config(path)
        assert cfg.design.theta_p_deg == (10.0, 20.0, 30.0)
        assert cfg.design.times[-1] == pytest.approx(4.0)

    def test_validate_design_tokens(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[validate]\ndesigns = oed2 constant:12:34\n")
        cfg = read_config(path)
        assert cfg.validate_designs[0].theta_p_deg == 35.0
        assert cfg.validate_designs[1].theta_p_deg == 12.0
        path.write_text("[validate]\ndesigns = nonsense\n")
        with pytest.raises(ConfigError):
            read_config(path)

    def test_syntax_error_carries_line(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[model\nT1P = 30\n")
        with pytest.raises(ConfigError):
            read_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config(tmp_path / "nope.ini")


class TestScheduleCsv:
    def test_round_trip(self, tmp_path):
        base = AcquisitionDesign.constant(n_scans=4)
        path = tmp_path / "sched.csv"
        path.write_text("k,t,thetaP_deg,thetaL_deg\n"
                        "1,0.0,10.0,15.0\n2,3.0,20.0,25.0\n"
                        "3,6.0,30.0,35.0\n4,9.0,40.0,45.0\n")
        d = load_schedule_csv(path, base)
        assert d.theta_p_deg == (10.0, 20.0, 30.0, 40.0)
        assert d.theta_l_deg == (15.0, 25.0, 35.0, 45.0)

    def test_wrong_length_rejected(self, tmp_path):
        base = AcquisitionDesign.constant(n_scans=3)
        path = tmp_path / "sched.csv"
        path.write_text("k,t,thetaP_deg,thetaL_deg\n1,0.0,10.0,15.0\n")
        with pytest.raises(ConfigError):
            load_schedule_csv(path, base)


def _write_small_config(tmp_path, extra=""):
    path = tmp_path / "exp.ini"
    path.write_text(BASIC_CONFIG + extra)
    return path


class TestCli:
    def test_simulate_lf_outputs_and_determinism(self, tmp_path):
        cfg = _write_small_config(tmp_path)
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert main(["--config", str(cfg), "--out", str(out1),
                     "simulate-lf"]) == 0
        assert main(["--config", str(cfg), "--out", str(out2),
                     "simulate-lf"]) == 0
        sig1 = (out1 / "lf_signals.csv").read_bytes()
        sig2 = (out2 / "lf_signals.csv").read_bytes()
        assert sig1 == sig2
        assert (out1 / "lf_magnetization.csv").exists()
        assert (out1 / "lf_signals.svg").exists()
        series = SignalSeries.from_csv(out1 / "lf_signals.csv")
        assert series.peak_pyruvate() == pytest.approx(0.4807, abs=1e-3)
        assert series.peak() == pytest.approx(0.6173, abs=1e-3)

    def test_simulate_lf_zero_angles(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[design]\nN = 5\nthetaP = 0.0\nthetaL = 0.0\n")
        out = tmp_path / "out"
        assert main(["--config", str(path), "--out", str(out),
                     "simulate-lf"]) == 0
        series = SignalSeries.from_csv(out / "lf_signals.csv")
        assert np.all(series.s_p == 0.0)
        assert np.all(series.s_l == 0.0)

    def test_optimize_constant_writes_schedule_and_summary(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[design]\nN = 10\nTR = 3.0\n\n[run]\norder = 3\n")
        out = tmp_path / "out"
        code = main(["--config", str(path), "--out", str(out), "optimize",
                     "--scheme", "constant", "--snr", "20"])
        assert code == 0
        sched = (out / "schedule_constant_snr20.csv").read_text().splitlines()
        assert sched[0] == "k,t,thetaP_deg,thetaL_deg"
        assert len(sched) == 11
        summary = (out / "optimize_summary_constant.csv").read_text()
        assert summary.splitlines()[0] == \
            "snr,scheme,MI_nats,H_z,H_z_given_P,converged"
        assert "constant" in summary.splitlines()[1]

    def test_validate_requires_replicates(self, tmp_path):
        cfg = _write_small_config(tmp_path).read_text().replace(
            "replicates = 25", "replicates = 0")
        path = tmp_path / "exp0.ini"
        path.write_text(cfg)
        code = main(["--config", str(path), "--out", str(tmp_path / "o"),
                     "validate", "--source", "lf"])
        assert code == 2

    def test_config_error_exit_code(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[model]\nwhat = 1\n")
        assert main(["--config", str(path), "--out", str(tmp_path / "o"),
                     "simulate-lf"]) == 2

    def test_validate_lf_tiny(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[design]\nN = 8\nTR = 3.0\n\n"
                        "[noise]\nsnr = 10\n\n"
                        "[run]\nreplicates = 2\n\n"
                        "[validate]\ndesigns = constant:35:28\n")
        out = tmp_path / "out"
        code = main(["--config", str(path), "--out", str(out), "validate",
                     "--source", "lf"])
        assert code == 0
        csv_path = out / "validate_lf_constant_35_28.csv"
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "snr_data,mean_kPL,std_kPL,n_converged"
        assert len(lines) == 2

    def test_simulate_hf_small_grid(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[design]\nN = 6\nTR = 3.0\n"
                        "thetaP = 35.0\nthetaL = 28.0\n\n"
                        "[phantom]\ndims = 16 16 16\nspacing = 2.0\n"
                        "dt = 0.3\n")
        out = tmp_path / "out"
        assert main(["--config", str(path), "--out", str(out),
                     "simulate-hf"]) == 0
        cells = (out / "hf_cells.csv").read_text().splitlines()
        assert cells[0] == "cell,k,t,sP,sL,peak_phiPV"
        assert len(cells) == 1 + 25 * 6
        selected = (out / "hf_selected_cells.csv").read_text().splitlines()
        assert len(selected) == 26

    def test_validate_hf_small_grid(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[design]\nN = 6\nTR = 3.0\n"
                        "thetaP = 35.0\nthetaL = 28.0\n\n"
                        "[noise]\nsnr = 10\n\n"
                        "[phantom]\ndims = 16 16 16\nspacing = 2.0\n"
                        "dt = 0.3\n\n"
                        "[run]\nreplicates = 2\n")
        out = tmp_path / "out"
        code = main(["--config", str(path), "--out", str(out), "validate",
                     "--source", "hf"])
        assert code == 0
        lines = (out / "validate_hf.csv").read_text().splitlines()
        assert lines[0] == "cell,band,snr_data,mean_kPL,std_kPL,noiseless_kPL"
        assert len(lines) == 1 + 25
        assert (out / "validate_hf.svg").exists()
