import json
import os

import pytest

from twowayfe import write_panel
from twowayfe.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture
def fixture_file(tmp_path, exactfit_panel):
    path = tmp_path / "panel.csv"
    write_panel(exactfit_panel, path)
    return str(path)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class TestValidate:
    def test_report_and_manifest(self, tmp_path, fixture_file):
        out = tmp_path / "v"
        assert run_cli("validate", "--panel", fixture_file, "--out", str(out)) == 0
        report = read_json(out / "validation_report.json")
        assert report["rows_read"] == 6
        assert report["rows_dropped"] == 0
        assert report["warnings"] == []
        assert report["schema_version"] == 1
        manifest = read_json(out / "manifest.json")
        assert manifest["command"] == "validate"
        assert fixture_file in manifest["inputs"]
        assert "validation_report.json" in manifest["outputs"]

    def test_missing_panel_is_config_error(self, tmp_path):
        code = run_cli("validate", "--panel", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o"))
        assert code == 2


class TestConnect:
    def test_membership_and_summary(self, tmp_path, fixture_file):
        out = tmp_path / "c"
        assert run_cli("connect", "--panel", fixture_file, "--out", str(out), "--kind", "both") == 0
        rows = (out / "connected_set.csv").read_text().strip().splitlines()
        assert rows[0] == "entity_type,external_id"
        assert "firm,f1" in rows and "worker,w3" in rows
        summary = read_json(out / "connected_set_summary.json")
        assert summary["n_firms_kept"] == 2
        assert summary["n_workers_kept"] == 3
        assert summary["share_of_observations"] == 1.0
        assert (out / "leave_one_out_set.csv").exists()


class TestEstimate:
    def test_artifacts(self, tmp_path, fixture_file):
        out = tmp_path / "e"
        assert run_cli("estimate", "--panel", fixture_file, "--out", str(out)) == 0
        psi = dict(
            line.split(",")
            for line in (out / "psi.csv").read_text().strip().splitlines()[1:]
        )
        assert float(psi["f1"]) - float(psi["f2"]) == pytest.approx(1.0, abs=1e-8)
        fit = read_json(out / "fit.json")
        assert fit["n_obs"] == 6
        assert fit["dof"] == 2
        assert fit["normalization"] == "mean_zero"

    def test_disconnected_panel_names_precondition(self, tmp_path):
        panel_file = tmp_path / "disc.csv"
        panel_file.write_text(
            "worker,firm,period,log_wage\n"
            "a,f1,1,1.0\na,f1,2,1.1\nb,f2,1,2.0\nb,f2,2,2.1\n"
        )
        out = tmp_path / "e2"
        code = run_cli("estimate", "--panel", str(panel_file), "--out", str(out))
        assert code == 3

    def test_estimate_on_connect_artifact(self, tmp_path):
        panel_file = tmp_path / "disc.csv"
        panel_file.write_text(
            "worker,firm,period,log_wage\n"
            "a,f1,1,1.0\na,f2,2,2.1\nc,f1,1,0.5\nc,f2,2,1.4\nb,f3,1,2.0\nb,f3,2,2.1\n"
        )
        conn_dir = tmp_path / "conn"
        assert run_cli("connect", "--panel", str(panel_file), "--out", str(conn_dir)) == 0
        out = tmp_path / "e3"
        assert (
            run_cli(
                "estimate",
                "--panel",
                str(panel_file),
                "--set",
                str(conn_dir / "connected_set.csv"),
                "--out",
                str(out),
            )
            == 0
        )
        fit = read_json(out / "fit.json")
        assert fit["n_firms"] == 2  # f3 pruned with its stayer


class TestPipeline:
    def test_fixture_pipeline_psi_gap(self, tmp_path, fixture_file):
        out = tmp_path / "p"
        assert run_cli("pipeline", "--panel", fixture_file, "--out", str(out)) == 0
        psi = dict(
            line.split(",")
            for line in (out / "estimate" / "psi.csv").read_text().strip().splitlines()[1:]
        )
        assert float(psi["f1"]) - float(psi["f2"]) == pytest.approx(1.0, abs=1e-8)
        for stage in ("validate", "connect", "estimate", "decompose", "correct"):
            assert (out / stage / "manifest.json").exists()
        dec = read_json(out / "decompose" / "decomposition.json")
        assert {"total", "var_alpha", "var_psi", "cov2", "var_resid", "shares", "flavor", "weighting"} <= set(dec)

    def test_simulate_then_pipeline_deterministic(self, tmp_path):
        sim_cfg = tmp_path / "sim.json"
        sim_cfg.write_text(
            json.dumps(
                {
                    "n_workers": 120,
                    "n_firms": 10,
                    "n_periods": 3,
                    "movers_share": 0.5,
                    "noise_sigma2": 0.05,
                    "seed": 13,
                }
            )
        )
        sim_out = tmp_path / "sim"
        assert run_cli("simulate", "--config", str(sim_cfg), "--out", str(sim_out)) == 0
        panel_path = str(sim_out / "panel.csv")
        blobs = []
        for run in ("a", "b"):
            out = tmp_path / f"pipe_{run}"
            assert run_cli("pipeline", "--panel", panel_path, "--out", str(out)) == 0
            blobs.append((out / "decompose" / "decomposition.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_simulate_emits_truth_artifacts(self, tmp_path):
        out = tmp_path / "s"
        assert (
            run_cli("simulate", "--out", str(out), "--config", "/dev/null") == 2
        )  # empty config file is a parse failure
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_workers": 30, "n_firms": 4, "seed": 1}))
        assert run_cli("simulate", "--config", str(cfg), "--out", str(out)) == 0
        truth_rows = (out / "truth.csv").read_text().strip().splitlines()
        assert truth_rows[0] == "entity_type,external_id,effect"
        assert sum(1 for r in truth_rows if r.startswith("worker,")) == 30
        summary = read_json(out / "truth_summary.json")
        assert summary["flavor"] == "ground_truth"


class TestCorrectAndDiagnostics:
    def test_correct_outputs_schema(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "n_workers": 150,
                    "n_firms": 10,
                    "n_periods": 3,
                    "movers_share": 0.5,
                    "noise_sigma2": 0.05,
                    "seed": 3,
                }
            )
        )
        sim_out = tmp_path / "sim"
        assert run_cli("simulate", "--config", str(cfg), "--out", str(sim_out)) == 0
        out = tmp_path / "corr"
        assert (
            run_cli(
                "correct",
                "--panel",
                str(sim_out / "panel.csv"),
                "--correction",
                "leave_out",
                "--out",
                str(out),
            )
            == 0
        )
        res = read_json(out / "corrected_leave_out.json")
        assert res["flavor"] == "leave_out_corrected"
        assert {"plug_in.json", "corrected_leave_out.json", "manifest.json"} <= set(
            os.listdir(out)
        )

    def test_subsample_and_eventstudy_files(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "n_workers": 200,
                    "n_firms": 12,
                    "n_periods": 4,
                    "movers_share": 0.5,
                    "noise_sigma2": 0.05,
                    "seed": 5,
                }
            )
        )
        sim_out = tmp_path / "sim"
        assert run_cli("simulate", "--config", str(cfg), "--out", str(sim_out)) == 0
        panel = str(sim_out / "panel.csv")

        sub_out = tmp_path / "sub"
        assert (
            run_cli(
                "subsample", "--panel", panel, "--shares", "0.5,1.0",
                "--replicates", "2", "--seed", "1", "--out", str(sub_out),
            )
            == 0
        )
        lines = (sub_out / "subsample.csv").read_text().strip().splitlines()
        assert lines[0].startswith("share_kept,replicate,seed")
        assert len(lines) == 1 + 4

        ev_out = tmp_path / "ev"
        assert (
            run_cli(
                "eventstudy", "--panel", panel, "--ranking", "estimated_psi",
                "--out", str(ev_out),
            )
            == 0
        )
        lines = (ev_out / "eventstudy.csv").read_text().strip().splitlines()
        assert lines[0] == "origin_quartile,destination_quartile,event_time,mean_log_wage,cell_count"
        assert len(lines) > 1

    def test_unknown_correction_is_config_error(self, tmp_path, exactfit_panel):
        panel_file = tmp_path / "p.csv"
        write_panel(exactfit_panel, panel_file)
        code = run_cli(
            "correct", "--panel", str(panel_file), "--correction", "bogus",
            "--out", str(tmp_path / "o"),
        )
        assert code == 2

    def test_non_convergence_is_numerical_error(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {"n_workers": 60, "n_firms": 6, "movers_share": 0.5,
                 "noise_sigma2": 0.2, "seed": 2}
            )
        )
        sim_out = tmp_path / "sim"
        assert run_cli("simulate", "--config", str(cfg), "--out", str(sim_out)) == 0
        est_cfg = tmp_path / "est.json"
        est_cfg.write_text(json.dumps({"tol": 1e-14, "max_iter": 2}))
        code = run_cli(
            "estimate", "--panel", str(sim_out / "panel.csv"),
            "--config", str(est_cfg), "--out", str(tmp_path / "e"),
        )
        assert code == 4
        err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert err["error"]["kind"] == "numerical"
