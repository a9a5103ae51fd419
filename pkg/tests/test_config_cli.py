import csv
import json
import re

import numpy as np
import pytest

from carbon_abatement.cli import main
from carbon_abatement.config import PRESETS, ConfigError, dump_config, from_dict, load_config, preset
from carbon_abatement.hjb import control_cap, read_grid_binary
from carbon_abatement.svg import Figure, Panel, Series, to_pixels, write_figure, write_sidecar

SMALL = {
    "name": "small",
    "model": {
        "econ": {"r": 0.02, "delta": 0.05, "sigma": 0.05, "kappa": 0.5, "T": 15.0, "q_max": 4.0, "fixed_output": 4.0},
        "tech": {"kind": "Filter", "a": 1.25, "c_bar": 1.0, "e0": 1.5, "e1": 0.5},
        "price": {"kind": "ConstantPrice", "p": 5.0},
    },
    "tax": {
        "kind": "chain",
        "states": [0.0, 0.2],
        "generator": [[-0.25, 0.25], [0.0, 0.0]],
        "benchmark": "linear",
        "belief_generator": [[-0.05, 0.05], [0.0, 0.0]],
    },
    "grid": {"x_min": -1.0, "x_max": 12.0, "n_x": 41, "n_t": 150},
    "sim": {"n_paths": 40, "n_steps": 30, "seed": 3, "checkpoints": [10.0, 15.0]},
    "variants": [{"label": "kappa=0.2", "set": {"model.econ.kappa": 0.2}}, {"label": "kappa=0.5", "set": {}}],
}


def _doc(**changes):
    doc = json.loads(json.dumps(SMALL))
    for path, value in changes.items():
        node = doc
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[k]
        if value is None:
            node.pop(keys[-1], None)
        else:
            node[keys[-1]] = value
    return doc


class TestConfig:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_preset_round_trip(self, name, tmp_path):
        cfg = preset(name)
        again = load_config(dump_config(cfg, tmp_path / "c.json"))
        assert again == cfg
        assert again.hash() == cfg.hash()

    def test_required_presets_exist(self):
        for name in ("filter_tax_increase", "filter_tax_reversal", "twotech_tax_increase", "twotech_tax_reversal", "twotech_uncertainty"):
            assert name in PRESETS

    def test_uncertainty_preset_variants(self):
        cfg = preset("twotech_uncertainty")
        assert cfg.mode == "game"
        assert {s.tax.nu1 for _, s in cfg.expanded()} == {1.0, 20.0}

    def test_missing_tax_section(self):
        with pytest.raises(ConfigError, match=r"^tax: missing"):
            from_dict(_doc(tax=None))

    @pytest.mark.parametrize(
        "changes,path",
        [
            ({"model__econ__kappa": -1.0}, "model.econ"),
            ({"model__tech__kind": "Windmill"}, "model.tech.kind"),
            ({"model__econ__bogus": 1}, "model.econ.bogus"),
            ({"tax__kind": "lottery"}, "tax.kind"),
            ({"tax__generator": [[0, -1], [0, 0]]}, "tax"),
            ({"sim__checkpoints": [20.0]}, "sim.checkpoints"),
            ({"grid__n_x": 1}, "grid"),
            ({"extra": {}}, "extra"),
            ({"variants": [{"set": {}}]}, "variants[0].label"),
            ({"variants": [{"label": "x", "set": {"model.nope.a": 1}}]}, "variants[0]"),
        ],
    )
    def test_field_path_diagnostics(self, changes, path):
        with pytest.raises(ConfigError) as err:
            from_dict(_doc(**changes))
        assert str(err.value).startswith(path)

    def test_variants(self):
        cfg = from_dict(SMALL)
        labels = [(label, s.model.econ.kappa) for label, s in cfg.expanded()]
        assert labels == [("kappa=0.2", 0.2), ("kappa=0.5", 0.5)]
        assert cfg.benchmark == "linear" and cfg.belief is not None


class TestCli:
    def _write(self, tmp_path, doc=SMALL):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(doc))
        return p

    def test_presets_listing(self, capsys):
        assert main(["presets"]) == 0
        assert "filter_tax_increase" in capsys.readouterr().out.split()

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        assert main(["solve", "--config", str(self._write(tmp_path, _doc(tax=None))), "--out", str(tmp_path / "o")]) == 2
        assert "tax" in capsys.readouterr().err

    def test_missing_file_exit_code(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "none.json")]) == 2

    def test_precondition_exit_code(self, tmp_path, capsys):
        p = self._write(tmp_path, _doc(model__econ__sigma=0.0))
        assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
        assert "sigma" in capsys.readouterr().err

    def test_solve_manifest(self, tmp_path):
        out = tmp_path / "o"
        assert main(["solve", "--config", str(self._write(tmp_path)), "--out", str(out)]) == 0
        m = json.loads((out / "manifest.json").read_text())
        assert {"config_hash", "seed", "version", "config"} <= set(m)
        for run in m["runs"]:
            assert {"L_V", "gamma_bar", "b", "tau_bar", "grid_convergence_rel"} <= set(run)
            assert run["gamma_bar"] == pytest.approx(control_cap(run["L_V"], 0.2 if run["label"] == "kappa=0.2" else 0.5))
        data = read_grid_binary(out / "kappa=0.5" / "grid.bin")
        assert data["shape"][1:] == (41, 1, 2)
        header = (out / "kappa=0.5" / "policy.csv").read_text().splitlines()[0]
        assert header == "t,x,y,tau_state,value,gamma,q"

    def test_env_output_directory(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CARBON_ABATEMENT_OUT", str(tmp_path / "env_out"))
        assert main(["benchmark", "--config", str(self._write(tmp_path))]) == 0
        rows = list(csv.DictReader((tmp_path / "env_out" / "benchmark.csv").open()))
        assert float(rows[0]["b"]) == pytest.approx(0.0197, abs=1e-4)

    def test_simulate_and_overrides(self, tmp_path):
        out = tmp_path / "o"
        assert main(["simulate", "--config", str(self._write(tmp_path)), "--out", str(out), "--seed", "9", "--paths", "12"]) == 0
        m = json.loads((out / "manifest.json").read_text())
        assert m["seed"] == 9 and m["config"]["sim"]["n_paths"] == 12
        assert (out / "kappa=0.2" / "stats.csv").exists()

    def test_table(self, tmp_path):
        out = tmp_path / "o"
        assert main(["table", "--config", str(self._write(tmp_path)), "--table", "wrong_belief", "--out", str(out)]) == 0
        lines = (out / "table_wrong_belief.csv").read_text().splitlines()
        assert lines[1].startswith("kappa=0.2: wrong belief")
        assert len(lines) == 5

    def test_figure_with_and_without_checkpoints(self, tmp_path):
        out = tmp_path / "o"
        assert main(["figure", "--config", str(self._write(tmp_path)), "--figure", "single_traj", "--out", str(out)]) == 0
        assert (out / "single_traj.svg").exists() and (out / "single_traj.csv").exists()
        out2 = tmp_path / "o2"
        p = self._write(tmp_path, _doc(sim__checkpoints=[]))
        assert main(["figure", "--config", str(p), "--figure", "single_traj", "--out", str(out2)]) == 0
        assert not (out2 / "single_traj.svg").exists() and (out2 / "single_traj.csv").exists()

    def test_figure_needs_matching_mode(self, tmp_path):
        assert main(["figure", "--config", str(self._write(tmp_path)), "--figure", "saddle", "--out", str(tmp_path / "o")]) == 2

    def test_config_and_preset_are_exclusive(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["solve", "--config", "a.json", "--preset", "filter_tax_increase"])


class TestSvg:
    def test_sidecar_matches_polylines(self, tmp_path):
        xs = np.linspace(0, 15, 31)
        fig = Figure(
            "f",
            "caption",
            [Panel("p", "t", "X", [Series("a", xs, np.sin(xs)), Series("b", xs, np.cos(xs), "dashed")], [], [(2.0, 5.0)])],
        )
        svg = write_figure(tmp_path / "f.svg", fig).read_text()
        write_sidecar(tmp_path / "f.csv", fig)
        rows = list(csv.DictReader((tmp_path / "f.csv").open()))
        panel = fig.panels[0]
        for name in ("a", "b"):
            pts = re.search(rf'data-series="{name}" points="([^"]+)"', svg).group(1).split()
            got = np.array([[float(v) for v in p.split(",")] for p in pts])
            data = [(float(r["x"]), float(r["y"])) for r in rows if r["series"] == name and r["kind"] == "line"]
            px, py = to_pixels(panel, *zip(*data))
            np.testing.assert_allclose(got, np.column_stack([px, py]), atol=0.006)
        assert 'class="regime"' in svg
        assert [r for r in rows if r["kind"] == "shade"][0]["x"] == "2.0"
