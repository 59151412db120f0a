"""Campaign configs, rate fitting, CSV determinism and CLI exit codes."""

import dataclasses
import json

import numpy as np
import pytest

from perfhom import labcli
from perfhom.errors import DegenerateFit


def _write_config(tmp_path, **overrides):
    base = {
        "kind": "cell-solve",
        "geometry": {"kind": "unperforated", "resolution": 8},
        "operator": {"family": "identity"},
        "out": str(tmp_path / "out"),
        "params": {"xis": [[1.0, 0.0], [0.5, 2.0]]},
    }
    base.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(base))
    return path


def test_load_config_applies_overrides_and_skips_none(tmp_path):
    path = _write_config(tmp_path, seed=3)
    cfg = labcli.load_config(path, {"seed": 7, "out": None})
    assert cfg.seed == 7
    assert cfg.out == str(tmp_path / "out")
    assert cfg.epsilons == (0.25, 0.125)
    assert isinstance(cfg.epsilons, tuple)


def test_load_config_rejects_unknown_keys(tmp_path):
    path = _write_config(tmp_path, grid="fine")
    with pytest.raises(ValueError, match="unknown config keys"):
        labcli.load_config(path)


def test_validate_rejects_bad_fields(tmp_path):
    cfg = labcli.load_config(_write_config(tmp_path))
    bad = [
        {"kind": "spectral"},
        {"epsilons": (0.125, 0.25)},
        {"epsilons": (0.25, -0.125)},
        {"epsilons": (0.25, 0.2)},
        {"n_per_cell": 4},
        {"tol": 0.0},
    ]
    for fields in bad:
        with pytest.raises(ValueError):
            dataclasses.replace(cfg, **fields).validate()


def test_config_hash_is_stable_and_sensitive(tmp_path):
    cfg = labcli.load_config(_write_config(tmp_path))
    again = labcli.load_config(_write_config(tmp_path))
    h = labcli.config_hash(cfg)
    assert h == labcli.config_hash(again)
    assert len(h) == 16 and int(h, 16) >= 0
    assert labcli.config_hash(dataclasses.replace(cfg, seed=1)) != h


def test_geometry_and_operator_factories_reject_unknown(tmp_path):
    with pytest.raises(ValueError, match="geometry kind"):
        labcli.build_geometry({"kind": "voronoi"}, 16)
    with pytest.raises(ValueError, match="operator family"):
        labcli.build_operator({"family": "stokes"})
    cell = labcli.build_geometry(
        {"kind": "custom", "holes": [{"center": [0.0, 0.0],
                                      "half_widths": [0.125, 0.25]}]}, 8,
    )
    assert cell.porosity == pytest.approx(1.0 - 0.25 * 0.5)


def test_operator_families_cover_the_advertised_names():
    lin = labcli.build_operator({"family": "linear", "coeff": 2.0})
    assert lin.mu0 == lin.mu1 == 2.0
    y = np.zeros((3, 2))
    xi = np.array([[1.0, 0.0], [0.5, -2.0], [0.0, 0.0]])
    assert np.allclose(lin(y, xi), 2.0 * xi)

    paper = labcli.build_operator({"family": "paper_example", "delta": 0.5})
    alias = labcli.build_operator({"family": "paper", "delta": 0.5})
    assert paper.tag == alias.tag
    assert labcli.build_operator({"family": "checkerboard"}).tag


def test_fit_rate_recovers_power_laws():
    eps = [1 / 8, 1 / 16, 1 / 32]
    for slope in (0.0, 0.5, 1.0, 2.0):
        errs = [3.7 * e ** slope for e in eps]
        fit = labcli.fit_rate(eps, errs)
        assert fit.slope == pytest.approx(slope, abs=1e-12)
        assert fit.intercept == pytest.approx(np.log(3.7), abs=1e-12)
        assert fit.residual == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DegenerateFit):
        labcli.fit_rate(eps, [1.0, 0.0, 1.0])
    for n in (1, 2):
        with pytest.raises(ValueError):
            labcli.fit_rate(eps[:n], [1.0] * n)


def test_csv_floats_use_fixed_scientific_format(tmp_path):
    path = tmp_path / "t.csv"
    labcli.write_csv(path, ["a", "b"], [[0.15, 3], [1.0 / 3.0, -2]])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert lines[1] == "1.500000000000e-01,3"
    assert lines[2] == "3.333333333333e-01,-2"


def test_rate_study_demands_matching_cell_resolutions(tmp_path):
    cfg = labcli.ExperimentConfig(
        kind="rate-study",
        geometry={"kind": "unperforated", "resolution": 8},
        operator={"family": "identity"},
        n_per_cell=8,
        cell_resolution=16,
        out=str(tmp_path / "out"),
    )
    with pytest.raises(ValueError, match="cell_resolution"):
        labcli.run_campaign(cfg)
    # the aborted campaign still leaves a partial report behind
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["incomplete"] is True
    assert report["error"].startswith("ValueError")


def test_rate_study_flags_a_floor_dominated_fit(tmp_path):
    # identity operator on an unperforated cell: u_eps equals u_0 exactly,
    # so every measured error is solver noise and no rate is trustworthy
    cfg = labcli.ExperimentConfig(
        kind="rate-study",
        geometry={"kind": "unperforated", "resolution": 8},
        operator={"family": "identity"},
        epsilons=(0.25, 0.125, 0.0625),
        n_per_cell=8,
        cell_resolution=8,
        out=str(tmp_path / "out"),
    )
    summary = labcli.run_campaign(cfg)
    assert summary["floor_dominated"] is True
    assert "l2_u0" in summary["flags"] or "l2_u0" not in summary["rates"]
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["floor_dominated"] is True
    assert report["fe_floor_l2"] >= 0.0


def test_rate_study_with_one_epsilon_reports_no_slope(tmp_path):
    cfg = labcli.ExperimentConfig(
        kind="rate-study",
        geometry={"kind": "unperforated", "resolution": 8},
        operator={"family": "identity"},
        epsilons=(0.25,),
        n_per_cell=8,
        cell_resolution=8,
        out=str(tmp_path / "out"),
    )
    summary = labcli.run_campaign(cfg)
    assert summary["rates"] == {}
    assert summary["flags"]["l2_u0"] == "insufficient points"
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["rates"] == {}
    assert set(report["rate_flags"]) == {"l2_u0", "h1_v", "h1_v_interior"}


def test_cell_solve_campaign_is_byte_deterministic(tmp_path):
    csvs = []
    for name in ("a", "b"):
        out = tmp_path / name
        path = _write_config(tmp_path, out=str(out))
        assert labcli.main(["cell-solve", "--config", str(path)]) == 0
        csvs.append((out / "correctors.csv").read_bytes())
        report = json.loads((out / "report.json").read_text())
        assert report["outputs"] == ["correctors.csv"]
        assert report["config_hash"] == labcli.config_hash(
            labcli.load_config(path))
    assert csvs[0] == csvs[1]
    header = csvs[0].decode().splitlines()[0]
    assert header == "xi1,xi2,newton_iterations,residual,mean,ahat1,ahat2"


def test_effective_campaign_reuses_cached_table(tmp_path):
    out = tmp_path / "out"
    path = _write_config(
        tmp_path, kind="effective", out=str(out),
        xi_radius=1.0, xi_grid_n=3, params={},
    )
    assert labcli.main(["effective", "--config", str(path)]) == 0
    cache = sorted((out / "cache").glob("table_*.bin"))
    assert len(cache) == 1
    stamp = cache[0].stat().st_mtime_ns
    first = (out / "effective.csv").read_bytes()

    assert labcli.main(["effective", "--config", str(path)]) == 0
    assert cache[0].stat().st_mtime_ns == stamp
    assert (out / "effective.csv").read_bytes() == first
    table = json.loads((out / "report.json").read_text())
    assert table["outputs"] == ["effective.csv", "table.bin"]


def test_subcommand_wins_over_config_kind(tmp_path):
    out = tmp_path / "out"
    path = _write_config(tmp_path, kind="audit", out=str(out),
                         params={"xis": [[1.0, 0.0]]})
    assert labcli.main(["cell-solve", "--config", str(path)]) == 0
    assert (out / "correctors.csv").exists()


def test_audit_exit_codes(tmp_path, capsys):
    ok = _write_config(
        tmp_path, kind="audit", out=str(tmp_path / "ok"),
        operator={"family": "paper", "delta": 0.9}, params={},
    )
    assert labcli.main(["audit", "--config", str(ok)]) == 0
    report = json.loads((tmp_path / "ok" / "audit.json").read_text())
    assert report["passed"] is True

    bad = _write_config(
        tmp_path, kind="audit", out=str(tmp_path / "bad"),
        operator={"family": "paper", "delta": 10.0}, params={},
    )
    assert labcli.main(["audit", "--config", str(bad)]) == 2
    assert "gate failure" in capsys.readouterr().err


def test_broken_configs_exit_with_one(tmp_path):
    unknown = _write_config(tmp_path, mesh="uniform")
    assert labcli.main(["cell-solve", "--config", str(unknown)]) == 1
    missing = tmp_path / "nope.json"
    assert labcli.main(["cell-solve", "--config", str(missing)]) == 1


def test_parser_exposes_every_campaign():
    parser = labcli.build_parser()
    args = parser.parse_args(["flux", "--config", "c.json", "--seed", "5"])
    assert args.command == "flux" and args.seed == 5
    for kind in labcli._KINDS:
        ns = parser.parse_args([kind, "--config", "c.json"])
        assert ns.command == kind
    with pytest.raises(SystemExit) as ex:
        labcli.main(["--version"])
    assert ex.value.code == 0
