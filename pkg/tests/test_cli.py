import json

import numpy as np
import pytest

from nvgrating import TWO_PI
from nvgrating import io as fio
from nvgrating.cli import run

PARAMS = {"c0": 0.3, "s0": 150e3, "t_readout": 300e-9, "t_seq": 4100e-9,
          "t2_star": 416e-9, "gamma": 28e9}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def files(tmp_path):
    f = {
        "params": write(tmp_path / "params.json", PARAMS),
        "grid": write(tmp_path / "g.json", {"min_hz": -10e6, "max_hz": 10e6, "n": 21}),
        "zero": write(tmp_path / "zero.json",
                      {"dt_s": 4e-9, "omega_max_rad_s": 1e7, "steps": [[0, 0, 0]] * 10}),
        "target": write(tmp_path / "target.json",
                        {"grating": {"n_dips": 3, "spacing_hz": 3e6, "dip_width_hz": 1e6},
                         "grid": {"min_hz": -8e6, "max_hz": 8e6, "n": 81}}),
        "grape": write(tmp_path / "grape.json",
                       {"max_iterations": 15, "amplitude_ensemble": [0.95, 1.05],
                        "pulse": {"omega_max_rad_s": TWO_PI * 5e6, "duration_s": 1e-6,
                                  "n_steps": 100}}),
        "model": write(tmp_path / "model.json",
                       {"variant": "pseudopole", "strength": -4.46e-9,
                        "tip_offset_m": [0, 0, 150e-9],
                        "geometry": {"nv_position_m": [0, 0, -1e-8], "nv_axis": [0, 0, 1],
                                     "bias_field_T": 7.8e-3}}),
        "sgrid": write(tmp_path / "sgrid.json",
                       {"x_range_m": 3e-6, "y_range_m": 3e-6, "nx": 32, "ny": 32,
                        "lift_m": 0.0, "x0_m": 1.5e-6, "y0_m": 1.5e-6}),
        "recon": write(tmp_path / "recon.json",
                       {"carrier_offset": 28e9 * 7.8e-3 + 2e6, "spacing_hz": 3e6,
                        "response_grid": {"min_hz": -16e6, "max_hz": 16e6, "n": 321}}),
    }
    return tmp_path, f


def digests(paths):
    return {p: fio.sha256(p) for p in paths}


def test_sensitivity_summary(files, capsys):
    d, f = files
    out = d / "curve.csv"
    assert run(["sensitivity", "--params", f["params"], "--sweep", "1e5:1e8:1000",
                "--out", str(out)]) == 0
    line = capsys.readouterr().out
    assert "eta_opt_uT_sqrtHz=4.50" in line
    value = float(line.split("eta_opt_uT_sqrtHz=")[1].split()[0])
    assert value == pytest.approx(4.50, rel=1e-2)
    header, data = fio.read_rows(out)
    assert header == ["delta_hz", "contrast", "eta_T_per_sqrtHz"] and data.shape == (1000, 3)
    assert out.read_text().splitlines()[-1].startswith("# delta_opt_hz=")
    m = json.loads((d / "curve.csv.manifest.json").read_text())
    assert m["subcommand"] == "sensitivity" and m["inputs"]["params"]["sha256"] == fio.sha256(
        f["params"])
    assert m["outputs"][0]["sha256"] == fio.sha256(out)


def test_sensitivity_to_stdout(files, capsys, monkeypatch):
    d, f = files
    monkeypatch.chdir(d)
    assert run(["sensitivity", "--params", f["params"], "--sweep", "1e5:1e8:1000"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("delta_hz,contrast,eta_T_per_sqrtHz")
    assert "eta_opt_uT_sqrtHz=4.50" in text.splitlines()[-1]
    m = json.loads((d / "sensitivity.manifest.json").read_text())
    assert m["outputs"][0]["path"] == "-"


def test_zero_pulse_profile(files, capsys, monkeypatch):
    d, f = files
    monkeypatch.chdir(d)
    assert run(["profile", "--pulse", f["zero"], "--grid", f["grid"]]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "detuning_hz,mz"
    assert all(ln.split(",")[1] == "1" for ln in lines[1:]) and len(lines) == 22


def test_usage_errors_exit_2(files, capsys):
    _, f = files
    assert run([]) == 2
    assert run(["nonsense"]) == 2
    assert run(["profile", "--pulse", f["zero"]]) == 2
    assert run(["fit-tip", "--map", "x", "--family", "dipole"]) == 2


def test_data_errors_exit_1(files, capsys):
    d, f = files
    assert run(["profile", "--pulse", str(d / "missing.json"), "--grid", f["grid"]]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "DataError" and "missing.json" in err["message"]
    bad = write(d / "bad.json", {"min_hz": 5, "max_hz": 1, "n": 3})
    assert run(["profile", "--pulse", f["zero"], "--grid", bad]) == 1
    assert "increasing" in json.loads(capsys.readouterr().err)["message"]
    assert run(["sensitivity", "--sweep", "1:2", "--out", str(d / "c.csv")]) == 1
    capsys.readouterr()
    broken = d / "broken.json"
    broken.write_text("{")
    assert run(["profile", "--pulse", str(broken), "--grid", f["grid"]]) == 1
    assert run(["profile", "--pulse", f["grid"], "--grid", f["grid"]]) == 1
    assert "dt_s" in json.loads(capsys.readouterr().err.splitlines()[-1])["message"]


def test_optimize_reproducible_across_threads(files):
    d, f = files
    outs = []
    for threads in (1, 4):
        pulse, trace = d / f"p{threads}.json", d / f"t{threads}.csv"
        assert run(["optimize", "--target", f["target"], "--config", f["grape"],
                    "--out", str(pulse), "--trace", str(trace), "--threads", str(threads)]) == 0
        outs.append((pulse.read_bytes(), trace.read_bytes()))
    assert outs[0] == outs[1]
    header, data = fio.read_rows(d / "t1.csv")
    assert header == ["iter", "infidelity", "grad_norm", "step"]
    assert np.all(np.diff(data[:, 1]) <= 0)


def test_imaging_pipeline_and_inputs_untouched(files, capsys):
    d, f = files
    run(["optimize", "--target", f["target"], "--config", f["grape"], "--out",
         str(d / "pulse.json")])
    inputs = [f["model"], f["sgrid"], f["params"], f["recon"], str(d / "pulse.json")]
    before = digests(inputs)
    assert run(["fieldmap", "--model", f["model"], "--grid", f["sgrid"],
                "--out", str(d / "map.csv")]) == 0
    assert run(["simulate-scan", "--map", str(d / "map.csv"), "--pulse", str(d / "pulse.json"),
                "--params", f["params"], "--config", f["recon"], "--seed", "3",
                "--out", str(d / "fr.csv")]) == 0
    fm, _ = fio.read_field_map(d / "map.csv")
    img, side = fio.read_image(d / "fr.csv")
    assert side["seed"] == 3 and np.array_equal(img.mask, fm.mask & img.mask)
    j, i = np.argwhere(img.mask)[len(np.argwhere(img.mask)) // 2]
    anchors = write(d / "anch.json", [{"px": int(i), "py": int(j),
                                       "b_tesla": float(fm.b_parallel[j, i])}])
    map_digest = digests([str(d / "map.csv"), str(d / "fr.csv")])
    assert run(["reconstruct", "--image", str(d / "fr.csv"), "--pulse", str(d / "pulse.json"),
                "--anchors", anchors, "--out", str(d / "field.csv"),
                "--diagnostics", str(d / "diag.csv"), "--subtract-bias", "7.8e-3"]) == 0
    field, side = fio.read_field_map(d / "field.csv")
    sel = field.mask
    err = np.abs(field.b_parallel[sel] + 7.8e-3 - fm.b_parallel[sel])
    assert np.median(err) < 1e-6
    assert side["bias_subtracted_T"] == 7.8e-3
    header, _ = fio.read_rows(d / "diag.csv")
    assert header == ["px", "py", "residual", "low_information"]
    assert run(["fit-tip", "--map", str(d / "map.csv"), "--family", "pseudopole",
                "--out", str(d / "fit.json")]) == 0
    fit = json.loads((d / "fit.json").read_text())
    assert fit["rms_residual_T"] < 1e-12
    assert fit["model"]["strength"] == pytest.approx(-4.46e-9, rel=1e-6)
    assert digests(inputs) == before
    assert digests([str(d / "map.csv"), str(d / "fr.csv")]) == map_digest
    m = json.loads((d / "field.csv.manifest.json").read_text())
    assert set(m["inputs"]) >= {"image", "pulse", "anchors"}
    assert {o["path"] for o in m["outputs"]} == {str(d / "field.csv"), str(d / "field.csv.json"),
                                                 str(d / "diag.csv")}


def test_noisy_scan_reproducible(files):
    d, f = files
    run(["fieldmap", "--model", f["model"], "--grid", f["sgrid"], "--out", str(d / "map.csv")])
    cfg = json.loads((d / "recon.json").read_text())
    cfg["noise_model"] = {"s0": 150e3, "dwell": 300e-6}
    noisy = write(d / "noisy.json", cfg)
    outs = []
    for k, (seed, threads) in enumerate([(5, 1), (5, 3), (6, 1)]):
        out = d / f"fr{k}.csv"
        assert run(["simulate-scan", "--map", str(d / "map.csv"), "--pulse", f["zero"],
                    "--params", f["params"], "--config", noisy, "--seed", str(seed),
                    "--threads", str(threads), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]


def test_manifest_path_flag(files):
    d, f = files
    man = d / "custom.json"
    assert run(["profile", "--pulse", f["zero"], "--grid", f["grid"], "--out",
                str(d / "p.csv"), "--manifest", str(man)]) == 0
    m = json.loads(man.read_text())
    assert m["seed"] == 0 and m["version"]


def test_reproduce_fig3(tmp_path, files):
    from nvgrating import recipes

    _, f = files
    spec = recipes.DESK_GRATING
    pulse = recipes.grating_pulse(spec, (1.0,), iterations=600)[0]
    fio.save_pulse(tmp_path / "pulse.json", pulse)
    out = tmp_path / "fig3"
    assert run(["reproduce", "fig3", "--pulse", str(tmp_path / "pulse.json"),
                "--out", str(out)]) == 0
    for name in ("fringes_contact.csv", "field_contact.csv", "fringes_lift600nm.csv",
                 "field_lift600nm.csv", "fig3_summary.csv", "fig3.png"):
        assert (out / name).exists()
    rows = {}
    with open(out / "fig3_summary.csv") as fh:
        next(fh)
        for line in fh:
            label, *vals = line.strip().split(",")
            rows[label] = [float(v) for v in vals]
    assert rows["lift600nm"][2] < rows["contact"][2]  # max gradient
    assert rows["lift600nm"][1] < rows["contact"][1]  # fringe count
    assert rows["contact"][4] < 1e-7 and rows["lift600nm"][4] < 1e-7  # informative rms
    m = json.loads((out / "manifest.json").read_text())
    assert len(m["outputs"]) == 10
