import json

import numpy as np
import pytest

from repgeo import cli
from repgeo import geodesic as geo
from repgeo import image_transforms as it
from repgeo import metrics as mt
from repgeo.store import load_tensor, read_image, save_tensor, write_image

QUICK = ["--inner-iters", "300", "--reproj-iters", "30", "--outer-max", "5"]


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "root"))
    return tmp_path


# ---------------------------------------------------------------------------
# file formats


def test_tensor_container_roundtrip(tmp_path):
    x = np.random.default_rng(0).standard_normal((3, 2, 5, 4))
    save_tensor(tmp_path / "a.rgt", x)
    raw = (tmp_path / "a.rgt").read_bytes()
    assert raw[:8] == b"RGTENSOR" and raw[16:20] == b"<f8 "
    y = load_tensor(tmp_path / "a.rgt")
    assert y.shape == x.shape and y.tobytes() == x.tobytes()


def test_tensor_container_rejects_garbage(tmp_path):
    (tmp_path / "bad.rgt").write_bytes(b"NOTATENSOR" + bytes(30))
    with pytest.raises(ValueError):
        load_tensor(tmp_path / "bad.rgt")


@pytest.mark.parametrize("bits", [8, 16])
def test_png_roundtrip_quantization(tmp_path, bits):
    x = np.random.default_rng(1).random((1, 9, 7))
    write_image(tmp_path / "g.png", x, bits)
    y = read_image(tmp_path / "g.png")
    assert y.shape == x.shape
    assert np.max(np.abs(y - x)) <= 0.5 / (2**bits - 1) + 1e-12


def test_png_rgb_roundtrip(tmp_path):
    x = np.random.default_rng(2).random((3, 4, 6))
    write_image(tmp_path / "c.png", x)
    np.testing.assert_allclose(read_image(tmp_path / "c.png"), x, atol=0.5 / 255 + 1e-12)


# ---------------------------------------------------------------------------
# transform


def test_transform_translate_writes_frames_and_manifest(out):
    run = out / "t"
    code = cli.main(["transform", "--input", "sample:natural:0:0:32", "--kind", "translate", "--dx", "8",
                     "--n", "10", "--out", str(run)])
    assert code == 0
    frames = sorted(run.glob("frame_*.png"))
    assert [f.name for f in frames] == [f"frame_{n:03d}.png" for n in range(11)]
    path = load_tensor(run / "path.rgt")
    x0 = cli.load_image_ref("sample:natural:0:0:32")
    spec = it.TransformSpec("translate", [8, 0])
    np.testing.assert_array_equal(path[1], it.apply(spec, x0, 0.1))
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "transform"
    assert set(manifest["artifacts"]) == {f.name for f in frames} | {"path.rgt"}


@pytest.mark.parametrize("flags,kind,mag", [(["--kind", "rotate", "--deg", "4"], "rotate", 4.0),
                                            (["--kind", "dilate", "--scale", "1.10"], "dilate", 1.10)])
def test_transform_rotate_and_dilate(out, flags, kind, mag):
    run = out / kind
    assert cli.main(["transform", "--input", "sample:disk:32", *flags, "--n", "10", "--out", str(run)]) == 0
    path = load_tensor(run / "path.rgt")
    np.testing.assert_array_equal(path[-1], it.apply(it.TransformSpec(kind, mag), cli.load_image_ref("sample:disk:32")))


def test_transform_from_png_file(out):
    src = out / "in.png"
    write_image(src, np.random.default_rng(3).random((1, 12, 12)), 16)
    run = out / "png"
    assert cli.main(["transform", "--input", str(src), "--kind", "translate", "--dx", "2", "--n", "2",
                     "--out", str(run)]) == 0
    assert (run / "inputs" / "input.png").exists()
    np.testing.assert_array_equal(load_tensor(run / "path.rgt")[0], read_image(src))


def test_default_output_root_from_environment(out):
    assert cli.main(["transform", "--input", "sample:disk:16", "--kind", "rotate", "--deg", "2", "--n", "2"]) == 0
    assert (out / "root" / "transform" / "manifest.json").exists()


@pytest.mark.parametrize("argv", [
    ["transform", "--input", "missing.png", "--kind", "rotate", "--deg", "4"],
    ["transform", "--input", "sample:disk:16", "--kind", "rotate"],
    ["transform", "--input", "sample:disk:16", "--kind", "dilate", "--scale", "-1"],
    ["transform", "--input", "sample:bogus:3", "--kind", "rotate", "--deg", "1"],
    ["synth", "--x0", "sample:disk:16", "--xn", "sample:disk:20", "--stack", "pixel"],
    ["synth", "--x0", "sample:disk:16", "--xn", "sample:disk:16", "--stack", "no_such_stack"],
    ["rf", "--stack", "conv_only", "--shape", "1", "12", "12", "--location", "50", "0"],
])
def test_invalid_input_exits_2(out, argv):
    assert cli.main(argv + ["--out", str(out / "bad")]) == 2


def test_argparse_errors_exit_2(out):
    with pytest.raises(SystemExit) as err:
        cli.main(["transform", "--kind", "twist"])
    assert err.value.code == 2


# ---------------------------------------------------------------------------
# synth


def test_synth_pixel_is_linear_interpolation(out):
    run = out / "pix"
    code = cli.main(["synth", "--x0", "sample:natural:3:0:16", "--xn", "sample:natural:4:0:16", "--stack", "pixel",
                     *QUICK, "--out", str(run)])
    assert code == 0
    path = load_tensor(run / "path.rgt")
    lin = geo.init_linear(path[0], path[-1], 10)
    np.testing.assert_allclose(path, lin, atol=1e-4)
    header = (run / "diagnostics.csv").read_text().splitlines()[0]
    assert header == "iter,rep_energy,pixel_energy,rep_length,equispacing_cv"
    assert len(list(run.glob("frame_*.png"))) == 11


def test_synth_identical_pair_gives_constant_path(out):
    run = out / "const"
    assert cli.main(["synth", "--x0", "sample:smooth:16:1", "--xn", "sample:smooth:16:1", "--stack", "smallnet_l2",
                     *QUICK, "--out", str(run)]) == 0
    path = load_tensor(run / "path.rgt")
    np.testing.assert_allclose(path - path[0], 0.0, atol=1e-12)


def test_synth_with_transform_writes_ground_truth_and_rmse(out):
    run = out / "tr"
    assert cli.main(["synth", "--x0", "sample:natural:0:0:24", "--kind", "translate", "--dx", "4", "--margin", "4",
                     "--stack", "smallnet_l2", "--n", "4", *QUICK, "--out", str(run)]) in (0, 3)
    gt = load_tensor(run / "ground_truth.rgt")
    assert gt.shape == (5, 1, 16, 16)
    lines = (run / "rmse.csv").read_text().splitlines()
    assert lines[0] == "frame,geodesic,linear" and len(lines) == 6


def test_config_file_overridden_by_flags(out):
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({"inner_iters": 7, "outer_max": 2, "adam": {"step_size": 0.01}}))
    run = out / "cfg"
    cli.main(["synth", "--x0", "sample:disk:16", "--xn", "sample:smooth:16:2", "--stack", "pixel",
              "--config", str(cfg), "--outer-max", "1", "--out", str(run)])
    args = json.loads((run / "manifest.json").read_text())["args"]["config"]
    assert args["inner_iters"] == 7 and args["outer_max"] == 1 and args["adam"]["step_size"] == 0.01


def test_synth_nonconvergence_exits_3_and_keeps_artifacts(out):
    run = out / "fail"
    code = cli.main(["synth", "--x0", "sample:noise:16:4", "--kind", "translate", "--dx", "3",
                     "--stack", "smallnet_l2", "--inner-iters", "50", "--reproj-iters", "0", "--step", "50",
                     "--max-backtracks", "0", "--rep-tol", "1e-9", "--out", str(run)])
    assert code == 3
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["status"] == "reprojection_failed"
    assert (run / "diagnostics.csv").exists() and (run / "path.rgt").exists()


def test_synth_outer_cap_exits_3(out):
    run = out / "cap"
    code = cli.main(["synth", "--x0", "sample:noise:16:5", "--kind", "translate", "--dx", "3",
                     "--stack", "fourier_mag", "--inner-iters", "100", "--reproj-iters", "10", "--outer-max", "1",
                     "--out", str(run)])
    status = json.loads((run / "manifest.json").read_text())["status"]
    assert (code, status) in ((3, "max_outer"), (0, "converged"))


# ---------------------------------------------------------------------------
# slice, deviation, compare, rf


def test_slice_matches_library_bitwise(out):
    run = out / "t"
    cli.main(["transform", "--input", "sample:natural:1:0:16", "--kind", "translate", "--dx", "10", "--n", "10",
              "--out", str(run)])
    assert cli.main(["slice", str(run), "--axis", "row", "--index", "5"]) == 0
    sl = load_tensor(run / "slice_row_005.rgt")
    assert sl.tobytes() == mt.temporal_slice(load_tensor(run / "path.rgt"), "row", 5).tobytes()
    # integer per-frame shifts give exact diagonal stripes
    for n in range(11):
        np.testing.assert_array_equal(sl[0, n], np.roll(sl[0, 0], n))
    assert (run / "slice_row_005.png").exists()


def test_slice_errors(out):
    assert cli.main(["slice", str(out / "nothing"), "--index", "0"]) == 2
    run = out / "t"
    cli.main(["transform", "--input", "sample:disk:16", "--kind", "rotate", "--deg", "1", "--n", "2", "--out", str(run)])
    assert cli.main(["slice", str(run), "--axis", "column", "--index", "99"]) == 2


def test_deviation_and_compare(out):
    run = out / "s"
    cli.main(["synth", "--x0", "sample:natural:0:0:24", "--kind", "translate", "--dx", "4", "--margin", "4",
              "--stack", "smallnet_l2", "--n", "4", *QUICK, "--out", str(run)])
    assert cli.main(["deviation", str(run)]) == 0
    lines = (run / "deviation.csv").read_text().splitlines()
    assert lines[0] == "path,frame,arc_position,deviation"
    assert {ln.split(",")[0] for ln in lines[1:]} == {"geodesic", "ground_truth", "linear"}
    cmp_dir = out / "cmp"
    assert cli.main(["compare", str(run), str(run / "ground_truth.rgt"), "--out", str(cmp_dir)]) == 0
    rows = (cmp_dir / "compare.csv").read_text().splitlines()
    want = mt.path_rmse(load_tensor(run / "path.rgt"), load_tensor(run / "ground_truth.rgt"))
    assert [float(r.split(",")[1]) for r in rows[1:]] == pytest.approx(want.tolist())


def test_rf_deterministic_and_conv_only_support(out):
    a, b = out / "a", out / "b"
    for d in (a, b):
        assert cli.main(["rf", "--stack", "conv_only", "--shape", "1", "24", "24", "--location", "10", "10",
                         "--n-noise", "8", "--seed", "3", "--out", str(d)]) == 0
    for name in ("rf_map.rgt", "rf_map.png", "rf_size.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    size = float((a / "rf_size.csv").read_text().splitlines()[1].split(",")[3])
    assert abs(size - 5) <= 1


# ---------------------------------------------------------------------------
# manifests and recipes


def test_rerun_reproduces_synth_bitwise(out):
    run = out / "orig"
    src = out / "x0.png"
    write_image(src, np.random.default_rng(6).random((1, 16, 16)))
    cli.main(["synth", "--x0", str(src), "--xn", "sample:smooth:16:7", "--stack", "smallnet_max", *QUICK,
              "--out", str(run)])
    again = out / "again"
    cli.main(["rerun", str(run / "manifest.json"), "--out", str(again)])
    m1 = json.loads((run / "manifest.json").read_text())
    m2 = json.loads((again / "manifest.json").read_text())
    assert m1["artifacts"] == m2["artifacts"]
    for name in m1["artifacts"]:
        assert (run / name).read_bytes() == (again / name).read_bytes()


def test_recipe_listing_and_unknown(out, capsys):
    assert cli.main(["recipe"]) == 0
    assert "translate_l2" in capsys.readouterr().out
    assert cli.main(["recipe", "nope"]) == 2


def test_transform_recipe_reruns_bitwise(out):
    assert cli.main(["recipe", "transform_rotate"]) == 0
    run = out / "root" / "transform_rotate"
    assert cli.main(["rerun", str(run), "--out", str(out / "re")]) == 0
    for name in json.loads((run / "manifest.json").read_text())["artifacts"]:
        assert (run / name).read_bytes() == (out / "re" / name).read_bytes()


def test_check_audits_runs(out, capsys):
    run = out / "pix"
    cli.main(["synth", "--x0", "sample:natural:3:0:16", "--xn", "sample:natural:4:0:16", "--stack", "pixel",
              *QUICK, "--out", str(run)])
    capsys.readouterr()
    code = cli.main(["check", "--scope", "invariants", "--runs", str(run)])
    report = json.loads(capsys.readouterr().out)
    assert code == 0 and report["passed"]
    names = {r["check"] for r in report["results"]}
    assert {"cauchy_schwarz:pix", "equispacing_cv:pix", "endpoints:pix"} <= names


def test_check_flags_broken_run(out, capsys):
    run = out / "pix"
    cli.main(["synth", "--x0", "sample:natural:3:0:16", "--xn", "sample:natural:4:0:16", "--stack", "pixel",
              *QUICK, "--out", str(run)])
    path = load_tensor(run / "path.rgt")
    path[0] += 0.01
    save_tensor(run / "path.rgt", path)
    capsys.readouterr()
    assert cli.main(["check", "--scope", "invariants", "--runs", str(run)]) == 1
