import numpy as np
import pytest

from tvrecon.cli import build_parser, main, parse_args, read_config
from tvrecon.grid import ConfigurationError
from tvrecon.io import read_cloud, read_mesh, write_cloud
from tvrecon.surface import REPORT_MUS


def parse_summary(text: str) -> dict[str, str]:
    return dict(line.split(": ", 1) for line in text.strip().splitlines())


@pytest.fixture(scope="module")
def cloud_file(tmp_path_factory, sphere_cloud):
    path = tmp_path_factory.mktemp("cli") / "sphere.xyz"
    write_cloud(sphere_cloud, path)
    return path


def test_gen_sphere_writes_six_columns(tmp_path, capsys):
    out = tmp_path / "sub" / "s.xyz"
    assert main(["gen-sphere", "--count", "300", "--radius", "2", "--hole-cap-deg", "30",
                 "--seed", "4", "--output", str(out)]) == 0
    rows = np.loadtxt(out)
    assert rows.shape[1] == 6 and 0 < len(rows) < 300
    np.testing.assert_allclose(np.linalg.norm(rows[:, :3], axis=1), 2.0)
    # cap of 30 degrees around +z removed
    assert np.all(rows[:, 2] < 2.0 * np.cos(np.radians(30)))
    assert f"wrote {len(rows)} samples" in capsys.readouterr().out


def test_run_prints_summary(tmp_path, cloud_file, capsys):
    out = tmp_path / "m.obj"
    assert main(["--input", str(cloud_file), "--output", str(out), "--grid", "25", "--lambda", "0.01"]) == 0
    s = parse_summary(capsys.readouterr().out)
    assert set(s) == {"grid_dims", "iterations_per_level", "final_energy", "converged", "isovalue",
                      "triangles", "peak_memory_estimate_mib", "wall_time_s"}
    assert s["grid_dims"] == "25 25 25" and len(s["iterations_per_level"].split()) == 3
    assert s["converged"] == "true" and int(s["triangles"]) == len(read_mesh(out)) > 0
    assert 0 < float(s["isovalue"]) < 1


def test_log_and_report_files(tmp_path, cloud_file, capsys):
    log, rep = tmp_path / "logs" / "trace.csv", tmp_path / "r.tsv"
    assert main(["--input", str(cloud_file), "--output", str(tmp_path / "m.ply"), "--grid", "25",
                 "--log", str(log), "--report", str(rep)]) == 0
    lines = log.read_text().splitlines()
    assert lines[0] == "iteration,energy" and len(lines) > 2
    its = [int(ln.split(",")[0]) for ln in lines[1:]]
    assert its == sorted(its)
    rows = [ln.split("\t") for ln in rep.read_text().splitlines()]
    assert rows[0] == ["mu", "inside_count"]
    assert [float(r[0]) for r in rows[1:]] == list(REPORT_MUS)
    counts = [int(r[1]) for r in rows[1:]]
    assert all(a >= b for a, b in zip(counts, counts[1:])) and counts[REPORT_MUS.index(0.5)] > 0


def test_no_rebinarize_uses_relaxed_field(tmp_path, cloud_file, capsys):
    base = ["--input", str(cloud_file), "--grid", "25"]
    assert main(base + ["--output", str(tmp_path / "a.obj")]) == 0
    binar = parse_summary(capsys.readouterr().out)
    assert main(base + ["--output", str(tmp_path / "b.obj"), "--no-rebinarize"]) == 0
    relaxed = parse_summary(capsys.readouterr().out)
    assert binar["isovalue"] != relaxed["isovalue"]
    assert read_mesh(tmp_path / "b.obj").is_watertight()


def test_viewdir_flag_orients_three_column_input(tmp_path, sphere_cloud, capsys):
    src = tmp_path / "p.txt"
    np.savetxt(src, sphere_cloud.points)
    # a single direction for a sphere cannot describe it, but the run must still complete
    assert main(["--input", str(src), "--output", str(tmp_path / "m.obj"), "--grid", "17",
                 "--viewdir", "0,0,1"]) == 0
    assert main(["--input", str(src), "--output", str(tmp_path / "m.obj"), "--grid", "17"]) == 1
    assert "read: " in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ninput = in.xyz\noutput = out.ply\ngrid = 33\nmax-iters = 7\n"
                   "lambda = 0.02   # inline\nviewdir = 0, 0, 1\nno_rebinarize = yes\nmode = poisson\n")
    args = parse_args(["--config", str(cfg), "--grid", "41"])
    assert args.grid == 41 and args.max_iters == 7 and args.lam == 0.02
    assert args.viewdir == (0.0, 0.0, 1.0) and args.no_rebinarize is True and args.mode == "poisson"
    assert str(args.input) == "in.xyz"
    # a command-line orientation source replaces the file's
    args = parse_args(["--config", str(cfg), "--viewdir-file", "d.txt"])
    assert args.viewdir is None and str(args.viewdir_file) == "d.txt"


def test_every_flag_has_a_config_key(tmp_path):
    parser = build_parser()
    values = {"input": "a", "output": "b.obj", "grid": "9", "lambda": "0.01", "mode": "tv", "mu": "0.4",
              "levels": "2", "max-iters": "5", "tol": "1e-5", "omega": "1.5", "epsilon": "1e-4",
              "pad": "0.1", "viewdir": "1 0 0", "log": "l.csv", "report": "r.tsv", "threads": "1",
              "seed": "3", "no-rebinarize": "false", "verbose": "true"}
    longs = {o[2:] for a in parser._actions for o in a.option_strings
             if o.startswith("--") and o not in ("--help", "--config", "--viewdir-file")}
    assert longs == set(values)
    path = tmp_path / "all.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items() if k != "verbose"))
    out = read_config(path, parser)
    assert out["max_iters"] == 5 and out["lam"] == 0.01 and out["no_rebinarize"] is False
    assert out["viewdir"] == (1.0, 0.0, 0.0) and out["mu"] == 0.4


@pytest.mark.parametrize("text,match", [
    ("colour = red\n", "unknown key"),
    ("grid 12\n", "expected 'key = value'"),
    ("grid = many\n", "bad value"),
    ("mode = magic\n", "must be one of"),
])
def test_config_errors(tmp_path, text, match):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigurationError, match=match):
        read_config(path, build_parser())


def test_exit_codes(tmp_path, cloud_file, capsys):
    out = str(tmp_path / "m.obj")
    assert main(["--input", str(cloud_file), "--output", out, "--mu", "1.2"]) == 2
    assert main(["--input", str(cloud_file), "--output", out, "--omega", "2.5"]) == 2
    assert main(["--input", str(cloud_file), "--output", out, "--threads", "0"]) == 2
    assert main(["--input", str(cloud_file), "--output", out, "--grid", "3", "--levels", "3"]) == 2
    assert main(["--input", str(tmp_path / "missing.xyz"), "--output", out]) == 1
    assert main(["--input", str(cloud_file), "--output", str(tmp_path / "m.stl"), "--grid", "9"]) == 1
    err = capsys.readouterr().err
    assert "configuration error" in err and "write: " in err
    with pytest.raises(SystemExit) as exc:
        main(["--output", out])  # argparse usage errors exit with 2
    assert exc.value.code == 2


def test_non_convergence_still_succeeds(tmp_path, cloud_file, capsys, caplog):
    assert main(["--input", str(cloud_file), "--output", str(tmp_path / "m.obj"), "--grid", "17",
                 "--max-iters", "2", "--tol", "1e-14"]) == 0
    captured = capsys.readouterr()
    assert parse_summary(captured.out)["converged"] == "false"
    assert "did not converge" in caplog.text


def test_round_trip_through_generator(tmp_path, capsys):
    out = tmp_path / "s.xyz"
    main(["gen-sphere", "--count", "50", "--radius", "1", "--seed", "0", "--output", str(out)])
    c = read_cloud(out)
    np.testing.assert_allclose(np.einsum("ij,ij->i", c.points, c.normals), 1.0)
