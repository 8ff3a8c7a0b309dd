import json
import subprocess
import sys

import pytest

from wellapprox.cli import THREADS_ENV, config_hash, main, resolve_threads

POWER = {"m": 1, "n": 1, "theta": [0.0], "psi": {"kind": "power", "tau": 1.0}, "Q": {"kind": "all_nonzero"}}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _run(tmp_path, command, cfg, out="out", extra=()):
    path = _write(tmp_path, cfg)
    return main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])


def test_dims_power_law(tmp_path, capsys):
    assert _run(tmp_path, "dims", {"instance": POWER}) == 0
    doc = json.loads((tmp_path / "out" / "dims.json").read_text())
    assert doc["dim_F"] == pytest.approx(1.0, abs=2e-3)
    assert doc["dim_H"] == pytest.approx(1.0, abs=2e-3)
    assert doc["config_sha256"] == config_hash({"instance": POWER})
    assert "dim_F" in capsys.readouterr().out


def test_dims_axis_example(tmp_path):
    cfg = {"instance": {**POWER, "n": 2, "psi": {"kind": "axis_powers_of_two"}}}
    assert _run(tmp_path, "dims", cfg) == 0
    doc = json.loads((tmp_path / "out" / "dims.json").read_text())
    assert doc["dim_F"] == "unknown_divergent"
    assert doc["s"]["upper"] <= 1e-3


def test_exit_code_config(tmp_path):
    cfg = {"instance": {k: v for k, v in POWER.items() if k != "psi"}}
    assert _run(tmp_path, "dims", cfg) == 2
    assert _run(tmp_path, "dims", {"instance": POWER, "bogus": 1}) == 2
    assert main(["dims", "--config", str(tmp_path / "missing.json")]) == 2


def test_exit_code_unsupported_psi(tmp_path):
    assert _run(tmp_path, "dims", {"instance": {**POWER, "psi": {"kind": "zeta"}}}) == 3


def test_exit_code_degenerate_scale(tmp_path):
    cfg = {
        "instance": {**POWER, "psi": {"kind": "table", "entries": [[1, 0.5]]}},
        "s": 0.45,
        "spectrum": {"M": 128, "Lambda": 64},
    }
    assert _run(tmp_path, "spectrum", cfg) == 4


def test_exit_code_search_cap(tmp_path):
    cfg = {"instance": POWER, "s": 0.45, "build": {"k_max": 2, "k_cap": 4, "witness_radius": 64}}
    assert _run(tmp_path, "build", cfg) == 5


def test_exit_code_oracle_mismatch(tmp_path):
    # a slab family claimed for a two-row instance but checked with too few samples
    cfg = {
        "instance": {**POWER, "n": 2, "theta": [0.3]},
        "verify_lattice": {
            "families": [{"delta": 0.1, "q": [2, 1], "theta": [0.3]}],
            "samples": 1,
            "oracle_n": [2],
            "oracle_k_radius": 2,
            "oracle_q_radius": 1,
        },
    }
    assert _run(tmp_path, "verify-lattice", cfg) == 6


def test_verify_lattice_passes(tmp_path):
    cfg = {
        "instance": {**POWER, "n": 2, "theta": [0.3]},
        "verify_lattice": {
            "families": [{"delta": 0.1, "q": [2, 1], "theta": [0.3]}],
            "samples": 200000,
            "oracle_n": [2],
            "oracle_k_radius": 4,
            "oracle_q_radius": 2,
        },
    }
    assert _run(tmp_path, "verify-lattice", cfg) == 0
    lines = (tmp_path / "out" / "lattice.csv").read_text().splitlines()
    assert lines[0].startswith("# wellapprox verify-lattice config_sha256=")


def test_verify_fm(tmp_path):
    cfg = {"instance": POWER, "s": 0.45, "verify_fm": {"above_exp": 6, "count": 2}}
    assert _run(tmp_path, "verify-fm", cfg) == 0
    doc = json.loads((tmp_path / "out" / "verify_fm.json").read_text())
    assert [r["M"] for r in doc["reports"]] == [128.0, 256.0]
    assert all(r["zero_is_one"] and r["bounded_by_one"] and r["zero_annulus"] for r in doc["reports"])


def test_spectrum_and_export(tmp_path):
    cfg = {"instance": POWER, "s": 0.45, "spectrum": {"M": 128, "Lambda": 256}}
    assert _run(tmp_path, "spectrum", cfg) == 0
    lines = (tmp_path / "out" / "spectrum.csv").read_text().splitlines()
    assert lines[0].startswith("# wellapprox spectrum config_sha256=")
    assert lines[1] == "l_11,re,im,abs"
    assert len(lines) > 3


def test_export_empty_spectrum_has_header_only(tmp_path):
    cfg = {"instance": POWER, "s": 0.45, "spectrum": {"M": 128, "Lambda": 50}}
    assert _run(tmp_path, "export", cfg) == 0
    lines = (tmp_path / "out" / "export.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1] == "l_11,re,im,abs"


def test_build_is_byte_identical(tmp_path):
    cfg = {"instance": POWER, "s": 0.45, "build": {"k_max": 2, "census_samples": 200}}
    assert _run(tmp_path, "build", cfg, out="a", extra=["--seed", "7"]) == 0
    assert _run(tmp_path, "build", cfg, out="b", extra=["--seed", "7", "--threads", "2"]) == 0
    for name in ("stage.json", "decay.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    doc = json.loads((tmp_path / "a" / "stage.json").read_text())
    M1, M2 = doc["stage"]["scales"]
    assert M2 >= 2 * M1 and doc["seed"] == 7
    assert doc["census"]["fraction"] == 1.0


def test_seed_must_be_u64(tmp_path):
    path = _write(tmp_path, {"instance": POWER})
    with pytest.raises(SystemExit):
        main(["dims", "--config", str(path), "--seed", "-1"])
    with pytest.raises(SystemExit):
        main(["dims", "--config", str(path), "--seed", str(2 ** 64)])


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv(THREADS_ENV, "x")
    with pytest.raises(ValueError):
        resolve_threads(None)


def test_module_entry_point(tmp_path):
    path = _write(tmp_path, {"instance": {**POWER, "psi": {"kind": "zeta"}}})
    proc = subprocess.run([sys.executable, "-m", "wellapprox", "dims", "--config", str(path), "--out", str(tmp_path)])
    assert proc.returncode == 3


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
