import struct

import numpy as np
import pytest

from greensteg import pipeline
from greensteg.cli import main
from greensteg.imaging import read_manifest, read_pgm, write_pgm
from greensteg.model import (ConfigError, ModelFormatError, RunConfig, deserialize, load_config,
                             load_model, parse_config, save_model, serialize)


# -- configuration ----------------------------------------------------------

def test_config_parse_and_roundtrip(tmp_path):
    cfg = parse_config("# run\nk = 12  # fewer dims\nscheme=suniward\nround2_offset=false\n")
    assert (cfg.k, cfg.scheme, cfg.round2_offset) == (12, "suniward", False)
    assert cfg.n_trees == RunConfig().n_trees
    assert parse_config(cfg.to_text()) == cfg
    p = tmp_path / "c.cfg"
    p.write_text(cfg.to_text())
    assert load_config(p) == cfg


@pytest.mark.parametrize("text", ["bogus=1", "k=abc", "k", "round2_offset=maybe"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- model container --------------------------------------------------------

def test_model_roundtrip_bit_identical(tiny_model, tiny_data, tmp_path):
    raw = serialize(tiny_model)
    assert raw[:4] == b"GSMD" and struct.unpack_from("<I", raw, 4)[0] == 1
    back = deserialize(raw)
    assert serialize(back) == raw
    path = tmp_path / "m.gsm"
    save_model(tiny_model, path)
    assert path.read_bytes() == raw
    for p in tiny_data["pairs"][18:]:
        a, b = pipeline.detect(tiny_model, p.stego), pipeline.detect(load_model(path), p.stego)
        assert a.label == b.label and np.array_equal(a.scores, b.scores)
        assert np.array_equal(a.score_map.scores, b.score_map.scores)


def test_model_format_errors(tiny_model):
    raw = serialize(tiny_model)
    with pytest.raises(ModelFormatError):
        deserialize(b"XXXX" + raw[4:])
    with pytest.raises(ModelFormatError):
        deserialize(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(ModelFormatError):
        deserialize(raw[:6])
    with pytest.raises(ModelFormatError):
        deserialize(raw[: len(raw) // 2])


# -- command line ------------------------------------------------------------

def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_embed_count_and_determinism(tmp_path, capsys):
    runs = []
    for name in ("a", "b"):
        code, out, _ = _run(capsys, "embed", "--synthetic", 5, "--size", 32, "--seed", 3,
                            "--payload", 0.4, "--out", tmp_path / name)
        assert code == 0
        runs.append(read_manifest(out.strip()))
    a, b = runs
    assert len(a.entries) == 5
    for ea, eb in zip(a.entries, b.entries):
        for pa, pb in ((ea.cover_path, eb.cover_path), (ea.stego_path, eb.stego_path),
                       (ea.change_map_path, eb.change_map_path)):
            assert open(pa, "rb").read() == open(pb, "rb").read()


def test_cli_payload_controls_change_rate(tmp_path, capsys):
    rates = []
    for payload in (0.2, 0.4):
        code, out, _ = _run(capsys, "embed", "--synthetic", 6, "--size", 48, "--payload", payload,
                            "--out", tmp_path / str(payload))
        assert code == 0
        pairs = pipeline.load_pairs(read_manifest(out.strip()))
        rates.append(np.mean([np.mean(p.change_map != 0) for p in pairs]))
    assert 0 < rates[0] < rates[1]


def test_cli_embed_from_cover_dir(tmp_path, capsys):
    covers = tmp_path / "covers"
    covers.mkdir()
    for i in range(3):
        write_pgm(pipeline.synthetic_covers(1, 24, i)[0], covers / f"img{i}.pgm")
    code, out, _ = _run(capsys, "embed", "--covers", covers, "--scheme", "suniward", "--out", tmp_path / "o")
    assert code == 0
    m = read_manifest(out.strip())
    assert [e.cover_path.rsplit("/", 1)[1] for e in m.entries] == ["img0.pgm", "img1.pgm", "img2.pgm"]


@pytest.fixture(scope="module")
def cli_model(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = main(["fit", tiny_data["manifest"], "--config", tiny_data["config"],
                 "--model", str(out / "m.gsm"), "--out", str(out / "reports")])
    assert code == 0
    return out


def test_cli_fit_outputs(cli_model, tiny_data):
    model = load_model(cli_model / "m.gsm")
    assert model.group_count == 3 and len(model.fusion.m_values) == 5
    assert (cli_model / "reports" / "m_curve.csv").exists()
    assert list((cli_model / "reports").glob("dft_group*.csv"))
    # refitting the same data and config gives the same bytes
    again = cli_model / "again.gsm"
    assert main(["fit", tiny_data["manifest"], "--config", tiny_data["config"], "--model", str(again)]) == 0
    assert again.read_bytes() == (cli_model / "m.gsm").read_bytes()


def test_cli_detect_format_and_exports(cli_model, tiny_data, tmp_path, capsys):
    pair = tiny_data["pairs"][20]
    small = tmp_path / "small.pgm"
    write_pgm(pair.stego, small)
    big = tmp_path / "big.pgm"
    write_pgm(pipeline.synthetic_covers(1, 56, 99)[0], big)
    code, out, _ = _run(capsys, "detect", "--model", cli_model / "m.gsm", small, big, small,
                        "--out", tmp_path / "exp", "--export-scores", "--export-spots")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 3 and lines[0] == lines[2]
    for line, path in zip(lines, (small, big)):
        fields = line.split("\t")
        assert fields[0] == str(path) and fields[1] in ("cover", "stego") and len(fields) == 7
        assert all(0.0 <= float(s) <= 1.0 for s in fields[2:])
    heat = read_pgm(tmp_path / "exp" / "big.heat.pgm")
    assert heat.pixels.shape == (50, 50)  # interior of a 56x56 image
    raw = (tmp_path / "exp" / "big.scores").read_bytes()
    w, h = struct.unpack_from("<II", raw)
    plane = np.frombuffer(raw, "<f4", offset=8).reshape(h, w)
    assert (w, h) == (50, 50) and np.all((plane >= 0) & (plane <= 1))
    assert (tmp_path / "exp" / "small.spots.csv").read_text().startswith("row,")


def test_cli_eval_reports_pe(cli_model, tiny_data, capsys):
    code, out, err = _run(capsys, "eval", "--model", cli_model / "m.gsm", tiny_data["manifest"],
                          "--config", tiny_data["config"], "--split", "test")
    assert code == 0
    kv = dict(line.split("=") for line in out.strip().splitlines())
    assert float(kv["p_e"]) == pytest.approx((float(kv["p_fa"]) + float(kv["p_md"])) / 2)
    assert kv["n_cover"] == kv["n_stego"] == "6"
    assert "P_E" in err


def test_cli_budget(cli_model, capsys):
    code, out, _ = _run(capsys, "budget")
    assert code == 0 and "params.total=133000" in out and "flops.total=3529" in out
    code, out, _ = _run(capsys, "budget", "--format", "markdown", "--convention", "exact")
    assert code == 0 and "| Total | 132489 |" in out
    code, out, _ = _run(capsys, "budget", "--model", cli_model / "m.gsm")
    assert code == 0 and "params.module3_classifiers=5000" in out


def test_cli_exit_codes(tmp_path, capsys, tiny_data):
    assert _run(capsys)[0] == 1
    assert _run(capsys, "detect")[0] == 1
    assert _run(capsys, "embed", "--out", tmp_path / "x")[0] == 1
    assert _run(capsys, "embed", "--synthetic", 2, "--payload", "lots", "--out", tmp_path / "x")[0] == 1
    assert _run(capsys, "detect", "--model", tmp_path / "missing.gsm", tmp_path / "a.pgm")[0] == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key=1\n")
    assert _run(capsys, "fit", tiny_data["manifest"], "--config", bad, "--model", tmp_path / "m")[0] == 2
    junk = tmp_path / "junk.gsm"
    junk.write_bytes(b"not a model")
    code, _, err = _run(capsys, "budget", "--model", junk)
    assert code == 2 and "status=failed" in err
    assert _run(capsys, "--help")[0] == 0


def test_cli_worker_pool_keeps_order_and_bytes(cli_model, tiny_data, tmp_path, capsys):
    imgs = []
    for i, p in enumerate(tiny_data["pairs"][18:]):
        path = tmp_path / f"s{i}.pgm"
        write_pgm(p.stego, path)
        imgs.append(path)
    serial = _run(capsys, "detect", "--model", cli_model / "m.gsm", *imgs)
    pooled = _run(capsys, "detect", "--model", cli_model / "m.gsm", "--jobs", 2, *imgs)
    assert serial[0] == pooled[0] == 0 and serial[1] == pooled[1]
    ev = [_run(capsys, "eval", "--model", cli_model / "m.gsm", tiny_data["manifest"], "--jobs", j)[1]
          for j in (1, 2)]
    assert ev[0] == ev[1]
    outs = []
    for j in (1, 2):
        code, out, _ = _run(capsys, "embed", "--synthetic", 4, "--size", 24, "--jobs", j, "--out", tmp_path / f"e{j}")
        outs.append([open(e.stego_path, "rb").read() for e in read_manifest(out.strip()).entries])
    assert outs[0] == outs[1]
