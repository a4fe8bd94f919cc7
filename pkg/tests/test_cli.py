import hashlib
import json

import numpy as np
import pytest

from wmtrace.bitstats import threshold_for_fpr
from wmtrace.cli import dispatch, read_key_file
from wmtrace.imaging import seed_image, write_image


def run(capsys, *argv):
    code = dispatch([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_image(d / "a.png", seed_image(0, size=192))
    write_image(d / "b.ppm", seed_image(1, size=192))
    assert dispatch(["keygen", "--seed", "3", "--out", str(d / "raw.json")]) == 0
    assert dispatch(["whiten-fit", "--key", str(d / "raw.json"), "--synthetic", "150", "--size", "128",
                     "--corpus-offset", "5000", "--out", str(d / "k.json")]) == 0
    assert dispatch(["embed", "--key", str(d / "k.json"), "--image", str(d / "a.png"),
                     "--out", str(d / "w.png")]) == 0
    return d


def test_keygen_and_key_file(workdir, capsys):
    code, out, _ = run(capsys, "keygen", "--kind", "dctdwt", "--k", "32", "--seed", "9", "--out", workdir / "d.json")
    assert code == 0
    d = json.loads(out)
    key, message = read_key_file(workdir / "d.json")
    assert key.codec_kind == "dctdwt" and key.k == 32 and len(d["message"]) == 32
    assert d["config"]["argv"][0] == "keygen"
    assert key.whitening is None and message.size == 32


def test_detect_watermarked_and_vanilla(workdir, capsys):
    code, out, _ = run(capsys, "detect", "--key", workdir / "k.json", "--image", workdir / "w.png", "--fpr", "1e-6")
    d = json.loads(out)
    assert code == 0 and d["flagged"] is True and d["tau"] == 41
    assert d["score"] >= 41 and 0 < d["p_value"] < 1e-6
    code, out, _ = run(capsys, "detect", "--key", workdir / "k.json", "--image", workdir / "a.png")
    assert code == 3 and json.loads(out)["flagged"] is False


def test_extract_and_identify(workdir, capsys):
    _, message = read_key_file(workdir / "k.json")
    code, out, _ = run(capsys, "extract", "--key", workdir / "k.json", "--image", workdir / "w.png")
    assert code == 0
    assert json.loads(out)["bits"] == "".join(map(str, message))
    users = [("".join(map(str, np.random.default_rng(i).integers(0, 2, 48)))) for i in range(5)]
    users.insert(2, "".join(map(str, message)))
    (workdir / "users.json").write_text(json.dumps(users))
    code, out, _ = run(capsys, "identify", "--key", workdir / "k.json", "--image", workdir / "w.png",
                       "--users", workdir / "users.json")
    d = json.loads(out)
    assert code == 0 and d["user"] == 2 and d["tau"] == threshold_for_fpr(48, 1e-6, 6)


def test_metric(workdir, capsys):
    code, out, _ = run(capsys, "metric", "psnr", workdir / "a.png", workdir / "a.png")
    assert code == 0 and out.strip() == "+inf"
    code, out, _ = run(capsys, "metric", "ssim", workdir / "a.png", workdir / "w.png")
    assert code == 0 and 0.5 < float(out) < 1.0
    code, _, err = run(capsys, "metric", "psnr", workdir / "a.png", workdir / "nope.png")
    assert code == 1 and "error" in err


def test_validate_fpr_example(capsys):
    code, out, _ = run(capsys, "validate-fpr", "--k", "16", "--tau", "12", "--trials", "1000000", "--seed", "7")
    d = json.loads(out)
    assert code == 0
    assert d["rows"][0]["fpr_theoretical"] == pytest.approx(0.0384064, abs=5e-8)
    assert d["seeds"]["seed"] == 7


def test_usage_errors(capsys, workdir):
    code, _, err = run(capsys, "detect", "--bogus")
    assert code == 2 and "usage:" in err
    code, _, err = run(capsys, "sim-identify", "--p", "0.9")
    assert code == 2 and "--seed" in err
    code, _, err = run(capsys)
    assert code == 2 and "usage:" in err
    code, _, err = run(capsys, "embed", "--key", workdir / "raw.json", "--image", workdir / "a.png",
                       "--out", workdir / "x.png", "--method", "additive", "--message", "0101")
    assert code == 1


def test_operational_errors(capsys, workdir):
    code, _, err = run(capsys, "detect", "--key", workdir / "missing.json", "--image", workdir / "a.png")
    assert code == 1 and err
    code, _, _ = run(capsys, "channel", "--image", workdir / "a.png", "--transform", "blur:3", "--out", workdir / "c.png")
    assert code == 1
    code, _, _ = run(capsys, "sim-identify", "--p", "0.3", "--seed", "1")
    assert code == 1


def test_channel_and_table_format(workdir, capsys):
    code, out, _ = run(capsys, "channel", "--image", workdir / "b.ppm", "--transform", "crop:0.25",
                       "--out", workdir / "c.png", "--format", "table")
    assert code == 0 and "shape" in out and "[96, 96, 3]" in out


def test_simulations(capsys, tmp_path):
    code, out, _ = run(capsys, "sim-identify", "--p", "0.99", "--n-users", "20", "--n-decoys", "980",
                       "--images-per-user", "20", "--seed", "2")
    d = json.loads(out)
    assert code == 0 and d["metrics"]["accuracy"] >= 0.98 and d["metrics"]["false_accusations"] == 0
    code, out, _ = run(capsys, "sim-collusion", "--p", "0.9", "--seed", "3")
    assert code == 0 and json.loads(out)["samples"]["n_bits"] >= 48000
    code, out, _ = run(capsys, "sim-detect", "--p", "0.92", "--trials", "2000", "--seed", "4",
                       "--csv", tmp_path / "c.csv")
    assert code == 0
    assert (tmp_path / "c.csv").read_text().startswith("tau,fpr_theoretical,tpr,transform\n")


def test_bench_robustness_csv(workdir, capsys, tmp_path):
    code, out, _ = run(capsys, "bench-robustness", "--key", workdir / "k.json", "--synthetic", "1",
                       "--size", "128", "--n-keys", "1", "--seed", "5", "--transforms", "identity", "jpeg:80",
                       "--csv", tmp_path / "r.csv")
    d = json.loads(out)
    assert code == 0 and d["metrics"]["identity"] >= 0.99
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 1 + 2 * 49


def test_attacks(workdir, capsys):
    code, out, _ = run(capsys, "attack-remove", "--key", workdir / "k.json", "--image", workdir / "w.png",
                       "--floor", "30", "--seed", "1", "--out", workdir / "r.png")
    d = json.loads(out)
    assert code == 0 and d["psnr"] >= 29.9 and not d["noop"]
    code, out, _ = run(capsys, "attack-forge", "--key", workdir / "k.json", "--image", workdir / "b.ppm",
                       "--floor", "30", "--out", workdir / "f.png")
    assert code == 0
    code, _, _ = run(capsys, "detect", "--key", workdir / "k.json", "--image", workdir / "f.png")
    assert code == 0


def test_replay_is_byte_identical_and_inputs_untouched(workdir, capsys, tmp_path):
    before = {p.name: digest(p) for p in (workdir / "k.json", workdir / "a.png")}
    argv = ["bench-robustness", "--key", workdir / "k.json", "--synthetic", "1", "--size", "128",
            "--n-keys", "1", "--seed", "6", "--transforms", "brightness:2", "--report", tmp_path / "rep.json"]
    assert run(capsys, *argv)[0] == 0
    first = json.loads((tmp_path / "rep.json").read_text())
    code, out, _ = run(capsys, "--config", tmp_path / "rep.json")
    second = json.loads(out)
    assert code == 0
    for d in (first, second):
        d.pop("wall_clock")
    assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)
    code, out, _ = run(capsys, "extract", "--key", workdir / "k.json", "--image", workdir / "a.png")
    assert {p.name: digest(p) for p in (workdir / "k.json", workdir / "a.png")} == before
