import json

import numpy as np
import pytest

from choreoforge import audio, checkpoint, cli, motion as mo


@pytest.fixture(scope="module")
def track_wav(tmp_path_factory, track_12s):
    path = tmp_path_factory.mktemp("cli_audio") / "track.wav"
    audio.save_wav(path, track_12s[0])
    return path


def run_flags(ckpts, wav, out, *extra):
    return ["--fdgn", str(ckpts[0]), "--retrieval", str(ckpts[1]), "--audio", str(wav), "--out", str(out),
            "--m", "3", *extra]


def test_synth_data_writes_manifest(tmp_path, capsys):
    code = cli.main(["synth-data", "--out", str(tmp_path), "--per-genre", "3", "--genres", "2", "--duration", "4"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pairs"] == 6 and out["splits"] == {"train": 4, "val": 1, "test": 1}
    assert (tmp_path / "manifest.json").is_file()


def test_generate_end_to_end_is_deterministic(tmp_path, tiny_checkpoints, track_wav, capsys):
    args = ["generate", *run_flags(tiny_checkpoints, track_wav, tmp_path / "a.motn", "--seed", "9")]
    assert cli.main(args) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["frames"] == 360 and len(first["idx"]) == 3
    args[args.index(str(tmp_path / "a.motn"))] = str(tmp_path / "b.motn")
    assert cli.main(args) == 0
    capsys.readouterr()
    assert (tmp_path / "a.motn").read_bytes() == (tmp_path / "b.motn").read_bytes()
    report = json.loads((tmp_path / "a.json").read_text())
    assert [s["idx"] for s in report["steps"]] == first["idx"]


def test_config_file_supplies_run_settings(tmp_path, tiny_checkpoints, track_wav, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text(f"[run]\nfdgn_checkpoint = {tiny_checkpoints[0]}\nretrieval_checkpoint = {tiny_checkpoints[1]}\n"
                   f"audio = {track_wav}\noutput = {tmp_path / 'c.motn'}\nm = 2\nseed = 9\n")
    assert cli.main(["generate", "--config", str(ini)]) == 0
    capsys.readouterr()
    assert len(mo.load_motn(tmp_path / "c.motn")) == 360


def test_variations_and_ablation(tmp_path, tiny_checkpoints, track_wav, capsys):
    assert cli.main(["variations", *run_flags(tiny_checkpoints, track_wav, tmp_path / "v", "--seed", "3",
                                              "--k", "2")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["variations"]) == 2 and out["raw_multimodality"] > 0
    assert cli.main(["ablate", "--strategy", "fdgn-c",
                     *run_flags(tiny_checkpoints, track_wav, tmp_path / "c.motn", "--seed", "3")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["frames"] == 360 and out["junction_max_jump"] >= 0


def test_missing_seed_is_config_error(tmp_path, tiny_checkpoints, track_wav):
    assert cli.main(["generate", *run_flags(tiny_checkpoints, track_wav, tmp_path / "x.motn")]) == 2


def test_bad_config_values_are_config_errors(tmp_path, tiny_checkpoints, track_wav):
    assert cli.main(["generate", *run_flags(tiny_checkpoints, track_wav, tmp_path / "x.motn", "--seed", "1",
                                            "--alpha", "0", "--beta", "0")]) == 2
    assert cli.main(["generate", "--config", str(tmp_path / "absent.ini"), "--seed", "1"]) == 2
    assert cli.main(["variations", *run_flags(tiny_checkpoints, track_wav, tmp_path / "v", "--seed", "1",
                                              "--k", "4")]) == 3
    assert cli.main(["generate", *run_flags(tiny_checkpoints, track_wav, tmp_path / "x.motn", "--seed", "1",
                                            "--diffusion-steps", "77")]) == 2


def test_missing_checkpoint_is_data_error(tmp_path, tiny_checkpoints, track_wav):
    ckpts = (tmp_path / "none.cftn", tiny_checkpoints[1])
    assert cli.main(["generate", *run_flags(ckpts, track_wav, tmp_path / "x.motn", "--seed", "1")]) == 3


def test_short_audio_is_data_error(tmp_path, tiny_checkpoints):
    wav = tmp_path / "short.wav"
    audio.save_wav(wav, audio.MusicClip(np.zeros(48000 * 3), 48000))
    assert cli.main(["generate", *run_flags(tiny_checkpoints, wav, tmp_path / "x.motn", "--seed", "1")]) == 3


def test_non_finite_model_is_numeric_error(tmp_path, tiny_checkpoints, track_wav):
    tensors = checkpoint.load(tiny_checkpoints[0])
    name = sorted(tensors)[0]
    tensors[name] = np.full_like(tensors[name], np.nan)
    meta = json.loads((tiny_checkpoints[0].parent / "fdgn.cftn.json").read_text())
    bad = tmp_path / "nan.cftn"
    checkpoint.save_model(bad, meta["kind"], meta["config"], tensors)
    ckpts = (bad, tiny_checkpoints[1])
    assert cli.main(["generate", *run_flags(ckpts, track_wav, tmp_path / "x.motn", "--seed", "1")]) == 4


@pytest.mark.parametrize("argv", [[], ["generate", "--seed", "-1"], ["generate", "--seed", str(2 ** 64)],
                                  ["ablate", "--strategy", "finenet"], ["dance"]])
def test_usage_errors_exit_two(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2
