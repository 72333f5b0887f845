import configparser

import pytest

from cascade_verify.cli import EXIT_ERROR, EXIT_OK, EXIT_REJECT, main
from cascade_verify.config import PROFILES, load_config
from cascade_verify.errors import ConfigInvalid
from cascade_verify.manifest import read_manifest


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.training.n_states == 6 and cfg.training.n_mixtures == 3
        assert cfg.frontend.n_ceps == 13
        assert cfg.synth.emotion_set == ("neutral", "anger", "sadness", "happiness", "disgust", "fear")

    @pytest.mark.parametrize("profile", PROFILES)
    def test_every_profile_loads(self, profile):
        assert load_config(profile).profile == profile

    def test_layering_order(self, tmp_path):
        ini = tmp_path / "user.ini"
        ini.write_text("[training]\nmax_iters = 5\nn_mixtures = 2\n")
        cfg = load_config("micro", ini, ["training.max_iters=4"])
        assert cfg.training.n_states == 3  # profile
        assert cfg.training.n_mixtures == 2  # user file over profile
        assert cfg.training.max_iters == 4  # --set over user file

    def test_seed_drives_everything(self):
        cfg = load_config("micro", seed=42)
        assert cfg.seed == cfg.training.init_seed == cfg.synth.rng_seed == 42

    def test_per_gender_counts(self):
        cfg = load_config(overrides=["synth.n_speakers_per_gender=3,5"])
        assert cfg.synth.n_speakers_per_gender == (3, 5)

    def test_dump_round_trips(self, tmp_path):
        cfg = load_config("micro", overrides=["cascade.eq3_variant=mean"], seed=3)
        path = cfg.echo(tmp_path)
        cp = configparser.ConfigParser(interpolation=None)
        cp.read(path)
        assert cp["cascade"]["eq3_variant"] == "mean" and cp["run"]["seed"] == "3"
        again = load_config("micro", path)
        assert again.training == cfg.training and again.synth == cfg.synth

    @pytest.mark.parametrize("bad", [["training.bogus=1"], ["nosection.x=1"], ["training.n_states"],
                                     ["training.n_states=abc"], ["training.n_states=0"],
                                     ["cascade.eq5_cohort=everyone"], ["frontend.deltas=maybe"]])
    def test_invalid(self, bad):
        with pytest.raises(ConfigInvalid):
            load_config(overrides=bad)

    def test_styles_section(self, tmp_path):
        from cascade_verify.synth import DEFAULT_STYLES
        assert load_config().synth.styles == DEFAULT_STYLES
        cfg = load_config(overrides=["styles.anger=1.5,1.2,0.08,0.85,5,0.08"])
        assert cfg.synth.styles["anger"].f0_scale == 1.5 and cfg.synth.styles["anger"].expressiveness == 1.0
        assert cfg.synth.styles["fear"] == DEFAULT_STYLES["fear"]
        with pytest.raises(ConfigInvalid):
            load_config(overrides=["styles.anger=1,2"])
        with pytest.raises(ConfigInvalid):
            load_config(overrides=["styles.anger=a,b,c,d,e,f"])

    def test_jobs(self):
        import os
        assert load_config().jobs == (os.cpu_count() or 1)
        assert load_config(jobs=1).jobs == 1
        with pytest.raises(ConfigInvalid):
            load_config(jobs=-1)

    def test_unknown_profile_and_file(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_config("huge")
        with pytest.raises(ConfigInvalid):
            load_config(config_file=tmp_path / "nope.ini")


def _claimant_test_wav(run):
    m = read_manifest(run / "corpus/manifest.csv")
    e = next(x for x in m.entries if x.split == "test" and x.role == "claimant")
    return m.resolve(e), e.speaker_id


class TestCli:
    def test_run_outputs(self, micro_run):
        report = micro_run / "report"
        for name in ("report.txt", "report.csv", "trials.csv", "config.used", "det_three_stage.csv"):
            assert (report / name).exists()
        assert list(report.glob("*.png"))
        assert (micro_run / "models/registry.json").exists()
        assert (micro_run / "corpus/config.used").exists()

    def test_verify_exit_codes(self, micro_run, capsys):
        wav, spk = _claimant_test_wav(micro_run)
        base = ["verify", "--profile", "micro", "--models", str(micro_run / "models"), "--wav", str(wav),
                "--claimed", spk]
        assert main(base + ["--threshold=-inf"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("accept")
        assert main(base + ["--threshold", "inf"]) == EXIT_REJECT
        assert capsys.readouterr().out.startswith("reject")
        assert main(base + ["--threshold=-inf", "--mode", "one_stage"]) == EXIT_OK

    def test_verify_errors(self, micro_run, tmp_path, capsys):
        wav, spk = _claimant_test_wav(micro_run)
        models = str(micro_run / "models")
        assert main(["verify", "--models", models, "--wav", str(wav), "--claimed", "x99", "--threshold", "0"]) \
            == EXIT_ERROR
        assert main(["verify", "--models", models, "--wav", str(tmp_path / "none.wav"), "--claimed", spk,
                     "--threshold", "0"]) == EXIT_ERROR
        assert main(["verify", "--models", str(tmp_path), "--wav", str(wav), "--claimed", spk,
                     "--threshold", "0"]) == EXIT_ERROR
        assert main(["verify", "--models", models, "--wav", str(wav), "--claimed", spk, "--threshold", "0",
                     "--mode", "five_stage"]) == EXIT_ERROR
        assert "error" in capsys.readouterr().err

    def test_bad_profile_exits(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--profile", "huge", "--out", "x"])
        assert exc.value.code == 2

    def test_bad_override(self, tmp_path):
        assert main(["synth", "--set", "synth.bogus=1", "--out", str(tmp_path)]) == EXIT_ERROR

    def test_report_from_trials(self, micro_run, tmp_path, capsys):
        code = main(["report", "--profile", "micro", "--trials", str(micro_run / "report/trials.csv"),
                     "--out", str(tmp_path)])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "Table 2 layout" in out
        assert (tmp_path / "report.txt").read_text() == (micro_run / "report/report.txt").read_text()
        assert list(tmp_path.glob("*.png"))

    def test_evaluate_subset_without_figures(self, micro_run, tmp_path):
        code = main(["evaluate", "--profile", "micro", "--manifest", str(micro_run / "corpus/manifest.csv"),
                     "--models", str(micro_run / "models"), "--out", str(tmp_path), "--modes", "one_stage,three_stage",
                     "--no-figures"])
        assert code == EXIT_OK
        assert not list(tmp_path.glob("*.png"))
        assert {p.name for p in tmp_path.glob("det_*.csv")} == {"det_one_stage.csv", "det_three_stage.csv"}

    def test_unknown_mode(self, micro_run, tmp_path):
        assert main(["evaluate", "--manifest", str(micro_run / "corpus/manifest.csv"), "--models",
                     str(micro_run / "models"), "--out", str(tmp_path), "--modes", "nine_stage"]) == EXIT_ERROR

    def test_synth_and_train_subcommands(self, tmp_path, capsys):
        corpus = tmp_path / "c"
        assert main(["synth", "--profile", "micro", "--set", "synth.utterance_seconds=0.4", "--out", str(corpus)]) \
            == EXIT_OK
        assert (corpus / "manifest.csv").exists()
        assert main(["train", "--profile", "micro", "--set", "training.max_iters=2", "--manifest",
                     str(corpus / "manifest.csv"), "--models", str(tmp_path / "m")]) == EXIT_OK
        assert "speaker\t4" in capsys.readouterr().out
