"""Acceptance criteria, one test per criterion.

Each test records a ``[PASS]``/``[FAIL]`` line; the lines are printed as they
run and repeated in the pytest terminal summary. Run this file directly for
the report without pytest.
"""

import json
import time
from pathlib import Path

import pytest

from ctcilm import cli, verify
from ctcilm.suite import load_recipe, run_cross_domain

REPORT: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    REPORT.append(line)
    print(line)
    return passed


def check(criterion: str, result: verify.CheckResult, extra_ok: bool = True, extra: str = "") -> bool:
    detail = f"{result.detail}; {result.seconds:.2f}s" + (f"; {extra}" if extra else "")
    return record(criterion, result.passed and extra_ok, detail)


class TestAcceptance:
    def test_ctc_oracle(self):
        r = verify.check_ctc_oracle(n_grids=50, seed=0)
        assert check("ctc oracle (50 grids, |dlog| < 1e-10, < 10 s)", r, r.seconds < 10.0)

    def test_posterior_normalisation(self):
        r = verify.check_posterior_rows(n_grids=50, seed=0)
        assert check("posterior rows (sum 1e-9, EOS 1e-10)", r)

    def test_exact_optimum(self):
        r = verify.check_exact_optimum(n_worlds=3, seed=0)
        assert check("exact-expectation optimum (3 worlds, TV < 1e-4, < 60 s each)", r)

    def test_smoothing_identity(self):
        r = verify.check_smoothing_identity(seed=0)
        assert check("smoothed direct form = double sum (1e-10)", r)

    def test_gradients(self):
        r = verify.check_gradients(n_batches=20, seed=0, h=1e-5)
        assert check("five gradients vs central differences (rel < 1e-5)", r)

    def test_smoothing_reduction(self):
        r = verify.check_smoothing_reduction(seed=0)
        assert check("alpha=1 reduction (1e-12), beta rows sum to 1", r)

    def test_decoder_oracle(self):
        r = verify.check_decoder_oracle(n_instances=100, seed=0)
        assert check("decoder = brute force (100 instances, both modes)", r)

    def test_frame_prior(self):
        r = verify.check_frame_prior()
        assert check("frame prior and unigram (a 0.4, b 0.6)", r)

    @pytest.mark.slow
    def test_cross_domain(self):
        recipe = load_recipe()
        t0 = time.perf_counter()
        kd_vs_uni = kd_vs_sf = uni_vs_sf = 0
        rows = []
        for seed in recipe["acceptance_seeds"]:
            res = run_cross_domain(seed, recipe)["systems"]
            sf, uni, kd = (res[k]["test_ler"] for k in ("shallow_fusion", "unigram", "label_kd_smoothed"))
            kd_vs_uni += kd <= uni
            kd_vs_sf += kd < sf
            uni_vs_sf += uni < sf
            rows.append(f"{seed}:sf={sf:.3f},uni={uni:.3f},kd={kd:.3f}")
        elapsed = time.perf_counter() - t0
        ok = kd_vs_uni >= 8 and kd_vs_sf >= 8 and uni_vs_sf >= 8 and elapsed < 300
        detail = f"kd<=uni {kd_vs_uni}/10, kd<sf {kd_vs_sf}/10, uni<sf {uni_vs_sf}/10, {elapsed:.0f}s [{' '.join(rows)}]"
        assert record("cross-domain direction (>= 8/10 seeds, < 5 min)", ok, detail)

    def test_reproducibility(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv(cli.CONFIG_ENV, raising=False)
        commands = [
            ["gen-world", "--vocab-size", "3", "--n-grids", "4", "--t-max", "4", "--seed", "3", "--out", "w.json"],
            ["sample-data", "--world", "w.json", "--n", "80", "--seed", "4", "--out", "d.jsonl"],
            ["estimate-prior", "--world", "w.json", "--data", "d.jsonl", "--out", "p.json", "--unigram-out", "u.json"],
            ["make-elm", "--world", "w.json", "--data", "d.jsonl", "--out", "e.json"],
            ["train-ilm", "--world", "w.json", "--data", "d.jsonl", "--criterion", "label_masked", "--epochs", "3",
             "--snapshot-every", "1", "--out", "i.json"],
            ["decode", "--world", "w.json", "--data", "d.jsonl", "--elm", "e.json", "--ilm", "i.json", "--prior", "p.json",
             "--lambda1", "0.5", "--lambda2", "0.3", "--lambda3", "0.2", "--out", "r.jsonl"],
            ["eval", "--ler", "--report", "r.jsonl", "--out", "ler.json"],
            ["tune-scales", "--world", "w.json", "--data", "d.jsonl", "--elm", "e.json", "--ilm", "u.json",
             "--prior", "p.json", "--lambda3s", "0,0.5", "--out", "t.json"],
            ["verify", "--only", "frame_prior", "--out", "v.json"],
        ]

        def run_all():
            for argv in commands:
                assert cli.main(argv) == 0, argv
            return {p.name: p.read_bytes() for p in sorted(tmp_path.iterdir())}

        first = run_all()
        second = run_all()
        same = first == second
        manifests = sorted(tmp_path.glob("*.manifest.json"))
        replays = [cli.main(["replay", str(m)]) for m in manifests]
        ok = same and all(code == 0 for code in replays) and len(manifests) == len(commands)
        detail = f"{len(first)} files identical across re-runs: {same}; {sum(c == 0 for c in replays)}/{len(manifests)} manifests replay byte-identically"
        assert record("CLI reproducibility", ok, detail)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
