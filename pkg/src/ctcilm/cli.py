"""Command-line entry point.

Every command resolves its settings as: built-in defaults, then the JSON
config file (top-level keys, then the section named after the command),
then explicit flags. The config path comes from ``--config`` or the
``CTCILM_CONFIG`` environment variable. Each command that writes an artifact
also writes ``<artifact>.manifest.json`` with the resolved settings and the
sha256 of every input and output; ``replay`` re-runs a manifest and checks
that the outputs come out byte-identical.

Exit codes: 0 success, 1 invalid input, 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .ctc import FORMAT_VERSION, Vocabulary
from .data import TrainingPair, World, load_dataset, load_world, save_dataset, save_world, validate_pairs
from .decoder import MODES as DECODE_MODES
from .decoder import FusionScales, corpus_ler, decode_fused, decode_report_line, label_error_rate
from .errors import DecodeError, EnumerationGuardError, InputDomainError, TrainingDivergedError
from .ilm import (
    CRITERIA,
    MASK_POLICIES,
    MODES,
    TrainConfig,
    estimate_frame_prior,
    load_prior,
    save_prior,
    train,
    unigram_from_prior,
)
from .lm import FULL, CtxLM, load_lm, perplexity, save_lm, uniform_lm
from .tuning import evaluate_scales, tune_scales
from .worldgen import WorldSpec, build_world, make_elm, sample_dataset

CONFIG_ENV = "CTCILM_CONFIG"
MANIFEST_SUFFIX = ".manifest.json"

DEFAULTS = {
    "gen-world": dict(vocab_size=2, t_min=2, t_max=4, n_grids=3, concentration=1.0, seed=0, out=None),
    "sample-data": dict(world=None, n=100, seed=0, out=None),
    "train-ilm": dict(
        world=None,
        data=None,
        prior=None,
        criterion="label_smoothed",
        mode="sampled",
        context_order="1",
        step_size=1.0,
        epochs=20,
        batch_size=16,
        alpha=0.5,
        p_mask=0.4,
        mask_policy="uniform",
        precondition="none",
        snapshot_every=0,
        trace_every=1,
        seed=0,
        select_world=None,
        select_data=None,
        elm=None,
        lambda1=0.5,
        lambda2=0.3,
        lambda3=0.0,
        decode_mode="viterbi_max",
        beam=8,
        out=None,
    ),
    "estimate-prior": dict(world=None, data=None, out=None, unigram_out=None),
    "make-elm": dict(data=None, world=None, order=1, delta=0.1, out=None),
    "decode": dict(
        world=None,
        data=None,
        elm=None,
        ilm=None,
        prior=None,
        lambda1=0.0,
        lambda2=0.0,
        lambda3=0.0,
        decode_mode="viterbi_max",
        beam=8,
        out=None,
    ),
    "eval": dict(ppl=False, ler=False, lm=None, uniform=False, vocab_size=None, data=None, report=None, out=None),
    "tune-scales": dict(
        world=None,
        data=None,
        elm=None,
        ilm=None,
        prior=None,
        lambda1s="0,0.5,1",
        lambda2s="0,0.5,1",
        lambda3s="0",
        decode_mode="viterbi_max",
        beam=8,
        out=None,
    ),
    "verify": dict(only=None, out=None),
    "suite": dict(seed=0, recipe=None, out_dir=None, run=False),
}

# settings that name input files (hashed into the manifest)
INPUT_KEYS = ("world", "data", "prior", "elm", "ilm", "lm", "report", "select_world", "select_data", "recipe")


class CliError(Exception):
    def __init__(self, message: str, code: int = 1, path: str | None = None):
        super().__init__(message)
        self.code = code
        self.path = path


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _beam(value):
    if value is None or str(value).lower() in ("none", "inf", "0"):
        return None
    return int(value)


def _order(value):
    return FULL if str(value) == FULL else int(value)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="ctcilm", description="Internal LM estimation for CTC on enumerable worlds.")
    parser.add_argument("--config", default=None, help=f"JSON config file (default: ${CONFIG_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a random grid-mixture world")
    p.add_argument("--vocab-size", type=int, default=S)
    p.add_argument("--t-min", type=int, default=S)
    p.add_argument("--t-max", type=int, default=S)
    p.add_argument("--n-grids", type=int, default=S)
    p.add_argument("--concentration", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("sample-data", help="sample (grid, transcription, boundaries) pairs")
    p.add_argument("--world", default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("train-ilm", help="train a tabular ILM student")
    p.add_argument("--world", default=S)
    p.add_argument("--data", default=S)
    p.add_argument("--prior", default=S, help="frame prior file (mask policy 'prior')")
    p.add_argument("--criterion", choices=CRITERIA, default=S)
    p.add_argument("--mode", choices=MODES, default=S)
    p.add_argument("--context-order", default=S, help="0, k or 'full'")
    p.add_argument("--step-size", type=float, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--batch-size", type=int, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--p-mask", type=float, default=S)
    p.add_argument("--mask-policy", choices=MASK_POLICIES, default=S)
    p.add_argument("--precondition", choices=("none", "mass"), default=S)
    p.add_argument("--snapshot-every", type=int, default=S)
    p.add_argument("--trace-every", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--select-world", default=S, help="world holding the snapshot-selection grids")
    p.add_argument("--select-data", default=S, help="references for snapshot selection")
    p.add_argument("--elm", default=S, help="external LM used for snapshot selection")
    _scale_args(p)
    p.add_argument("--out", default=S)

    p = sub.add_parser("estimate-prior", help="average frame posteriors over a dataset")
    p.add_argument("--world", default=S)
    p.add_argument("--data", default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--unigram-out", default=S, help="also write the blank-free unigram ILM")

    p = sub.add_parser("make-elm", help="fit a smoothed count LM on transcriptions")
    p.add_argument("--data", default=S)
    p.add_argument("--world", default=S, help="source of the vocabulary")
    p.add_argument("--order", type=int, default=S)
    p.add_argument("--delta", type=float, default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("decode", help="fused prefix beam search")
    p.add_argument("--world", default=S)
    p.add_argument("--data", default=S, help="optional references (grid_id, labels)")
    p.add_argument("--elm", default=S)
    p.add_argument("--ilm", default=S)
    p.add_argument("--prior", default=S)
    _scale_args(p)
    p.add_argument("--out", default=S)

    p = sub.add_parser("eval", help="perplexity or label error rate")
    p.add_argument("--ppl", action="store_true", default=S)
    p.add_argument("--ler", action="store_true", default=S)
    p.add_argument("--lm", default=S)
    p.add_argument("--uniform", action="store_true", default=S)
    p.add_argument("--vocab-size", type=int, default=S)
    p.add_argument("--data", default=S)
    p.add_argument("--report", default=S, help="decode report (JSONL) for --ler")
    p.add_argument("--out", default=S)

    p = sub.add_parser("tune-scales", help="exhaustive fusion-scale grid search")
    p.add_argument("--world", default=S)
    p.add_argument("--data", default=S)
    p.add_argument("--elm", default=S)
    p.add_argument("--ilm", default=S)
    p.add_argument("--prior", default=S)
    p.add_argument("--lambda1s", default=S, help="comma-separated")
    p.add_argument("--lambda2s", default=S)
    p.add_argument("--lambda3s", default=S)
    p.add_argument("--decode-mode", choices=DECODE_MODES, default=S)
    p.add_argument("--beam", default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("verify", help="run the oracle verification suite")
    p.add_argument("--only", default=S, help="comma-separated check names")
    p.add_argument("--out", default=S)

    p = sub.add_parser("suite", help="write the cross-domain suite and optionally run it")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--recipe", default=S)
    p.add_argument("--out-dir", default=S)
    p.add_argument("--run", action="store_true", default=S)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest")
    return parser


def _scale_args(p):
    S = argparse.SUPPRESS
    p.add_argument("--lambda1", type=float, default=S, help="external LM scale")
    p.add_argument("--lambda2", type=float, default=S, help="internal LM scale")
    p.add_argument("--lambda3", type=float, default=S, help="frame prior scale")
    p.add_argument("--decode-mode", choices=DECODE_MODES, default=S)
    p.add_argument("--beam", default=S, help="beam width; 'none' for unbounded")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError("config file not found", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}", path=str(path)) from None
    if not isinstance(obj, dict):
        raise CliError("config must be a JSON object", path=str(path))
    return obj


def resolve(command: str, config: dict, flags: dict) -> dict:
    defaults = DEFAULTS[command]
    settings = dict(defaults)
    for key, value in config.items():
        key = key.replace("-", "_")
        if key in defaults:
            settings[key] = value
    section = config.get(command, {})
    if not isinstance(section, dict):
        raise CliError(f"config section '{command}' must be an object")
    for key, value in section.items():
        key = key.replace("-", "_")
        if key not in defaults:
            raise CliError(f"unknown setting '{key}' for {command}")
        settings[key] = value
    settings.update({k: v for k, v in flags.items() if k in defaults})
    return settings


# ---------------------------------------------------------------------------
# artifact helpers


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(settings: dict, *keys):
    for key in keys:
        if settings.get(key) in (None, ""):
            raise CliError(f"missing required setting '{key}'")


def _read(loader, path):
    try:
        return loader(path)
    except FileNotFoundError:
        raise CliError("file not found", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"corrupt JSON: {exc}", path=str(path)) from None
    except InputDomainError as exc:
        raise CliError(str(exc), path=str(path)) from None


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _prepare(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(command: str, settings: dict, outputs: list, summary=None) -> str:
    inputs = {}
    for key in INPUT_KEYS:
        path = settings.get(key)
        if path:
            inputs[str(path)] = sha256(path)
    manifest = {
        "version": FORMAT_VERSION,
        "command": command,
        "config": settings,
        "inputs": inputs,
        "outputs": {str(p): sha256(p) for p in outputs},
    }
    if summary is not None:
        manifest["summary"] = summary
    target = str(outputs[0]) + MANIFEST_SUFFIX
    _write_json(target, manifest)
    return target


def _table(rows: list[dict], columns: list[str]) -> str:
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return "-" if value is None else str(value)


def _scales(settings: dict) -> FusionScales:
    return FusionScales(
        float(settings["lambda1"]),
        float(settings["lambda2"]),
        float(settings["lambda3"]),
        settings["decode_mode"],
        _beam(settings["beam"]),
    )


def _optional_lm(path, vocab: Vocabulary):
    if not path:
        return None
    model, v = _read(load_lm, path)
    if v != vocab:
        raise CliError("LM vocabulary does not match the world", path=str(path))
    return model


def _optional_prior(path, vocab: Vocabulary):
    if not path:
        return None
    prior, v = _read(load_prior, path)
    if v != vocab:
        raise CliError("frame prior vocabulary does not match the world", path=str(path))
    return prior


def _split(world: World, data_path) -> list:
    """(grid, reference) pairs; without references every grid is decoded with ref None."""
    if not data_path:
        return [(i, g, None) for i, g in enumerate(world.grids)]
    pairs = _read(load_dataset, data_path)
    try:
        validate_pairs(pairs, world)
    except InputDomainError as exc:
        raise CliError(str(exc), path=str(data_path)) from None
    return [(p.grid_id, world.grids[p.grid_id], p.labels) for p in pairs]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_world(s):
    _require(s, "out")
    spec = WorldSpec(int(s["vocab_size"]), int(s["t_min"]), int(s["t_max"]), int(s["n_grids"]), float(s["concentration"]), int(s["seed"]))
    world = build_world(spec)
    save_world(_prepare(s["out"]), world)
    print(f"wrote world with {world.n_grids} grids, |V|={world.vocab.size} to {s['out']}")
    return [s["out"]], None


def cmd_sample_data(s):
    _require(s, "world", "out")
    world = _read(load_world, s["world"])
    pairs = sample_dataset(world, int(s["n"]), int(s["seed"]))
    save_dataset(_prepare(s["out"]), pairs)
    print(f"wrote {len(pairs)} pairs to {s['out']}")
    return [s["out"]], None


def cmd_train_ilm(s):
    _require(s, "world", "out")
    world = _read(load_world, s["world"])
    config = TrainConfig(
        criterion=s["criterion"],
        mode=s["mode"],
        step_size=float(s["step_size"]),
        epochs=int(s["epochs"]),
        batch_size=int(s["batch_size"]),
        seed=int(s["seed"]),
        alpha=float(s["alpha"]),
        p_mask=float(s["p_mask"]),
        mask_policy=s["mask_policy"],
        snapshot_every=int(s["snapshot_every"]),
        trace_every=int(s["trace_every"]),
        precondition=s["precondition"],
    )
    config.validate()
    dataset = None
    if config.mode == "sampled":
        _require(s, "data")
        dataset = _read(load_dataset, s["data"])
    prior = _optional_prior(s["prior"], world.vocab)
    student = CtxLM(world.vocab.size, _order(s["context_order"]))
    result = train(student, dataset, world, config, prior)

    out = Path(s["out"])
    stem = out.with_suffix("")
    outputs = [str(out)]
    snapshot_paths = []
    for step, snap in result.snapshots:
        path = f"{stem}.snap{step:06d}.json"
        save_lm(_prepare(path), snap, world.vocab)
        snapshot_paths.append((step, path, snap))
        outputs.append(path)

    final = result.student
    summary = {"final_loss": result.trace[-1] if result.trace else None, "n_snapshots": len(snapshot_paths)}
    if s["select_data"] and snapshot_paths:
        _require(s, "select_world")
        sel_world = _read(load_world, s["select_world"])
        split = [(g, r) for _, g, r in _split(sel_world, s["select_data"])]
        elm = _optional_lm(s["elm"], sel_world.vocab)
        scales = _scales(s)
        rows = []
        for step, path, snap in snapshot_paths:
            ler, failed, _ = evaluate_scales(split, elm, snap, None, scales)
            rows.append({"step": step, "snapshot": path, "ler": ler, "decode_failed": failed})
        best = min(rows, key=lambda r: (r["ler"], r["step"]))
        final = dict((step, snap) for step, _, snap in snapshot_paths)[best["step"]]
        summary["selection"] = {"rows": rows, "selected_step": best["step"]}
        print(_table(rows, ["step", "ler", "decode_failed", "snapshot"]))
        print(f"selected snapshot at step {best['step']}")

    save_lm(_prepare(out), final, world.vocab)
    trace_path = f"{stem}.trace.json"
    _write_json(trace_path, {"version": FORMAT_VERSION, "config": config.to_dict(), "trace": result.trace})
    outputs.append(trace_path)
    print(f"trained {config.criterion} ({config.mode}); final loss {summary['final_loss']}; wrote {out}")
    return outputs, summary


def cmd_estimate_prior(s):
    _require(s, "world", "data", "out")
    world = _read(load_world, s["world"])
    pairs = _read(load_dataset, s["data"])
    try:
        prior = estimate_frame_prior(pairs, world)
    except InputDomainError as exc:
        raise CliError(str(exc), path=str(s["data"])) from None
    save_prior(_prepare(s["out"]), prior, world.vocab)
    outputs = [s["out"]]
    if s["unigram_out"]:
        save_lm(_prepare(s["unigram_out"]), unigram_from_prior(prior), world.vocab)
        outputs.append(s["unigram_out"])
    labels = list(world.vocab.labels) + ["<blank>"]
    print(_table([dict(zip(labels, map(float, prior.probs)))], labels))
    return outputs, {"probs": prior.probs.tolist()}


def cmd_make_elm(s):
    _require(s, "data", "world", "out")
    world = _read(load_world, s["world"])
    corpus = [p.labels for p in _read(load_dataset, s["data"])]
    elm = make_elm(corpus, world.vocab.size, int(s["order"]), float(s["delta"]))
    save_lm(_prepare(s["out"]), elm, world.vocab)
    ppl = perplexity(elm, corpus)
    print(f"order-{s['order']} ELM on {len(corpus)} sequences; training perplexity {ppl:.4f}")
    return [s["out"]], {"train_perplexity": ppl}


def cmd_decode(s):
    _require(s, "world", "out")
    world = _read(load_world, s["world"])
    elm = _optional_lm(s["elm"], world.vocab)
    ilm = _optional_lm(s["ilm"], world.vocab)
    prior = _optional_prior(s["prior"], world.vocab)
    scales = _scales(s)
    lines, scored = [], []
    for grid_id, grid, ref in _split(world, s["data"]):
        result = decode_fused(grid, elm, ilm, prior, scales)
        lines.append(decode_report_line(grid_id, ref, result, scales))
        if ref is not None:
            scored.append((result.best, ref))
    Path(_prepare(s["out"])).write_text("".join(line + "\n" for line in lines))
    summary = {"n_utterances": len(lines), **scales.to_dict()}
    if scored:
        summary["edits"] = sum(label_error_rate(h, r)[0] for h, r in scored)
        summary["ref_labels"] = sum(len(r) for _, r in scored)
        summary["corpus_ler"] = corpus_ler(scored)
    print(_table([summary], list(summary)))
    return [s["out"]], summary


def cmd_eval(s):
    if not s["ppl"] and not s["ler"]:
        raise CliError("eval needs --ppl or --ler")
    report = {}
    if s["ppl"]:
        _require(s, "data")
        corpus = [p.labels for p in _read(load_dataset, s["data"])]
        if s["uniform"]:
            _require(s, "vocab_size")
            model = uniform_lm(int(s["vocab_size"]))
        else:
            _require(s, "lm")
            model, _ = _read(load_lm, s["lm"])
        report["perplexity"] = perplexity(model, corpus)
        report["n_sequences"] = len(corpus)
    if s["ler"]:
        _require(s, "report")
        try:
            entries = [json.loads(line) for line in Path(s["report"]).read_text().splitlines() if line.strip()]
        except FileNotFoundError:
            raise CliError("file not found", path=str(s["report"])) from None
        except json.JSONDecodeError as exc:
            raise CliError(f"corrupt JSON: {exc}", path=str(s["report"])) from None
        pairs = [(e["hyp"], e["ref"]) for e in entries if e.get("ref") is not None]
        report["corpus_ler"] = corpus_ler(pairs)
        report["n_scored"] = len(pairs)
    print(_table([report], list(report)))
    print(json.dumps(report, sort_keys=True))
    if s["out"]:
        _write_json(s["out"], {"version": FORMAT_VERSION, **report})
        return [s["out"]], report
    return [], report


def cmd_tune_scales(s):
    _require(s, "world", "data", "out")
    world = _read(load_world, s["world"])
    split = [(g, r) for _, g, r in _split(world, s["data"])]
    elm = _optional_lm(s["elm"], world.vocab)
    ilm = _optional_lm(s["ilm"], world.vocab)
    prior = _optional_prior(s["prior"], world.vocab)
    l3s = _floats(s["lambda3s"])
    if prior is None and any(l3 != 0 for l3 in l3s):
        raise CliError("non-zero lambda3 needs --prior")
    result = tune_scales(
        split, elm, ilm, prior, _floats(s["lambda1s"]), _floats(s["lambda2s"]), l3s, s["decode_mode"], _beam(s["beam"])
    )
    _write_json(_prepare(s["out"]), {"version": FORMAT_VERSION, **result.to_dict()})
    print(_table(result.rows, ["lambda1", "lambda2", "lambda3", "ler", "decode_failed"]))
    sel = result.selected
    print(f"selected lambda1={sel['lambda1']} lambda2={sel['lambda2']} lambda3={sel['lambda3']} LER={sel['ler']:.4f}")
    return [s["out"]], {"selected": sel, "n_points": len(result.rows)}


def cmd_verify(s):
    from .verify import ALL_CHECKS, run_all

    names = [n.strip() for n in str(s["only"]).split(",")] if s["only"] else None
    for n in names or []:
        if n not in ALL_CHECKS:
            raise CliError(f"unknown check '{n}'; choose from {sorted(ALL_CHECKS)}")
    results = run_all(names)
    for r in results:
        print(r.line())
    passed = all(r.passed for r in results)
    report = {"passed": passed, "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results]}
    outputs = []
    if s["out"]:
        _write_json(s["out"], {"version": FORMAT_VERSION, **report})
        outputs.append(s["out"])
    if not passed:
        raise CliError("verification failed", code=2)
    return outputs, None


def cmd_suite(s):
    from .suite import cross_domain_suite, elm_mismatch, load_recipe, run_cross_domain

    _require(s, "out_dir")
    recipe = _read(load_recipe, s["recipe"]) if s["recipe"] else load_recipe()
    seed = int(s["seed"])
    suite = cross_domain_suite(seed, recipe)
    d = Path(s["out_dir"])
    d.mkdir(parents=True, exist_ok=True)
    files = {}

    def add(name, path):
        files[name] = str(path)

    save_world(d / "source_world.json", suite.source_world)
    add("source_world", d / "source_world.json")
    save_dataset(d / "source_pairs.jsonl", suite.source_pairs)
    add("source_pairs", d / "source_pairs.jsonl")
    for name, split in (("target_dev", suite.target_dev), ("target_test", suite.target_test)):
        world = World(suite.vocab, [g for g, _ in split], np.full(len(split), 1.0 / len(split)))
        save_world(d / f"{name}_world.json", world)
        save_dataset(d / f"{name}_refs.jsonl", [TrainingPair(i, r) for i, (_, r) in enumerate(split)])
        add(f"{name}_world", d / f"{name}_world.json")
        add(f"{name}_refs", d / f"{name}_refs.jsonl")
    save_lm(d / "source_elm.json", suite.source_elm, suite.vocab)
    save_lm(d / "target_elm.json", suite.target_elm, suite.vocab)
    add("source_elm", d / "source_elm.json")
    add("target_elm", d / "target_elm.json")
    mismatch = elm_mismatch(suite)
    summary = {"seed": seed, "files": files, "elm_mismatch": mismatch}
    outputs = [d / "suite.json"]
    if s["run"]:
        results = run_cross_domain(seed, recipe, suite)
        _write_json(d / "results.json", results)
        outputs.append(d / "results.json")
        rows = [{"system": k, **v} for k, v in results["systems"].items()]
        print(_table(rows, ["system", "dev_ler", "test_ler", "lambda1", "lambda2", "decode_failed"]))
        summary["results"] = results["systems"]
    _write_json(d / "suite.json", {"version": FORMAT_VERSION, "seed": seed, "recipe": recipe, "files": files})
    outputs += [Path(p) for p in files.values()]
    print(f"wrote cross-domain suite for seed {seed} to {d}")
    return outputs, summary


COMMANDS = {
    "gen-world": cmd_gen_world,
    "sample-data": cmd_sample_data,
    "train-ilm": cmd_train_ilm,
    "estimate-prior": cmd_estimate_prior,
    "make-elm": cmd_make_elm,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "tune-scales": cmd_tune_scales,
    "verify": cmd_verify,
    "suite": cmd_suite,
}


def run_command(command: str, settings: dict) -> list:
    outputs, summary = COMMANDS[command](settings)
    if outputs:
        write_manifest(command, settings, outputs, summary)
    return outputs


def replay(manifest_path) -> int:
    manifest = _read(lambda p: json.loads(Path(p).read_text()), manifest_path)
    command = manifest.get("command")
    if command not in COMMANDS:
        raise CliError(f"manifest names unknown command '{command}'", path=str(manifest_path))
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists() or sha256(path) != digest:
            raise CliError("input changed since the manifest was written", path=path)
    expected = manifest.get("outputs", {})
    run_command(command, resolve(command, {}, manifest["config"]))
    changed = [p for p, digest in expected.items() if sha256(p) != digest]
    if changed:
        raise CliError(f"outputs differ from manifest: {changed}", code=2)
    print(f"replayed {command}: {len(expected)} outputs byte-identical")
    return 0


def _error(exc: Exception, code: int, path=None) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if path:
        payload["path"] = path
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        if command == "replay":
            return replay(args["manifest"])
        config = load_config(args.pop("config") or os.environ.get(CONFIG_ENV))
        run_command(command, resolve(command, config, args))
        return 0
    except CliError as exc:
        return _error(exc, exc.code, exc.path)
    except (DecodeError, TrainingDivergedError, EnumerationGuardError, FloatingPointError) as exc:
        return _error(exc, 2)
    except (InputDomainError, ValueError, KeyError, TypeError) as exc:
        return _error(exc, 1)
    except FileNotFoundError as exc:
        return _error(exc, 1, exc.filename)


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "resolve", "run_command", "replay", "CONFIG_ENV"]
