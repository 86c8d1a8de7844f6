"""``choreoforge`` command line.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import audio, dataset, gcrm, metrics, pipeline, synth
from .errors import ConfigError, ContractError, FormatError, NumericError
from .fdgn import FDGNConfig, TrainConfig, train_fdgn
from .motion import CLIP_FRAMES, MotionFragment

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


# -- data ---------------------------------------------------------------------

def cmd_synth_data(args) -> None:
    specs = synth.default_genres(args.genres, seed=args.seed)
    manifest = synth.gen_dataset(specs, args.per_genre, args.seed, args.out, args.duration, args.sample_rate)
    counts = {s: sum(p["split"] == s for p in manifest["pairs"]) for s in ("train", "val", "test")}
    _emit({"manifest": str(Path(args.out) / "manifest.json"), "pairs": len(manifest["pairs"]), "splits": counts})


def cmd_featurize(args) -> None:
    cache = dataset.featurize(args.manifest, args.out)
    _emit({"features": str(cache)})


# -- training -----------------------------------------------------------------

def _corpus(args, split: str = "train"):
    records = dataset.load_corpus(args.manifest, (split,), args.features)
    if not records:
        raise FormatError(f"manifest {args.manifest} has no {split!r} clips")
    return records


def _write_history(path: str, history) -> str:
    out = Path(str(path) + ".history.json")
    out.write_text(json.dumps(history))
    return str(out)


def cmd_train_fdgn(args) -> None:
    records = _corpus(args)
    model_cfg = FDGNConfig(hidden=args.hidden, trunk=args.trunk, diffusion_steps=args.diffusion_steps)
    train_cfg = TrainConfig(steps=args.steps, lr=args.lr, batch=args.batch, seed=args.seed,
                            optimizer=args.optimizer, momentum=args.momentum)
    result = train_fdgn([r.features for r in records], [r.fragment for r in records], train_cfg, model_cfg)
    result.model.save(args.out)
    _emit({"checkpoint": args.out, "history": _write_history(args.out, result.history),
           "probe_initial": result.probe_initial, "probe_final": result.probe_final})


def cmd_train_retrieval(args) -> None:
    records = _corpus(args)
    cfg = gcrm.RetrievalTrainConfig(steps=args.steps, batch=args.batch, lr=args.lr, seed=args.seed)
    result = gcrm.train_retrieval([r.image for r in records], [r.fragment for r in records],
                                  [r.genre for r in records], cfg)
    result.model.save(args.out)
    payload = {"checkpoint": args.out, "history": _write_history(args.out, result.history),
               "final_loss": result.history[-1] if result.history else None}
    held = dataset.load_corpus(args.manifest, (args.eval_split,), args.features)
    if held:
        payload[f"{args.eval_split}_top1"] = gcrm.retrieval_accuracy(
            result.model, [r.image for r in held], [r.fragment for r in held], [r.genre for r in held])
    _emit(payload)


def cmd_train_classifier(args) -> None:
    records = _corpus(args)
    n_genres = len(dataset.read_manifest(args.manifest).get("genres", [])) or None
    cfg = metrics.ClassifierTrainConfig(steps=args.steps, batch=args.batch, lr=args.lr, seed=args.seed)
    result = metrics.train_classifier([r.fragment for r in records], [r.genre for r in records], args.part, cfg,
                                      n_genres=n_genres)
    result.model.save(args.out)
    payload = {"checkpoint": args.out, "history": _write_history(args.out, result.history)}
    held = dataset.load_corpus(args.manifest, (args.eval_split,), args.features)
    if held:
        payload[f"{args.eval_split}_accuracy"] = metrics.accuracy(result.model, [r.fragment for r in held],
                                                                  [r.genre for r in held])
    _emit(payload)


# -- generation ---------------------------------------------------------------

_RUN_KEYS = ("fdgn_checkpoint", "retrieval_checkpoint", "audio", "output", "m", "alpha", "beta", "strategy",
             "seed", "fps", "diffusion_steps", "frames")


def _run_config(args, **fixed) -> pipeline.RunConfig:
    overrides = {k: getattr(args, k, None) for k in _RUN_KEYS}
    overrides.update(fixed)
    cfg = pipeline.load_config(args.config, **overrides)
    if not cfg.audio:
        raise ConfigError("an input track is required (--audio or 'audio' in the config)")
    if not cfg.output:
        raise ConfigError("an output path is required (--out or 'output' in the config)")
    return cfg


def cmd_generate(args) -> None:
    cfg = _run_config(args, strategy="finenet")
    result = pipeline.run_finenet(cfg, audio.load_wav(cfg.audio))
    report = pipeline.save_result(result, cfg.output, args.report)
    _emit({"motion": cfg.output, "report": str(report), "frames": len(result.motion), "idx": result.indices})


def cmd_variations(args) -> None:
    cfg = _run_config(args, strategy="finenet")
    results = pipeline.run_variations(cfg, audio.load_wav(cfg.audio), args.k or cfg.m)
    out_dir = Path(cfg.output)
    paths = []
    for j, r in enumerate(results):
        path = out_dir / f"variation_{j:02d}.motn"
        pipeline.save_result(r, path)
        paths.append(str(path))
    flat = np.stack([r.motion.frames.reshape(-1) for r in results]).astype(np.float64)
    mm = metrics.multimodality([flat]) if len(results) > 1 else 0.0
    _emit({"variations": paths, "raw_multimodality": mm, "idx": [r.indices for r in results]})


def cmd_ablate(args) -> None:
    cfg = _run_config(args)
    if cfg.strategy == "finenet":
        raise ConfigError("ablate needs --strategy fdgn-g or fdgn-c")
    result = pipeline.run_ablation(cfg, audio.load_wav(cfg.audio))
    report = pipeline.save_result(result, cfg.output, args.report)
    payload = {"motion": cfg.output, "report": str(report), "frames": len(result.motion)}
    if len(result.motion) >= 2 * CLIP_FRAMES:
        payload["junction_max_jump"] = pipeline.junction_max_jump(result.motion)
    _emit(payload)


def _clips(motion: MotionFragment) -> list[MotionFragment]:
    n = len(motion) // CLIP_FRAMES
    return [MotionFragment(motion.frames[i * CLIP_FRAMES:(i + 1) * CLIP_FRAMES], motion.fps) for i in range(n)]


def cmd_evaluate(args) -> None:
    cfg = pipeline.load_config(args.config, fdgn_checkpoint=args.fdgn_checkpoint,
                               retrieval_checkpoint=args.retrieval_checkpoint, m=args.m, seed=args.seed,
                               alpha=args.alpha, beta=args.beta)
    k = args.k or cfg.m
    if not 2 <= k <= cfg.m:
        raise ConfigError(f"--k must lie in 2..m={cfg.m}, got {k}")
    models = pipeline.Models.load(cfg)
    full = metrics.GenreClassifier.load(args.classifier)
    hand = metrics.GenreClassifier.load(args.hand_classifier)
    tracks = dataset.load_tracks(args.manifest, args.split)
    if not tracks:
        raise FormatError(f"manifest {args.manifest} has no {args.split!r} tracks")
    reference, generated, images, groups = [], [], [], []
    for _, clip, mot in tracks:
        variations = pipeline.run_variations(cfg, clip, k, models)
        inputs = pipeline.prepare_track(clip)
        dance = _clips(variations[0].motion)
        generated.extend(dance)
        images.extend(c.image for c in inputs[:len(dance)])
        reference.extend(f for _, f in dataset.cut_track(clip, mot))
        groups.append([v.motion for v in variations])
    report = metrics.evaluate(full, hand, models.retrieval, reference, generated, images, groups)
    report["config_sha256"] = cfg.digest()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2))
    _emit(report)


# -- parser -------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser, strategy: bool = False, k: bool = False) -> None:
    p.add_argument("--config", help="INI file with a [run] section; flags override its keys")
    p.add_argument("--fdgn", dest="fdgn_checkpoint", help="diffusion model checkpoint")
    p.add_argument("--retrieval", dest="retrieval_checkpoint", help="retrieval encoder checkpoint")
    p.add_argument("--audio", help="input WAV track")
    p.add_argument("--out", dest="output", help="output MOTN path (directory for variations)")
    p.add_argument("--seed", type=_u64, help="RNG seed (required here or in the config)")
    p.add_argument("--m", type=int, help="candidates per clip (default 8)")
    p.add_argument("--alpha", type=float, help="genre score weight (default 1.0)")
    p.add_argument("--beta", type=float, help="coherent score weight (default 0.5)")
    p.add_argument("--diffusion-steps", type=int, help="must match the checkpoint when given")
    if strategy:
        p.add_argument("--strategy", choices=["fdgn-g", "fdgn-c"], required=True)
        p.add_argument("--frames", type=int, help="fdgn-g output length (default: whole clips)")
    if k:
        p.add_argument("--k", type=int, help="number of variations, at most m (default: m)")
    else:
        p.add_argument("--report", help="JSON report path (default: output with .json suffix)")


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="feature cache directory (default: <manifest dir>/features)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=_u64, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choreoforge", description="Music-to-dance generation at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic genre-labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--genres", type=int, default=4)
    p.add_argument("--per-genre", type=int, default=10)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--sample-rate", type=int, default=audio.FIXTURE_SAMPLE_RATE)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("featurize", help="cache per-clip music features and mel images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="cache directory (default: <manifest dir>/features)")
    p.set_defaults(func=cmd_featurize)

    defaults = TrainConfig()
    model_defaults = FDGNConfig()
    p = sub.add_parser("train-fdgn", help="train the body/hand diffusion experts and refine net")
    _add_corpus_flags(p)
    p.add_argument("--steps", type=int, default=defaults.steps)
    p.add_argument("--lr", type=float, default=defaults.lr)
    p.add_argument("--batch", type=int, default=defaults.batch)
    p.add_argument("--momentum", type=float, default=defaults.momentum)
    p.add_argument("--optimizer", choices=["sgd", "adam"], default=defaults.optimizer)
    p.add_argument("--hidden", type=int, default=model_defaults.hidden)
    p.add_argument("--trunk", choices=["mlp", "attention"], default=model_defaults.trunk)
    p.add_argument("--diffusion-steps", type=int, default=model_defaults.diffusion_steps)
    p.set_defaults(func=cmd_train_fdgn)

    rdefaults = gcrm.RetrievalTrainConfig()
    p = sub.add_parser("train-retrieval", help="train the music and dance genre encoders")
    _add_corpus_flags(p)
    p.add_argument("--steps", type=int, default=rdefaults.steps)
    p.add_argument("--batch", type=int, default=rdefaults.batch)
    p.add_argument("--lr", type=float, default=rdefaults.lr)
    p.add_argument("--eval-split", default="test")
    p.set_defaults(func=cmd_train_retrieval)

    cdefaults = metrics.ClassifierTrainConfig()
    p = sub.add_parser("train-classifier", help="train the genre classifier used for metric features")
    _add_corpus_flags(p)
    p.add_argument("--part", choices=["full", "hand"], default="full")
    p.add_argument("--steps", type=int, default=cdefaults.steps)
    p.add_argument("--batch", type=int, default=cdefaults.batch)
    p.add_argument("--lr", type=float, default=cdefaults.lr)
    p.add_argument("--eval-split", default="test")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("generate", help="choreograph a track")
    _add_run_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("variations", help="several dances for one track, differing in the first choice")
    _add_run_flags(p, k=True)
    p.set_defaults(func=cmd_variations)

    p = sub.add_parser("ablate", help="generate without retrieval (fdgn-g or fdgn-c)")
    _add_run_flags(p, strategy=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("evaluate", help="metric report over a split of the corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--config")
    p.add_argument("--fdgn", dest="fdgn_checkpoint")
    p.add_argument("--retrieval", dest="retrieval_checkpoint")
    p.add_argument("--classifier", required=True)
    p.add_argument("--hand-classifier", required=True)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--k", type=int, help="variations per track, at most m (default: m)")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"choreoforge: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"choreoforge: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ContractError, OSError) as exc:
        print(f"choreoforge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
