"""Command-line entry point: synth-data, curate, train, sample, eval, inspect-mask.

Exit codes: 0 success, 2 missing input, 3 validation failure, 4 numerical failure.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import EstimationFailed, MissingInputError, NumericalError, ValidationError

log = logging.getLogger("multishot")

EXIT_OK, EXIT_MISSING, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4


def _ensure_out_dir(path):
    if os.path.exists(path) and not os.path.isdir(path):
        raise ValidationError(f"output path exists and is not a directory: {path}")
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {path}: {exc.strerror}") from exc
    if not os.access(path, os.W_OK):
        raise ValidationError(f"output directory is not writable: {path}")
    return path


def _require(path, hint):
    if not os.path.exists(path):
        raise MissingInputError(f"{path} not found; {hint}")
    return path


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from exc


# ------------------------------------------------------------------ commands


def cmd_synth_data(cfg, args):
    from .dataset import save_corpus, synth_generate

    n = cfg.synth.n_videos if args.n is None else args.n
    if n < 0:
        raise ValidationError("--n must be >= 0")
    out = _ensure_out_dir(args.out)
    videos = synth_generate(n, cfg.seed, cfg.synth.params)
    save_corpus(videos, out, materialize=args.materialize)
    _stamp(out, cfg)
    log.info("wrote %d source videos to %s", len(videos), out)


def cmd_curate(cfg, args):
    from dataclasses import replace

    from .dataset import curate, load_corpus, write_manifest

    _require(os.path.join(args.corpus, "index.json"), "run `multishot synth-data` first")
    videos = load_corpus(args.corpus)
    cc = cfg.curate
    if args.method:
        cc = replace(cc, method=args.method)
    if args.shots:
        cc = replace(cc, shot_counts=tuple(_int_list(args.shots)))
    if args.n_samples is not None:
        cc = replace(cc, n_samples=args.n_samples)
    out = _ensure_out_dir(args.out)
    result = curate(videos, cfg.seed, cc, cfg.codec)
    write_manifest(out, result, videos, size=cfg.frame_size, config_hash=cfg.hash())
    _stamp(out, cfg)
    log.info("kept %d of %d samples -> %s", len(result.kept), cc.n_samples, out)


def load_examples(manifest_dir, codec, text_tokens):
    from .codec import read_video
    from .dataset import read_manifest
    from .diffusion import TrainExample, clip_to_tokens
    from .masks import MultiShotSpec, build_layout

    man = read_manifest(manifest_dir)
    examples = []
    for rec in man.records:
        path = _require(man.video_path(rec), "re-run `multishot curate`")
        clip = read_video(path)
        _, _, h, w = clip.shape
        spec = MultiShotSpec(rec["captions"], rec["durations"], h, w)
        layout = build_layout(spec, codec, text_tokens)
        tokens, _ = clip_to_tokens(clip, codec)
        examples.append(TrainExample(tokens.astype(np.float32), rec["captions"], layout))
    return examples


def cmd_train(cfg, args):
    from .diffusion import NoiseSchedule, TrainState, train
    from .model import MultiShotDiT, load_checkpoint, save_checkpoint

    _require(os.path.join(args.manifest, "manifest.jsonl"), "run `multishot curate` first")
    out = _ensure_out_dir(args.out)
    examples = load_examples(args.manifest, cfg.codec, cfg.model.text_tokens_per_shot)
    if not examples:
        raise ValidationError(f"manifest {args.manifest} has no samples")
    if args.resume:
        model, header, extras = load_checkpoint(_require(args.resume, "check the --resume path"))
        state = TrainState(model, step=header["step"], seed=cfg.seed)
        for name in list(state.m):
            state.m[name] = extras.get(f"adam.m.{name}", state.m[name])
            state.v[name] = extras.get(f"adam.v.{name}", state.v[name])
    else:
        state = TrainState(MultiShotDiT(cfg.model, cfg.codec, seed=cfg.seed), seed=cfg.seed)
    recipe = cfg.train
    steps = recipe.total_steps - state.step if args.steps is None else args.steps
    sched = NoiseSchedule.cosine()

    def checkpoint(st, name=None):
        extras = {f"adam.m.{k}": v for k, v in st.m.items()}
        extras.update({f"adam.v.{k}": v for k, v in st.v.items()})
        save_checkpoint(os.path.join(out, name or f"step_{st.step:06d}.ckpt"), st.model, st.step,
                        {"kind": "cosine", "T": sched.T}, extras,
                        {"config_hash": cfg.hash(), "recipe": recipe.to_dict()})

    def progress(s):
        if s["step"] % max(1, args.log_every) == 0:
            log.info("step %d loss %.5f lr %.2e", s["step"], s["loss"], s["lr"])

    train(state, recipe, examples, sched, steps, os.path.join(out, "train_log.csv"),
          checkpoint, args.checkpoint_every, progress)
    checkpoint(state, "model.ckpt")
    _stamp(out, cfg)
    log.info("trained to step %d -> %s", state.step, os.path.join(out, "model.ckpt"))


def read_prompts(path, shots=None, durations=None):
    """Requests from a prompt file.

    Accepts a list of strings (one video) or ``{"videos": [{"id", "bg",
    "prompts": [...], "durations": [...]}, ...]}``; ``--durations`` fills
    videos that do not give their own.
    """
    with open(_require(path, "pass an existing --prompts file")) as fh:
        data = json.load(fh)
    if isinstance(data, list):
        data = {"videos": [{"id": "video_000", "prompts": data}]}
    videos = []
    for k, v in enumerate(data.get("videos", [])):
        prompts = list(v.get("prompts", []))
        n = v.get("n_shots", len(prompts))
        durs = v.get("durations") or durations
        if durs is None:
            raise ValidationError(f"video {k}: no durations given (use --durations)")
        if shots is not None and n != shots:
            raise ValidationError(f"video {k}: {n} prompts but --shots {shots}")
        if len(prompts) != n or len(durs) != n:
            raise ValidationError(f"video {k}: need {n} prompts and durations, got "
                                  f"{len(prompts)} and {len(durs)}")
        videos.append({"id": v.get("id", f"video_{k:03d}"), "bg": v.get("bg", v.get("bg_condition")),
                       "prompts": prompts, "durations": [int(d) for d in durs]})
    return videos


def snap_request(durations, codec):
    """Requested shot lengths -> lengths whose boundaries and total sit on token-frames."""
    q = codec.frames_per_token_frame
    total = max(q, int(q * np.floor(sum(durations) / q + 0.5)))
    cuts = np.cumsum(durations)[:-1]
    edges = [0, *[int(q * np.floor(c / q + 0.5)) for c in cuts], total]
    snapped = np.diff(edges).tolist()
    if any(d <= 0 for d in snapped):
        raise ValidationError(f"durations {list(durations)} collapse a shot after snapping to {q}")
    return snapped


def cmd_sample(cfg, args):
    from .codec import write_video
    from .diffusion import NoiseSchedule, sample
    from .masks import MultiShotSpec, build_layout
    from .model import load_checkpoint

    model, header, _ = load_checkpoint(_require(args.checkpoint, "run `multishot train` first"))
    durations = _int_list(args.durations) if args.durations else None
    requests = read_prompts(args.prompts, args.shots, durations)
    out = _ensure_out_dir(args.out)
    sched = NoiseSchedule.cosine()
    steps = args.steps or cfg.eval.sampling_steps
    size = args.size or cfg.frame_size
    lines = []
    for k, req in enumerate(requests):
        snapped = snap_request(req["durations"], model.codec)
        if snapped != req["durations"]:
            log.info("%s: durations %s snapped to %s", req["id"], req["durations"], snapped)
        spec = MultiShotSpec(req["prompts"], snapped, size, size)
        layout = build_layout(spec, model.codec, model.cfg.text_tokens_per_shot)
        clip = sample(spec, model, sched, seed=cfg.seed + k, steps=steps)
        rel = f"{req['id']}.msvv"
        write_video(os.path.join(out, rel), clip)
        bounds = [int(b) for b in layout.frame_boundaries]
        sidecar = {"id": req["id"], "captions": req["prompts"], "requested_durations": req["durations"],
                   "boundaries": bounds, "durations": snapped, "n_shots": spec.n_shots, "bg": req["bg"],
                   "seed": cfg.seed + k, "steps": steps, "checkpoint_step": header["step"],
                   "config_hash": cfg.hash(), "video_path": rel}
        with open(os.path.join(out, f"{req['id']}.json"), "w") as fh:
            json.dump(sidecar, fh, indent=2)
        lines.append(sidecar)
    with open(os.path.join(out, "manifest.jsonl"), "w") as fh:
        for rec in lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _stamp(out, cfg)
    log.info("sampled %d videos -> %s", len(lines), out)


def cmd_eval(cfg, args):
    from .codec import read_video
    from .dataset import read_manifest
    from .evaluation import (ToyAligner, ToyDetector, aggregate_report, background_consistency,
                             identity_consistency, make_embedder, msde, text_alignment, write_report)

    _require(os.path.join(args.manifest, "manifest.jsonl"), "run `multishot sample` or `curate` first")
    metrics = [m.strip() for m in (args.metrics or ",".join(cfg.eval.metrics)).split(",") if m.strip()]
    bad = set(metrics) - {"ic", "bc", "ta", "msde"}
    if bad:
        raise ValidationError(f"unknown metrics {sorted(bad)}")
    backend = args.backend or cfg.eval.backend
    embedder = make_embedder(backend, args.embed_command or cfg.eval.embed_command)
    detector = ToyDetector()
    aligner = ToyAligner(detector)
    man = read_manifest(args.manifest)
    out = _ensure_out_dir(args.out)
    samples, results = [], []
    for rec in man.records:
        clip = read_video(_require(man.video_path(rec), "the manifest points at a missing video"))
        durs = rec["durations"]
        r = {}
        if "msde" in metrics:
            r["msde"] = msde(durs, clip, cfg.eval.cut_threshold, window=cfg.eval.cut_window)
        if "ic" in metrics:
            r["ic"] = identity_consistency(clip, durs, detector, embedder) if len(durs) > 1 else None
        if "bc" in metrics:
            r["bc"] = background_consistency(clip, durs, detector, embedder) if len(durs) > 1 else None
        if "ta" in metrics:
            try:
                r["ta"] = text_alignment(clip, durs, rec["captions"], aligner)
            except ValidationError as exc:
                log.warning("%s: text alignment omitted (%s)", rec.get("id"), exc)
                r["ta"] = None
        samples.append({"id": rec.get("id"), "n_shots": len(durs), "bg": rec.get("bg") or "diff"})
        results.append(r)
    report = aggregate_report(samples, results, metrics)
    write_report(report, out, cfg.hash())
    _stamp(out, cfg)
    log.info("evaluated %d samples -> %s", len(samples), out)


def cmd_inspect_mask(cfg, args):
    from .masks import MultiShotSpec, build_layout, build_mask, mask_stats, write_layout_json, write_pgm

    durations = _int_list(args.durations) if args.durations else [16] * (args.shots or 2)
    if args.shots is not None and len(durations) != args.shots:
        raise ValidationError(f"--shots {args.shots} but {len(durations)} durations")
    size = args.size or cfg.frame_size
    spec = MultiShotSpec([f"shot {i}" for i in range(len(durations))], durations, size, size)
    layout = build_layout(spec, cfg.codec, cfg.model.text_tokens_per_shot, args.target)
    mask = build_mask(layout)
    out = _ensure_out_dir(args.out)
    write_pgm(os.path.join(out, "mask.pgm"), mask)
    write_layout_json(os.path.join(out, "layout.json"), layout)
    stats = mask_stats(mask, layout)
    stats["config_hash"] = cfg.hash()
    with open(os.path.join(out, "stats.json"), "w") as fh:
        json.dump(stats, fh, indent=2)
    _stamp(out, cfg)
    log.info("mask %dx%d, %d true -> %s", mask.size, mask.size, stats["total_true"], out)


def _stamp(out, cfg):
    cfg.save(os.path.join(out, "config.json"))


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="multishot", description="Multi-shot video diffusion toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field by dotted path (repeatable)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", parents=[common], help="generate the synthetic source corpus")
    s.add_argument("--n", type=int, help="number of source videos")
    s.add_argument("--materialize", action="store_true", help="also write every video as MSVV")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("curate", parents=[common], help="build multi-shot samples from a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--method", choices=["1", "2", "both"])
    s.add_argument("--shots", help="comma-separated shot counts, e.g. 2,3,4")
    s.add_argument("--n-samples", type=int)
    s.set_defaults(func=cmd_curate)

    s = sub.add_parser("train", parents=[common], help="train the denoiser on a curated manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--resume")
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--log-every", type=int, default=100)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common], help="generate multi-shot videos")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--prompts", required=True)
    s.add_argument("--shots", type=int)
    s.add_argument("--durations", help="comma-separated frame counts per shot")
    s.add_argument("--steps", type=int)
    s.add_argument("--size", type=int, help="frame height and width")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", parents=[common], help="score videos listed in a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--metrics", help="comma-separated subset of ic,bc,ta,msde")
    s.add_argument("--backend", choices=["toy", "external-cmd"])
    s.add_argument("--embed-command", help="command for the external-cmd backend")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect-mask", parents=[common], help="dump a layout and its attention mask")
    s.add_argument("--shots", type=int)
    s.add_argument("--durations")
    s.add_argument("--size", type=int)
    s.add_argument("--target", choices=["next_first", "prev_last"], default="next_first")
    s.set_defaults(func=cmd_inspect_mask)
    return p


def main(argv=None):
    from .config import load_config

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        overrides.append(f"out={json.dumps(args.out)}")
        cfg = load_config(args.config, overrides) if not args.config or os.path.exists(args.config) \
            else _missing_config(args.config)
        args.func(cfg, args)
    except MissingInputError as exc:
        log.error("missing input: %s", exc)
        return EXIT_MISSING
    except (NumericalError, EstimationFailed) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValidationError, json.JSONDecodeError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_VALIDATION
    return EXIT_OK


def _missing_config(path):
    raise MissingInputError(f"config file {path} not found; pass an existing --config")


if __name__ == "__main__":
    sys.exit(main())
