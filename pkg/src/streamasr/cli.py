"""Command-line entry point.

Subcommands:
  synth      record a deterministic synthetic trace (and optionally a TDM
             training dataset) from a scripted model config
  run        run one streaming session over a trace (replay) or a scripted
             config (live) and write a session report
  train-tdm  fit truncation-detector weights on a dataset trace
  compare    sweep (policy x chunk length) cells and emit a CSV table
  inspect    validate a trace file and print its metadata

Flag names mirror the policy symbols (--l-threshold, --fire-threshold,
--median-window). The STREAMASR_REPORT_DIR environment variable only sets
the default directory for report outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import corpus
from .alignment import DEFAULT_L_THRESHOLD_FRAMES, DEFAULT_MEDIAN_WINDOW, StopPolicyConfig
from .errors import ConfigError, StreamASRError, exit_code_for
from .metrics import session_metrics
from .model import ScriptedModel, ScriptedModelConfig, TraceReplayModel, load_scripted_config
from .streaming import (
    POLICY_ATTENTION,
    POLICY_LOCAL_AGREEMENT,
    POLICY_PASS_THROUGH,
    SessionConfig,
    run_session,
)
from .tracefile import MAGIC, load_trace, save_trace
from .truncation import (
    DEFAULT_FIRE_THRESHOLD,
    TdmTrainConfig,
    load_tdm_weights,
    save_tdm_weights,
    train_tdm,
)

_POLICY_NAMES = {
    "attention": POLICY_ATTENTION,
    "local-agreement": POLICY_LOCAL_AGREEMENT,
    "pass-through": POLICY_PASS_THROUGH,
}
_POLICY_FLAGS = {v: k for k, v in _POLICY_NAMES.items()}


def _report_dir() -> Path:
    return Path(os.environ.get("STREAMASR_REPORT_DIR", "."))


def _is_trace_file(path: Path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == MAGIC
    except OSError:
        return False


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=sorted(_POLICY_NAMES), default=None,
                   help="decoding policy (default: attention, or the trace's recorded policy)")
    p.add_argument("--chunk-len", type=float, default=None, metavar="SECONDS",
                   help="chunk length in seconds (default 1.0)")
    p.add_argument("--l-threshold", type=int, default=None, metavar="FRAMES",
                   help=f"stop when the attention peak is this close to the content end (default {DEFAULT_L_THRESHOLD_FRAMES})")
    p.add_argument("--median-window", type=int, default=None,
                   help=f"median filter width over summed alignment heads (default {DEFAULT_MEDIAN_WINDOW})")
    p.add_argument("--fire-threshold", type=float, default=None,
                   help=f"integrate-and-fire threshold (default {DEFAULT_FIRE_THRESHOLD})")
    p.add_argument("--tdm-weights", type=Path, default=None,
                   help="truncation-detector weights file; enables truncation handling")
    p.add_argument("--no-tdm", action="store_true",
                   help="disable truncation detection (ablation)")
    p.add_argument("--max-context", type=float, default=None, metavar="SECONDS",
                   help="retained audio context budget (default 10.0)")
    p.add_argument("--n", dest="agreement_n", type=int, default=None,
                   help="local agreement: number of consecutive hypotheses (default 2)")
    p.add_argument("--max-tokens", type=int, default=None,
                   help="cap on decoded tokens per chunk (default 256)")
    p.add_argument("--timing", choices=("synthetic", "wallclock"), default=None,
                   help="computation-aware timing source (default synthetic)")


def _session_config(args, defaults: dict | None = None) -> SessionConfig:
    d = dict(defaults or {})

    def pick(flag_value, key, fallback):
        if flag_value is not None:
            return flag_value
        return d.get(key, fallback)

    policy = _POLICY_NAMES[args.policy] if args.policy else d.get("policy", POLICY_ATTENTION)
    chunk_ms = int(round(args.chunk_len * 1000)) if args.chunk_len else d.get("chunk_len_ms", 1000)
    stop = StopPolicyConfig(
        l_threshold_frames=pick(args.l_threshold, "l_threshold_frames", DEFAULT_L_THRESHOLD_FRAMES),
        median_window=pick(args.median_window, "median_window", DEFAULT_MEDIAN_WINDOW),
        max_tokens_per_chunk=pick(args.max_tokens, "max_tokens_per_chunk", 256),
    )
    weights = load_tdm_weights(args.tdm_weights) if args.tdm_weights else None
    if weights is None and isinstance(d.get("tdm_weights"), dict):
        from .truncation import TdmWeights

        weights = TdmWeights(w=d["tdm_weights"]["w"], b=d["tdm_weights"]["b"])
    if args.no_tdm:
        use_tdm = False
    elif args.tdm_weights is not None:
        use_tdm = True
    else:
        use_tdm = bool(d.get("use_tdm", False)) and weights is not None
    if policy == POLICY_ATTENTION and use_tdm and weights is None:
        raise ConfigError("truncation detection needs --tdm-weights (or pass --no-tdm)")
    return SessionConfig(
        policy=policy,
        chunk_len_ms=chunk_ms,
        stop=stop,
        use_tdm=use_tdm if policy == POLICY_ATTENTION else False,
        fire_threshold=pick(args.fire_threshold, "fire_threshold", DEFAULT_FIRE_THRESHOLD),
        tdm_weights=weights,
        max_context_ms=(
            int(round(args.max_context * 1000)) if args.max_context else d.get("max_context_ms", 10_000)
        ),
        agreement_n=pick(args.agreement_n, "agreement_n", 2),
        timing=pick(args.timing, "timing", "synthetic"),
    )


def _scripted_config_from_args(args) -> ScriptedModelConfig:
    if getattr(args, "config", None):
        config = load_scripted_config(args.config)
        if getattr(args, "seed", None) is not None:
            config.rng_seed = args.seed
    elif getattr(args, "random_words", None):
        config = corpus.random_scripted_config(
            args.seed if args.seed is not None else 0, n_words=args.random_words
        )
    else:
        raise ConfigError("give either --config or --random-words")
    if getattr(args, "encode_time", None) is not None:
        config.encode_time_s = args.encode_time
    if getattr(args, "step_time", None) is not None:
        config.step_time_s = args.step_time
    return config


def cmd_synth(args) -> int:
    config = _scripted_config_from_args(args)
    model = ScriptedModel(config)
    session_cfg = _session_config(args)
    result = run_session(model, session_cfg, record_trace=True)
    save_trace(result.trace, args.out)
    print(f"wrote trace: {args.out} ({len(result.trace.chunks)} chunk records, "
          f"{len(result.committed)} committed tokens)")
    if args.tdm_dataset:
        ds_trace = corpus.build_tdm_dataset_trace(
            config.rng_seed,
            args.dataset_utterances,
            d_model=config.d_model,
            head_count=config.head_count,
            boundary_amp=config.boundary_amp,
            feature_noise=config.feature_noise,
            frame_duration_ms=config.frame_duration_ms,
        )
        save_trace(ds_trace, args.tdm_dataset)
        print(f"wrote TDM dataset: {args.tdm_dataset} ({args.dataset_utterances} utterances)")
    return 0


def cmd_run(args) -> int:
    path = Path(args.input)
    if _is_trace_file(path):
        trace = load_trace(path)
        model = TraceReplayModel(trace)
        session_cfg = _session_config(args, defaults=model.recorded_config())
    else:
        config = load_scripted_config(path)
        if args.seed is not None:
            config.rng_seed = args.seed
        model = ScriptedModel(config)
        session_cfg = _session_config(args)
    result = run_session(model, session_cfg)
    report = result.to_report_dict()
    report["metrics"] = session_metrics(result)
    out = args.out if args.out else _report_dir() / f"{path.stem}.report.json"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"transcript: {result.transcript}")
    for key in ("wer", "dal_unaware_s", "dal_aware_s"):
        if key in report["metrics"]:
            print(f"{key}: {report['metrics'][key]:.4f}")
    print(f"wrote report: {out}")
    return 0


def cmd_train_tdm(args) -> int:
    trace = load_trace(args.dataset)
    dataset = corpus.dataset_from_trace(trace)
    train_cfg = TdmTrainConfig(
        epochs=args.epochs,
        warmup_epochs=args.warmup_epochs,
        peak_learning_rate=args.peak_lr,
        batch_frames=args.batch_frames,
        adam_betas=(args.adam_beta1, args.adam_beta2),
        adam_eps=args.adam_eps,
        rng_seed=args.seed if args.seed is not None else 0,
    )
    result = train_tdm(dataset, train_cfg)
    save_tdm_weights(result.weights, args.out)
    for i, loss in enumerate(result.epoch_losses, 1):
        print(f"epoch {i}: rmse {loss:.6f}")
    if args.loss_log:
        with open(args.loss_log, "w", encoding="utf-8") as fh:
            json.dump({"epoch_rmse": result.epoch_losses}, fh, indent=2)
            fh.write("\n")
    print(f"wrote weights: {args.out}")
    return 0


def cmd_compare(args) -> int:
    config = _scripted_config_from_args(args)
    chunk_lens = [float(c) for c in args.chunk_lens.split(",")]
    policies = [p.strip() for p in args.policies.split(",")]
    for p in policies:
        if p not in _POLICY_NAMES:
            raise ConfigError(f"unknown policy {p!r}, expected one of {sorted(_POLICY_NAMES)}")
    rows = []
    for policy in policies:
        for chunk_s in chunk_lens:
            args.policy = policy
            args.chunk_len = chunk_s
            session_cfg = _session_config(args)
            model = ScriptedModel(config)
            result = run_session(model, session_cfg)
            m = session_metrics(result)
            rows.append(
                {
                    "policy": policy,
                    "chunk_len_s": f"{chunk_s:g}",
                    "wer": f"{m.get('wer', float('nan')):.6f}",
                    "dal_unaware_s": f"{m.get('dal_unaware_s', float('nan')):.6f}",
                    "dal_aware_s": f"{m.get('dal_aware_s', float('nan')):.6f}",
                }
            )
    fieldnames = ["policy", "chunk_len_s", "wer", "dal_unaware_s", "dal_aware_s"]
    out = Path(args.out)
    exists = out.exists() and out.stat().st_size > 0
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        if not exists:
            writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print("  ".join(f"{k}={row[k]}" for k in fieldnames))
    print(f"wrote table: {out}")
    return 0


def cmd_inspect(args) -> int:
    trace = load_trace(args.trace)
    summary = {
        "model": trace.meta.model_name,
        "d_model": trace.meta.d_model,
        "frame_duration_ms": trace.meta.frame_duration_ms,
        "alignment_heads": [list(h) for h in trace.meta.alignment_head_ids],
        "vocabulary_size": len(trace.meta.vocabulary),
        "eos_id": trace.meta.eos_id,
        "reference": trace.meta.reference_text,
        "recorded_config": trace.meta.extra,
        "chunks": [
            {
                "chunk_ms": [r.chunk.start_ms, r.chunk.end_ms],
                "window_start_ms": r.window_start_ms,
                "content_frames": r.features.content_len,
                "n_frames": r.features.n_frames,
                "steps": len(r.steps),
                "is_flush": r.is_flush,
            }
            for r in trace.chunks
        ],
    }
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamasr",
        description="Chunked streaming decoding for encoder-decoder ASR over synthetic or recorded traces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="record a synthetic trace from a scripted model")
    p.add_argument("--config", type=Path, help="scripted model config (YAML)")
    p.add_argument("--random-words", type=int, metavar="N", help="generate a random N-word script instead")
    p.add_argument("--seed", type=int, default=None, help="seed for the random script / model noise")
    p.add_argument("--out", type=Path, required=True, help="output trace file")
    p.add_argument("--encode-time", type=float, default=None,
                   help="synthetic per-window encode cost in seconds (recorded in the trace)")
    p.add_argument("--step-time", type=float, default=None,
                   help="synthetic per-decode-step cost in seconds (recorded in the trace)")
    p.add_argument("--tdm-dataset", type=Path, default=None,
                   help="also write a TDM training dataset trace here")
    p.add_argument("--dataset-utterances", type=int, default=200)
    _add_policy_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run one session over a trace (replay) or scripted config (live)")
    p.add_argument("input", help="trace file or scripted config YAML")
    p.add_argument("--out", type=Path, default=None, help="session report path (JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the scripted config's rng seed")
    _add_policy_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train-tdm", help="train truncation-detector weights on a dataset trace")
    p.add_argument("dataset", help="dataset trace file")
    p.add_argument("--out", type=Path, required=True, help="output weights file")
    p.add_argument("--loss-log", type=Path, default=None, help="write per-epoch RMSE as JSON")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--warmup-epochs", type=int, default=3)
    p.add_argument("--peak-lr", type=float, default=1e-6)
    p.add_argument("--batch-frames", type=int, default=4500)
    p.add_argument("--adam-beta1", type=float, default=0.9)
    p.add_argument("--adam-beta2", type=float, default=0.999)
    p.add_argument("--adam-eps", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_tdm)

    p = sub.add_parser("compare", help="sweep (policy x chunk length) and emit a CSV table")
    p.add_argument("--config", type=Path, help="scripted model config (YAML)")
    p.add_argument("--random-words", type=int, metavar="N")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--chunk-lens", default="0.5,0.75,1.0", help="comma-separated seconds")
    p.add_argument("--policies", default="attention,local-agreement")
    p.add_argument("--out", type=Path, required=True, help="output CSV (appended if it exists)")
    p.add_argument("--encode-time", type=float, default=None)
    p.add_argument("--step-time", type=float, default=None)
    _add_policy_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="validate a trace file and print its metadata")
    p.add_argument("trace")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except StreamASRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return code


if __name__ == "__main__":
    sys.exit(main())
