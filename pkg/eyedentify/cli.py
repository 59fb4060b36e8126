"""
Command-line entry point.

Every command takes an optional JSON run config (`--config`); flags override
the file and the merged configuration is written as effective_config.json
next to the command's outputs.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
import argparse
import glob
import json
import logging
import os
import sys
import traceback
from typing import Dict, List, Optional, Sequence

from decouple import config
from pydantic import ValidationError

from eyedentify.errors import ConfigError, EvaluationError
from eyedentify.evaluation.identification import (
    EnrollmentTemplate,
    first_acceptance_time,
    identification_scores,
    load_template,
    match_embeddings,
    observe,
    resample_protocol,
    run_identification,
    run_verification,
    save_template,
)
from eyedentify.evaluation.metrics import auc, eer, roc, threshold_at_fpr
from eyedentify.evaluation.results import (
    trace_rows,
    write_duration_accuracy,
    write_embeddings,
    write_protocol_report,
    write_roc,
    write_traces,
)
from eyedentify.inference import DeepEyedentification, group_by_subject, recordings_of
from eyedentify.models.autograd.gradcheck import OPS, gradcheck_suite
from eyedentify.models.model_manager import STAGES
from eyedentify.oculosim.dataset import load_dataset, make_dataset
from eyedentify.pydantic_models.models import RunConfig
from eyedentify.utils.get_resource import get_resource
from eyedentify.utils.save_results import load_json, save_json, save_table
from eyedentify.utils.seeding import default_seed, substream
from eyedentify.utils.timer import Timer

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG = "effective_config.json"
TRAINING_LOG = "training_log.json"
# wall-clock durations, kept apart from the reproducible outputs
TIMINGS = "timings.json"
# rng substream of the training-identity draw
_SPLIT_KEY = 31

# flag -> dotted RunConfig path
_OVERRIDES = {
    "profile": ("profile",),
    "seed": ("seed", "sim.seed"),
    "identities": ("sim.identity_count",),
    "sessions": ("sim.sessions_per_identity",),
    "seconds": ("sim.duration_s",),
    "rate": ("sim.rate", "data.rate"),
    "binocular_sim": ("sim.binocular",),
    "separation": ("population.separation",),
    "max_epochs": ("schedule.max_epochs",),
    "batch_size": ("schedule.batch_size",),
    "patience": ("schedule.patience",),
    "validation_fraction": ("schedule.validation_fraction",),
    "target_train_accuracy": ("schedule.target_train_accuracy",),
    "train_sessions": ("data.train_sessions",),
    "test_sessions": ("data.test_sessions",),
    "durations": ("protocol.durations",),
    "eval_stride": ("windows.eval_stride",),
    "enroll_stride": ("windows.enroll_stride",),
    "iterations": ("protocol.iterations",),
    "target_fpr": ("protocol.target_fpr",),
}


def _set_path(raw: dict, dotted: str, value):
    *parents, leaf = dotted.split(".")
    node = raw
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config entry '{key}' must be an object")
    node[leaf] = value


def load_run_config(args: argparse.Namespace) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = load_json(get_resource(args.config))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {args.config} is not valid JSON: {e}")
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
    for flag, paths in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            for path in paths:
                _set_path(raw, path, value)
    if "seed" not in raw:
        raw["seed"] = default_seed()
        raw.setdefault("sim", {}).setdefault("seed", raw["seed"])
    return RunConfig.model_validate(raw, context={"unsafe_hparams": args.unsafe_hparams})


def write_effective_config(cfg: RunConfig, out_dir: str):
    save_json(os.path.join(out_dir, EFFECTIVE_CONFIG), cfg.model_dump(mode="json"))


def _out_dir_of(path: str) -> str:
    return os.path.dirname(os.path.abspath(path))


def _sessions(flag: Optional[List[str]], fallback: Optional[List[str]]) -> Optional[List[str]]:
    return flag if flag is not None else fallback


def cmd_synth(args) -> int:
    cfg = load_run_config(args)
    make_dataset(cfg.sim, cfg.population, args.out)
    write_effective_config(cfg, args.out)
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    timer = Timer()
    entries = load_dataset(get_resource(args.data), cfg.data.rate, cfg.data.max_gap_ms)
    if args.protocol_split:
        split = resample_protocol(sorted({e.subject_id for e in entries}), cfg.protocol, substream(cfg.seed, _SPLIT_KEY))
        cfg.data.train_subjects = split.train
        logger.info(f"Training identities: {split.train}")
    out_dir = _out_dir_of(args.out)
    write_effective_config(cfg, out_dir)
    stages = STAGES if args.stage == "all" else (args.stage,)
    model = DeepEyedentification.train(
        cfg,
        entries,
        stages=stages,
        init_checkpoint=args.init_checkpoint,
        progress=not args.no_progress,
        log_path=os.path.join(out_dir, TRAINING_LOG),
    )
    model.save(args.out)
    timer("Train command")
    save_json(os.path.join(out_dir, TIMINGS), {**model.timings, **timer.get_times()})
    return 0


def _load_model(args) -> DeepEyedentification:
    return DeepEyedentification(checkpoint=args.checkpoint)


def _test_recordings(args, cfg: RunConfig):
    entries = load_dataset(get_resource(args.data), cfg.data.rate, cfg.data.max_gap_ms)
    return entries, recordings_of(entries, _sessions(args.test_sessions, cfg.data.test_sessions))


def cmd_eval_classify(args) -> int:
    cfg = load_run_config(args)
    model = _load_model(args)
    _, recordings = _test_recordings(args, cfg)
    if not recordings:
        raise EvaluationError("no test recordings (check the test sessions)")
    if args.binocular and not {"left", "right"} <= {rec.eye for rec in recordings}:
        raise EvaluationError("--binocular needs left and right eye recordings, the data is monocular")
    known = set(model.bundle.class_labels)
    recordings = [rec for rec in recordings if rec.subject_id in known]
    if not recordings:
        raise EvaluationError("none of the test recordings carries a training identity label")

    durations = list(cfg.protocol.durations)
    if args.durations is None:
        longest = max(len(rec.t) for rec in recordings) / cfg.data.rate
        durations = [d for d in durations if d <= longest] or [min(durations)]
    results = model.accuracy_vs_duration(
        recordings, durations, cfg.windows.eval_stride, branch=args.branch, binocular=args.binocular
    )
    write_duration_accuracy(args.out, results)
    write_effective_config(cfg, _out_dir_of(args.out))
    return 0


def cmd_enroll(args) -> int:
    cfg = load_run_config(args)
    model = _load_model(args)
    entries = load_dataset(get_resource(args.data), cfg.data.rate, cfg.data.max_gap_ms)
    sessions = [args.session] if args.session else None
    by_user: Dict[str, list] = {}
    for rec in recordings_of(entries, sessions, args.users):
        by_user.setdefault(rec.subject_id, []).append(rec)
    if not by_user:
        raise EvaluationError("no enrollment recordings matched the requested users and session")
    os.makedirs(args.out, exist_ok=True)
    for user_id, recordings in sorted(by_user.items()):
        template = model.enroll(recordings, cfg.windows.enroll_stride, user_id=user_id)
        save_template(os.path.join(args.out, f"{user_id}.npz"), template)
    logger.info(f"Wrote {len(by_user)} template(s) to {args.out}")
    write_effective_config(cfg, args.out)
    return 0


def _load_templates(directory: str, digest: Optional[str]) -> List[EnrollmentTemplate]:
    paths = sorted(glob.glob(os.path.join(get_resource(directory), "*.npz")))
    if not paths:
        raise EvaluationError(f"no templates found in {directory}")
    return [load_template(p, expected_digest=digest) for p in paths]


def _match_against_templates(args, cfg: RunConfig, verification: bool) -> int:
    model = _load_model(args)
    templates = _load_templates(args.templates, model.checkpoint_digest)
    _, recordings = _test_recordings(args, cfg)
    if not recordings:
        raise EvaluationError("no test recordings (check the test sessions)")
    observed = {
        user: observe(model.bundle, seqs, cfg.windows.eval_stride)
        for user, seqs in group_by_subject(model.prepare(recordings)).items()
    }
    by_owner = {t.user_id: t for t in templates}
    enrolled = sorted(u for u in observed if u in by_owner)
    impostors = sorted(u for u in observed if u not in by_owner)

    os.makedirs(args.out, exist_ok=True)
    rows, score_rows = [], []
    traces = {}
    for user in sorted(observed):
        o = observed[user]
        for owner, template in sorted(by_owner.items()):
            trace = match_embeddings(template, o.embeddings, o.starts, model.bundle.window_length, o.rate)
            traces[(user, owner)] = trace
            rows.extend(trace_rows(user, owner, trace))
            if len(trace.scores):
                label = "genuine" if user == owner else ("confusion" if user in by_owner else "impostor")
                score_rows.append({"user_id": user, "template_id": owner, "score": float(trace.running_max[-1]), "class": label})
    write_traces(os.path.join(args.out, "traces.csv"), rows)
    similarities = {key: trace.scores for key, trace in traces.items()}
    save_table(os.path.join(args.out, "scores.csv"), score_rows, ["user_id", "template_id", "score", "class"])

    counts = {u: len(observed[u].starts) for u in observed}
    if verification:
        scores = {"genuine": [], "verification": []}
        for owner in sorted(by_owner):
            part = identification_scores(similarities, counts, [owner] if owner in observed else [], [u for u in observed if u != owner])
            scores["genuine"].extend(part["genuine"])
            scores["verification"].extend(part["impostor"])
        settings = ("verification",)
    else:
        scores = identification_scores(similarities, counts, enrolled, impostors)
        for owner in sorted(set(by_owner) - set(observed)):
            # templates without observations only contribute negatives
            scores["confusion"].extend(
                float(similarities[(u, owner)].max()) for u in enrolled if counts[u]
            )
        settings = ("confusion", "impostor")

    summary = []
    curves = {}
    for setting in settings:
        negatives = scores[setting]
        if not scores["genuine"] or not negatives:
            logger.warning(
                f"No {setting} ROC: {len(scores['genuine'])} genuine and {len(negatives)} negative score(s)"
            )
            continue
        curve = roc(scores["genuine"], negatives, setting=setting)
        curves[setting] = curve
        write_roc(os.path.join(args.out, f"roc_{setting}.csv"), curve)
        summary.append({"setting": setting, "genuine": len(scores["genuine"]), "negatives": len(negatives), "auc": auc(curve), "eer": eer(curve)})
        logger.info(f"{setting}: AUC {summary[-1]['auc']:.4f}, EER {summary[-1]['eer']:.4f}")
    save_table(os.path.join(args.out, "roc_summary.csv"), summary, ["setting", "genuine", "negatives", "auc", "eer"])

    threshold = args.threshold
    if threshold is None:
        calibration = curves.get("verification" if verification else "impostor") or curves.get("confusion")
        if calibration is None:
            raise EvaluationError("cannot calibrate a threshold without genuine and negative scores; pass --threshold")
        threshold = threshold_at_fpr(calibration, cfg.protocol.target_fpr)
        logger.info(f"Calibrated threshold {threshold:.6f} at false-positive rate {cfg.protocol.target_fpr}")

    decisions = []
    for (user, owner), trace in sorted(traces.items()):
        when = first_acceptance_time(trace, threshold)
        decisions.append({
            "user_id": user,
            "template_id": owner,
            "threshold": threshold,
            "accepted": when is not None,
            "time_to_identification_s": float("nan") if when is None else when,
        })
    save_table(
        os.path.join(args.out, "decisions.csv"),
        decisions,
        ["user_id", "template_id", "threshold", "accepted", "time_to_identification_s"],
    )
    write_effective_config(cfg, args.out)
    return 0


def _run_resampling(args, cfg: RunConfig, verification: bool) -> int:
    model = _load_model(args)
    entries = load_dataset(get_resource(args.data), cfg.data.rate, cfg.data.max_gap_ms)
    enroll_session = cfg.protocol.enroll_session or sorted({e.session_id for e in entries})[0]
    test_session = cfg.protocol.test_session or sorted({e.session_id for e in entries})[-1]
    if enroll_session == test_session:
        logger.warning(f"Enrollment and observation both use session '{enroll_session}'")
    enroll_seqs = group_by_subject(model.prepare(recordings_of(entries, [enroll_session])))
    test_seqs = group_by_subject(model.prepare(recordings_of(entries, [test_session])))
    runner = run_verification if verification else run_identification
    report = runner(model.bundle, enroll_seqs, test_seqs, cfg.protocol, cfg.windows, seed=cfg.seed)
    write_protocol_report(args.out, report, "verification" if verification else "identification")
    write_effective_config(cfg, args.out)
    return 0


def cmd_identify(args) -> int:
    cfg = load_run_config(args)
    if args.protocol:
        return _run_resampling(args, cfg, verification=False)
    if not args.templates:
        raise ConfigError("identify needs --templates (or --protocol)")
    return _match_against_templates(args, cfg, verification=False)


def cmd_verify(args) -> int:
    cfg = load_run_config(args)
    if args.protocol:
        return _run_resampling(args, cfg, verification=True)
    if not args.templates:
        raise ConfigError("verify needs --templates (or --protocol)")
    return _match_against_templates(args, cfg, verification=True)


def cmd_export_embeddings(args) -> int:
    cfg = load_run_config(args)
    model = _load_model(args)
    _, recordings = _test_recordings(args, cfg)
    per_user = []
    for seq in model.prepare(recordings):
        windows = seq.windows(model.bundle.window_length, cfg.windows.eval_stride)
        if windows:
            per_user.append((seq.subject_id, [w.start for w in windows], model.bundle.embed_windows(windows)))
    if not per_user:
        raise EvaluationError("no recording is long enough for one window")
    write_embeddings(args.out, per_user)
    write_effective_config(cfg, _out_dir_of(args.out))
    return 0


def cmd_gradcheck(args) -> int:
    reports = gradcheck_suite(seeds=range(args.seed, args.seed + args.seeds), tolerance=args.tolerance, corrupt=args.corrupt_op)
    rows = [{"op": r.op, "max_rel_error": r.max_rel_error, "seeds": r.seeds, "passed": r.passed} for r in reports]
    for row in rows:
        print(f"{row['op']:<16} {row['max_rel_error']:.3e} {'ok' if row['passed'] else 'FAIL'}")
    if args.out:
        save_json(args.out, {"tolerance": args.tolerance, "ops": rows})
    return 0 if all(r.passed for r in reports) else 1


def _csv_list(cast):
    def parse(text: str):
        try:
            return [cast(item) for item in text.split(",") if item.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got '{text}'")
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eyedent", description="Biometric identification from gaze velocity signals")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, default=None, help="Seed (default: EYID_SEED or 0)")
    common.add_argument("--profile", choices=["full", "reduced"], default=None)
    common.add_argument("--unsafe-hparams", action="store_true", help="Accept hyperparameters outside the grid-search domains")
    common.add_argument("--log-level", default=config("EYID_LOG_LEVEL", default="INFO"))

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--identities", type=int)
    p.add_argument("--sessions", type=int)
    p.add_argument("--seconds", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--separation", type=float)
    p.add_argument("--binocular", dest="binocular_sim", action="store_true", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="Train slow, fast and joint stages")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--stage", choices=["all", *STAGES], default="all")
    p.add_argument("--init-checkpoint")
    p.add_argument("--protocol-split", action="store_true", help="Train on a random draw of protocol.train_identities identities")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--validation-fraction", type=float)
    p.add_argument("--target-train-accuracy", type=float)
    p.add_argument("--train-sessions", type=_csv_list(str))
    p.add_argument("--no-progress", action="store_true")
    p.set_defaults(func=cmd_train)

    def evaluation_parser(name: str, help: str):
        q = sub.add_parser(name, parents=[common], help=help)
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--data", required=True)
        q.add_argument("--out", required=True)
        q.add_argument("--test-sessions", type=_csv_list(str))
        q.add_argument("--eval-stride", type=int)
        return q

    p = evaluation_parser("eval-classify", "Accuracy versus input duration")
    p.add_argument("--durations", type=_csv_list(float))
    p.add_argument("--branch", choices=["joint", "slow", "fast"], default="joint")
    p.add_argument("--binocular", action="store_true")
    p.set_defaults(func=cmd_eval_classify)

    p = sub.add_parser("enroll", parents=[common], help="Write enrollment templates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="Template directory")
    p.add_argument("--session")
    p.add_argument("--users", type=_csv_list(str))
    p.add_argument("--enroll-stride", type=int)
    p.set_defaults(func=cmd_enroll)

    for name, func in (("identify", cmd_identify), ("verify", cmd_verify)):
        p = evaluation_parser(name, f"Open-set {name} against enrollment templates")
        p.add_argument("--templates", help="Template directory written by enroll")
        p.add_argument("--threshold", type=float)
        p.add_argument("--target-fpr", type=float)
        p.add_argument("--protocol", action="store_true", help="Run the resampling protocol instead of fixed templates")
        p.add_argument("--iterations", type=int)
        p.add_argument("--durations", type=_csv_list(float))
        p.add_argument("--enroll-stride", type=int)
        p.set_defaults(func=func)

    p = evaluation_parser("export-embeddings", "Write window embeddings as CSV")
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every operator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out")
    p.add_argument("--log-level", default=config("EYID_LOG_LEVEL", default="INFO"))
    p.add_argument("--corrupt-op", choices=OPS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=str(args.log_level).upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ConfigError) as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        logger.debug(traceback.format_exc())
        return 1


if __name__ == "__main__":
    sys.exit(main())
