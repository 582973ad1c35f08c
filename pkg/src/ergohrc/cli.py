"""Command-line entry point: ``ergohrc <command> [options]``.

Exit status is 0 on success, 1 for invalid input and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import queue
import sys
import time
from pathlib import Path

from . import ergonomics, hmm, kpi, mocap, recognition, simulation, workflow
from .errors import ErgoHrcError, ValidationError

_log = logging.getLogger("ergohrc")


class _Parser(argparse.ArgumentParser):
    """Report usage errors as validation errors (exit 1) instead of exiting 2."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def read_config(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _thresholds(text):
    try:
        low, med = (float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("thresholds must be 'low_max,medium_max'") from None
    return low, med


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8", newline="\n")
    _log.info("wrote %s", path)


def cmd_train(args):
    catalog = mocap.load_catalog(args.catalog)
    if args.clips:
        by_label = {}
        for path in args.clips:
            clip = mocap.select_channels(mocap.load_clip(path), catalog.channels)
            if clip.label not in catalog.entries:
                raise ValidationError(f"{path}: label {clip.label!r} is not a catalog id")
            by_label.setdefault(clip.label, []).append(clip)
    elif args.synthetic:
        by_label = simulation.synthesize_dataset(catalog, args.synthetic, args.seed)
    else:
        raise ValidationError("give clip files or --synthetic N")
    models = recognition.train_models(by_label, n_states=args.states,
                                      max_iters=args.max_iters, tol=args.tol)
    out = _out_dir(args)
    _write(out / "models.txt", hmm.dump_models(models))
    print(f"trained {len(models)} models with {args.states} states")


def cmd_score(args):
    catalog = mocap.load_catalog(args.catalog)
    models = hmm.load_models(Path(args.models).read_text(encoding="utf-8"))
    tasks = {}
    for path in args.clips:
        clip = mocap.select_channels(mocap.load_clip(path), catalog.channels)
        task = str(clip.label) if clip.label is not None else clip.clip_id
        tasks.setdefault(task, []).append(clip)
    summaries, detections = ergonomics.assess_tasks(
        tasks, models, catalog, args.thresholds, args.window, args.stride)
    out = _out_dir(args)
    report = ergonomics.format_summary_report(summaries)
    _write(out / "summary.csv", report)
    _write(out / "detections.csv", recognition.format_detections(
        [d for task in sorted(detections) for d in detections[task]], len(catalog)))
    print(report, end="")


def cmd_delegate(args):
    summaries = ergonomics.parse_summary_report(Path(args.report).read_text(encoding="utf-8"))
    if args.thresholds is not None:
        summaries = [dataclasses.replace(s, risk_class=ergonomics.classify_risk(s.mode, args.thresholds))
                     for s in summaries]
    plan = ergonomics.build_delegation(summaries)
    out = _out_dir(args)
    text = ergonomics.format_delegation_text(plan)
    _write(out / "delegation.txt", text)
    _write(out / "delegation.csv", ergonomics.format_delegation_csv(plan))
    print(text, end="")


def cmd_simulate(args):
    profiles = simulation.make_profiles(args.operators, args.seed,
                                        position_noise=args.position_noise)
    modes = (list(simulation.ExperimentMode) if args.mode == "all"
             else [simulation.ExperimentMode(args.mode)])
    out = _out_dir(args)
    status = 0
    for mode in modes:
        config = simulation.ExperimentConfig(mode, repetitions=args.repetitions,
                                             glitch_rate=args.glitch_rate)
        result = simulation.run_experiment(config, profiles)
        _write(out / f"kpi_{mode.value}.csv", result.kpi_report())
        _write(out / f"traces_{mode.value}.csv", result.traces_csv())
        print(f"== {mode.value}")
        print(result.kpi_report(), end="")
        if result.failed:
            print(f"failed trials: {', '.join(result.failed)}")
            status = 2
    return status


def cmd_kpi(args):
    trials = kpi.parse_trials_csv(Path(args.trials).read_text(encoding="utf-8"))
    motions = kpi.parse_motion_csv(Path(args.motion).read_text(encoding="utf-8"))
    report = kpi.format_kpi_report(kpi.kpi_records(trials, motions))
    _write(_out_dir(args) / "kpi_report.csv", report)
    print(report, end="")


def cmd_listen(args):
    definition = workflow.load_workflow(args.definition)
    controller = workflow.GestureController(definition, args.run_length)
    deadline = time.monotonic() + args.timeout if args.timeout else None
    handled = 0
    with workflow.UdpGestureListener(args.host, args.port) as listener:
        print(f"listening on {listener.address[0]}:{listener.address[1]}", flush=True)
        while not controller.done:
            if deadline is not None and time.monotonic() > deadline:
                break
            if args.max_events and handled >= args.max_events:
                break
            if args.auto_press and workflow.PRESS in definition.accept_set(controller.runner.state):
                controller.on_press()
                continue
            try:
                event = listener.events.get(timeout=0.1)
            except queue.Empty:
                continue
            handled += 1
            result = controller.on_frame(event)
            if result is not None:
                print(f"frame {event.frame_index}: {event.gesture} -> {result.state}"
                      f" ({'accepted' if result.accepted else 'rejected'})", flush=True)
        rejected = listener.receiver.rejected_total
    _write(_out_dir(args) / "trace.csv", controller.trace.to_csv())
    print(f"completed={controller.done} transport_rejects={rejected}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root random seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="ergohrc", parents=[common], description=__doc__)
    parser.set_defaults(seed=0, config=None, out=".", verbose=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one HMM per catalog primitive")
    p.add_argument("clips", nargs="*", help="labelled clip CSV files")
    p.add_argument("--catalog", help="catalog file (default: bundled synthetic catalog)")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="train on N synthetic clips per primitive instead of files")
    p.add_argument("--states", type=int, default=hmm.DEFAULT_STATES)
    p.add_argument("--max-iters", type=int, default=hmm.DEFAULT_MAX_ITERS)
    p.add_argument("--tol", type=float, default=hmm.DEFAULT_TOL)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common], help="EAWS summary per task")
    p.add_argument("clips", nargs="+", help="task recordings; task id from clip label")
    p.add_argument("--models", required=True)
    p.add_argument("--catalog")
    p.add_argument("--window", type=float, default=recognition.DEFAULT_WINDOW_SECONDS)
    p.add_argument("--stride", type=float)
    p.add_argument("--thresholds", type=_thresholds, default=ergonomics.DEFAULT_THRESHOLDS)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("delegate", parents=[common], help="robot/human task split")
    p.add_argument("report", help="summary CSV from 'score'")
    p.add_argument("--thresholds", type=_thresholds,
                   help="re-classify task modes with these thresholds")
    p.set_defaults(func=cmd_delegate)

    p = sub.add_parser("simulate", parents=[common], help="run the three HRC experiments")
    p.add_argument("--operators", type=int, default=14)
    p.add_argument("--mode", default="all",
                   choices=["all"] + [m.value for m in simulation.ExperimentMode])
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--glitch-rate", type=float, default=0.02)
    p.add_argument("--position-noise", type=float, default=simulation.DEFAULT_POSITION_NOISE)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kpi", parents=[common], help="SA/RiOM report from measured data")
    p.add_argument("--trials", required=True, help="operator,wp,php,ahp CSV")
    p.add_argument("--motion", required=True, help="operator,condition,x,y,z CSV")
    p.set_defaults(func=cmd_kpi)

    p = sub.add_parser("listen", parents=[common], help="drive the routine from UDP gesture IDs")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=5005)
    p.add_argument("--definition", help="workflow file (default: bundled TV routine)")
    p.add_argument("--run-length", type=int, default=workflow.DEFAULT_RUN_LENGTH)
    p.add_argument("--timeout", type=float, default=0.0, help="seconds; 0 waits forever")
    p.add_argument("--max-events", type=int, default=0)
    p.add_argument("--auto-press", action="store_true",
                   help="simulate the force-sensor press whenever the routine waits for it")
    p.set_defaults(func=cmd_listen)
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = known.get(key)
        if action is None:
            raise ValidationError(f"unknown config key {key!r} for '{args.command}'")
        if action.type is not None:
            defaults[key] = action.type(raw)
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args) or 0
    except (ValidationError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ErgoHrcError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
