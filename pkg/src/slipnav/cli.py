"""Command-line entry point: ``slipnav <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .errors import ConfigError, SlipnavError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

DEFAULT_ENV = "case_study"

RUN_FLAGS = (("seed", "seed", int), ("runs", "runs", int), ("psat", "p_sat", float),
             ("batch", "batch", int), ("c", "c", float), ("eps", "eps", float),
             ("p_rl_ee", "p_rl_ee", float), ("reward_mode", "reward_mode", str), ("out", "out", str))


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--env", default=DEFAULT_ENV,
                        help="environment JSON file or built-in name (default: case_study)")
    parser.add_argument("--config", help="run configuration JSON file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--runs", type=int)
    parser.add_argument("--psat", type=float, help="required satisfaction probability")
    parser.add_argument("--batch", type=int, help="hops between GP refits")
    parser.add_argument("--c", type=float, help="initial RL probability after the switch")
    parser.add_argument("--eps", type=float, help="decay rate of the RL probability")
    parser.add_argument("--p-rl-ee", dest="p_rl_ee", type=float, help="RL probability while exploring")
    parser.add_argument("--reward-mode", dest="reward_mode", choices=("known", "unknown"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slipnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train-model", help="generate hop data and train the hop model")
    train.add_argument("--samples", type=int, default=20000)
    train.add_argument("--seed", type=int, default=1)
    train.add_argument("--epochs", type=int, default=300)
    train.add_argument("--out", default="hop_model.bin", help="model file to write")

    for name, text in (("run", "run one episode"), ("experiment", "run sequential episodes"),
                       ("sweep", "sweep the switching parameters")):
        _add_run_flags(sub.add_parser(name, help=text))

    bounds = sub.add_parser("bounds", help="expected-step bounds of the switching policy")
    bounds.add_argument("--c", type=float, required=True)
    bounds.add_argument("--eps", type=float, required=True)
    bounds.add_argument("--size", type=int, help="product size (default: the environment's)")
    bounds.add_argument("--env", default=DEFAULT_ENV)

    render = sub.add_parser("render", help="SVG trajectory from a run log JSON")
    render.add_argument("log")
    render.add_argument("--out", help="SVG file (default: next to the log)")
    return parser


def _environment(spec: str):
    from .harness import builtin_environment, load_environment
    if Path(spec).is_file() or spec.endswith(".json"):
        return load_environment(spec)
    return builtin_environment(spec)


def _run_config(args):
    from .harness import RunConfig, load_run
    run = load_run(args.config) if args.config else RunConfig()
    overrides = {field: getattr(args, flag) for flag, field, _ in RUN_FLAGS
                 if getattr(args, flag, None) is not None}
    try:
        return dataclasses.replace(run, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _train_model(args) -> int:
    from .controller import TrainConfig, generate_training_data, train
    from .dynamics import SlipParams
    samples = generate_training_data(SlipParams(), args.samples, seed=args.seed)
    model = train(TrainConfig(epochs=args.epochs, seed=args.seed), samples)
    model.save(args.out)
    print(f"trained on {model.n_samples} hops, validation RMSE {model.val_rmse:.4f} m -> {args.out}")
    return EXIT_OK


def _episodes(args) -> int:
    from .harness.episode import run_episode
    from .harness.experiment import run_experiment, sweep_switching
    from .harness.outputs import emit_outputs
    env = _environment(args.env)
    run = _run_config(args)
    out = run.out or "out"
    if args.command == "run":
        logs = [run_episode(env, run)]
        emit_outputs(logs, out)
    elif args.command == "experiment":
        logs = run_experiment(env, run)
        emit_outputs(logs, out)
    else:
        result = sweep_switching(env, run)
        emit_outputs(result, out)
        for cell in result.cells:
            print(f"P={cell.p:g} eps={cell.eps:g}: reward {cell.mean_reward:.1f}, "
                  f"steps {cell.mean_steps:.1f}, satisfied {cell.satisfied}/{cell.runs}")
        return EXIT_OK
    for i, log in enumerate(logs):
        switch = "-" if log.switch_step is None else log.switch_step
        print(f"run {i} seed {log.seed}: {log.outcome}, {log.steps} hops, reward {log.total_reward:g}, "
              f"switch at {switch}")
    return EXIT_OK


def _bounds(args) -> int:
    from .synthesis import tradeoff_bounds
    size = args.size
    if size is None:
        from .harness.episode import product_size
        from .harness.world import build_world
        size = product_size(build_world(_environment(args.env)))
    try:
        b = tradeoff_bounds(args.c, args.eps, size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"M_switch {b.m_switch:.6f}\nM_LTL {b.m_ltl:.6f}\nRL proportion {b.rl_proportion:.6f}")
    return EXIT_OK


def _render(args) -> int:
    from .harness.outputs import write_text, load_log, render_svg
    out = Path(args.out) if args.out else Path(args.log).with_suffix(".svg")
    write_text(out, render_svg(load_log(args.log)))
    print(out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"train-model": _train_model, "run": _episodes, "experiment": _episodes,
                "sweep": _episodes, "bounds": _bounds, "render": _render}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SlipnavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
