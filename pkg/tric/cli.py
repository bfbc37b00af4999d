import sys
import logging
import argparse
from typing import Dict, List, Optional, Sequence

from .commands.eval_command import eval_main_function
from .commands.sample_command import sample_main_function
from .commands.selftest_command import selftest_main_function
from .commands.train_command import train_main_function
from .core.motion_repr import synth_dataset
from .utility.tensor_io import write_corpus
from .utility.utils import ConfigError, get_log_level, load_config


def _parse_overrides(raw: Optional[List[str]], args: argparse.Namespace) -> Dict[str, str]:
    """`--set key=value` pairs plus the dedicated flags that map onto config keys."""
    overrides: Dict[str, str] = {}
    for item in raw or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "config_seed", None) is not None:
        overrides["seed"] = str(args.config_seed)
    if getattr(args, "out_dir", None):
        overrides["path.out_dir"] = args.out_dir
    return overrides


def _runtime_config(args: argparse.Namespace):
    if not args.config and not args.set:
        return None
    return load_config(args.config, _parse_overrides(args.set, args))


def cmd_train(args: argparse.Namespace) -> int:
    train_main_function(load_config(args.config, _parse_overrides(args.set, args)))
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    sample_main_function(args.ckpt, args.prompt, args.seed, args.count, args.out,
                         runtime_config=_runtime_config(args), guidance=args.guidance)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    eval_main_function(args.ckpt, args.corpus, args.repeats, args.out, runtime_config=_runtime_config(args))
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    return 0 if selftest_main_function(ablations_only=args.ablations) else 1


def cmd_corpus(args: argparse.Namespace) -> int:
    config = load_config(args.config, _parse_overrides(args.set, args))
    corpus = synth_dataset(config.data.seed, config.data.corpus_size, config.model.M, config.data.n_raw)
    write_corpus(args.out, corpus)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tric", description="Tri-domain text-to-motion diffusion at desk scale.")
    subparsers = parser.add_subparsers(dest="command")

    def config_flags(sub: argparse.ArgumentParser):
        sub.add_argument("--config", type=str, help="Path to a `key = value` configuration file.")
        sub.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one config key (repeatable).")

    train_parser = subparsers.add_parser("train", help="Train a denoiser and write checkpoints and losses.csv.")
    config_flags(train_parser)
    train_parser.add_argument("--seed", dest="config_seed", type=int, help="Run seed (overrides `seed`).")
    train_parser.add_argument("--out-dir", dest="out_dir", type=str, help="Output directory (overrides path.out_dir).")
    train_parser.set_defaults(func=cmd_train)

    sample_parser = subparsers.add_parser("sample", help="Generate motions for a prompt from a checkpoint.")
    config_flags(sample_parser)
    sample_parser.add_argument("--ckpt", type=str, required=True, help="Checkpoint file.")
    sample_parser.add_argument("--prompt", type=str, required=True, help="Text prompt.")
    sample_parser.add_argument("--seed", type=int, default=0, help="Sampling seed.")
    sample_parser.add_argument("--count", type=int, default=1, help="Number of motions to generate.")
    sample_parser.add_argument("--out", type=str, required=True, help="Output directory for .motion and .xy files.")
    sample_parser.add_argument("--guidance", type=float, help="Guidance scale g (default: diffusion.guidance_scale).")
    sample_parser.set_defaults(func=cmd_sample)

    eval_parser = subparsers.add_parser("eval", help="Compute toy metrics with 95%% intervals over repeats.")
    config_flags(eval_parser)
    eval_parser.add_argument("--ckpt", type=str, required=True, help="Checkpoint file.")
    eval_parser.add_argument("--corpus", type=str,
                             help="Corpus directory (default: synthetic corpus of the checkpoint).")
    eval_parser.add_argument("--repeats", type=int, help="Number of repeats (default: eval.repeats).")
    eval_parser.add_argument("--out", type=str, default="report.txt", help="Report file.")
    eval_parser.set_defaults(func=cmd_eval)

    selftest_parser = subparsers.add_parser("selftest", help="Run the invariant suites.")
    selftest_parser.add_argument("--ablations", action="store_true", help="Run only the ablation-variant suite.")
    selftest_parser.set_defaults(func=cmd_selftest)

    corpus_parser = subparsers.add_parser("corpus", help="Write the synthetic corpus as a corpus directory.")
    config_flags(corpus_parser)
    corpus_parser.add_argument("--out", type=str, required=True, help="Corpus directory.")
    corpus_parser.set_defaults(func=cmd_corpus)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=get_log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 1

    status = 1
    try:
        status = args.func(args)
    except KeyError as e:
        logging.error(f"Missing key: {e}")
    except FileNotFoundError as e:
        logging.error(f"File not found: {e}")
    except ValueError as e:
        logging.error(f"Configuration or input error: {e}")
    except FloatingPointError as e:
        logging.error(f"Numerical failure: {e}")
    except OSError as e:
        logging.error(f"I/O error: {e}")
    except Exception as e:
        logging.error(f"Unexpected error: {str(e)}", exc_info=True)
    finally:
        logging.info(f"tric {args.command} execution finished.")
    return status


if __name__ == "__main__":
    raise SystemExit(main())
