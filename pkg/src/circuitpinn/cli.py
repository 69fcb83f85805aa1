"""Command-line driver.

Exit codes: 0 success, 1 input/parse/validation/usage errors,
2 convergence or non-finite failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import pinn, refsolver
from .errors import ConfigError, ConvergenceError, NetlistError, NonFiniteError, StructureError
from .netlist import parse
from .system import build_system
from .waveform import compare, format_report, read_csv, write_csv, write_loss_csv

log = logging.getLogger("circuitpinn")

CASES = ("amplifier", "ringosc5", "feram")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is reserved for solver failures
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def case_text(name: str) -> str:
    if name not in CASES:
        raise KeyError(name)
    return (resources.files(__package__) / "cases" / f"{name}.sp").read_text()


def loss_path(out: Path) -> Path:
    """``rc.csv`` -> ``rc.loss.csv``."""
    return out.with_name(out.stem + ".loss.csv") if out.suffix == ".csv" else out.with_name(out.name + ".loss.csv")


def _hidden(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not widths:
        raise argparse.ArgumentTypeError("need at least one hidden layer")
    return widths


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="circuitpinn", description="Physics-informed neural network circuit simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate a netlist with the network or the reference solver")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--netlist", type=Path)
    src.add_argument("--case", choices=CASES, help="bundled example circuit")
    r.add_argument("--solver", choices=("pinn", "ref"), required=True)
    r.add_argument("--out", type=Path, required=True, help="waveform CSV to write")
    t = r.add_argument_group("network training")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--hidden", type=_hidden, default=(64, 64, 64))
    t.add_argument("--collocation", type=int, default=2001)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--ic-mode", choices=("soft", "hard"), default=None,
                   help="default: the case preset, else soft")
    t.add_argument("--ic-weight", type=float, default=100.0)
    t.add_argument("--resample", choices=("fixed", "random"), default="fixed")
    t.add_argument("--causal", type=float, default=0.0,
                   help="weight residuals by exp(-causal * earlier residual); 0 is uniform")
    t.add_argument("--points", type=int, help="output samples (default: .tran npoints)")
    s = r.add_argument_group("reference solver")
    s.add_argument("--dt", type=float)
    s.add_argument("--method", choices=("be", "trap"), default="trap")

    c = sub.add_parser("compare", help="error of one waveform file against another")
    c.add_argument("file_a", type=Path, help="reference waveform")
    c.add_argument("file_b", type=Path, help="waveform resampled onto file_a's times")
    c.add_argument("--columns", help="comma-separated column names (default: all shared)")
    c.add_argument("--assert-rms-pct", type=float, help="fail if any normalised RMS exceeds this")

    k = sub.add_parser("cases", help="list or export the bundled netlists")
    k.add_argument("--export", type=Path, help="directory to write <case>.sp files into")
    return p


def _train_config(args, case: str | None) -> pinn.TrainConfig:
    preset = pinn.case_config(case) if case else pinn.TrainConfig()
    return pinn.TrainConfig(
        epochs=args.epochs if args.epochs is not None else preset.epochs,
        lr=args.lr if args.lr is not None else preset.lr,
        n_collocation=args.collocation,
        ic_weight=args.ic_weight,
        seed=args.seed,
        hidden=args.hidden,
        resample="fixed_grid" if args.resample == "fixed" else "uniform_random",
        ic_mode=args.ic_mode if args.ic_mode is not None else preset.ic_mode,
        causal=args.causal,
    )


def cmd_run(args) -> int:
    if args.case:
        text, label = case_text(args.case), f"case {args.case}"
    else:
        try:
            text = args.netlist.read_bytes()
        except OSError as exc:
            print(f"error: cannot read netlist {str(args.netlist)!r}: {exc.strerror}", file=sys.stderr)
            return 1
        label = str(args.netlist)
    try:
        circuit = parse(text)
        sys_ = build_system(circuit)
    except NetlistError as exc:
        print(f"error: {label}: {exc}", file=sys.stderr)
        return 1
    except StructureError as exc:
        print(f"error: {label}: {exc}", file=sys.stderr)
        return 1

    start = time.perf_counter()
    try:
        if args.solver == "ref":
            cfg = refsolver.StepConfig(
                method="backward_euler" if args.method == "be" else "trapezoidal", dt=args.dt
            )
            cfg.validate()
            stats = refsolver.NewtonStats()
            wf = refsolver.transient(sys_, cfg, stats=stats)
            wall = time.perf_counter() - start
            write_csv(wf, args.out)
            print(f"solver: ref ({cfg.method})")
            print(f"unknowns: {sys_.n} ({', '.join(sys_.names)})")
            print(f"steps: {stats.solves}  newton iterations: {stats.iterations} "
                  f"(max {stats.max_iterations} per step)")
            print(f"wall time: {wall:.3f} s")
            print(f"wrote {args.out}")
            return 0

        cfg = _train_config(args, args.case)
        cfg.validate()
        n_points = args.points if args.points is not None else circuit.n_points
        if n_points < 1:
            raise ConfigError("--points must be >= 1")
        every = max(1, cfg.epochs // 20)

        def progress(epoch, value):
            if epoch % every == 0 or epoch == cfg.epochs - 1:
                log.info("epoch %d/%d  loss %.4e", epoch, cfg.epochs, value)

        result = pinn.train(sys_, cfg, progress=progress)
        times = np.linspace(0.0, sys_.t_stop, n_points)
        t0 = time.perf_counter()
        wf = pinn.infer(result.params, sys_, times)
        infer_s = time.perf_counter() - t0
        wall = time.perf_counter() - start
        write_csv(wf, args.out)
        write_loss_csv(result.history, loss_path(args.out))
        print(f"solver: pinn  seed: {cfg.seed}")
        print(f"unknowns: {sys_.n} ({', '.join(sys_.names)})")
        print(f"epochs: {cfg.epochs}  lr: {cfg.lr:g}  hidden: {','.join(map(str, cfg.hidden))}  "
              f"collocation: {cfg.n_collocation}  ic: {cfg.ic_mode}")
        print(f"initial loss: {result.history[0]:.6e}  final loss: {result.history[-1]:.6e}  "
              f"best loss: {result.best_loss:.6e} (epoch {result.best_epoch})")
        print(f"training time: {result.seconds:.2f} s  inference ({n_points} points): {infer_s * 1e6:.0f} us")
        print(f"wall time: {wall:.2f} s")
        print(f"wrote {args.out} and {loss_path(args.out)}")
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, NonFiniteError) as exc:
        if args.solver == "pinn":
            print(f"error: {exc} (seed {args.seed})", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2


def cmd_compare(args) -> int:
    try:
        a = read_csv(args.file_a)
        b = read_csv(args.file_b)
        cols = [c.strip() for c in args.columns.split(",")] if args.columns else None
        errors = compare(a, b, cols)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failed = []
    if args.assert_rms_pct is not None:
        failed = [e.name for e in errors if not e.rms_pct <= args.assert_rms_pct]
    if failed:
        print(format_report(errors), file=sys.stderr)
        print(f"error: normalised RMS above {args.assert_rms_pct}% for: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(format_report(errors))
    return 0


def cmd_cases(args) -> int:
    if args.export is None:
        for name in CASES:
            first = case_text(name).splitlines()[0].lstrip("* ")
            print(f"{name:<10} {first}")
        return 0
    try:
        args.export.mkdir(parents=True, exist_ok=True)
        for name in CASES:
            (args.export / f"{name}.sp").write_text(case_text(name))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(CASES)} netlists to {args.export}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    handler = {"run": cmd_run, "compare": cmd_compare, "cases": cmd_cases}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
