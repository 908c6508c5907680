#!/usr/bin/env python3
"""
ELCD toolkit - command line entry point

Generate demonstrations, train contracting models on them, roll them out,
score them against the demonstrations, verify contraction numerically and
draw phase portraits.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from elcd.config import load_environment, resolve_seed
from elcd.datasets import (Dataset, PendulumConfig, RosenbrockConfig, apply_standardization, compose,
                           gen_pendulum, gen_rosenbrock, gen_toy_linear, load_csv, save_csv,
                           trim_initial)
from elcd.errors import EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION, ConfigError, ElcdError
from elcd.experiments import DEFAULT_PRESET, ExperimentRegistry
from elcd.model import ModelKind
from elcd.plotting import parse_dims, plot_phase
from elcd.rollout import EvalSummary, IntegratorConfig, eval_model, integrate
from elcd.trainer import (ModelSpec, TrainConfig, build_model, load_checkpoint, save_checkpoint, train)
from elcd.ui import ConsoleUI
from elcd.verify import MetricConfig, VerifyReport, equilibrium_bound_check, sample_box, verify_field

class UsageError(ConfigError):
    def __init__(self, message: str):
        super().__init__("usage", message)


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so errors share one exit path."""

    def error(self, message):
        raise UsageError(message)


def parse_vector(text: str, dimension: int, name: str) -> np.ndarray:
    try:
        values = np.array([float(part) for part in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ConfigError(name, f"expected comma-separated numbers, got {text!r}")
    if values.shape != (dimension,):
        raise ConfigError(name, f"expected {dimension} values, got {values.size}")
    return values


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="main.py", description="Learn and verify contracting dynamics from demonstrations")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    gen = commands.add_parser("gen-data", help="generate a demonstration dataset")
    gen.add_argument("kind", nargs="?", choices=["pendulum", "rosenbrock", "toy-linear"])
    gen.add_argument("--preset", help="named experiment preset (see --list-presets)")
    gen.add_argument("--list-presets", action="store_true")
    gen.add_argument("--inputs", nargs="+", default=(), help="converted CSV files for csv presets")
    gen.add_argument("--links", type=int)
    gen.add_argument("--trajs", type=int)
    gen.add_argument("--damping", type=float)
    gen.add_argument("--dim", type=int)
    gen.add_argument("--points", type=int)
    gen.add_argument("--dt", type=float)
    gen.add_argument("--horizon", type=float)
    gen.add_argument("--sample-every", type=int)
    gen.add_argument("--out")
    gen.add_argument("--seed", type=int)

    comp = commands.add_parser("compose", help="stack datasets along the state dimension")
    comp.add_argument("--inputs", nargs="+", required=True)
    comp.add_argument("--out", required=True)

    tr = commands.add_parser("train", help="train a model by velocity matching")
    tr.add_argument("--data", required=True)
    tr.add_argument("--model", default="elcd", choices=[k.value for k in ModelKind])
    tr.add_argument("--preset", help="take preprocessing and training defaults from a preset")
    tr.add_argument("--alpha", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--max-steps", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--trim", type=int)
    tr.add_argument("--no-standardize", action="store_true")
    tr.add_argument("--hidden", type=int)
    tr.add_argument("--couplings", type=int)
    tr.add_argument("--no-diffeo", action="store_true", help="keep the coordinate change at the identity")
    tr.add_argument("--learn-equilibrium", action="store_true")
    tr.add_argument("--latent-dim", type=int, help="NCDS latent dimension")
    tr.add_argument("--nodes", type=int, help="NCDS quadrature nodes")
    tr.add_argument("--out", required=True)

    ro = commands.add_parser("rollout", help="integrate a trained model")
    ro.add_argument("--ckpt", required=True)
    start = ro.add_mutually_exclusive_group(required=True)
    start.add_argument("--x0", help="initial state, comma separated, in model units")
    start.add_argument("--from-data", help="start from every demonstration's first state")
    ro.add_argument("--dt", type=float, default=0.01)
    ro.add_argument("--horizon", type=float, default=10.0)
    ro.add_argument("--integrator", default="rk4", choices=["euler", "rk4"])
    ro.add_argument("--out", required=True)

    ev = commands.add_parser("eval", help="DTWD of model rollouts against demonstrations")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--runs", type=int, default=1)
    ev.add_argument("--integrator", default="rk4", choices=["euler", "rk4"])

    ve = commands.add_parser("verify", help="numerical contraction checks")
    ve.add_argument("--ckpt", required=True)
    ve.add_argument("--samples", type=int, default=20)
    ve.add_argument("--c", type=float, help="contraction margin (latent default alpha/2, data default 0)")
    ve.add_argument("--space", default="latent", choices=["latent", "data"])
    ve.add_argument("--data", help="sample from this dataset's box instead of the one stored at training")
    ve.add_argument("--quad-dt", type=float, default=1e-2)
    ve.add_argument("--t-max", type=float)
    ve.add_argument("--skip-metric", action="store_true", help="run only the equilibrium bound check")
    ve.add_argument("--seed", type=int)

    pl = commands.add_parser("plot", help="phase portrait as SVG")
    pl.add_argument("--data", required=True)
    pl.add_argument("--ckpt")
    pl.add_argument("--dims", default="0,1")
    pl.add_argument("--grid", type=int, default=20)
    pl.add_argument("--raw-arrows", action="store_true")
    pl.add_argument("--out", required=True)
    return parser


class ElcdApp:
    def __init__(self, ui: Optional[ConsoleUI] = None, registry: Optional[ExperimentRegistry] = None):
        self.ui = ui or ConsoleUI()
        self.registry = registry or ExperimentRegistry()

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Parse and dispatch one command; returns the process exit status."""
        load_environment()
        try:
            args = build_parser().parse_args(argv)
            handler = getattr(self, "cmd_" + args.command.replace("-", "_"))
            return handler(args)
        except ElcdError as exc:
            self.ui.display_error(exc)
            return exc.exit_code
        except KeyboardInterrupt:
            self.ui.console.print("\ninterrupted")
            return EXIT_USAGE

    # gen-data / compose ----------------------------------------------------

    def cmd_gen_data(self, args) -> int:
        if args.list_presets:
            self.ui.display_presets([self.registry.get(name) for name in self.registry.names()])
            return EXIT_OK
        if args.out is None:
            raise UsageError("gen-data needs --out")
        seed = resolve_seed(args.seed)
        if args.preset:
            preset = self.registry.get(args.preset)
            self.ui.display_config("gen-data", {"preset": preset.name, "out": args.out}, seed)
            dataset = preset.generate(seed=seed, inputs=args.inputs)
        elif args.kind is None:
            raise UsageError("gen-data needs a kind or --preset")
        else:
            dataset = self._generate(args, seed)
        save_csv(dataset, args.out)
        self.ui.display_dataset(dataset, args.out)
        return EXIT_OK

    def _generate(self, args, seed: int) -> Dataset:
        timing = {"dt": args.dt, "horizon": args.horizon, "sample_every": args.sample_every}
        if args.kind == "toy-linear":
            settings = {k: v for k, v in timing.items() if k != "sample_every" and v is not None}
            self.ui.display_config("gen-data toy-linear", {**settings, "out": args.out}, None)
            return gen_toy_linear(**settings)
        if args.kind == "pendulum":
            settings = {"links": args.links, "trajectories": args.trajs, "damping": args.damping, **timing}
            config = PendulumConfig(**{k: v for k, v in settings.items() if v is not None})
            self.ui.display_config("gen-data pendulum", {**config.__dict__, "out": args.out}, seed)
            return gen_pendulum(config, seed=seed)
        settings = {"dimension": args.dim, "initial_points": args.points, **timing}
        config = RosenbrockConfig(**{k: v for k, v in settings.items() if v is not None})
        self.ui.display_config("gen-data rosenbrock", {**config.__dict__, "out": args.out}, seed)
        return gen_rosenbrock(config, seed=seed)

    def cmd_compose(self, args) -> int:
        self.ui.display_config("compose", {"inputs": list(args.inputs), "out": args.out})
        dataset = compose([load_csv(path) for path in args.inputs])
        save_csv(dataset, args.out)
        self.ui.display_dataset(dataset, args.out)
        return EXIT_OK

    # train -----------------------------------------------------------------

    def cmd_train(self, args) -> int:
        seed = resolve_seed(args.seed)
        preset = self.registry.get(args.preset) if args.preset else DEFAULT_PRESET
        trim = preset.trim if args.trim is None else args.trim
        do_standardize = preset.standardize and not args.no_standardize
        dataset, stats = preset.prepare(load_csv(args.data), trim=trim, standardize_data=do_standardize)

        overrides = {"alpha": args.alpha, "hidden": args.hidden, "couplings": args.couplings,
                     "latent_dimension": args.latent_dim, "nodes": args.nodes}
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if args.no_diffeo:
            overrides["diffeo"] = False
        if args.learn_equilibrium:
            overrides["learn_equilibrium"] = True
        spec = preset.model_spec(dataset.dimension, kind=args.model, **overrides)
        train_settings = {"epochs": args.epochs, "batch_size": args.batch, "lr": args.lr, "max_steps": args.max_steps}
        config = preset.train_config(**{k: v for k, v in train_settings.items() if v is not None}, seed=seed)

        self.ui.display_config("train", {"data": args.data, "model": spec.kind, "trim": trim,
                                         "standardize": do_standardize, **spec.to_dict(), **config.to_dict(),
                                         "out": args.out}, seed)
        model, history, steps = self._fit(spec, config, dataset)
        low, high = dataset.bounding_box()
        metadata = {"data": str(args.data), "trim": trim, "standardize": do_standardize,
                    "box": [low.tolist(), high.tolist()], "history": history}
        save_checkpoint(model, args.out, config, stats, metadata)
        self.ui.display_training_result(history, steps, args.out)
        return EXIT_OK

    def _fit(self, spec: ModelSpec, config: TrainConfig, dataset: Dataset):
        first = dataset.trajectories[0]
        model = build_model(spec, seed=config.seed, equilibrium=dataset.final_point_mean(),
                            anchor=(first.states[0], first.velocities[0]))
        with self.ui.training_progress(config.epochs) as on_epoch:
            result = train(model, dataset, config, on_epoch=on_epoch)
        return model, result.history, result.steps

    # rollout / eval --------------------------------------------------------

    def _prepare(self, dataset: Dataset, info) -> Dataset:
        """Apply the checkpoint's preprocessing to a raw dataset."""
        trim = info.metadata.get("trim", 0)
        if trim:
            dataset = trim_initial(dataset, trim)
        if info.standardization is not None:
            dataset = apply_standardization(dataset, info.standardization)
        return dataset

    def cmd_rollout(self, args) -> int:
        model, info = load_checkpoint(args.ckpt)
        config = IntegratorConfig(scheme=args.integrator, dt=args.dt, horizon=args.horizon)
        if args.x0 is not None:
            starts = [parse_vector(args.x0, model.dimension, "x0")]
        else:
            starts = [t.states[0] for t in self._prepare(load_csv(args.from_data), info).trajectories]
        self.ui.display_config("rollout", {"ckpt": args.ckpt, "starts": len(starts), **config.to_dict(),
                                           "out": args.out})
        trajectories = [integrate(model, x0, config) for x0 in starts]
        dataset = Dataset(trajectories, metadata={"generator": "rollout", "config": config.to_dict(),
                                                  "checkpoint": str(args.ckpt), "seed": None})
        save_csv(dataset, args.out)
        self.ui.display_dataset(dataset, args.out)
        return EXIT_OK

    def cmd_eval(self, args) -> int:
        if args.runs < 1:
            raise ConfigError("runs", f"must be at least 1, got {args.runs}")
        model, info = load_checkpoint(args.ckpt)
        dataset = self._prepare(load_csv(args.data), info)
        name = Path(args.data).stem
        self.ui.display_config("eval", {"ckpt": args.ckpt, "data": args.data, "runs": args.runs,
                                        "integrator": args.integrator}, info.train.seed)
        first = eval_model(model, dataset, args.integrator)
        if args.runs == 1:
            self.ui.display_eval(first, model.kind.value, name)
            return EXIT_OK
        run_means = [first.mean]
        for run in range(1, args.runs):
            config = TrainConfig(**{**info.train.to_dict(), "seed": info.train.seed + run})
            self.ui.info(f"run {run + 1}/{args.runs}: retraining with seed {config.seed}")
            retrained, _, _ = self._fit(info.spec, config, dataset)
            run_means.append(eval_model(retrained, dataset, args.integrator).mean)
        self.ui.display_eval(EvalSummary(run_means), model.kind.value, name, label="run")
        return EXIT_OK

    # verify ------------------------------------------------------------------

    def cmd_verify(self, args) -> int:
        model, info = load_checkpoint(args.ckpt)
        seed = resolve_seed(args.seed)
        rng = np.random.default_rng(seed)
        if args.data:
            low, high = self._prepare(load_csv(args.data), info).bounding_box()
        elif "box" in info.metadata:
            low, high = (np.asarray(v, dtype=np.float64) for v in info.metadata["box"])
        else:
            raise UsageError("checkpoint stores no data box; pass --data")
        points = sample_box(low, high, args.samples, rng)
        metric_config = MetricConfig(dt=args.quad_dt, t_max=args.t_max, rate=info.spec.alpha)

        if args.space == "latent":
            field = model.latent_field()
            latent = model.diffeo.transform(points) if model.diffeo is not None else points
            c = info.spec.alpha / 2.0 if args.c is None else args.c
            bound = {"equilibrium": field.equilibrium, "bound_x0s": latent, "rate": info.spec.alpha}
            points = latent
        else:
            field = model
            c = 0.0 if args.c is None else args.c
            bound = {}
        self.ui.display_config("verify", {"ckpt": args.ckpt, "space": args.space, "samples": args.samples,
                                          "c": c, "quad_dt": args.quad_dt, "t_max": metric_config.horizon,
                                          "skip_metric": args.skip_metric}, seed)
        if args.skip_metric:
            if not bound:
                raise UsageError("--skip-metric leaves nothing to check in data space")
            report = VerifyReport(points=points, settings={"c": c})
            report.add(equilibrium_bound_check(field, bound["equilibrium"], bound["bound_x0s"], bound["rate"]))
        else:
            report = verify_field(field, points, c, metric_config, **bound)
        self.ui.display_verify(report, args.space)
        return EXIT_OK if report.passed else EXIT_VERIFICATION

    # plot ------------------------------------------------------------------

    def cmd_plot(self, args) -> int:
        model, info = (None, None) if args.ckpt is None else load_checkpoint(args.ckpt)
        dataset = load_csv(args.data)
        if info is not None:
            dataset = self._prepare(dataset, info)
        dims = parse_dims(args.dims, dataset.dimension)
        self.ui.display_config("plot", {"data": args.data, "ckpt": args.ckpt, "dims": list(dims),
                                        "grid": args.grid, "normalized": not args.raw_arrows, "out": args.out})
        summary = plot_phase(dataset, dims, args.out, model, grid=args.grid, normalize=not args.raw_arrows)
        self.ui.info(f"wrote {summary.path}: {summary.trajectories} demonstrations, "
                     f"{summary.rollouts} rollouts, {summary.arrows} arrows")
        return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    return ElcdApp().run(argv)


if __name__ == "__main__":
    sys.exit(main())
