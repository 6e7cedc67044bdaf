"""Operator entry point.

Subcommands: make-data (synthetic corpus), pretrain, finetune, eval,
bench, serve. Training commands read a flat key=value config file with
command-line overrides, write CSV experiment artifacts (plus a rendered
figure next to each CSV) and weight files into --out.

Exit codes: 0 success, 1 config error, 2 data error, 3 runtime failure.
"""

import argparse
import csv
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

from . import data, deepnet, plots, rbm, serve, synth
from .errors import ConfigError, FormatError, IntegrityError, JobError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(field: str, raw: str) -> bool:
    v = raw.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"{field}: expected a boolean, got {raw!r}")


def _parse_int(field: str, raw) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{field}: expected an integer, got {raw!r}") from None


def _parse_float(field: str, raw) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{field}: expected a number, got {raw!r}") from None


def _parse_ints(field: str, raw) -> tuple:
    if isinstance(raw, (list, tuple)):
        return tuple(int(v) for v in raw)
    try:
        return tuple(int(v) for v in str(raw).replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"{field}: expected comma-separated integers, got {raw!r}") from None


@dataclass
class RunConfig:
    """Everything a training command needs; validated before any job starts."""

    mode: str = "autoencoder"
    layers: tuple = (784, 256, 64, 30)
    max_epoch: int = 15
    finetune_epochs: int = 15
    batch_size: int = 100
    lr: float = 0.1
    momentum: float = 0.5
    momentum_late: float = 0.9
    momentum_switch_epoch: int = 5
    weight_decay: float = 0.0002
    cd_steps: int = 1
    finetune_lr: float = None
    top_linear: bool = False
    binarize: bool = False
    seed: int = 0
    workers: int = 1
    use_engine: bool = False
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    subset: int = 0
    test_subset: int = 0
    out_dir: str = "runs"
    bench_workers: tuple = (1, 2, 4)
    figures: bool = True

    _PARSERS = {
        "mode": lambda f, v: str(v),
        "layers": _parse_ints,
        "max_epoch": _parse_int,
        "finetune_epochs": _parse_int,
        "batch_size": _parse_int,
        "lr": _parse_float,
        "momentum": _parse_float,
        "momentum_late": _parse_float,
        "momentum_switch_epoch": _parse_int,
        "weight_decay": _parse_float,
        "cd_steps": _parse_int,
        "finetune_lr": _parse_float,
        "top_linear": _parse_bool,
        "binarize": _parse_bool,
        "seed": _parse_int,
        "workers": _parse_int,
        "use_engine": _parse_bool,
        "train_images": lambda f, v: str(v),
        "train_labels": lambda f, v: str(v),
        "test_images": lambda f, v: str(v),
        "test_labels": lambda f, v: str(v),
        "subset": _parse_int,
        "test_subset": _parse_int,
        "out_dir": lambda f, v: str(v),
        "bench_workers": _parse_ints,
        "figures": _parse_bool,
    }

    def set(self, key: str, raw) -> None:
        if key not in self._PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(self, key, self._PARSERS[key](key, raw))

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"config file {path}: {exc}") from exc
            for lineno, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                cfg.set(key, value)
        for key, value in (overrides or {}).items():
            if value is not None:
                cfg.set(key, value)
        return cfg

    def network_config(self) -> deepnet.NetworkConfig:
        hp = rbm.CdHyperParams(
            learning_rate=self.lr, momentum=self.momentum,
            momentum_late=self.momentum_late,
            momentum_switch_epoch=self.momentum_switch_epoch,
            weight_decay=self.weight_decay, cd_steps=self.cd_steps)
        return deepnet.NetworkConfig(
            num_nodes=self.layers, max_epoch=self.max_epoch, hp=hp,
            seed=self.seed, workers=self.workers, mode=self.mode,
            batch_size=self.batch_size, finetune_epochs=self.finetune_epochs,
            finetune_lr=self.finetune_lr, top_linear=self.top_linear,
            use_engine=self.use_engine)


def _load_dataset(images, labels, n, seed, do_binarize, what) -> data.Dataset:
    if images is None:
        raise ConfigError(f"{what}_images: no dataset path configured")
    ds = data.load_idx(images, labels)
    if n:
        ds = data.subset(ds, n, seed)
    if do_binarize:
        ds = data.binarize(ds, seed)
    return ds


def _load_train_test(cfg: RunConfig):
    train = _load_dataset(cfg.train_images, cfg.train_labels, cfg.subset,
                          cfg.seed, cfg.binarize, "train")
    test = None
    if cfg.test_images:
        test = _load_dataset(cfg.test_images, cfg.test_labels, cfg.test_subset,
                             cfg.seed + 1, cfg.binarize, "test")
    return train, test


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_make_data(args) -> int:
    paths = synth.make_corpus(args.out, args.train, args.test, args.seed)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    netcfg = cfg.network_config()
    train, test = _load_train_test(cfg)
    out = _out_dir(cfg)
    rows = []

    def on_epoch(layer, epoch, train_mse, test_mse):
        rows.append((epoch, layer, f"{train_mse:.10g}", f"{test_mse:.10g}"))
        print(f"layer {layer} epoch {epoch + 1}/{netcfg.max_epoch}: "
              f"train mse {train_mse:.5f} test mse {test_mse:.5f}")

    stack = deepnet.pretrain(train.cases, netcfg,
                             test=test.cases if test else None,
                             on_epoch=on_epoch)
    weights_path = out / "pretrain.weights"
    data.save_weights(weights_path, stack)
    csv_path = out / "pretrain_errors.csv"
    _write_csv(csv_path, ("epoch", "layer", "train_mse", "test_mse"), rows)
    if cfg.figures:
        plots.plot_pretrain(csv_path, out / "pretrain_errors.png")
    print(f"weights: {weights_path}")
    print(f"errors:  {csv_path}")
    return 0


def _prepare_finetune_net(stack, cfg: RunConfig):
    if stack.mode == "stack":
        if cfg.mode == "autoencoder":
            return deepnet.unroll(stack)
        return deepnet.attach_classifier_head(stack, cfg.seed)
    if stack.mode != cfg.mode:
        raise ConfigError(
            f"mode: weight file holds a {stack.mode!r} network, config says {cfg.mode!r}")
    return stack


def cmd_finetune(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    netcfg = cfg.network_config()
    train, test = _load_train_test(cfg)
    if cfg.mode == "classifier" and train.cases[0].label is None:
        raise IntegrityError("classifier fine-tuning needs labeled training data")
    net = _prepare_finetune_net(data.load_weights(args.init_weights), cfg)
    out = _out_dir(cfg)
    rows = []
    if cfg.mode == "classifier":
        header = ("epoch", "train_misclassified", "test_misclassified")

        def on_epoch(epoch, train_err, test_err):
            rows.append((epoch, train_err, test_err))
            print(f"epoch {epoch + 1}/{netcfg.finetune_epochs}: "
                  f"train errors {train_err} test errors {test_err}")
    else:
        header = ("epoch", "train_mse", "test_mse")

        def on_epoch(epoch, train_mse, test_mse):
            rows.append((epoch, f"{train_mse:.10g}", f"{test_mse:.10g}"))
            print(f"epoch {epoch + 1}/{netcfg.finetune_epochs}: "
                  f"train mse {train_mse:.5f} test mse {test_mse:.5f}")

    net = deepnet.finetune(net, train.cases, netcfg,
                           test=test.cases if test else None, on_epoch=on_epoch)
    weights_path = out / "finetune.weights"
    data.save_weights(weights_path, net)
    csv_path = out / "finetune_errors.csv"
    _write_csv(csv_path, header, rows)
    if cfg.figures:
        plots.plot_finetune(csv_path, out / "finetune_errors.png", cfg.mode)
    print(f"weights: {weights_path}")
    print(f"errors:  {csv_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    net = data.load_weights(args.weights)
    images = cfg.test_images or cfg.train_images
    labels = cfg.test_labels or cfg.train_labels
    n = cfg.test_subset if cfg.test_images else cfg.subset
    ds = _load_dataset(images, labels, n, cfg.seed, cfg.binarize, "test")
    print(f"cases: {len(ds)}")
    if net.mode == "classifier":
        if ds.cases[0].label is None:
            raise IntegrityError("classifier evaluation needs labeled data")
        wrong = deepnet.misclassified(net, ds.cases)
        print(f"misclassified: {wrong}")
        print(f"accuracy: {1.0 - wrong / len(ds):.4f}")
    else:
        if net.mode == "stack":
            net = deepnet.unroll(net)
        mse = deepnet.reconstruction_mse(net, deepnet.cases_matrix(ds.cases))
        print(f"reconstruction_mse: {mse:.6g}")
    return 0


def cmd_bench(args) -> int:
    """One pre-training epoch over the configured cases, run through the
    map/reduce engine at each worker count; outputs must be bit-identical
    across the sweep."""
    cfg = RunConfig.load(args.config, _overrides(args))
    netcfg = cfg.network_config()
    train, _ = _load_train_test(cfg)
    out = _out_dir(cfg)
    engine = deepnet.build_engine()
    results = []
    reference = None
    for workers in cfg.bench_workers:
        weights = rbm.randomize_weights(netcfg.num_nodes[0], netcfg.num_nodes[1],
                                        cfg.seed)
        velocity = None
        hp = netcfg.hp.at_epoch(0)
        start = time.perf_counter()
        for bi, batch in enumerate(deepnet.minibatches(list(train.cases),
                                                       netcfg.batch_size)):
            spec = deepnet.rbm_job_spec(batch, weights, hp,
                                        deepnet.derive_job_seed(cfg.seed, 0, 0, bi),
                                        workers)
            sums = rbm.parse_summed_output(engine.run_job(spec).output, weights)
            weights, velocity = rbm.apply_summed(weights, sums, len(batch),
                                                 hp, velocity)
        wall = time.perf_counter() - start
        packed = rbm.pack_layer(weights)
        if reference is None:
            reference = packed
        elif packed != reference:
            raise IntegrityError(
                f"outputs at workers={workers} differ from the first sweep point")
        results.append((workers, wall))
        print(f"workers {workers}: {wall:.2f} s")
    base = results[0][1]
    rows = [(w, f"{wall:.6f}", f"{base / wall:.4f}") for w, wall in results]
    csv_path = out / "bench.csv"
    _write_csv(csv_path, ("workers", "wall_time", "speedup"), rows)
    if cfg.figures:
        plots.plot_bench(csv_path, out / "bench.png")
    print(f"bench: {csv_path} (outputs bit-identical across sweep)")
    return 0


def cmd_serve(args) -> int:
    service = serve.DemoService.from_files(args.classifier_weights,
                                           args.autoencoder_weights)
    ui_dir = args.ui_dir
    if ui_dir is None and Path("frontend/dist/index.html").is_file():
        ui_dir = "frontend/dist"
    serve.run(service, port=args.port, ui_dir=ui_dir, host=args.host)
    return 0


_OVERRIDE_KEYS = (
    "mode", "layers", "max_epoch", "finetune_epochs", "batch_size", "lr",
    "finetune_lr", "cd_steps", "top_linear", "binarize", "seed", "workers",
    "use_engine", "train_images", "train_labels", "test_images", "test_labels",
    "subset", "test_subset", "out_dir", "bench_workers",
)


def _overrides(args) -> dict:
    values = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    if getattr(args, "no_figures", False):
        values["figures"] = "false"
    return values


def _add_config_args(p: argparse.ArgumentParser, bench: bool = False):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--mode", choices=("autoencoder", "classifier"))
    p.add_argument("--layers", help="comma-separated stack sizes, e.g. 784,256,64,30")
    p.add_argument("--max-epoch", dest="max_epoch", type=int)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--finetune-lr", dest="finetune_lr", type=float)
    p.add_argument("--cd-steps", dest="cd_steps", type=int)
    p.add_argument("--top-linear", dest="top_linear", action="store_const", const="true")
    p.add_argument("--binarize", action="store_const", const="true")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--use-engine", dest="use_engine", action="store_const", const="true",
                   help="route every training batch through map/reduce jobs")
    p.add_argument("--train-images", dest="train_images")
    p.add_argument("--train-labels", dest="train_labels")
    p.add_argument("--test-images", dest="test_images")
    p.add_argument("--test-labels", dest="test_labels")
    p.add_argument("--subset", type=int, help="train on this many cases (0 = all)")
    p.add_argument("--test-subset", dest="test_subset", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--no-figures", dest="no_figures", action="store_true")
    if bench:
        p.add_argument("--bench-workers", dest="bench_workers",
                       help="comma-separated worker counts, e.g. 1,2,4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepmr",
        description="layerwise pre-training and backprop fine-tuning of digit "
                    "networks on an in-process map/reduce engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate a synthetic digit corpus in IDX format")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=12000)
    p.add_argument("--test", type=int, default=2500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("pretrain", help="greedy layerwise RBM pre-training")
    _add_config_args(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="backprop fine-tuning of pretrained weights")
    p.add_argument("--init-weights", dest="init_weights", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="accuracy or reconstruction error of a weight file")
    p.add_argument("--weights", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="speedup sweep of one pre-training epoch")
    _add_config_args(p, bench=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="HTTP demo service for the drawing UI")
    p.add_argument("--classifier-weights", dest="classifier_weights")
    p.add_argument("--autoencoder-weights", dest="autoencoder_weights")
    p.add_argument("--port", type=int, default=8600)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", dest="ui_dir")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, IntegrityError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (JobError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
