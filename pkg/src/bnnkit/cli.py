"""Training / evaluation command line.

One process runs one experiment: train the selected method, evaluate the
posterior predictive on the test split at nst=0 and (if requested) nst>0,
fit a temperature on the validation split, and write the run artifacts
(config echo, per-epoch metrics, reliability files, posterior checkpoint)
into --out-dir.  Final metrics are printed as grep-able lines::

    FINAL method=<m> nst=<s> err=<e> ece=<a> mce=<b> nll=<c>

Exit codes: 0 ok, 1 user error (flags, files, layouts), 2 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import calibration, checkpoint, data, laplace, mc_dropout, predictive, sgd, sgld, vi
from .errors import ConfigError, DataError, DivergenceError, LayoutError, NumericError
from .mlp import Mlp, MlpSpec, init_params
from .params import (
    BIAS_INFORMATIVE,
    BIAS_UNINFORMATIVE,
    FlatParams,
    PriorSpec,
    prior_from_checkpoint,
    zero_prior,
)
from .seeding import seed_streams

METHODS = ("vanilla", "vi", "mc_dropout", "sgld", "la")
DATASETS = ("mnist", "blobs")

MNIST_ENV = "BNN_MNIST_DIR"
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# Which method accepts which method-specific flag.
_FLAG_METHODS = {
    "wd": {"vanilla"},
    "prior_sig": {"vi", "mc_dropout", "sgld", "la"},
    "kld": {"vi", "mc_dropout"},
    "nst": {"vi", "mc_dropout", "sgld", "la"},
    "p_drop": {"mc_dropout"},
    "ninflate": {"sgld", "la"},
    "nd": {"sgld"},
    "burnin": {"sgld"},
    "thin": {"sgld"},
    "damping": {"la"},
}

_BIAS_CHOICES = {
    "vanilla": ("penalty", "ignore"),
    "vi": (BIAS_INFORMATIVE, BIAS_UNINFORMATIVE),
    "sgld": (BIAS_INFORMATIVE, BIAS_UNINFORMATIVE),
    "la": (BIAS_INFORMATIVE, BIAS_UNINFORMATIVE),
    "mc_dropout": (mc_dropout.BIAS_GAUSSIAN, mc_dropout.BIAS_SPIKYMIX, mc_dropout.BIAS_IGNORE),
}

_BIAS_DEFAULT = {
    "vanilla": "penalty",
    "vi": BIAS_INFORMATIVE,
    "sgld": BIAS_INFORMATIVE,
    "la": BIAS_INFORMATIVE,
    "mc_dropout": mc_dropout.BIAS_SPIKYMIX,
}


@dataclass(frozen=True)
class RunConfig:
    method: str
    dataset: str = "mnist"
    hidden: tuple[int, ...] = (1000, 1000, 1000)
    epochs: int = 100
    lr: float = 1e-2
    momentum: float = 0.5
    batch_size: int = 128
    seed: int = 0
    data_seed: int = 1234
    train_fraction: float = 0.5
    patience: int = 10
    tau: float = 1.0
    pretrained: str | None = None
    wd: float = 0.0
    bias: str = ""
    prior_sig: float = 1.0
    kld: float = 1e-3
    nst: int = 0
    p_drop: float = 0.1
    ninflate: float = 1e3
    nd: float = 0.1
    burnin: int = 5
    thin: int = 10
    damping: float = laplace.DEFAULT_DAMPING
    bins: int = calibration.DEFAULT_BINS
    ece_formula: str = calibration.ECE_STANDARD
    out_dir: str = ""
    force: bool = False
    dump_probs: bool = False
    data_dir: str | None = None
    blobs_classes: int = 3
    blobs_per_class: int = 200
    blobs_dim: int = 16
    blobs_spread: float = 0.25

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        raw = json.loads(text)
        raw["hidden"] = tuple(raw["hidden"])
        return cls(**raw)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would sys.exit(2)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="bnnkit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--dataset", choices=DATASETS, default="mnist")
    p.add_argument("--hidden", default="1000,1000,1000", help="comma-separated layer widths, empty for linear")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--momentum", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=1234)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--patience", type=int, default=10, help="early-stop patience in epochs, 0 disables")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--pretrained", default=None, help="checkpoint used as prior mean / warm start")
    p.add_argument("--wd", type=float, default=None)
    p.add_argument("--bias", default=None, help="bias treatment (vocabulary depends on --method)")
    p.add_argument("--prior-sig", type=float, default=None)
    p.add_argument("--kld", type=float, default=None)
    p.add_argument("--nst", type=int, default=None)
    p.add_argument("--p-drop", type=float, default=None)
    p.add_argument("--ninflate", type=float, default=None)
    p.add_argument("--nd", type=float, default=None)
    p.add_argument("--burnin", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--damping", type=float, default=None)
    p.add_argument("--bins", type=int, default=calibration.DEFAULT_BINS)
    p.add_argument("--ece-formula", choices=calibration.ECE_FORMULAS, default=calibration.ECE_STANDARD)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty --out-dir")
    p.add_argument("--dump-probs", action="store_true", help="also write test-set probabilities as CSV")
    p.add_argument("--data-dir", default=None, help=f"MNIST IDX directory (or ${MNIST_ENV})")
    p.add_argument("--blobs-classes", type=int, default=3)
    p.add_argument("--blobs-per-class", type=int, default=200)
    p.add_argument("--blobs-dim", type=int, default=16)
    p.add_argument("--blobs-spread", type=float, default=0.25)
    return p


def _check(cond: bool, flag: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{flag}: {message}")


_METHOD_DEFAULTS = {
    "wd": 0.0,
    "prior_sig": 1.0,
    "kld": 1e-3,
    "nst": 0,
    "p_drop": 0.1,
    "ninflate": 1e3,
    "nd": 0.1,
    "burnin": 5,
    "thin": 10,
    "damping": laplace.DEFAULT_DAMPING,
}


def parse_args(argv) -> RunConfig:
    ns = _build_parser().parse_args(argv)
    method = ns.method

    for flag, methods in _FLAG_METHODS.items():
        if getattr(ns, flag) is not None and method not in methods:
            raise ConfigError(f"--{flag.replace('_', '-')} is not valid for method {method!r}")

    fields = {f: getattr(ns, f) for f in _FLAG_METHODS}
    for f, v in fields.items():
        if v is None:
            fields[f] = _METHOD_DEFAULTS[f]
    if method == "la" and ns.prior_sig is None:
        fields["prior_sig"] = 0.01  # larger scales make the Fisher posterior unstable

    bias = ns.bias if ns.bias is not None else _BIAS_DEFAULT[method]
    if bias not in _BIAS_CHOICES[method]:
        raise ConfigError(
            f"--bias: {bias!r} is not valid for method {method!r} "
            f"(choose from {', '.join(_BIAS_CHOICES[method])})"
        )

    try:
        hidden = tuple(int(tok) for tok in ns.hidden.split(",") if tok.strip() != "")
    except ValueError:
        raise ConfigError(f"--hidden: cannot parse {ns.hidden!r}") from None

    _check(all(h >= 1 for h in hidden), "--hidden", "layer widths must be >= 1")
    _check(ns.epochs >= 1, "--epochs", "must be >= 1")
    _check(ns.lr > 0, "--lr", "must be positive")
    _check(0.0 <= ns.momentum < 1.0, "--momentum", "must be in [0,1)")
    _check(ns.batch_size >= 1, "--batch-size", "must be >= 1")
    _check(ns.seed >= 0, "--seed", "must be non-negative")
    _check(ns.data_seed >= 0, "--data-seed", "must be non-negative")
    _check(0.0 < ns.train_fraction < 1.0, "--train-fraction", "must be in (0,1)")
    _check(ns.patience >= 0, "--patience", "must be non-negative")
    _check(ns.tau > 0, "--tau", "must be positive")
    _check(fields["wd"] >= 0, "--wd", "must be non-negative")
    _check(fields["prior_sig"] > 0, "--prior-sig", "must be positive")
    _check(fields["kld"] >= 0, "--kld", "must be non-negative")
    _check(fields["nst"] >= 0, "--nst", "must be non-negative")
    _check(0.0 <= fields["p_drop"] <= 1.0, "--p-drop", "must be in [0,1]")
    _check(fields["ninflate"] >= 1, "--ninflate", "must be >= 1")
    _check(fields["nd"] >= 0, "--nd", "must be non-negative")
    _check(fields["burnin"] >= 0, "--burnin", "must be non-negative")
    _check(fields["thin"] >= 1, "--thin", "must be >= 1")
    _check(fields["damping"] >= 0, "--damping", "must be non-negative")
    _check(ns.bins >= 1, "--bins", "must be >= 1")
    if method == "sgld":
        _check(ns.epochs > fields["burnin"], "--burnin", "must be below --epochs")
    _check(ns.blobs_classes >= 2, "--blobs-classes", "must be >= 2")
    _check(ns.blobs_per_class >= 2, "--blobs-per-class", "must be >= 2")
    _check(ns.blobs_dim >= 1, "--blobs-dim", "must be >= 1")

    out_dir = ns.out_dir if ns.out_dir is not None else str(Path("runs") / method)
    return RunConfig(
        method=method,
        dataset=ns.dataset,
        hidden=hidden,
        epochs=ns.epochs,
        lr=ns.lr,
        momentum=ns.momentum,
        batch_size=ns.batch_size,
        seed=ns.seed,
        data_seed=ns.data_seed,
        train_fraction=ns.train_fraction,
        patience=ns.patience,
        tau=ns.tau,
        pretrained=ns.pretrained,
        wd=fields["wd"],
        bias=bias,
        prior_sig=fields["prior_sig"],
        kld=fields["kld"],
        nst=fields["nst"],
        p_drop=fields["p_drop"],
        ninflate=fields["ninflate"],
        nd=fields["nd"],
        burnin=fields["burnin"],
        thin=fields["thin"],
        damping=fields["damping"],
        bins=ns.bins,
        ece_formula=ns.ece_formula,
        out_dir=out_dir,
        force=ns.force,
        dump_probs=ns.dump_probs,
        data_dir=ns.data_dir,
        blobs_classes=ns.blobs_classes,
        blobs_per_class=ns.blobs_per_class,
        blobs_dim=ns.blobs_dim,
        blobs_spread=ns.blobs_spread,
    )


def find_mnist(data_dir: str | None):
    """Resolve the four IDX files, accepting .gz variants."""
    root = Path(data_dir or os.environ.get(MNIST_ENV) or "data/mnist")
    paths = {}
    for key, stem in MNIST_FILES.items():
        plain, gz = root / stem, root / (stem + ".gz")
        if plain.exists():
            paths[key] = plain
        elif gz.exists():
            paths[key] = gz
        else:
            raise FileNotFoundError(
                f"MNIST file {stem} not found under {root} (set --data-dir or ${MNIST_ENV})"
            )
    return paths


def _load_splits(cfg: RunConfig):
    if cfg.dataset == "mnist":
        paths = find_mnist(cfg.data_dir)
        full = data.load_idx(paths["train_images"], paths["train_labels"])
        ds_test = data.load_idx(paths["test_images"], paths["test_labels"])
    else:
        full, ds_test = data.blobs_with_test(
            cfg.blobs_classes, cfg.blobs_per_class, max(cfg.blobs_per_class // 2, 1),
            cfg.blobs_dim, cfg.blobs_spread, cfg.data_seed,
        )
    ds_train, ds_valid = data.split(full, data.SplitConfig(cfg.train_fraction, cfg.data_seed))
    return ds_train, ds_valid, ds_test


def _build_prior(cfg: RunConfig, layout) -> PriorSpec:
    bias_mode = cfg.bias if cfg.bias in (BIAS_INFORMATIVE, BIAS_UNINFORMATIVE) else BIAS_INFORMATIVE
    if cfg.pretrained is not None:
        return prior_from_checkpoint(cfg.pretrained, cfg.prior_sig, bias_mode, layout)
    return zero_prior(layout, cfg.prior_sig, bias_mode)


def _train(cfg: RunConfig, spec: MlpSpec, ds_train, ds_valid, history: list):
    """Dispatch to the method trainer; returns (sampler, checkpoint writer)."""
    model = Mlp(spec)
    streams = seed_streams(cfg.seed)
    warm = cfg.pretrained is not None
    on_epoch = history.append

    if cfg.method == "vanilla":
        prior = _build_prior(cfg, model.layout)  # mean only; used as decay center
        sgd_cfg = sgd.SgdConfig(
            lr=cfg.lr, momentum=cfg.momentum, epochs=cfg.epochs, wd=cfg.wd,
            wd_center=sgd.WD_CENTER_PRIOR if warm else sgd.WD_CENTER_ZERO,
            bias_penalty=sgd.BIAS_PENALTY if cfg.bias == "penalty" else sgd.BIAS_IGNORE,
            early_stop_patience=cfg.patience, batch_size=cfg.batch_size,
        )
        theta0 = FlatParams(prior.mean, model.layout) if warm else init_params(spec, streams.init_seed)
        theta = sgd.fit_sgd(
            model, theta0, ds_train, ds_valid, sgd_cfg,
            center=prior.mean if warm else None, tau=cfg.tau,
            shuffle_seed=streams.shuffle_seed, on_epoch=on_epoch,
        )
        sampler = predictive.point_sampler(theta, streams.eval_rng())
        return sampler, lambda path: checkpoint.save_flat_params(path, theta)

    prior = _build_prior(cfg, model.layout)

    if cfg.method == "vi":
        vcfg = vi.ViConfig(
            prior=prior, kld=cfg.kld, nst=cfg.nst, lr=cfg.lr, momentum=cfg.momentum,
            epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed,
            early_stop_patience=cfg.patience, tau=cfg.tau,
        )
        state = vi.vi_fit(spec, ds_train, ds_valid, vcfg, on_epoch, init_at_prior_mean=warm)
        sampler = vi.make_sampler(state, model.layout, streams.eval_rng())
        return sampler, lambda path: vi.save_state(path, state, model.layout)

    if cfg.method == "mc_dropout":
        mcfg = mc_dropout.McdConfig(
            prior=prior, p_drop=cfg.p_drop, bias_opt=cfg.bias, kld=cfg.kld, nst=cfg.nst,
            lr=cfg.lr, momentum=cfg.momentum, epochs=cfg.epochs, batch_size=cfg.batch_size,
            seed=cfg.seed, early_stop_patience=cfg.patience, tau=cfg.tau,
        )
        state = mc_dropout.mcd_fit(spec, ds_train, ds_valid, mcfg, on_epoch, init_at_prior_mean=warm)
        sampler = mc_dropout.make_sampler(
            state, prior, cfg.p_drop, cfg.bias, model.layout, streams.eval_rng()
        )
        return sampler, lambda path: mc_dropout.save_state(path, state, model.layout)

    if cfg.method == "sgld":
        scfg = sgld.SgldConfig(
            prior=prior, lr=cfg.lr, ninflate=cfg.ninflate, nd=cfg.nd,
            burnin_epochs=cfg.burnin, thin_steps=cfg.thin, epochs=cfg.epochs,
            batch_size=cfg.batch_size, nst=cfg.nst, seed=cfg.seed, tau=cfg.tau,
        )
        acc = sgld.sgld_fit(spec, ds_train, ds_valid, scfg, on_epoch, init_at_prior_mean=warm)
        sampler = sgld.make_sampler(acc, model.layout, streams.eval_rng())
        return sampler, lambda path: sgld.save_state(path, acc, model.layout)

    if cfg.method == "la":
        sgd_cfg = sgd.SgdConfig(
            lr=cfg.lr, momentum=cfg.momentum, epochs=cfg.epochs,
            early_stop_patience=cfg.patience, batch_size=cfg.batch_size,
        )
        post = laplace.la_fit(
            spec, ds_train, ds_valid, sgd_cfg, prior, ninflate=cfg.ninflate,
            damping=cfg.damping, tau=cfg.tau, seed=cfg.seed, on_epoch=on_epoch,
            init_at_prior_mean=warm,
        )
        sampler = laplace.make_sampler(post, streams.eval_rng())
        return sampler, lambda path: laplace.save_state(path, post)

    raise ConfigError(f"unknown method {cfg.method!r}")


def _surrogate_logits(sampler, model: Mlp, ds, nst: int) -> np.ndarray:
    """True logits at nst=0, log of averaged probabilities otherwise."""
    if nst == 0:
        return model.logits(sampler.mean().values, ds.inputs)
    pred = predictive.predict(sampler, ds, nst)
    return np.log(np.maximum(pred.probs, calibration.PROB_FLOOR))


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    if out.exists() and any(out.iterdir()) and not cfg.force:
        raise ConfigError(f"--out-dir: {out} is not empty (pass --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")

    ds_train, ds_valid, ds_test = _load_splits(cfg)
    spec = MlpSpec(ds_train.inputs.shape[1], cfg.hidden, ds_train.num_classes)
    model = Mlp(spec)

    history: list[dict] = []
    sampler, save_posterior = _train(cfg, spec, ds_train, ds_valid, history)

    with open(out / "metrics.csv", "w") as fh:
        fh.write("epoch,train_loss,valid_loss,valid_error\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{row['train_loss']!r},{row['valid_loss']!r},{row['valid_error']!r}\n"
            )
    save_posterior(out / "posterior.ckpt")

    n_test, k = len(ds_test), ds_test.num_classes
    headline = cfg.nst
    t_star = calibration.fit_temperature(
        _surrogate_logits(sampler, model, ds_valid, headline), ds_valid.labels
    )

    results = {}
    for s in sorted({0, cfg.nst}):
        pred = predictive.predict(sampler, ds_test, s)
        table = calibration.bin_accumulate(pred.probs, ds_test.labels, cfg.bins)
        nll_value = calibration.nll(pred.probs, ds_test.labels)
        results[s] = {
            "err": predictive.error_rate(pred, ds_test.labels),
            "report": calibration.build_report(table, n_test, k, nll_value, t_star, cfg.ece_formula),
            "table": table,
            "pred": pred,
        }

    test_logits = _surrogate_logits(sampler, model, ds_test, headline)
    probs_t = calibration.scaled_probs(test_logits, t_star)
    table_t = calibration.bin_accumulate(probs_t, ds_test.labels, cfg.bins)
    report_t = calibration.build_report(
        table_t, n_test, k, calibration.nll(probs_t, ds_test.labels), t_star, cfg.ece_formula
    )

    head = results[headline]["report"]
    calibration.reliability_emit(
        results[headline]["table"], out / "reliability_T1.csv", out / "reliability_T1.svg",
        {"T": 1.0, "ECE": head.ece, "MCE": head.mce, "NLL": head.nll},
    )
    calibration.reliability_emit(
        table_t, out / "reliability_Tstar.csv", out / "reliability_Tstar.svg",
        {"T": t_star, "ECE": report_t.ece, "MCE": report_t.mce, "NLL": report_t.nll},
    )
    if cfg.dump_probs:
        predictive.write_probs_csv(results[headline]["pred"], out / "probs.csv")

    for s, r in sorted(results.items()):
        rep = r["report"]
        print(
            f"FINAL method={cfg.method} nst={s} err={r['err']:.6f} "
            f"ece={rep.ece:.6f} mce={rep.mce:.6f} nll={rep.nll:.6f}"
        )
    print(
        f"TEMPERATURE method={cfg.method} nst={headline} t_star={t_star:.4f} "
        f"ece={report_t.ece:.6f} mce={report_t.mce:.6f} nll={report_t.nll:.6f}"
    )
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
        return run(cfg)
    except (ConfigError, LayoutError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
