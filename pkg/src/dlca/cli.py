"""Command-line front end: ``dlca {generate,train,eval,sweep,report,selftest}``.

Configuration is an INI document.  Sections that appear in a file must list
every key of that section; sections left out keep their defaults.  Times are
in gamma_D-scaled units and angles accept a ``pi`` suffix (``1.86pi``).

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import io
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, classifier, datasets, experiments, selftest
from .container import FormatError
from .dynamics import ChannelParams, DynamicsError, MeasurementWindow
from .qcore import StateError

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4

FIGURES = ("qber-map", "feedback-map", "accuracy-theta", "lambda", "accuracy-window", "schedule",
           "bayes-theta", "table-accuracies")

DEFAULTS = {
    "channel": {"gamma_D": "1.0", "gamma_E": "1.0", "eta": "0.5", "omega": "1.0", "t_final": "3.0",
                "dt": "0.001"},
    "attack": {"variant": "continuous", "theta": "0.5pi", "phi": "none", "window_start": "0.0",
               "window_duration": "full"},
    "dataset": {"n": "25000", "train_fraction": "0.8", "master_seed": "0", "split_seed": "0",
                "bin_factor": "10", "path": "dataset.dlca"},
    "training": {"batch_size": "32", "epochs": "1", "init_seed": "0", "shuffle_seed": "0"},
    "sweep": {"theta_grid": "0:2pi:64", "time_grid": "0:3:31", "phi_grid": "0:2pi:64",
              "delta_t_grid": "0.1:2.9:15", "retrains": "4", "n_train": "20000", "n_test": "5000",
              "objective": "min_lambda"},
    "output": {"directory": "dlca-out"},
}


class ConfigError(ValueError):
    pass


def _angle(text: str) -> float:
    t = text.strip().lower().replace(" ", "")
    if t.endswith("pi"):
        head = t[:-2].rstrip("*")
        return (float(head) if head not in ("", "+") else 1.0) * math.pi
    return float(t)


def _grid(text: str, periodic: bool) -> np.ndarray:
    """``a:b:n`` (n points; ``b`` excluded for angle grids) or a comma list."""
    parts = text.split(":")
    if len(parts) == 3:
        a, b, n = _angle(parts[0]), _angle(parts[1]), int(parts[2])
        if n < 1:
            raise ValueError("grid needs at least one point")
        return np.linspace(a, b, n, endpoint=not periodic)
    return np.array([_angle(p) for p in text.split(",")])


@dataclass
class RunConfig:
    raw: dict

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        raw = {s: dict(v) for s, v in DEFAULTS.items()}
        if path is None:
            return cls._checked(raw)
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for sec in cp.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            keys = dict(cp[sec])
            unknown = sorted(set(keys) - set(DEFAULTS[sec]))
            if unknown:
                raise ConfigError(f"{path}: unknown key(s) in [{sec}]: {', '.join(unknown)}")
            missing = [k for k in DEFAULTS[sec] if k not in keys]
            if missing:
                raise ConfigError(f"{path}: section [{sec}] is missing key(s): {', '.join(missing)}")
            raw[sec] = keys
        return cls._checked(raw)

    @classmethod
    def _checked(cls, raw) -> "RunConfig":
        cfg = cls(raw)
        try:
            cfg.params
            cfg.window
            cfg.theta, cfg.phi
            int(raw["dataset"]["n"]), float(raw["dataset"]["train_fraction"]), int(raw["dataset"]["bin_factor"])
            int(raw["training"]["batch_size"]), int(raw["training"]["epochs"])
            if raw["attack"]["variant"] not in ("continuous", "feedback"):
                raise ValueError(f"attack variant {raw['attack']['variant']!r} must be continuous or feedback")
            if raw["sweep"]["objective"] not in experiments.OBJECTIVES:
                raise ValueError(f"sweep objective must be one of {experiments.OBJECTIVES}")
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        return cfg

    def get(self, sec, key) -> str:
        return self.raw[sec][key]

    @property
    def params(self) -> ChannelParams:
        c = self.raw["channel"]
        gD = float(c["gamma_D"])
        scale = 1.0 / gD if gD > 0 else 1.0
        return ChannelParams(gD, float(c["gamma_E"]), float(c["eta"]), float(c["omega"]),
                             float(c["t_final"]) * scale, float(c["dt"]) * scale)

    @property
    def window(self) -> MeasurementWindow:
        p = self.params
        a = self.raw["attack"]
        scale = 1.0 / p.gamma_D if p.gamma_D > 0 else 1.0
        start = float(a["window_start"]) * scale
        dur = p.t_final - start if a["window_duration"] == "full" else float(a["window_duration"]) * scale
        w = MeasurementWindow(start, dur)
        w.step_range(p, int(self.raw["dataset"]["bin_factor"]))
        return w

    @property
    def theta(self) -> float:
        return _angle(self.raw["attack"]["theta"])

    @property
    def phi(self) -> float | None:
        if self.raw["attack"]["variant"] != "feedback":
            return None
        v = self.raw["attack"]["phi"]
        if v == "none":
            raise ValueError("feedback variant needs a phi value")
        return _angle(v)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        raw = {s: dict(v) for s, v in self.raw.items()}
        raw["dataset"]["master_seed"] = str(seed)
        return RunConfig(raw)

    def text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_dict(self.raw)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _provenance(cfg: RunConfig, command: str) -> dict:
    return {"version": __version__, "command": command, "master_seed": int(cfg.get("dataset", "master_seed")),
            "config": cfg.raw}


def _outdir(args, cfg) -> Path:
    d = Path(args.out or cfg.get("output", "directory"))
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- commands -----------------------------------------------------------------------

def cmd_generate(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    ds = datasets.generate_dataset(int(cfg.get("dataset", "n")), cfg.params, cfg.theta, cfg.window,
                                   master_seed=int(cfg.get("dataset", "master_seed")),
                                   bin_factor=int(cfg.get("dataset", "bin_factor")), phi=cfg.phi,
                                   workers=args.workers)
    path = out / cfg.get("dataset", "path")
    datasets.save(ds, path, run=_provenance(cfg, "generate"))
    (out / "generate.ini").write_text(cfg.text())
    print(cfg.text(), end="")
    print(f"wrote {path}: {len(ds)} currents of length {ds.seq_len}")
    return 0


def _train_test(ds, cfg):
    tr, te = datasets.split(ds, float(cfg.get("dataset", "train_fraction")), int(cfg.get("dataset", "split_seed")))
    s = datasets.fit_standardizer(tr)
    return tr, te, s


def cmd_train(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    ds = datasets.load(args.dataset)
    tr, _, s = _train_test(ds, cfg)
    t = cfg.raw["training"]
    tc = classifier.TrainConfig(int(t["epochs"]), int(t["batch_size"]), int(t["shuffle_seed"]),
                                int(t["init_seed"]))
    res = classifier.train(datasets.preprocess(tr, s), tc, standardizer=s)
    res.model.info["run"] = _provenance(cfg, "train")
    res.model.info["split"] = {"train_fraction": float(cfg.get("dataset", "train_fraction")),
                               "split_seed": int(cfg.get("dataset", "split_seed")),
                               "dataset_master_seed": ds.metadata.master_seed}
    if tc.epochs != 1:
        res.model.info["note"] = f"trained for {tc.epochs} epochs (default is one)"
    classifier.save_model(res.model, out / "model.dlcm")
    experiments.write_rows_csv(out / "loss_curve.csv", [{"batch": i, "loss": repr(float(v))}
                                                        for i, v in enumerate(res.losses)],
                               _provenance(cfg, "train"))
    print(f"trained on {len(tr)} currents, final batch loss {res.losses[-1]:.4f}; wrote {out / 'model.dlcm'}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    model = classifier.load_model(args.model)
    ds = datasets.load(args.dataset)
    s = model.standardizer
    if s is None:
        raise FormatError(f"{args.model}: checkpoint carries no standardizer")
    split_info = model.info.get("split")
    if args.split == "test" and split_info and split_info["dataset_master_seed"] == ds.metadata.master_seed:
        _, ds = datasets.split(ds, split_info["train_fraction"], split_info["split_seed"])
    res = classifier.evaluate(model, datasets.preprocess(ds, s))
    meta = _provenance(cfg, "eval")
    rows = [{"truth": k, **{f"pred_{j}": int(res.confusion[k, j]) for j in range(4)}} for k in range(4)]
    experiments.write_rows_csv(out / "confusion.csv", rows, meta)
    print(f"accuracy {res.accuracy:.4f} on {res.n} currents")
    print("per-class accuracy " + " ".join(f"{a:.3f}" for a in res.per_class_accuracy))
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    p = cfg.params
    sw = cfg.raw["sweep"]
    seed = int(cfg.get("dataset", "master_seed"))
    meta = _provenance(cfg, f"sweep --figure {args.figure}")
    thetas = _grid(sw["theta_grid"], periodic=True)
    path = out / f"{args.figure}.csv"
    n_train, n_test, retrains = int(sw["n_train"]), int(sw["n_test"]), int(sw["retrains"])
    if args.figure == "qber-map":
        times = _grid(sw["time_grid"], periodic=False) / p.gamma_D
        experiments.write_matrix_csv(path, "theta", thetas, "t", times,
                                     experiments.qber_heatmap(thetas, times, p), meta)
    elif args.figure == "feedback-map":
        phis = _grid(sw["phi_grid"], periodic=True)
        M = experiments.feedback_heatmap(thetas, phis, p, cfg.window if cfg.window.t_start > 0 else None)
        experiments.write_matrix_csv(path, "theta", thetas, "phi", phis, M, meta)
        i, j = np.unravel_index(np.argmin(M), M.shape)
        print(f"minimum QBER {M[i, j]:.4f} at theta={thetas[i] / math.pi:.3f}pi, phi={phis[j] / math.pi:.3f}pi")
    elif args.figure in ("accuracy-theta", "lambda"):
        res = experiments.sweep_theta(thetas, p, None, n_train, n_test, retrains, seed, args.workers)
        experiments.write_rows_csv(path, list(res.rows()), {**meta, **res.metadata})
        if args.figure == "lambda":
            print(f"lowest lambda among the four reference angles at theta="
                  f"{experiments.argmin_lambda(res) / math.pi:.3f}pi")
    elif args.figure == "bayes-theta":
        res = experiments.bayes_accuracy_curve(thetas, p, None, n_test, seed)
        experiments.write_rows_csv(path, list(res.rows()), {**meta, **res.metadata})
    elif args.figure == "accuracy-window":
        dts = _grid(sw["delta_t_grid"], periodic=False) / p.gamma_D
        res = experiments.accuracy_vs_window(dts, p, cfg.theta, None, n_train, n_test, retrains, seed, args.workers)
        experiments.write_rows_csv(path, list(res.rows()), {**meta, **res.metadata})
    elif args.figure == "schedule":
        curve = _read_accuracy_curve(out)
        sched, times, trace = experiments.optimized_angle_traces(sw["objective"], p, curve)
        rows = [{"t": repr(float(t)), "qber": repr(float(q)), "theta": repr(sched.theta_at(min(t, p.t_final - 1e-12)))}
                for t, q in zip(times, trace)]
        experiments.write_rows_csv(path, rows, {**meta, "objective": sched.objective,
                                                "accuracy_source": sched.accuracy_source})
    elif args.figure == "table-accuracies":
        win = experiments.window_in_units(p, *experiments.DEFAULT_WINDOW)
        rows = []
        for key, theta, w in (("continuous_sigma_z", math.pi / 2, MeasurementWindow.full(p)),
                              ("windowed_optimal", experiments.OPTIMAL_THETA, win)):
            q, accs = experiments.run_accuracy_job(experiments.AccuracyJob(p, theta, w, n_train, n_test, retrains,
                                                                           seed))
            rows.append({"key": key, "qber": repr(q), "acc_mean": repr(float(accs.mean())),
                         "acc_std": repr(float(accs.std()))})
        experiments.write_rows_csv(path, rows, meta)
    print(f"wrote {path}")
    return 0


def _read_accuracy_curve(out: Path):
    for name in ("accuracy-theta.csv", "lambda.csv", "bayes-theta.csv"):
        f = out / name
        if f.exists():
            rows = experiments.read_rows_csv(f)
            return (np.array([float(r["theta"]) for r in rows]), np.array([float(r["acc_mean"]) for r in rows]))
    return None


def cmd_report(args, cfg: RunConfig) -> int:
    out = _outdir(args, cfg)
    src = out / "table-accuracies.csv"
    if not src.exists():
        raise experiments.MissingPrerequisite(
            f"{src} not found; run `dlca sweep --figure table-accuracies --out {out}` first")
    acc = {r["key"]: (float(r["acc_mean"]), float(r["acc_std"])) for r in experiments.read_rows_csv(src)}
    rows = experiments.summary_table(cfg.params, acc)
    experiments.write_rows_csv(out / "summary.csv", rows, _provenance(cfg, "report"))
    for r in rows:
        print(f"{r['scheme']:<42} qber={r.get('qber', ''):<10} accuracy={r.get('accuracy', '')}")
    return 0


def cmd_selftest(args, cfg: RunConfig) -> int:
    return 0 if selftest.run() else EXIT_NUMERIC


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlca", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dlca {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="override [dataset] master_seed")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", help="output directory (default: [output] directory)")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate a labelled photocurrent dataset")
    t = sub.add_parser("train", parents=[common], help="train the LSTM on a dataset")
    t.add_argument("dataset")
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("model")
    e.add_argument("dataset")
    e.add_argument("--split", choices=("test", "all"), default="test")
    s = sub.add_parser("sweep", parents=[common], help="write one figure-analog CSV")
    s.add_argument("--figure", choices=FIGURES, required=True)
    sub.add_parser("report", parents=[common], help="collate the attack summary table")
    sub.add_parser("selftest", parents=[common], help="run the fast invariant suite")
    return ap


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "report": cmd_report, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config).with_seed(args.seed)
    except (ConfigError, OSError) as exc:
        print(f"dlca: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except (DynamicsError, classifier.TrainingDiverged, StateError, FloatingPointError) as exc:
        print(f"dlca: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError, experiments.MissingPrerequisite) as exc:
        print(f"dlca: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"dlca: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
