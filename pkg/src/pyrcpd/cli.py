"""``pyrcpd generate|train|eval|detect``.

Configuration is a JSON object with sections ``data``, ``model``, ``train``
and ``eval``; ``--set section.key=value`` overrides single keys (values are
parsed as JSON, falling back to a plain string). Exit codes: 0 success,
2 config error, 3 data error, 4 numeric divergence.
"""
import argparse
import copy
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as datamod
from .errors import ConfigError, DataError, DimensionError, PyrcpdError
from .evaluate import EvalConfig, auc, auc_table_csv, nms, report_json, to_input_time
from .models import ModelConfig, build_model, load_model, save_model
from .train import TrainConfig, train

log = logging.getLogger("pyrcpd")

SECTIONS = {
    "data": datamod.DatasetSpec,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass
class ExperimentConfig:
    data: datamod.DatasetSpec = field(default_factory=datamod.DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    explicit: frozenset = frozenset()  # dotted keys given by the user

    def to_dict(self):
        return {name: _section_dict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, raw):
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        explicit = set()
        for name, typ in SECTIONS.items():
            sect = raw.get(name, {}) or {}
            if not isinstance(sect, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            names = {f.name for f in dataclasses.fields(typ)}
            bad = set(sect) - names
            if bad:
                raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
            sect = dict(sect)
            for k in ("etas", "window_candidates"):
                if k in sect:
                    sect[k] = tuple(sect[k])
            try:
                obj = typ(**sect)
            except TypeError as e:
                raise ConfigError(str(e)) from None
            obj.validate()
            kwargs[name] = obj
            explicit.update(f"{name}.{k}" for k in sect)
        return cls(explicit=frozenset(explicit), **kwargs)


def _section_dict(obj):
    d = dataclasses.asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw, pairs):
    raw = copy.deepcopy(raw)
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key must be section.name, got {key!r}")
        raw.setdefault(parts[0], {})[parts[1]] = _parse_value(value)
    return raw


def load_config(path=None, overrides=None, seed=None):
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        for sect in ("data", "model", "train"):
            raw.setdefault(sect, {})["seed"] = int(seed)
    return ExperimentConfig.from_dict(raw)


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from None


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e}") from None
    return out


def cmd_generate(config, out_dir, n_jobs=1):
    train_set, test_set = datamod.gen_dataset(config.data, n_jobs=n_jobs)
    if not train_set and not test_set:
        log.warning("n_series is 0: writing the manifest only")
    out = _out_dir(out_dir)
    try:
        datamod.write_archive(out, train_set, test_set, config.data)
    except OSError as e:
        raise DataError(f"cannot write archive to {out}: {e}") from None
    return out


def _resolve_model_config(config, channels):
    cfg = config.model
    if "model.channels" not in config.explicit:
        cfg = dataclasses.replace(cfg, channels=channels)
    elif cfg.channels != channels:
        raise DimensionError(f"model.channels={cfg.channels} but the data has {channels} variables")
    return cfg.validate()


def cmd_train(config, dataset_dir, out_dir):
    train_set, _, _ = datamod.read_archive(dataset_dir)
    if not train_set:
        raise DataError(f"archive {dataset_dir} has no training series")
    mcfg = _resolve_model_config(config, train_set[0].X.shape[1])
    model = build_model(mcfg)
    model, history = train(model, train_set, config.train)
    out = _out_dir(out_dir)
    save_model(model, out / "model.prn")
    _write(out / "history.csv", history.to_csv())
    resolved = config.to_dict()
    resolved["model"] = _section_dict(mcfg)
    _write(out / "config.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return model, history


def _score_all(model, series_list, n_jobs=1):
    def one(s):
        return model.scores(s.X)

    if n_jobs > 1:
        with ThreadPoolExecutor(datamod._workers(n_jobs)) as ex:
            return list(ex.map(one, series_list))
    return [one(s) for s in series_list]


def cmd_eval(checkpoint, dataset_dir, etas, out_dir, eval_config=None, traces=False, n_jobs=1):
    eval_config = eval_config or EvalConfig()
    model = load_model(checkpoint)
    _, test_set, _ = datamod.read_archive(dataset_dir)
    if not test_set:
        raise DataError(f"archive {dataset_dir} has no test series")
    c = test_set[0].X.shape[1]
    if c != model.config.channels:
        raise DimensionError(f"checkpoint expects {model.config.channels} variables, data has {c}")
    scores = _score_all(model, test_set, n_jobs)
    truths = [s.truths for s in test_set]
    P = model.granularity
    reports = [auc(scores, truths, eta, eval_config.nms_window, P) for eta in etas]
    out = _out_dir(out_dir)
    _write(out / "report.json", report_json(
        reports, method=model.config.kind, nms_window=eval_config.nms_window, granularity=P))
    _write(out / "report.csv", auc_table_csv({model.config.kind: {r.eta: r.auc for r in reports}}, etas))
    if traces:
        tdir = _out_dir(out / "traces")
        for i, sc in enumerate(scores):
            peaks = {t for t, _ in nms(sc, eval_config.nms_window)}
            lines = ["t_out,input_time,score,peak"]
            times = to_input_time(np.arange(len(sc)), P)
            lines += [f"{t},{times[t]},{sc[t]!r},{int(t in peaks)}" for t in range(len(sc))]
            _write(tdir / f"trace-{i:04d}.csv", "\n".join(lines) + "\n")
    return reports


def cmd_detect(checkpoint, csv_path, eval_config=None, label_column=None):
    """Return ``[(input_time, score), ...]`` of post-NMS peaks above the
    detection threshold."""
    eval_config = eval_config or EvalConfig()
    model = load_model(checkpoint)
    series = datamod.load_csv(csv_path, label_column)
    if series.X.shape[1] != model.config.channels:
        raise DimensionError(
            f"checkpoint expects {model.config.channels} variables, {csv_path} has {series.X.shape[1]}")
    scores = model.scores(series.X)
    peaks = nms(scores, eval_config.nms_window)
    P = model.granularity
    return [(int(to_input_time([t], P)[0]), s) for t, s in peaks if s >= eval_config.detect_threshold]


def _parse_etas(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--eta expects comma-separated integers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="pyrcpd", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("--seed", type=int)
    common.add_argument("--parallel", type=int, default=1, metavar="N")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset archive")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model on an archive")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint on an archive's test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--eta", help="comma-separated tolerances (input steps)")
    e.add_argument("--traces", action="store_true", help="write per-series score traces")

    d = sub.add_parser("detect", parents=[common], help="print changepoints found in a CSV")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("csv")
    d.add_argument("--label-column")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config, args.set, args.seed)
        if args.command == "generate":
            cmd_generate(config, args.out, args.parallel)
        elif args.command == "train":
            cmd_train(config, args.data, args.out)
        elif args.command == "eval":
            etas = _parse_etas(args.eta) if args.eta else list(config.eval.etas)
            reports = cmd_eval(args.checkpoint, args.data, etas, args.out, config.eval,
                               args.traces, args.parallel)
            for r in reports:
                print(f"eta={r.eta} auc={r.auc:.6f}")
        elif args.command == "detect":
            for t, s in cmd_detect(args.checkpoint, args.csv, config.eval, args.label_column):
                print(f"{t},{s!r}")
    except PyrcpdError as e:
        print(f"pyrcpd: error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
