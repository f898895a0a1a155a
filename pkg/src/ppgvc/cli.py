"""``ppgvc`` command-line front end.

Exit codes: 0 success, 1 domain error (bad data, failed utterances), 2 usage or
configuration error.  Settings come from an INI file (``--config``) with the
sections listed in :data:`SECTIONS`, overridden by ``--set section.key=value``.
Seeds fall back to ``--seed``, then ``PPGVC_SEED``, then 0.  The effective
configuration is written next to every output.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys

from . import adversarial, evaluation, neural, pipeline
from .errors import InvalidConfig, PpgVcError
from .features import AnalysisConfig
from .neural import TrainHyper
from .ppg import LANGUAGES, FULL_DIMS
from .vocoder import SynthesisConfig, synthesize_with_info


class ConfigError(Exception):
    """Unknown or malformed configuration entry (exit status 2)."""


def _fields(cls, skip=()):
    return {f.name: f.default for f in dataclasses.fields(cls) if f.name not in skip}


SECTIONS = {
    "analysis": _fields(AnalysisConfig),
    "network": {"kind": "feedforward", "hidden": None, "context_width": 2, "seed": 0, "post_filter": False},
    "train": _fields(TrainHyper),
    "gan": {"adversarial_weight": 0.1, "window_frames": 32, "disc_steps": 1, "windows_per_step": 16,
            "disc_hidden": (128, 64)},
    "disc": {**_fields(TrainHyper), "seed": 1},
    "synthesis": {"seed": 0},
    "data": {"languages": None, "alignment_slack": 2},
}
SEED_KEYS = [("network", "seed"), ("train", "seed"), ("synthesis", "seed")]


def _parse_value(section, key, text, default):
    text = text.strip()
    try:
        if key in ("hidden", "disc_hidden"):
            return tuple(int(v) for v in text.split(",") if v.strip()) if text not in ("", "default") else None
        if key == "languages":
            if text in ("", "default"):
                return None
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r}") from exc


def _format_value(v):
    if v is None:
        return "default"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


@dataclasses.dataclass
class RunConfig:
    values: dict

    @classmethod
    def build(cls, path=None, overrides=(), seed=None):
        values = {s: dict(d) for s, d in SECTIONS.items()}
        env = os.environ.get("PPGVC_SEED")
        global_seed = seed
        if global_seed is None and env not in (None, ""):
            try:
                global_seed = int(env)
            except ValueError as exc:
                raise ConfigError(f"PPGVC_SEED: not an integer: {env!r}") from exc
        explicit = set()
        if path is not None:
            cp = configparser.ConfigParser(interpolation=None)
            cp.optionxform = str
            try:
                with open(path, encoding="utf-8") as f:
                    cp.read_file(f)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except configparser.Error as exc:
                raise ConfigError(f"malformed config {path}: {exc}") from exc
            for section in cp.sections():
                if section not in values:
                    raise ConfigError(f"unknown config section [{section}]")
                for key, text in cp.items(section):
                    cls._assign(values, section, key, text)
                    explicit.add((section, key))
        if global_seed is not None:
            for section, key in SEED_KEYS:
                if (section, key) not in explicit or seed is not None:
                    values[section][key] = global_seed
            if ("disc", "seed") not in explicit or seed is not None:
                values["disc"]["seed"] = global_seed + 1
        for item in overrides:
            name, sep, text = item.partition("=")
            section, dot, key = name.partition(".")
            if not sep or not dot:
                raise ConfigError(f"--set expects section.key=value, got {item!r}")
            if section not in values:
                raise ConfigError(f"unknown config section [{section}]")
            cls._assign(values, section, key.strip(), text)
        cfg = cls(values)
        cfg.validate()
        return cfg

    def validate(self):
        """Build every typed view once so a bad value fails before any file is touched."""
        self.spec()
        self.gan()
        self.synthesis()

    @staticmethod
    def _assign(values, section, key, text):
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        values[section][key] = _parse_value(section, key, text, SECTIONS[section][key])

    def analysis(self) -> AnalysisConfig:
        return AnalysisConfig(**self.values["analysis"])

    def spec(self) -> pipeline.ModelSpec:
        n = self.values["network"]
        if n["kind"] not in neural.DEFAULT_HIDDEN:
            raise InvalidConfig(f"network.kind must be one of {sorted(neural.DEFAULT_HIDDEN)}")
        return pipeline.ModelSpec(n["kind"], n["hidden"], n["context_width"], n["seed"], n["post_filter"])

    def train(self) -> TrainHyper:
        return TrainHyper(**self.values["train"])

    def gan(self) -> adversarial.GanHyper:
        g = self.values["gan"]
        return adversarial.GanHyper(g["adversarial_weight"], g["window_frames"], g["disc_steps"],
                                    g["windows_per_step"], tuple(g["disc_hidden"]), self.train(),
                                    TrainHyper(**self.values["disc"]))

    def synthesis(self) -> SynthesisConfig:
        a = self.analysis()
        return SynthesisConfig(a.sample_rate, a.frame_shift_ms, a.fft_size, a.warp_alpha, a.spectral_floor,
                               self.values["synthesis"]["seed"])

    def languages(self):
        return self.values["data"]["languages"]

    def slack(self) -> int:
        return self.values["data"]["alignment_slack"]

    def to_ini(self) -> str:
        lines = []
        for section, d in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_format_value(v)}" for k, v in d.items()]
            lines.append("")
        return "\n".join(lines)

    def echo(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_ini())


# ---------------------------------------------------------------------------
# commands


def _say(msg):
    print(msg, flush=True)


def _parse_dims(text, languages):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if text.strip() == "full":
        return tuple(languages), tuple(FULL_DIMS[lang] for lang in languages)
    if items and all("=" in t for t in items):
        pairs = [t.split("=", 1) for t in items]
        return tuple(k.strip() for k, _ in pairs), tuple(int(v) for _, v in pairs)
    dims = tuple(int(t) for t in items)
    if len(dims) != len(languages):
        raise ConfigError(f"--dims gives {len(dims)} values for {len(languages)} languages")
    return tuple(languages), dims


def cmd_oracle_gen(args, cfg: RunConfig):
    langs = tuple(x.strip() for x in args.languages.split(",") if x.strip())
    try:
        langs, dims = _parse_dims(args.dims, langs)
    except ValueError as exc:
        raise ConfigError(f"--dims: {exc}") from exc
    if any(d <= 0 for d in dims):
        raise ConfigError("--dims: dimensions must be positive")
    seed = args.seed if args.seed is not None else cfg.values["synthesis"]["seed"]
    m = pipeline.make_oracle_corpus(args.out, args.utts, langs, dims, seed=seed, heldout=args.heldout,
                                    analysis=cfg.analysis())
    cfg.echo(os.path.join(args.out, "effective_config.ini"))
    _say(f"wrote {len(m)} utterances x {len(langs)} PPG files to {args.out}")


def cmd_extract(args, cfg: RunConfig):
    m = pipeline.load_manifest(args.manifest)
    out, counts = pipeline.extract_corpus(m, cfg.analysis(), args.cache, args.jobs)
    pipeline.write_manifest(os.path.join(args.cache, "manifest.tsv"), out)
    cfg.echo(os.path.join(args.cache, "effective_config.ini"))
    _say(f"params: {counts['computed']} computed, {counts['cached']} reused from cache, "
         f"{counts['file']} given in manifest")


def _write_history(path, history):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in history:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_train(args, cfg: RunConfig):
    m = pipeline.load_manifest(args.manifest)
    ck, history = pipeline.train_vc(m, cfg.languages(), cfg.spec(), cfg.train(), cfg.analysis(), args.cache,
                                    cfg.slack())
    _ensure_parent(args.out)
    neural.save_checkpoint(args.out, ck)
    _write_history(args.out + ".history.jsonl", history)
    cfg.echo(args.out + ".config.ini")
    best = min(h["valid_mse"] for h in history)
    _say(f"trained {len(history)} epochs, best validation MSE {best:.5f}; checkpoint {args.out}")


def cmd_train_gan(args, cfg: RunConfig):
    gens = [pipeline.load_manifest(p) for p in args.gen]
    target = pipeline.load_manifest(args.target)
    init = neural.load_checkpoint(args.init) if args.init else None
    ck, _, history = pipeline.build_gan_model(gens, target, cfg.languages(), cfg.spec(), cfg.gan(),
                                              cfg.analysis(), args.cache, cfg.slack(), init=init)
    _ensure_parent(args.out)
    neural.save_checkpoint(args.out, ck)
    _write_history(args.out + ".history.jsonl", history)
    cfg.echo(args.out + ".config.ini")
    _say(f"adversarial training done ({len(history)} epochs, target corpus {target.corpus_id or args.target}); "
         f"checkpoint {args.out}")


def cmd_convert(args, cfg: RunConfig):
    ck = neural.load_checkpoint(args.ckpt)
    m = pipeline.load_manifest(args.manifest)
    out, failures = pipeline.convert_corpus(m, ck, args.out, args.jobs, cfg.synthesis())
    cfg.echo(os.path.join(args.out, "effective_config.ini"))
    _say(f"converted {len(out)} of {len(m)} utterances into {args.out}")
    for uid, msg in failures:
        print(f"failed {uid}: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_synth(args, cfg: RunConfig):
    p, _ = pipeline.load_params(args.params)
    wave, info = synthesize_with_info(p, cfg.synthesis())
    _ensure_parent(args.out)
    pipeline.write_wav(args.out, wave)
    _say(f"wrote {len(wave)} samples to {args.out}" + (" (peak-normalised)" if info["normalized"] else ""))


def cmd_eval(args, cfg: RunConfig):
    pred = pipeline.load_manifest(args.pred)
    ref = pipeline.load_manifest(args.ref)
    a = cfg.analysis()
    report = evaluation.evaluate_corpus(pred, ref, lambda r: pipeline.record_params(r, a)[0], cfg.slack())
    _ensure_parent(args.out)
    evaluation.write_report(report, args.out)
    cfg.echo(args.out + ".config.ini")
    sys.stdout.write(evaluation.format_report(report))


COMMANDS = {
    "oracle-gen": cmd_oracle_gen,
    "extract": cmd_extract,
    "train": cmd_train,
    "train-gan": cmd_train_gan,
    "convert": cmd_convert,
    "synth": cmd_synth,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [analysis], [network], [train], [gan], [disc], "
                                         "[synthesis] and [data] sections")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config entry (repeatable)")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for every random stream (default: PPGVC_SEED or 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for per-utterance work")

    p = argparse.ArgumentParser(prog="ppgvc", description="Multilingual-PPG voice conversion toolkit")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("oracle-gen", parents=[common], help="write a synthetic oracle corpus")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--utts", type=int, default=20, help="number of utterances")
    s.add_argument("--languages", default=",".join(LANGUAGES), help="comma list of language tags")
    s.add_argument("--dims", default="64,64,64",
                   help="PPG widths in --languages order, or lang=dim pairs, or 'full'")
    s.add_argument("--heldout", type=int, default=0, help="also write train.tsv / heldout.tsv with this many "
                                                          "trailing utterances held out")

    s = sub.add_parser("extract", parents=[common], help="analyse wavs into a params cache")
    s.add_argument("--manifest", required=True)
    s.add_argument("--cache", required=True, help="cache directory (gets manifest.tsv with params paths)")

    s = sub.add_parser("train", parents=[common], help="train the PPG-to-parameter network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--cache", help="params cache directory for records without params")

    s = sub.add_parser("train-gan", parents=[common], help="adversarial training; --target picks the real data")
    s.add_argument("--gen", required=True, action="append", help="generator training manifest (repeatable)")
    s.add_argument("--target", required=True, help="manifest whose speech counts as real for the discriminator")
    s.add_argument("--init", help="fine-tune from this checkpoint instead of a fresh generator")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--cache", help="params cache directory")

    s = sub.add_parser("convert", parents=[common], help="convert every utterance of a manifest")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("synth", parents=[common], help="render a params file to a wav")
    s.add_argument("--params", required=True)
    s.add_argument("--out", required=True, help="wav path")

    s = sub.add_parser("eval", parents=[common], help="objective metrics of predictions vs references")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", required=True, help="report stem: writes <stem>.txt and <stem>.jsonl")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = RunConfig.build(args.config, args.set, args.seed)
        status = COMMANDS[args.command](args, cfg)
        return int(status or 0)
    except (ConfigError, InvalidConfig) as exc:
        print(f"ppgvc: config error: {exc}", file=sys.stderr)
        return 2
    except PpgVcError as exc:
        print(f"ppgvc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ppgvc: IoError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
