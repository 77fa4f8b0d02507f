"""Command-line driver: prepare, fit, eval, grid, spectrum, audit, synth.

Every command accepts ``--config FILE`` (JSON object whose keys are the long
flag names with dashes or underscores); explicit flags override it.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 solver error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import datasets, linalg, models, oracle, synth
from .errors import DataError, L3AEError, ParameterError, SolverError
from .eval import DEFAULT_K, evaluate
from .grid import DEFAULT_GRIDS, grid_search

logger = logging.getLogger("l3ae")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

_HYPER_FLAGS = {
    "lambda": "lambda_", "lambda_x": "lambda_x", "lambda_t": "lambda_t",
    "lambda_f": "lambda_f", "lambda_kd": "lambda_kd", "alpha": "alpha", "beta": "beta",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _bytes(text: str) -> float:
    text = str(text).strip().upper()
    scale = {"K": 2**10, "M": 2**20, "G": 2**30, "T": 2**40}
    for suffix in ("IB", "B"):
        if text.endswith(suffix) and len(text) > len(suffix) and text[-len(suffix) - 1] in scale:
            text = text[:-len(suffix)]
    try:
        if text and text[-1] in scale:
            return float(text[:-1]) * scale[text[-1]]
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad byte count {text!r}")


def _grid_spec(text: str) -> tuple[str, list[float]]:
    name, _, values = text.partition("=")
    name = name.strip().replace("-", "_")
    if name not in DEFAULT_GRIDS or not values:
        raise argparse.ArgumentTypeError(f"expected NAME=v1,v2,... with NAME in {sorted(DEFAULT_GRIDS)}")
    return name, [float(v) for v in values.split(",") if v]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config; flags override its values")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--memory-cap", type=_bytes, help="bytes (suffixes K/M/G allowed); default 16G")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=models.MODEL_NAMES)
    for flag in _HYPER_FLAGS:
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=float)
    p.add_argument("--embeddings", type=Path, help="embedding payload (header at PATH.json)")
    p.add_argument("--embeddings-header", type=Path)
    p.add_argument("--normalize-embeddings", action="store_true", default=None)
    p.add_argument("--tags", type=Path, help="item_id<TAB>tag file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="l3ae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="threshold, k-core filter and split interactions")
    _add_common(p)
    p.add_argument("--interactions", type=Path)
    p.add_argument("--k-core", type=int)
    p.add_argument("--rating-threshold", type=float)

    p = sub.add_parser("fit", help="fit a model and export its weight matrix")
    _add_common(p)
    _add_model(p)
    p.add_argument("--data", type=Path, help="prepared split directory")
    p.add_argument("--semantic", type=Path, help="cached S weights for l3ae")

    p = sub.add_parser("eval", help="evaluate exported weights on a split")
    _add_common(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--weights", type=Path)
    p.add_argument("--k", type=_int_list)
    p.add_argument("--part", choices=("test", "validation"))

    p = sub.add_parser("grid", help="validation grid search")
    _add_common(p)
    _add_model(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--grid", type=_grid_spec, action="append",
                   help="override one grid, e.g. --grid lambda=1,10,100")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("spectrum", help="normalised singular values of X and F")
    _add_common(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--embeddings-header", type=Path)

    p = sub.add_parser("audit", help="closed forms and metrics against brute-force oracles")
    _add_common(p)
    p.add_argument("--instances", type=int)
    p.add_argument("--metric-cases", type=int)

    p = sub.add_parser("synth", help="generate a clustered synthetic dataset")
    _add_common(p)
    for name, fld in synth.SynthConfig.__dataclass_fields__.items():
        if name != "seed":
            p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=fld.type == "int" and int or float)
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """Merge the config file under the parsed flags."""
    cfg = {}
    if getattr(args, "config", None) is not None:
        path = args.config
        if not path.is_file():
            raise ParameterError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ParameterError(f"{path}: expected a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in raw.items()}
    for key, value in vars(args).items():
        if value is not None:
            cfg[key] = value
    return cfg


def _path(cfg: dict, key: str, required: bool = True) -> Path | None:
    value = cfg.get(key)
    if value is None:
        if required:
            raise ParameterError(f"--{key.replace('_', '-')} is required")
        return None
    return Path(value)


def _hyperparams(cfg: dict) -> models.Hyperparams:
    hp = cfg.get("hyperparams", {}) or {}
    merged = {k: v for k, v in hp.items()}
    for flag in _HYPER_FLAGS:
        if cfg.get(flag) is not None:
            merged[flag] = cfg[flag]
    return models.Hyperparams.from_dict(merged)


def _memory_cap(cfg: dict) -> float:
    value = cfg.get("memory_cap", linalg.DEFAULT_MEMORY_CAP)
    return _bytes(value) if isinstance(value, str) else float(value)


def _features(cfg: dict, item_ids) -> tuple[datasets.FeatureMatrix | None, datasets.FeatureMatrix | None]:
    emb = tags = None
    if cfg.get("embeddings"):
        emb = datasets.load_embeddings(cfg["embeddings"], cfg.get("embeddings_header"),
                                       item_ids, bool(cfg.get("normalize_embeddings")))
    if cfg.get("tags"):
        tags = datasets.build_tag_matrix(datasets.load_tags(cfg["tags"]), item_ids)
    return emb, tags


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_prepare(cfg: dict) -> int:
    src = _path(cfg, "interactions")
    out = _path(cfg, "out")
    k = int(cfg.get("k_core", 10))
    bundle, stats = datasets.prepare(src, k=k, seed=int(cfg.get("seed", 0)),
                                     rating_threshold=float(cfg.get("rating_threshold", 3.0)))
    datasets.save_split(bundle, out, stats, {"k_core": k, "source": src.name})
    table = "users\titems\tratings\tdensity\n" + \
        f"{stats.users}\t{stats.items}\t{stats.ratings}\t{stats.density:.6g}\n"
    _write(out / "stats.tsv", table)
    sys.stdout.write(table)
    counts = bundle.counts()
    sys.stdout.write("part\tinteractions\n" + "".join(f"{p}\t{c}\n" for p, c in counts.items()))
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    name = cfg.get("model")
    if name is None:
        raise ParameterError("--model is required")
    split = datasets.load_split(_path(cfg, "data"))
    out = _path(cfg, "out")
    cap = _memory_cap(cfg)
    hp = _hyperparams(cfg)
    emb, tags = _features(cfg, split.item_ids)
    semantic = None
    if name == "l3ae":
        if cfg.get("semantic"):
            semantic = models.load_weights(cfg["semantic"])
            if semantic.item_ids and semantic.item_ids != split.item_ids:
                raise DataError("cached S was fitted on a different item set")
            np.fill_diagonal(semantic.values, 0.0)
        else:
            if emb is None:
                raise ParameterError("l3ae needs --embeddings or --semantic")
            semantic = models.fit_semantic_ease(emb, hp.lambda_f, cap)
            out.mkdir(parents=True, exist_ok=True)
            models.save_weights(semantic, out / "semantic.bin")
    w = models.fit_model(name, split.train, hp, emb, tags, semantic, cap)
    out.mkdir(parents=True, exist_ok=True)
    path = models.save_weights(w, out / "weights.bin")
    sys.stdout.write(f"wrote {path} (model={w.model}, n={w.n}, "
                     f"{json.dumps(w.hyperparams, sort_keys=True)})\n")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    split = datasets.load_split(_path(cfg, "data"))
    w = models.load_weights(_path(cfg, "weights"))
    if w.n != len(split.item_ids) or (w.item_ids and w.item_ids != split.item_ids):
        raise DataError("weight matrix item space does not match the split")
    k_values = cfg.get("k") or list(DEFAULT_K)
    part = cfg.get("part", "test")
    meta = {"model": w.model, "hyperparams": w.hyperparams, "seed": split.seed, "part": part}
    report = evaluate(split.train, split.parts()[part], w, k_values, meta=meta)
    out = cfg.get("out")
    if out is not None:
        report.save(out)
    sys.stdout.write(report.to_tsv())
    return EXIT_OK


def cmd_grid(cfg: dict) -> int:
    name = cfg.get("model")
    if name is None:
        raise ParameterError("--model is required")
    split = datasets.load_split(_path(cfg, "data"))
    emb, tags = _features(cfg, split.item_ids)
    grids = dict(cfg.get("grids", {}) or {})
    for key, values in cfg.get("grid") or []:
        grids[key] = values
    result = grid_search(name, split, emb, tags, grids, workers=int(cfg.get("workers", 1)),
                         memory_cap=_memory_cap(cfg))
    out = cfg.get("out")
    if out is not None:
        out = Path(out)
        _write(out / "grid.tsv", result.to_tsv())
        _write(out / "best.json", json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(result.to_tsv())
    sys.stdout.write(f"best\t{json.dumps(result.best, sort_keys=True)}\t{result.best_score:.6f}\n")
    return EXIT_OK


def spectrum_table(x_spec, f_spec=None) -> str:
    cols = ["index", "interactions"] + (["embeddings"] if f_spec is not None else [])
    lines = ["\t".join(cols)]
    length = max(len(x_spec), len(f_spec) if f_spec is not None else 0)
    for j in range(length):
        row = [str(j), f"{x_spec[j]:.8f}" if j < len(x_spec) else ""]
        if f_spec is not None:
            row.append(f"{f_spec[j]:.8f}" if j < len(f_spec) else "")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def cmd_spectrum(cfg: dict) -> int:
    split = datasets.load_split(_path(cfg, "data"))
    full = split.train.matrix + split.validation.matrix + split.test.matrix
    x_spec = linalg.spectrum(full)
    f_spec = None
    if cfg.get("embeddings"):
        emb = datasets.load_embeddings(cfg["embeddings"], cfg.get("embeddings_header"),
                                       split.item_ids)
        f_spec = linalg.spectrum(emb.values)
    table = spectrum_table(x_spec, f_spec)
    if cfg.get("out") is not None:
        _write(Path(cfg["out"]) / "spectrum.tsv", table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_audit(cfg: dict) -> int:
    results = oracle.run_audit(int(cfg.get("instances", 20)), int(cfg.get("seed", 0)),
                               int(cfg.get("metric_cases", 1000)))
    table = oracle.format_audit(results) + "\n"
    if cfg.get("out") is not None:
        _write(Path(cfg["out"]) / "audit.tsv", table)
    sys.stdout.write(table)
    return EXIT_OK if all(r.passed for r in results) else EXIT_SOLVER


def cmd_synth(cfg: dict) -> int:
    out = _path(cfg, "out")
    fields = synth.SynthConfig.__dataclass_fields__
    kw = {k: cfg[k] for k in fields if cfg.get(k) is not None}
    for name, fld in fields.items():
        if name in kw:
            kw[name] = int(kw[name]) if fld.type == "int" else float(kw[name])
    sc = synth.SynthConfig(**kw)
    data = synth.generate(sc)
    paths = synth.write(data, out)
    stats = data.stats()
    sys.stdout.write("\t".join(stats) + "\n" + "\t".join(f"{v:g}" for v in stats.values()) + "\n")
    for key, p in paths.items():
        logger.info("%s -> %s", key, p)
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare, "fit": cmd_fit, "eval": cmd_eval, "grid": cmd_grid,
    "spectrum": cmd_spectrum, "audit": cmd_audit, "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = _resolve(args)
        cfg.pop("config", None)
        cfg.pop("verbose", None)
        return COMMANDS[cfg.pop("command")](cfg)
    except L3AEError as exc:
        print(f"l3ae {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"l3ae {args.command}: path error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, json.JSONDecodeError) as exc:
        print(f"l3ae {args.command}: malformed artifact: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
