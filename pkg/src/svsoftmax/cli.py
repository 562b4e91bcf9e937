"""Command-line front end: ``gradcheck``, ``train``, ``eval`` and ``table``.

Output layout under ``--output``::

    <name>/history.csv  <name>/model.bin  <name>/report.json  <name>/roc.csv
    comparison.csv      manifest.json     gradcheck/<name>.txt

Exit codes: 0 success, 1 gradient check failure, 2 config or input error,
3 at least one training run diverged.
"""

import argparse
import json
import logging
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from ._accel import BACKEND
from .config import check_seed, parse_config
from .errors import (
    BoundaryProximity, Diverged, InvalidMargin, InvalidValue, MissingArtifacts, ParseError,
)
from .evaluation import EvalReport, evaluate_embeddings, roc_points
from .gradients import finite_difference_check, full_backward, random_instance
from .trainer import evaluate_model, load_model, make_synthetic, save_model, train

log = logging.getLogger("svsoftmax")

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

GRADCHECK_STREAM = 11


def _fmt(v):
    return f"{float(v):.17g}"


def far_label(far):
    """``0.1 -> '1e-1'``, ``0.025 -> '2.5e-2'``."""
    mantissa, exponent = f"{float(far):.15e}".split("e")
    mantissa = mantissa.rstrip("0").rstrip(".")
    return f"{mantissa}e{int(exponent)}"


def table_header(far_targets):
    cols = ["loss", "rank1"] + [f"tpr_far_{far_label(f)}" for f in far_targets] + ["intra_angle", "inter_angle"]
    return ",".join(cols)


def table_row(name, report):
    vals = [name, _fmt(report.rank1)]
    vals += [_fmt(tpr) for _, _, tpr in report.tpr_at_far]
    vals += [_fmt(report.mean_intra_angle), _fmt(report.min_inter_center_angle)]
    return ",".join(vals)


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _roc_csv(pairs):
    thr, far, tpr = roc_points(pairs)
    lines = ["threshold,far,tpr"]
    lines += [f"{_fmt(a)},{_fmt(b)},{_fmt(c)}" for a, b, c in zip(thr, far, tpr)]
    return "\n".join(lines) + "\n"


def _loss_paths(output, name):
    d = os.path.join(output, name)
    return {
        "history": os.path.join(d, "history.csv"),
        "model": os.path.join(d, "model.bin"),
        "report": os.path.join(d, "report.json"),
        "roc": os.path.join(d, "roc.csv"),
    }


# ---------------------------------------------------------------------------
# verbs


def cmd_gradcheck(cfg, output, backward=full_backward):
    """Finite-difference check of every configured loss on seeded random batches.

    ``backward`` is replaceable so a corrupted gradient can be fed in as a
    negative control. Returns the exit status.
    """
    ev = cfg.eval
    status = EXIT_OK
    for index, entry in enumerate(cfg.losses):
        rng = np.random.default_rng([cfg.seed, GRADCHECK_STREAM, index])
        worst, failures, checked, excluded = None, 0, 0, 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryProximity)
            for _ in range(ev.gradcheck_instances):
                x, w, labels = random_instance(rng)
                rep = finite_difference_check(x, w, labels, entry.spec, ev.gradcheck_step,
                                              ev.gradcheck_tolerance, backward=backward)
                checked += rep.checked_entries
                excluded += len(rep.excluded_samples)
                failures += not rep.passed
                if worst is None or rep.max_relative_error > worst.max_relative_error:
                    worst = rep
        text = worst.to_text(entry.name)
        text += f"instances: {ev.gradcheck_instances}\nfailed_instances: {failures}\n"
        text += f"total_checked_entries: {checked}\ntotal_excluded_samples: {excluded}\n"
        _write(os.path.join(output, "gradcheck", f"{entry.name}.txt"), text)
        verdict = "PASS" if failures == 0 else "FAIL"
        print(f"{verdict} {entry.name} max_relative_error={worst.max_relative_error:.3e}")
        if failures:
            status = EXIT_VERIFY
    return status


def _evaluate(model, test, cfg):
    emb, labels = evaluate_model(model, test)
    ev = cfg.eval
    return evaluate_embeddings(emb, labels, model.classifier, ev.far_targets, ev.pair_cap,
                               cfg.dataset.seed, ev.gallery_per_class)


def cmd_train(cfg, output):
    """Train and evaluate every loss on one shared dataset.

    A diverged loss keeps the history of its finite epochs, gets no model or
    report, and does not stop the remaining losses. Returns the exit status.
    """
    train_set, test_set = make_synthetic(cfg.dataset)
    manifest = {
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "version": __version__,
        "backend": BACKEND,
        "losses": [],
    }
    rows = []
    status = EXIT_OK
    for entry in cfg.losses:
        paths = _loss_paths(output, entry.name)
        start = time.perf_counter()
        try:
            history = train(cfg.train_config(entry), train_set, embed_dim=cfg.dataset.embed_dim)
            outcome = "ok"
        except Diverged as exc:
            log.warning("loss %s diverged: %s", entry.name, exc)
            history, outcome = exc.history, "diverged"
            status = EXIT_DIVERGED
        _write(paths["history"], history.to_csv())
        files = {"history": os.path.relpath(paths["history"], output)}
        if outcome == "ok":
            save_model(history.model, paths["model"])
            report, pairs = _evaluate(history.model, test_set, cfg)
            _write(paths["report"], report.to_json())
            _write(paths["roc"], _roc_csv(pairs))
            files.update({k: os.path.relpath(paths[k], output) for k in ("model", "report", "roc")})
            rows.append(table_row(entry.name, report))
        else:
            # stale artifacts from an earlier run would misreport this loss
            for key in ("model", "report", "roc"):
                if os.path.exists(paths[key]):
                    os.remove(paths[key])
        manifest["losses"].append({
            "name": entry.name,
            "status": outcome,
            "files": files,
            "seconds": round(time.perf_counter() - start, 3),
        })
        log.info("%s: %s, %d epochs", entry.name, outcome, len(history))
    _write(os.path.join(output, "comparison.csv"), "\n".join([table_header(cfg.eval.far_targets)] + rows) + "\n")
    _write(os.path.join(output, "manifest.json"), json.dumps(manifest, indent=2) + "\n")
    return status


def cmd_eval(cfg, output):
    """Re-evaluate saved models on the held-out split, rewriting the reports."""
    _, test_set = make_synthetic(cfg.dataset)
    for entry in cfg.losses:
        paths = _loss_paths(output, entry.name)
        if not os.path.exists(paths["model"]):
            raise MissingArtifacts(f"no model for loss {entry.name!r} at {paths['model']}")
        report, pairs = _evaluate(load_model(paths["model"]), test_set, cfg)
        _write(paths["report"], report.to_json())
        _write(paths["roc"], _roc_csv(pairs))
        print(table_row(entry.name, report))
    return EXIT_OK


def loss_table(cfg, output):
    """Comparison CSV text built from the saved reports, in config order."""
    lines = [table_header(cfg.eval.far_targets)]
    for entry in cfg.losses:
        path = _loss_paths(output, entry.name)["report"]
        if not os.path.exists(path):
            raise MissingArtifacts(f"no report for loss {entry.name!r} at {path}")
        with open(path, encoding="utf-8") as fh:
            report = EvalReport.from_json(fh.read())
        if len(report.tpr_at_far) != len(cfg.eval.far_targets):
            raise MissingArtifacts(f"report {path} does not match the configured far targets")
        lines.append(table_row(entry.name, report))
    return "\n".join(lines) + "\n"


def cmd_table(cfg, output):
    text = loss_table(cfg, output)
    _write(os.path.join(output, "table.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "eval": cmd_eval,
    "table": cmd_table,
}


def _seed_arg(raw):
    try:
        return check_seed(int(raw))
    except (ValueError, InvalidValue):
        raise argparse.ArgumentTypeError(f"seed must be an integer in [0, 2**64), got {raw!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="svsoftmax", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--seed", type=_seed_arg, default=None, help="override every seed in the config")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None, *, backward=None):
    """Entry point. ``backward`` replaces the analytic gradient in ``gradcheck``."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which is also the config-error code
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except FileNotFoundError as exc:
        log.error("config not found: %s", exc.filename)
        return EXIT_CONFIG
    except (ParseError, InvalidValue, InvalidMargin) as exc:
        log.error("%s: %s", args.config, exc)
        return EXIT_CONFIG
    os.makedirs(args.output, exist_ok=True)
    try:
        if args.command == "gradcheck" and backward is not None:
            return cmd_gradcheck(cfg, args.output, backward=backward)
        return COMMANDS[args.command](cfg, args.output)
    except MissingArtifacts as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
