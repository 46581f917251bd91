"""Command line: validate, featurize, train, classify, evaluate.

Exit codes: 0 accepted/success, 2 rejected, 3 indeterminate, 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone

from tlsverdict.ml_core.dataset import BENIGN, MALICIOUS, split_train_test
from tlsverdict.pipeline import (
    FEATURE_SCHEMAS,
    PHASE1,
    PHASE2,
    Models,
    PipelineConfig,
    TrainedModel,
    featurize_session,
    phase_dataset,
    run_verdict,
    train_phase,
)
from tlsverdict.ml_core.dataset import read_csv, write_csv
from tlsverdict.x509_codec import load_chain

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECTED = 2
EXIT_INDETERMINATE = 3

log = logging.getLogger("tlsverdict")


def parse_timestamp(text: str) -> datetime:
    """ISO 8601 (``Z`` allowed) or POSIX seconds."""
    try:
        return datetime.fromtimestamp(float(text), tz=timezone.utc)
    except ValueError:
        pass
    t = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return t if t.tzinfo else t.replace(tzinfo=timezone.utc)


def _chain(path):
    with open(path, "rb") as fh:
        return load_chain(fh.read())


def _config(args) -> PipelineConfig:
    return PipelineConfig.load(args.config) if args.config else PipelineConfig()


def cmd_validate(args) -> int:
    from tlsverdict.cert_validation import validate

    report = validate(_chain(args.cert_chain), args.hostname, args.at, _config(args).validation)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        for r in report.results:
            print(f"{r.criterion.value:20s} {'FAIL' if r.failed else 'ok  '} {r.detail}")
        print(f"{'self-signed':20s} {report.self_signed}")
    return EXIT_OK if report.passed() else EXIT_REJECTED


def cmd_featurize(args) -> int:
    if args.phase == PHASE2 and not args.pcap:
        raise ValueError("featurize phase2 needs --pcap")
    report, p1, p2 = featurize_session(
        _chain(args.cert_chain),
        args.hostname,
        args.pcap if args.phase == PHASE2 else None,
        args.at,
        _config(args),
    )
    row = p1.row() if args.phase == PHASE1 else p2.row()
    ds = phase_dataset(args.phase, [row], [args.label])
    write_csv(ds, args.out, append=True)
    return EXIT_OK


def cmd_train(args) -> int:
    data = read_csv(args.data, FEATURE_SCHEMAS[args.phase])
    model, metrics = train_phase(args.phase, data, seed=args.seed, split=args.split, bins=args.bins)
    model.save(args.out)
    print(json.dumps(metrics.to_dict(), indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = TrainedModel.load(args.model)
    data = read_csv(args.data, FEATURE_SCHEMAS[args.phase])
    seed = args.seed if args.seed is not None else model.training.get("seed", 0)
    split = model.training.get("split", 0.66)
    test = split_train_test(data, split, seed).test
    print(json.dumps(model.evaluate(test).to_dict(), indent=2))
    return EXIT_OK


def cmd_classify(args) -> int:
    models = Models.load(args.phase1_model, args.phase2_model)
    verdict = run_verdict(_chain(args.cert_chain), args.hostname, args.pcap, models, _config(args), args.at)
    if args.json:
        print(json.dumps(verdict.to_dict(), indent=2))
    else:
        print(f"{verdict.decision.value} (confidence {verdict.confidence:.3f})")
    return verdict.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tlsverdict", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config: extension_registry, recognized_critical_oids, weak_ciphersuites")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cert_args(sp):
        sp.add_argument("--cert-chain", required=True, help="PEM (leaf first) or DER file")
        sp.add_argument("--hostname", required=True)
        sp.add_argument("--at", type=parse_timestamp, default=None, help="evaluation time (ISO 8601 or epoch)")

    sp = sub.add_parser("validate", help="run traditional validation")
    cert_args(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("featurize", help="append one labelled feature row to a CSV")
    sp.add_argument("phase", choices=[PHASE1, PHASE2])
    cert_args(sp)
    sp.add_argument("--pcap")
    sp.add_argument("--out", required=True)
    sp.add_argument("--label", choices=[MALICIOUS, BENIGN], default=BENIGN)
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("train", help="train a phase model from a feature CSV")
    sp.add_argument("phase", choices=[PHASE1, PHASE2])
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split", type=float, default=0.66)
    sp.add_argument("--bins", type=int, default=10)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("classify", help="two-phase verdict for one server")
    cert_args(sp)
    sp.add_argument("--pcap", required=True)
    sp.add_argument("--phase1-model", required=True)
    sp.add_argument("--phase2-model", required=True)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("evaluate", help="score a model on the held-out part of a CSV")
    sp.add_argument("phase", choices=[PHASE1, PHASE2])
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
