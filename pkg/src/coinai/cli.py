"""Command line entry point: ``coinai derive|mine|validate|run-sim|audit|report``.

Exit codes: 0 success, 1 rejection (validation, audit or mining gave
nothing), 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

from .chain import Block, Chain, ChainError, Mempool, load_chain, validate_chain
from .datasets import BUNDLED, Problem, bundled_dataset, load_dataset
from .grammar import (
    GrammarError,
    MalformedSentence,
    bundled_grammar,
    derive,
    load_grammar,
    parse_architecture,
    parameter_count,
)
from .hashing import hash_to_int, sha3_512
from .mining import CandidateBlock, MinerConfig, NoCandidate, ThresholdSchedule, mine_attempt, validate_candidate
from .sim import load_scenario, read_metrics, report, run, write_outputs
from .storage import ConfigError, audit_stores

CANDIDATE_FORMAT = "coinai-candidate/1"


class UsageError(Exception):
    pass


class DetachedTip(Chain):
    """A genesis-only chain that pretends its tip hash is ``tip``.

    Lets ``mine``/``validate`` work against a tip given on the command line
    without shipping the full chain.
    """

    def __init__(self, tip: bytes, **kw):
        super().__init__(**kw)
        self._tip = tip

    @property
    def tip_hash(self) -> bytes:
        return self._tip


def _grammar(ref: str | None):
    if ref is None:
        return bundled_grammar()
    path = Path(ref)
    if not path.is_file():
        raise UsageError(f"--grammar: no such file {ref}")
    return load_grammar(path)


def _problem(ref: str) -> Problem:
    if ref in BUNDLED:
        return Problem(ref, bundled_dataset(ref))
    train, valid = Path(ref + ".train.csv"), Path(ref + ".valid.csv")
    if not (train.is_file() and valid.is_file()):
        raise UsageError(f"--problem: expected a bundled name {BUNDLED} or a path prefix with .train.csv/.valid.csv")
    return Problem(Path(ref).name, load_dataset(train, valid))


def _tip(value: str | None) -> bytes:
    if value is None:
        return Chain().tip_hash
    try:
        tip = bytes.fromhex(value)
    except ValueError:
        raise UsageError("--tip: not hex") from None
    if len(tip) != 64:
        raise UsageError("--tip: expected 64 bytes (128 hex digits)")
    return tip


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_derive(args) -> int:
    g = _grammar(args.grammar)
    if args.hash is not None:
        digest = bytes.fromhex(args.hash)
    else:
        digest = sha3_512((args.data or "").encode())
    sentence, trace = derive(g, hash_to_int(digest))
    out = {
        "hash": digest.hex(),
        "sentence": sentence,
        "steps": len(trace.steps),
        "resets": trace.resets,
    }
    try:
        spec = parse_architecture(sentence, g)
        out["architecture"] = {
            "conv": [[c.num_filters, c.filter_size, c.activation] for c in spec.conv_layers],
            "fc": [[f.num_units, f.activation] for f in spec.fc_layers],
        }
        if args.width:
            out["parameters"] = parameter_count(spec, args.width)
    except MalformedSentence as exc:
        out["architecture"] = None
        out["error"] = str(exc)
    _emit(out)
    return 0


def cmd_mine(args) -> int:
    g = _grammar(args.grammar)
    problem = _problem(args.problem)
    chain = DetachedTip(_tip(args.tip))
    schedule = ThresholdSchedule(T0=args.threshold, floor=args.threshold)
    try:
        c = mine_attempt(args.miner, chain, Mempool(), g, problem, schedule, MinerConfig(), 0, args.seed, 0)
    except NoCandidate as exc:
        _emit({"result": "no_candidate", "reason": exc.reason, "score": exc.score, "detail": str(exc)})
        return 1
    record = {
        "format": CANDIDATE_FORMAT,
        "tip": chain.tip_hash.hex(),
        "grammar": args.grammar,
        "problem": args.problem,
        "hash": c.claimed_hash.hex(),
        "sentence": c.derivation_sentence,
        "score": c.block.reported_score,
        "threshold": c.threshold,
        "submitted_at": c.submitted_at,
        "record": c.block.record().hex(),
        "blob": base64.b64encode(c.blob).decode(),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    _emit({k: record[k] for k in ("hash", "sentence", "score", "threshold")})
    return 0


def _read_candidate(path: str) -> tuple[dict, CandidateBlock]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"--candidate: no such file {path}")
    try:
        rec = json.loads(p.read_text())
        if rec.get("format") != CANDIDATE_FORMAT:
            raise UsageError(f"--candidate: expected format {CANDIDATE_FORMAT}")
        block, _ = Block.from_record(bytes.fromhex(rec["record"]))
        cand = CandidateBlock(
            block,
            base64.b64decode(rec["blob"]),
            rec["sentence"],
            int(rec["submitted_at"]),
            bytes.fromhex(rec["hash"]),
            float(rec["threshold"]),
        )
    except (KeyError, ValueError, ChainError) as exc:
        raise UsageError(f"--candidate: unreadable record ({exc})") from None
    return rec, cand


def cmd_validate(args) -> int:
    rec, cand = _read_candidate(args.candidate)
    g = _grammar(args.grammar or rec.get("grammar"))
    problem = _problem(args.problem or rec.get("problem") or "two_spirals")
    if args.chain:
        chain = load_chain(Path(args.chain).read_bytes())
    else:
        chain = DetachedTip(_tip(args.tip or rec["tip"]))
    threshold = cand.threshold if args.threshold is None else args.threshold
    r = validate_candidate(cand, chain, g, problem, threshold)
    _emit({
        "verdict": r.verdict,
        "reason": r.reason,
        "recomputed_hash": r.recomputed_hash.hex() if r.recomputed_hash else None,
        "recomputed_sentence": r.recomputed_sentence,
        "recomputed_score": r.recomputed_score,
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in r.checks],
    })
    return 0 if r.accepted else 1


def cmd_run_sim(args) -> int:
    sc = load_scenario(args.scenario)
    result = run(sc, args.seed)
    out = write_outputs(result, args.out_dir)
    print((out / "summary.txt").read_text(), end="")
    return 0


def cmd_audit(args) -> int:
    root = Path(args.out_dir)
    keepers = root / "keepers"
    if not keepers.is_dir():
        raise UsageError(f"--out-dir: {keepers} not found")
    results = audit_stores(keepers)
    failed = [(k, o) for k, o, ok in results if not ok]
    out = {"replicas": len(results), "failed": [f"{k}/{o[:16]}" for k, o in failed]}
    chain_file = root / "chain.bin"
    if chain_file.is_file():
        defect = validate_chain(load_chain(chain_file.read_bytes()))
        out["chain"] = defect or "ok"
    else:
        defect = None
    _emit(out)
    return 1 if failed or defect else 0


def cmd_report(args) -> int:
    root = Path(args.out_dir)
    metrics = root / "metrics.csv"
    if not metrics.is_file():
        raise UsageError(f"--out-dir: {metrics} not found")
    chain_file = root / "chain.bin"
    chain = load_chain(chain_file.read_bytes()) if chain_file.is_file() else None
    text, _ = report(read_metrics(metrics.read_text()), chain)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coinai", description="Proof-of-useful-work blockchain simulator")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("derive", help="map a block hash to an architecture sentence")
    src = d.add_mutually_exclusive_group()
    src.add_argument("--hash", help="512-bit hash as hex")
    src.add_argument("--data", help="hash SHA3-512 of this text instead")
    d.add_argument("--grammar")
    d.add_argument("--width", type=int, help="input width, to report a parameter count")
    d.set_defaults(func=cmd_derive)

    m = sub.add_parser("mine", help="run one mining attempt")
    m.add_argument("--grammar")
    m.add_argument("--problem", default="two_spirals")
    m.add_argument("--tip", help="previous block hash (hex); default genesis")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--threshold", type=float, default=0.5)
    m.add_argument("--miner", default="cli")
    m.add_argument("--out", help="write the candidate record here")
    m.set_defaults(func=cmd_mine)

    v = sub.add_parser("validate", help="re-check a candidate record")
    v.add_argument("--candidate", required=True)
    v.add_argument("--grammar")
    v.add_argument("--problem")
    v.add_argument("--tip")
    v.add_argument("--chain", help="validate against this chain file instead of a bare tip")
    v.add_argument("--threshold", type=float)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run-sim", help="run a scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir", default="out")
    r.set_defaults(func=cmd_run_sim)

    a = sub.add_parser("audit", help="check persisted keeper stores and chain")
    a.add_argument("--out-dir", default="out")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("report", help="summarize a finished run")
    s.add_argument("--out-dir", default="out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, GrammarError, SyntaxError, ChainError, ValueError, OSError) as exc:
        print(f"coinai: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
