"""Command-line entry point: data prep, training, restoration, translation,
evaluation, topic modeling, serving, and toy-scale reproduction runs.

Every subcommand works inside a run directory laid out as
runs/<name>/{effective_config.yaml, checkpoints/, logs/, reports/}, writes
figures next to its delimited outputs, and is deterministic given the same
config and seed.
"""

import argparse
import json
import os
import sys

from . import config as CFG
from . import corpus as C
from . import inference as I
from . import metrics as ME
from . import plotting as PL
from . import synth as SY
from . import topics as TP
from . import training as TR
from .model import ModelParams, paper_scale_config
from .subword import UnigramTokenizer


class CliError(Exception):
    pass


def _ensure_dirs(run_dir):
    for sub in ("checkpoints", "logs", "reports"):
        os.makedirs(os.path.join(run_dir, sub), exist_ok=True)
    return run_dir


def _load_vocabs(run_dir):
    hv = C.Vocab.load(os.path.join(run_dir, "hanja.vocab"))
    kv = C.Vocab.load(os.path.join(run_dir, "korean.vocab"))
    tok = UnigramTokenizer.from_vocab(kv) if kv.logprobs else None
    return hv, kv, tok


def _read_split(run_dir, name, hv, kv, tok):
    path = os.path.join(run_dir, f"{name}.jsonl")
    if not os.path.exists(path):
        return []
    records = list(C.read_jsonl(path))
    paired, unpaired = SY.records_to_sentences(records, hv, kv, tokenizer=tok)
    return paired if name.startswith("paired") else unpaired


# -- subcommands -------------------------------------------------------------


def cmd_synth(args, cfg):
    run_dir = _ensure_dirs(CFG.resolve_run_dir(args.name, args.run_dir))
    if args.alternating:
        records = SY.make_alternating_corpus(args.paired, seed=args.seed)
    else:
        records = SY.make_cipher_corpus(args.paired, args.unpaired, seed=args.seed)
    path = os.path.join(run_dir, "corpus.jsonl")
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    docs = SY.make_themed_documents(args.themed, seed=args.seed) if args.themed else []
    if docs:
        with open(os.path.join(run_dir, "themed_docs.jsonl"), "w", encoding="utf-8") as f:
            for d in docs:
                f.write(json.dumps(d, ensure_ascii=False) + "\n")
    CFG.echo_config(cfg, run_dir)
    print(f"wrote {len(records)} corpus records to {path}")
    return 0


def cmd_prepare(args, cfg):
    run_dir = _ensure_dirs(CFG.resolve_run_dir(args.name, args.run_dir))
    ccfg = cfg["corpus"]
    corpus_path = args.corpus or ccfg["paired_path"]
    if not corpus_path:
        raise CliError("prepare needs --corpus or corpus.paired_path")
    records = list(C.read_jsonl(corpus_path))
    if ccfg["unpaired_path"]:
        records += list(C.read_jsonl(ccfg["unpaired_path"]))

    hanja_texts = [r["text"] for r in records if r["side"] == "hanja"]
    korean_texts = [r["text"] for r in records if r["side"] == "korean"]
    if not hanja_texts:
        raise CliError("corpus has no hanja sentences")

    hv = C.build_vocab(hanja_texts, "hanja", min_count=ccfg["hanja_min_count"])
    tok = None
    kv = C.Vocab([], "korean")
    if korean_texts:
        tok = UnigramTokenizer.train(
            korean_texts,
            target_size=min(
                ccfg["korean_piece_target"], ccfg["korean_vocab_size"] - C.N_SPECIALS
            ),
        )
        pieces = [p for p, _ in tok.sorted_pieces()][: ccfg["korean_vocab_size"] - C.N_SPECIALS]
        kv = C.Vocab(
            pieces, "korean",
            logprobs=[None] * C.N_SPECIALS + [tok.pieces[p] for p in pieces],
        )
    hv.save(os.path.join(run_dir, "hanja.vocab"))
    kv.save(os.path.join(run_dir, "korean.vocab"))

    paired, unpaired = SY.records_to_sentences(records, hv, kv, tokenizer=tok)
    bounds = {
        "hanja": tuple(ccfg["length_bounds_hanja"]),
        "korean": tuple(ccfg["length_bounds_korean"]),
    }
    splits = C.filter_and_split(
        paired, unpaired, test_size=ccfg["test_size"], seed=args.seed,
        bounds_override=bounds,
    )
    for name, pool in splits.items():
        sents = [s for pair in pool for s in pair] if name.startswith("paired") else pool
        C.write_jsonl(os.path.join(run_dir, f"{name}.jsonl"), sents)

    CFG.echo_config(cfg, run_dir)
    summary = {
        "vocab_hanja": len(hv),
        "vocab_korean": len(kv),
        "hanja_vocab_hash": hv.content_hash(),
        "korean_vocab_hash": kv.content_hash(),
        **{name: len(pool) for name, pool in splits.items()},
    }
    CFG.dump_json(os.path.join(run_dir, "reports", "prepare.json"), summary)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_train(args, cfg):
    run_dir = _ensure_dirs(CFG.resolve_run_dir(args.name, args.run_dir))
    hv, kv, tok = _load_vocabs(run_dir)
    paired = _read_split(run_dir, "paired_train", hv, kv, tok)
    unpaired = _read_split(run_dir, "unpaired_train", hv, kv, tok)

    cfg["model"]["vocab_hanja"] = len(hv)
    cfg["model"]["vocab_korean"] = max(len(kv), C.N_SPECIALS + 1)
    model_cfg = CFG.model_config(cfg)
    schedule = CFG.train_schedule(cfg)
    if args.seed is not None:
        schedule.seed = args.seed
    opt = CFG.optimizer_config(cfg)
    CFG.echo_config(cfg, run_dir)

    log_path = os.path.join(run_dir, "logs", "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as log_writer:
        result = TR.train_loop(
            paired, unpaired, model_cfg, schedule, opt_config=opt,
            run_dir=run_dir, log_writer=log_writer,
            extra_manifest={
                "vocab_hashes": {
                    "hanja": hv.content_hash(), "korean": kv.content_hash(),
                }
            },
        )
    if result.log:
        PL.plot_loss_curves(result.log, os.path.join(run_dir, "reports", "loss_curves.png"))
    status = "diverged" if result.diverged else "ok"
    print(
        f"{status}: {result.steps_done} steps "
        f"({result.restoration_steps} restoration / {result.translation_steps} translation); "
        f"checkpoint {result.checkpoint_path}"
    )
    return 1 if result.diverged else 0


def _resolve_checkpoint(args, run_dir):
    path = args.checkpoint or os.path.join(run_dir, "checkpoints", "final.ckpt")
    if not os.path.exists(path):
        raise CliError(f"checkpoint not found: {path}")
    return path


def cmd_restore(args, cfg):
    run_dir = _ensure_dirs(CFG.resolve_run_dir(args.name, args.run_dir))
    hv, kv, tok = _load_vocabs(run_dir)
    params, _ = TR.load_checkpoint(_resolve_checkpoint(args, run_dir))
    out = I.restore_topk(args.text, args.k, params, hv, refill=args.refill)
    payload = {
        "text": args.text,
        "k": args.k,
        "positions": {
            str(pos): [
                {"token": c.token, "logprob": c.logprob, "rank": c.rank}
                for c in cands
            ]
            for pos, cands in out.items()
        },
    }
    path = os.path.join(run_dir, "reports", "restore.json")
    CFG.dump_json(path, payload)
    print(json.dumps(payload, ensure_ascii=False, indent=2))
    return 0


def cmd_translate(args, cfg):
    run_dir = _ensure_dirs(CFG.resolve_run_dir(args.name, args.run_dir))
    hv, kv, tok = _load_vocabs(run_dir)
    params, _ = TR.load_checkpoint(_resolve_checkpoint(args, run_dir))
    dcfg = cfg["decode"]
    beam = args.beam or dcfg["beam_size"]

    if args.text:
        result = I.translate_text(
            args.text, params, hv, kv, tokenizer=tok,
            beam_size=beam, max_len=dcfg["max_len"], alpha=dcfg["alpha"],
        )
        print(json.dumps(result, ensure_ascii=False, indent=2))
        return 0

    source = args.input or os.path.join(run_dir, "paired_test.jsonl")
    results = []
    for rec in C.read_jsonl(source):
        if rec["side"] != "hanja":
            continue
        r = I.translate_text(
            rec["text"], params, hv, kv, tokenizer=tok,
            beam_size=beam, max_len=dcfg["max_len"], alpha=dcfg["alpha"],
        )
        results.append(
            {
                "id": rec["id"],
                "source": r["source"],
                "hypothesis": r["hypothesis"],
                "raw_logprob": r["raw_logprob"],
                "score": r["score"],
                **({"date": rec["date"]} if rec.get("date") else {}),
                **({"pair_id": rec["pair_id"]} if rec.get("pair_id") else {}),
            }
        )
    out = args.output or os.path.join(run_dir, "reports", "hypotheses.jsonl")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    I.write_translations(out, results)
    print(f"wrote {len(results)} hypotheses to {out}")
    return 0


def _segment_for_eval(text, tok):
    return tok.segment(text) if tok is not None else text.split()


def cmd_evaluate(args, cfg):
    run_dir = _ensure_dirs(CFG.resolve_run_dir(args.name, args.run_dir))
    _, kv, tok = _load_vocabs(run_dir)

    with open(args.hyp, encoding="utf-8") as f:
        hyp_rows = [json.loads(line) for line in f if line.strip()]
    ref_rows = [r for r in C.read_jsonl(args.ref) if r["side"] == "korean"]
    refs_by_pair = {r.get("pair_id") or r["id"]: r["text"] for r in ref_rows}

    hyps, refs = [], []
    for row in hyp_rows:
        key = row.get("pair_id") or row.get("id")
        if key not in refs_by_pair:
            continue
        hyps.append(_segment_for_eval(row["hypothesis"], tok))
        refs.append(_segment_for_eval(refs_by_pair[key], tok))
    if not hyps:
        raise CliError("no hypothesis/reference pairs matched by pair_id")

    reports = {
        "bleu": ME.bleu(hyps, refs).to_dict(),
        "rouge_l": ME.rouge_l(hyps, refs).to_dict(),
        "chrf": ME.chrf(hyps, refs).to_dict(),
    }
    path = args.output or os.path.join(run_dir, "reports", "evaluation.json")
    CFG.dump_json(path, reports)
    PL.plot_metric_bars(
        [(name, r["value"]) for name, r in reports.items()],
        os.path.join(run_dir, "reports", "evaluation.png"),
    )
    print(json.dumps({k: v["value"] for k, v in reports.items()}, indent=2))
    return 0


def cmd_topics(args, cfg):
    run_dir = _ensure_dirs(CFG.resolve_run_dir(args.name, args.run_dir))
    tcfg = cfg["topics"]
    with open(args.input, encoding="utf-8") as f:
        rows = [json.loads(line) for line in f if line.strip()]
    docs = [
        {"id": r.get("id", str(i)), "text": r.get("hypothesis") or r.get("text", ""), "date": r.get("date")}
        for i, r in enumerate(rows)
    ]
    matrix = TP.build_term_date_matrix(
        docs,
        weighting=tcfg["weighting"],
        min_term_count=tcfg["min_term_count"],
        granularity=tcfg["granularity"],
    )
    model = TP.nmf_fit(
        matrix, k=tcfg["k"], alpha=tcfg["alpha"], max_iter=tcfg["max_iter"],
        tol=tcfg["tol"], seed=tcfg["seed"],
    )
    reports_dir = os.path.join(run_dir, "reports")
    payload = TP.write_topics_json(
        os.path.join(reports_dir, "topics.json"), model, top_n=tcfg["top_n"]
    )
    TP.write_timeseries_csv(os.path.join(reports_dir, "topic_series"), model, window=tcfg["window"])
    series = TP.topic_timeseries(model, window=tcfg["window"])
    PL.plot_topic_timeseries(series, os.path.join(reports_dir, "topic_series.png"))
    CFG.echo_config(cfg, run_dir)
    print(
        f"{model.k} topics over {len(model.dates)} dates; "
        f"objective {model.objective_trace[-1]:.3f} after {len(model.objective_trace) - 1} iterations"
    )
    for topic in payload["topics"][:3]:
        terms = ", ".join(t["term"] for t in topic["terms"][:5])
        print(f"  topic {topic['topic']}: {terms}")
    return 0


def cmd_serve(args, cfg):
    from .service import serve

    scfg = dict(cfg["serve"])
    run_dir = CFG.resolve_run_dir(args.name, args.run_dir)
    if args.checkpoint:
        scfg["checkpoint"] = args.checkpoint
    if not scfg.get("checkpoint"):
        candidate = os.path.join(run_dir, "checkpoints", "final.ckpt")
        if os.path.exists(candidate):
            scfg["checkpoint"] = candidate
    scfg.setdefault("hanja_vocab", None)
    if scfg["checkpoint"] and not scfg["hanja_vocab"]:
        scfg["hanja_vocab"] = os.path.join(run_dir, "hanja.vocab")
        scfg["korean_vocab"] = os.path.join(run_dir, "korean.vocab")
    if args.store:
        scfg["store_path"] = args.store
    serve(scfg, host=args.host, port=args.port)
    return 0


def cmd_params(args, cfg):
    """Parameter-count audit for both sharing policies at paper scale."""
    rows = {}
    for policy in ("attention_only", "all"):
        mc = paper_scale_config()
        mc.sharing_policy = policy
        params = ModelParams(mc, seed=0)
        rows[policy] = params.parameter_count()
    rows["reported_in_paper"] = 168_800_000
    print(json.dumps(rows, indent=2))
    return 0


def cmd_reproduce(args, cfg):
    from .reproduce import run_reproduction

    run_dir = _ensure_dirs(CFG.resolve_run_dir(args.name, args.run_dir))
    CFG.echo_config(cfg, run_dir)
    report = run_reproduction(args.which, run_dir, cfg, seeds=args.seeds, steps=args.steps)
    print(json.dumps(report["table"], indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hanmt",
        description="restore, translate, and mine historical Hanja records (desk scale)",
    )
    parser.add_argument("--config", help="sectioned YAML/JSON config file")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value")
    parser.add_argument("--run-dir", help="explicit run directory")
    parser.add_argument("--name", default="default", help="run name under the run root")
    parser.add_argument("--seed", type=int, default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    p.add_argument("--paired", type=int, default=1000)
    p.add_argument("--unpaired", type=int, default=0)
    p.add_argument("--themed", type=int, default=0, help="also write themed docs for topics")
    p.add_argument("--alternating", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prepare", help="build vocabularies and train/test splits")
    p.add_argument("--corpus", help="corpus JSON-lines path")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="run a training schedule")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("restore", help="rank candidates for damaged positions")
    p.add_argument("--text", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--refill", action="store_true")
    p.add_argument("--checkpoint")
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("translate", help="translate text or a corpus file")
    p.add_argument("--text")
    p.add_argument("--input", help="hanja JSON-lines to translate")
    p.add_argument("--output")
    p.add_argument("--beam", type=int)
    p.add_argument("--checkpoint")
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--output")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("topics", help="fit the topic model over dated documents")
    p.add_argument("--input", required=True, help="JSON-lines with text/hypothesis and date")
    p.set_defaults(fn=cmd_topics)

    p = sub.add_parser("serve", help="run the restoration-review HTTP service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--store")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("params", help="parameter-count audit at paper scale")
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("reproduce", help="toy-scale reproduction of the reported tables")
    p.add_argument("which", choices=["table3", "table5", "table6"])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--steps", type=int, default=2000)
    p.set_defaults(fn=cmd_reproduce)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = CFG.load_config(args.config, args.set)
        if args.seed is not None:
            cfg["schedule"]["seed"] = args.seed
        else:
            args.seed = cfg["schedule"]["seed"]
        return args.fn(args, cfg)
    except (CliError, CFG.ConfigError, C.CorpusError, TR.TrainingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
