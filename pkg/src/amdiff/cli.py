"""Command-line entry point: ``amdiff <command> ...``.

Every command that writes ``--out`` also writes ``<out>.run.json`` with the
resolved settings and the package version. Settings come from defaults, then
an optional ``--config`` JSON file, then explicit flags.

Exit codes: 0 success, 2 usage error, 3 bad input data, 4 contract
violation, 1 anything else. Failures print one JSON line to stderr.
"""

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .errors import AmdiffError, ContractError, DataError

EXIT_USAGE, EXIT_DATA, EXIT_CONTRACT, EXIT_OTHER = 2, 3, 4, 1


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# small I/O helpers
# --------------------------------------------------------------------------

def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def read_tsv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return rows


def write_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run(out, args, extra=None):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    doc = {"command": args.command, "version": __version__, "config": cfg}
    if extra:
        doc.update(extra)
    with open(f"{out}.run.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def fmt(x):
    return repr(float(x))


def _col(row, *names):
    for n in names:
        if n in row and row[n] is not None:
            return row[n]
    raise DataError(f"missing column; expected one of {names}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_tokenize(args):
    from .tokens import Vocabulary, build_vocab, tokenize

    corpus = read_lines(args.inp)
    vocab = Vocabulary.load(args.vocab) if args.vocab else build_vocab(corpus)
    if args.save_vocab:
        vocab.save(args.save_vocab)
    rows = [" ".join(str(i) for i in tokenize(s, vocab, args.max_len)) for s in corpus]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + ("\n" if rows else ""))
    write_run(args.out, args, {"vocab_size": vocab.K})


def cmd_convert_peptide(args):
    from .peplink import (PeptideSpec, default_registry, format_sequence, load_registry, parse_bonds,
                          parse_sequence, peptide_to_selfies, peptide_to_smiles, selfies_to_peptide)

    reg = load_registry(args.registry) if args.registry else default_registry()
    if args.report:
        print(reg.report())
        return
    if args.from_selfies:
        spec = selfies_to_peptide(args.from_selfies, reg)
        result = format_sequence(spec.residues)
    else:
        if not args.seq:
            raise UsageError("give --seq or --from-selfies")
        spec = PeptideSpec(parse_sequence(args.seq), parse_bonds(args.bonds), args.n_term, args.c_term)
        result = peptide_to_smiles(spec, reg) if args.smiles else peptide_to_selfies(spec, reg)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(result + "\n")
        write_run(args.out, args)
    else:
        print(result)


def _mol_weight(molecule):
    """Molecular weight of a SELFIES string or a peptide sequence."""
    from .chem.selfies import decode_selfies
    from .peplink import PeptideSpec, build_graph, parse_sequence

    if molecule.startswith("["):
        return decode_selfies(molecule).molecular_weight()
    return build_graph(PeptideSpec(parse_sequence(molecule))).molecular_weight()


def cmd_prep_mic(args):
    from .dataprep.mic import mic_to_label, needs_mol_weight, parse_mic, split_unit, to_micromolar

    out = []
    for n, row in enumerate(read_tsv(args.inp), 2):
        mol = _col(row, "molecule", "selfies", "sequence")
        raw = _col(row, "mic", "raw", "MIC")
        text, inline_unit = split_unit(raw)
        unit = inline_unit or row.get("unit") or args.unit
        value = parse_mic(text)
        mw, source = None, "none"
        if needs_mol_weight(unit):
            mw, source = _mol_weight(mol), "graph"
        umol = to_micromolar(value, unit, mw)
        out.append([mol, row.get("strain", ""), raw, unit, fmt(umol), fmt(mic_to_label(umol)), source])
    write_tsv(args.out, ["molecule", "strain", "mic_raw", "unit", "mic_umol", "label", "mw_source"], out)
    write_run(args.out, args, {"records": len(out)})


def cmd_prep_synergy(args):
    from .dataprep.mic import binarize_fici

    out = []
    for row in read_tsv(args.inp):
        fici = float(_col(row, "fici", "FICI"))
        out.append([_col(row, "molecule_a"), _col(row, "molecule_b"), row.get("strain", ""), fmt(fici),
                    binarize_fici(fici)])
    write_tsv(args.out, ["molecule_a", "molecule_b", "strain", "fici", "label"], out)
    write_run(args.out, args, {"records": len(out)})


def cmd_fragment_genome(args):
    from .dataprep.genome import fragment_contig, read_fasta

    rows = []
    for cid, seq in read_fasta(args.inp):
        for f in fragment_contig(seq, args.step, args.window, cid):
            rows.append([f.contig_id, f.start, f.end] + ([f.sequence] if args.with_sequence else []))
    header = ["contig", "start", "end"] + (["sequence"] if args.with_sequence else [])
    if args.out:
        write_tsv(args.out, header, rows)
        write_run(args.out, args, {"fragments": len(rows)})
    print(len(rows))


def cmd_ingest_embeddings(args):
    from .dataprep.genome import GenomeEmbedding, load_matrix, pool_fragment_embedding, scale_genome_embeddings

    if args.per_base:
        genome = np.stack([pool_fragment_embedding(load_matrix(p)[0]) for p in args.per_base])
        flag = False
    elif args.genome:
        genome, flag = load_matrix(args.genome)
        flag = bool(flag)
    else:
        raise UsageError("give --genome or --per-base")
    emb = GenomeEmbedding(genome, flag)
    if not emb.scaled:
        emb = scale_genome_embeddings(emb)
    text, _ = load_matrix(args.text)
    from .dataprep.genome import StrainContext

    ctx = StrainContext(args.strain, emb.matrix, text)
    np.savez(args.out, strain_id=np.array(ctx.strain_id), genome=ctx.genome, text=ctx.text,
             genome_scaled=np.array(True))
    write_run(args.out, args, {"genome_shape": list(ctx.genome.shape), "text_shape": list(ctx.text.shape)})


def load_context(path):
    from .dataprep.genome import StrainContext

    with np.load(path, allow_pickle=False) as z:
        return StrainContext(str(z["strain_id"]), z["genome"], z["text"])


def cmd_train_toy(args):
    from .denoiser import ToyConfig, TrainConfig, compute_descriptors, train_toy
    from .diffusion import LossConfig
    from .tokens import build_vocab, pad_batch, tokenize

    corpus = read_lines(args.corpus)
    vocab = build_vocab(corpus)
    seqs = [tokenize(s, vocab) for s in corpus]
    ids = pad_batch(seqs)
    targets = np.stack([compute_descriptors(s) for s in corpus]) if args.lam > 0 else None
    mcfg = ToyConfig(K=vocab.K, d=args.d, layers=args.layers, hidden=args.hidden,
                     max_len=max(args.max_len, ids.shape[1]), seed=args.seed)
    tcfg = TrainConfig(stage1_steps=args.stage1_steps, stage2_steps=args.stage2_steps, batch=args.batch,
                       lr=args.lr, momentum=args.momentum, loss=LossConfig(lam=args.lam), seed=args.seed)
    model = train_toy(ids, targets, mcfg, tcfg)
    model.tokens = list(vocab.tokens)
    model.save(args.out)
    write_run(args.out, args, {"final": model.log[-1] if model.log else None, "vocab_size": vocab.K})


def _load_model(path):
    from .denoiser import ToyDenoiser
    from .tokens import Vocabulary

    model = ToyDenoiser.load(path)
    if model.tokens is None:
        raise DataError(f"{path}: checkpoint has no vocabulary")
    return model, Vocabulary(model.tokens)


def _fit_predictors(args, vocab, rng):
    from .diffusion import NoiseSchedule
    from .guidance import fit_noisy_classifier, fit_noisy_regressor
    from .tokens import pad_batch, tokenize

    sched = NoiseSchedule()
    reg = cls = None
    if args.regressor_data:
        rows = read_tsv(args.regressor_data)
        X = pad_batch([tokenize(_col(r, "selfies", "molecule"), vocab) for r in rows], args.length)
        reg = fit_noisy_regressor(X, [float(_col(r, "value", "label")) for r in rows], vocab.K, sched, rng)
    if args.classifier_data:
        rows = read_tsv(args.classifier_data)
        X = pad_batch([tokenize(_col(r, "selfies", "molecule"), vocab) for r in rows], args.length)
        cls = fit_noisy_classifier(X, [int(_col(r, "label", "class")) for r in rows], vocab.K, sched, rng)
    return reg, cls


def _run_chains(den, sched, scfg, guidance, remask, seed, jobs, batch):
    """Sample in fixed-size batches with spawned seeds; result is independent of ``jobs``."""
    from .sampler import SamplerConfig, Trace, sample

    n = scfg.n_samples
    sizes = [min(batch, n - i) for i in range(0, n, batch)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(k):
        cfg = SamplerConfig(**{**vars(scfg), "n_samples": sizes[k]})
        trace = Trace()
        x = sample(den, sched, cfg, guidance, remask, np.random.default_rng(seeds[k]), trace)
        return x, trace.checksum()

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as ex:
        results = list(ex.map(run, range(len(sizes))))
    return np.concatenate([r[0] for r in results]), [r[1] for r in results]


def _write_samples(args, x, vocab, predictors, checksums, settings):
    from .tokens import detokenize

    strings = [detokenize(row, vocab) for row in x]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(strings) + "\n")
    names = [name for name, _ in predictors]
    rows = []
    values = [fn(x, 0.0) for _, fn in predictors]
    for i, s in enumerate(strings):
        rows.append([s] + [fmt(v[i]) for v in values])
    write_tsv(f"{args.out}.report.tsv", ["selfies"] + names, rows)
    write_run(args.out, args, {"trace_checksums": checksums, "sampler": settings})


def cmd_sample(args):
    from .diffusion import NoiseSchedule
    from .sampler import SamplerConfig

    model, vocab = _load_model(args.model)
    scfg = SamplerConfig(steps=args.steps, length=args.length, n_samples=args.n)
    x, sums = _run_chains(model, NoiseSchedule(), scfg, None, None, args.seed, args.jobs, args.batch_size)
    _write_samples(args, x, vocab, [], sums, vars(scfg))


def _guided_settings(args):
    from .sampler import RemaskSchedule, SamplerConfig

    scfg = SamplerConfig(steps=args.steps, length=args.length, n_samples=args.n,
                         stage1_gammas=(args.gamma1, args.gamma2),
                         stage2_gammas=(args.stage2_gamma1, args.stage2_gamma2),
                         sigma_start=args.sigma_start, sigma_end=args.sigma_end, target=args.target)
    remask = None if args.no_remask else RemaskSchedule(args.t_on, args.t_off, args.r_loop, args.loop_fraction)
    return scfg, remask


def cmd_guided_sample(args):
    from dataclasses import asdict

    from .diffusion import NoiseSchedule
    from .sampler import mic_guidance

    scfg, remask = _guided_settings(args)
    settings = {"sampler": vars(scfg), "remask": None if remask is None else asdict(remask)}
    if args.echo_config:
        print(json.dumps(settings, sort_keys=True, default=list))
        if not args.model:
            return
    if not args.model:
        raise UsageError("--model is required unless only --echo-config is wanted")
    model, vocab = _load_model(args.model)
    rng = np.random.default_rng(args.seed)
    reg, cls = _fit_predictors(args, vocab, rng)
    guidance, predictors = None, []
    if reg is not None or cls is not None:
        reg_fn = reg if reg is not None else (lambda s, t: np.full(len(s), scfg.target))
        guidance = mic_guidance(reg_fn, cls, scfg)
        predictors = [("mic", reg_fn)] + ([("peptide", cls)] if cls is not None else [])
    x, sums = _run_chains(model, NoiseSchedule(), scfg, guidance, remask, args.seed, args.jobs, args.batch_size)
    _write_samples(args, x, vocab, predictors, sums, settings)


def cmd_predict(args):
    from .fusion import FusionConfig, ensemble_predict, init_fusion_params, predict
    from .tokens import CLS_ID, tokenize

    model, vocab = _load_model(args.model)
    ctxs = [load_context(p) for p in args.context]
    molecules = read_lines(args.molecules)
    ctx0 = ctxs[0]
    fcfg = FusionConfig(mol_dim=model.cfg.d, genome_dim=ctx0.genome.shape[1], text_dim=ctx0.text.shape[1],
                        attn_dim=args.attn_dim, fused=args.fused)
    members = []
    for k in range(args.ensemble):
        rng = np.random.default_rng([args.seed, k]) if args.init == "random" else None
        members.append(init_fusion_params(fcfg, rng, heads=(args.head,)))
    rows = []
    for mol in molecules:
        ids = np.concatenate([[CLS_ID], tokenize(mol, vocab)])
        feat = model.features(ids)
        for ctx in ctxs:
            y = ensemble_predict([lambda f, p=p: predict(f, ctx, p, args.head) for p in members], feat)
            rows.append([mol, ctx.strain_id, fmt(y)])
    write_tsv(args.out, ["molecule", "strain", "prediction"], rows)
    write_run(args.out, args)


def cmd_eval(args):
    from .dataprep.metrics import classification_metrics, regression_metrics

    rows = read_tsv(args.inp)
    pred = np.array([float(r[args.pred_col]) for r in rows])
    lab = np.array([float(r[args.label_col]) for r in rows])
    if args.task == "regression":
        res = regression_metrics(pred, lab)
    else:
        res = classification_metrics(pred, lab.astype(int))
    print(json.dumps(res, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(res, fh, sort_keys=True)
            fh.write("\n")
        write_run(args.out, args)


def cmd_novelty(args):
    from .dataprep.novelty import max_tanimoto, token_fingerprint

    ref = [token_fingerprint(s) for s in read_lines(args.reference)]
    gen = read_lines(args.generated)
    scores = [max_tanimoto(token_fingerprint(s), ref) for s in gen]
    if args.out:
        write_tsv(args.out, ["selfies", "max_tanimoto"], [[s, fmt(v)] for s, v in zip(gen, scores)])
        write_run(args.out, args)
    print(json.dumps({"n": len(scores), "mean_max_tanimoto": float(np.mean(scores)) if scores else None,
                      "fingerprint": "token bigram set"}))


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="amdiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON file of settings; flags override it")
        sp.set_defaults(func=func)
        subs[name] = sp
        return sp

    sp = add("tokenize", cmd_tokenize, "SELFIES lines to id lines")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--vocab", help="vocabulary file; built from the input when omitted")
    sp.add_argument("--save-vocab")
    sp.add_argument("--max-len", type=int, default=1024)

    sp = add("convert-peptide", cmd_convert_peptide, "peptide spec <-> SELFIES")
    sp.add_argument("--seq", help="residue codes; multi-letter codes in brackets, e.g. ac[TYR-Bzl]")
    sp.add_argument("--bonds", default="", help="e.g. disulfide:2-7;head_to_tail:1-9")
    sp.add_argument("--n-term")
    sp.add_argument("--c-term")
    sp.add_argument("--smiles", action="store_true", help="emit SMILES instead of SELFIES")
    sp.add_argument("--from-selfies", help="reverse conversion of a linear peptide")
    sp.add_argument("--registry", help="alternative residue registry file")
    sp.add_argument("--report", action="store_true", help="print the registry load report")
    sp.add_argument("--out")

    sp = add("prep-mic", cmd_prep_mic, "MIC records to labels")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--unit", default="µM", help="unit when the file has no unit column")

    sp = add("prep-synergy", cmd_prep_synergy, "FICI records to synergy labels")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)

    sp = add("fragment-genome", cmd_fragment_genome, "FASTA contigs to windows")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out")
    sp.add_argument("--step", type=int, default=10000)
    sp.add_argument("--window", type=int, default=11000)
    sp.add_argument("--with-sequence", action="store_true")

    sp = add("ingest-embeddings", cmd_ingest_embeddings, "build a strain context file")
    sp.add_argument("--strain", required=True)
    sp.add_argument("--genome", help="fragment embedding matrix (rows = fragments)")
    sp.add_argument("--per-base", nargs="+", help="per-base matrices, one per fragment, to mean-pool")
    sp.add_argument("--text", required=True, help="text embedding matrix")
    sp.add_argument("--out", required=True)

    sp = add("train-toy", cmd_train_toy, "train the small denoiser")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--d", type=int, default=64)
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--hidden", type=int, default=64)
    sp.add_argument("--max-len", type=int, default=64)
    sp.add_argument("--stage1-steps", type=int, default=300)
    sp.add_argument("--stage2-steps", type=int, default=100)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--lam", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)

    for name, func in (("sample", cmd_sample), ("guided-sample", cmd_guided_sample)):
        sp = add(name, func, "generate sequences" + (" with guidance and remasking" if func is cmd_guided_sample else ""))
        sp.add_argument("--model", required=func is cmd_sample)
        sp.add_argument("--out", required=func is cmd_sample)
        sp.add_argument("--n", type=int, default=16)
        sp.add_argument("--length", type=int, default=32)
        sp.add_argument("--steps", type=int, default=256)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--batch-size", type=int, default=256)
    sp.add_argument("--t-on", type=float, default=0.55)
    sp.add_argument("--t-off", type=float, default=0.45)
    sp.add_argument("--r-loop", type=float, default=0.1)
    sp.add_argument("--loop-fraction", type=float, default=0.1)
    sp.add_argument("--no-remask", action="store_true")
    sp.add_argument("--gamma1", type=float, default=15.0, help="regressor strength, stages 1 and 3")
    sp.add_argument("--gamma2", type=float, default=0.0, help="classifier strength, stages 1 and 3")
    sp.add_argument("--stage2-gamma1", type=float, default=0.0)
    sp.add_argument("--stage2-gamma2", type=float, default=15.0)
    sp.add_argument("--target", type=float, default=1.0)
    sp.add_argument("--sigma-start", type=float, default=0.5)
    sp.add_argument("--sigma-end", type=float, default=0.2)
    sp.add_argument("--regressor-data", help="TSV with selfies and value columns")
    sp.add_argument("--classifier-data", help="TSV with selfies and label columns")
    sp.add_argument("--echo-config", action="store_true")

    sp = add("predict", cmd_predict, "molecule x strain predictions")
    sp.add_argument("--model", required=True)
    sp.add_argument("--molecules", required=True)
    sp.add_argument("--context", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--head", choices=["mic", "abx_class"], default="mic")
    sp.add_argument("--fused", type=int, default=12294)
    sp.add_argument("--attn-dim", type=int, default=64)
    sp.add_argument("--init", choices=["zero", "random"], default="zero",
                    help="zero weights are lazy; random weights at full width need several GB")
    sp.add_argument("--ensemble", type=int, default=7)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("eval", cmd_eval, "metrics from a prediction table")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--task", choices=["regression", "classification"], required=True)
    sp.add_argument("--pred-col", default="prediction")
    sp.add_argument("--label-col", default="label")
    sp.add_argument("--out")

    sp = add("novelty", cmd_novelty, "max token-bigram Tanimoto to a reference set")
    sp.add_argument("--generated", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--out")
    return p, subs


def _parse(argv):
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        command = next((a for a in argv if a in subs), None)
        try:
            with open(known.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read config {known.config}: {e}") from None
        if command is not None:
            dests = {a.dest for a in subs[command]._actions}
            unknown = set(k.replace("-", "_") for k in cfg) - dests
            if unknown:
                raise UsageError(f"unknown config keys: {sorted(unknown)}")
            subs[command].set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit": code}) + "\n")
    return code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
        args.func(args)
    except SystemExit as e:
        if e.code not in (0, None):
            return _fail(EXIT_USAGE, "UsageError", "invalid arguments")
        return 0
    except UsageError as e:
        return _fail(EXIT_USAGE, "UsageError", str(e))
    except DataError as e:
        return _fail(EXIT_DATA, type(e).__name__, str(e))
    except ContractError as e:
        return _fail(EXIT_CONTRACT, type(e).__name__, str(e))
    except OSError as e:
        return _fail(EXIT_DATA, type(e).__name__, str(e))
    except ValueError as e:
        # settings rejected by a config dataclass or an operation's argument check
        return _fail(EXIT_USAGE, "InvalidSetting", str(e))
    except AmdiffError as e:
        return _fail(EXIT_OTHER, type(e).__name__, str(e))
    return 0


if __name__ == "__main__":
    sys.exit(main())
