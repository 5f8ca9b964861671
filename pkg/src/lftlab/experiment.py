"""Config-driven experiment pipeline shared by all CLI commands.

Every relative path in ``paths.*`` resolves against the output directory,
so a whole experiment lives in one folder and reruns with the same seed
produce byte-identical artifacts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import formats
from .config import ExperimentConfig
from .container import read_tensors
from .corpus import (CorpusBundle, SyntheticCorpusConfig, Vocab, build_vocab,
                     generate_corpus)
from .encoder import EncoderConfig, encoder_param_shapes
from .errors import ConfigError, DataError
from .gradcheck import grad_check
from .lft import (FullFT, Hybrid, LoRA, LoRAPlus, PrefixTuning, PromptTuning,
                  approx_param_count, count_trainable, merge_lora_into_encoder)
from .metrics import Qrels, fold_rotation, fold_split, metric_report
from .pretrain import PretrainSchedule, pretrain_masked
from .rankers import precompute_docs
from .stats import improvement_pct, t_test_one_tailed
from .tensor import Tensor
from .towers import Cross, HeteroFullBi, NrmModel, SemiSiameseBi, SiameseBi
from .train import EvalSet, TrainConfig, train, rerank, triplet_loss


def resolve(out_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(out_dir, path)


@dataclass
class CorpusPaths:
    documents: str
    queries: str
    qrels: str
    candidates: str
    triplets: str


def corpus_paths(cfg: ExperimentConfig, out_dir: str) -> CorpusPaths:
    base = resolve(out_dir, cfg["paths.corpus"])
    return CorpusPaths(documents=os.path.join(base, "documents.tsv"),
                       queries=os.path.join(base, "queries.tsv"),
                       qrels=os.path.join(base, "qrels.txt"),
                       candidates=os.path.join(base, "candidates.tsv"),
                       triplets=os.path.join(base, "triplets.tsv"))


# ---------------------------------------------------------------------------
# spec / binding / config assembly

def corpus_config(cfg: ExperimentConfig) -> SyntheticCorpusConfig:
    return SyntheticCorpusConfig(
        n_topics=cfg["corpus.topics"], n_docs=cfg["corpus.docs"],
        n_queries=cfg["corpus.queries"], candidates_per_query=cfg["corpus.candidates"],
        query_regime=cfg["corpus.regime"], doc_length_mean=cfg["corpus.doc_mean"],
        doc_length_spread=cfg["corpus.doc_spread"], vocab_size=cfg["corpus.vocab"],
        seed=cfg["seed"])


def _member_spec(cfg: ExperimentConfig, name: str):
    if name == "prompt":
        return PromptTuning(prompt_len=cfg["lft.prompt_len"])
    if name == "prefix":
        return PrefixTuning(prefix_len=cfg["lft.prefix_len"],
                            source_dim=cfg["lft.source_dim"],
                            mlp_hidden=cfg["lft.mlp_hidden"])
    if name == "lora":
        return LoRA(rank=cfg["lft.rank"], alpha=cfg["lft.alpha"],
                    dropout=cfg["lft.dropout"])
    if name == "lora_plus":
        return LoRAPlus(rank=cfg["lft.rank"], alpha=cfg["lft.alpha"],
                        dropout=cfg["lft.dropout"])
    raise ConfigError(f"unknown lft member {name!r}")


def lft_spec(cfg: ExperimentConfig):
    method = cfg["lft.method"]
    if method == "full":
        return FullFT()
    if method == "hybrid":
        return Hybrid(first=_member_spec(cfg, cfg["lft.hybrid.first"]),
                      second=_member_spec(cfg, cfg["lft.hybrid.second"]),
                      mode=cfg["lft.hybrid.mode"],
                      m_epochs=cfg["lft.hybrid.m"], n_epochs=cfg["lft.hybrid.n"])
    return _member_spec(cfg, method)


_SS_LORA = {"shared": "shared", "shared_q": "shared_q_hetero_v",
            "shared_v": "shared_v_hetero_q", "hetero_both": "hetero_both",
            "off": "off"}


def tower_binding(cfg: ExperimentConfig):
    name = cfg["binding"]
    if name == "cross":
        return Cross()
    if name == "siamese":
        return SiameseBi()
    if name == "hetero_full":
        return HeteroFullBi()
    return SemiSiameseBi(prefix_variant=cfg["ss.prefix"],
                         lora_variant=_SS_LORA[cfg["ss.lora"]],
                         common_len=cfg["ss.common_len"])


def encoder_config(cfg: ExperimentConfig, vocab_size: int | None = None,
                   precision: str | None = None) -> EncoderConfig:
    size = cfg["encoder.vocab_size"]
    if size == 0:
        if vocab_size is None:
            raise ConfigError("encoder.vocab_size is 0 (auto) but no corpus vocabulary "
                              "is available; set it explicitly")
        size = vocab_size
    return EncoderConfig(layers=cfg["encoder.layers"], model_dim=cfg["encoder.dim"],
                         heads=cfg["encoder.heads"], ffn_dim=cfg["encoder.ffn_dim"],
                         vocab_size=size, max_seq_len=cfg["encoder.max_seq_len"],
                         dropout_rate=cfg["encoder.dropout"],
                         precision=precision or cfg["precision"])


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        lr_by_group={"ranker": cfg["train.lr.ranker"], "encoder": cfg["train.lr.encoder"],
                     "prefix": cfg["train.lr.prefix"], "lora": cfg["train.lr.lora"]},
        batch_size=cfg["train.batch_size"], max_epochs=cfg["train.max_epochs"],
        seed=cfg["seed"], val_k=cfg["train.val_k"])


# ---------------------------------------------------------------------------
# corpus round trips

def write_bundle(bundle: CorpusBundle, paths: CorpusPaths) -> None:
    os.makedirs(os.path.dirname(paths.documents), exist_ok=True)
    formats.write_texts(paths.documents, bundle.documents)
    formats.write_texts(paths.queries, bundle.queries)
    formats.write_qrels(paths.qrels, bundle.qrels)
    formats.write_candidates(paths.candidates, bundle.candidates)
    formats.write_triplets(paths.triplets, bundle.triplets)


def read_bundle(paths: CorpusPaths) -> CorpusBundle:
    documents = formats.read_texts(paths.documents)
    queries = formats.read_texts(paths.queries)
    qrels = formats.read_qrels(paths.qrels)
    candidates = formats.read_candidates(paths.candidates)
    text_to_qid = {text: qid for qid, text in queries.items()}
    triplets = []
    for t in formats.read_triplets(paths.triplets):
        qid = text_to_qid.get(t.query)
        if qid is None:
            raise DataError(f"triplet query {t.query!r} not in the queries file")
        triplets.append(type(t)(query=t.query, pos=t.pos, neg=t.neg, qid=qid))
    return CorpusBundle(documents=documents, queries=queries, qrels=qrels,
                        candidates=candidates, triplets=triplets)


def bundle_vocab(cfg: ExperimentConfig, bundle: CorpusBundle) -> Vocab:
    texts = list(bundle.documents.values()) + list(bundle.queries.values())
    return build_vocab(texts, cfg["corpus.vocab"])


def build_model(cfg: ExperimentConfig, vocab: Vocab,
                encoder_arrays: dict[str, np.ndarray] | None = None,
                precision: str | None = None) -> NrmModel:
    enc_cfg = encoder_config(cfg, vocab_size=vocab.size, precision=precision)
    return NrmModel(enc_cfg, cfg["model"], tower_binding(cfg), lft_spec(cfg),
                    vocab, seed=cfg["seed"], colbert_dim=cfg["ranker.colbert_dim"],
                    encoder_arrays=encoder_arrays)


def _load_encoder_arrays(cfg: ExperimentConfig, out_dir: str,
                         enc_cfg: EncoderConfig) -> dict[str, np.ndarray] | None:
    path = resolve(out_dir, cfg["paths.encoder"])
    if not os.path.exists(path):
        return None
    tensors = read_tensors(path)
    expected = set(encoder_param_shapes(enc_cfg))
    if set(tensors) != expected:
        raise ConfigError(f"encoder checkpoint {path!r} does not match the config")
    return tensors


# ---------------------------------------------------------------------------
# commands

def run_gen_corpus(cfg: ExperimentConfig, out_dir: str) -> str:
    bundle = generate_corpus(corpus_config(cfg))
    paths = corpus_paths(cfg, out_dir)
    write_bundle(bundle, paths)
    return os.path.dirname(paths.documents)


def run_pretrain(cfg: ExperimentConfig, out_dir: str) -> str:
    bundle = read_bundle(corpus_paths(cfg, out_dir))
    vocab = bundle_vocab(cfg, bundle)
    enc_cfg = encoder_config(cfg, vocab_size=vocab.size)
    schedule = PretrainSchedule(steps=cfg["pretrain.steps"],
                                batch_size=cfg["pretrain.batch_size"],
                                mask_prob=cfg["pretrain.mask_prob"],
                                lr=cfg["pretrain.lr"], max_len=cfg["pretrain.max_len"])
    state = pretrain_masked(list(bundle.documents.values()), enc_cfg, schedule,
                            vocab, seed=cfg["seed"])
    path = resolve(out_dir, cfg["paths.encoder"])
    state.save(path)
    return path


def _rotation_sets(cfg: ExperimentConfig, bundle: CorpusBundle):
    folds = fold_split(list(bundle.queries), n_folds=cfg["eval.folds"],
                       seed=cfg["seed"])
    return fold_rotation(folds, cfg["eval.rotation"])


def _eval_set(bundle: CorpusBundle, qids) -> EvalSet:
    return EvalSet(queries={q: bundle.queries[q] for q in qids},
                   candidates={q: bundle.candidates[q] for q in qids},
                   qrels=bundle.qrels)


def run_train(cfg: ExperimentConfig, out_dir: str):
    bundle = read_bundle(corpus_paths(cfg, out_dir))
    vocab = bundle_vocab(cfg, bundle)
    enc_cfg = encoder_config(cfg, vocab_size=vocab.size)
    model = build_model(cfg, vocab,
                        encoder_arrays=_load_encoder_arrays(cfg, out_dir, enc_cfg))
    train_ids, val_ids, _test_ids = _rotation_sets(cfg, bundle)
    triplets = [t for t in bundle.triplets if t.qid in set(train_ids)]
    result = train(model, triplets, _eval_set(bundle, val_ids), train_config(cfg),
                   bundle.documents)
    model.save(resolve(out_dir, cfg["paths.model"]))
    formats.write_epoch_log(resolve(out_dir, cfg["paths.log"]), result.log_lines)
    return result


def run_rerank(cfg: ExperimentConfig, out_dir: str) -> str:
    bundle = read_bundle(corpus_paths(cfg, out_dir))
    vocab = bundle_vocab(cfg, bundle)
    model = build_model(cfg, vocab)
    model.load_arrays(resolve(out_dir, cfg["paths.model"]))
    _train_ids, _val_ids, test_ids = _rotation_sets(cfg, bundle)
    records = []
    cache = precompute_docs(model, bundle.documents,
                            sorted({d for q in test_ids for d in bundle.candidates[q]})) \
        if model.is_bi_encoder else None
    for qid in test_ids:
        records.extend(rerank(model, (qid, bundle.queries[qid]),
                              bundle.candidates[qid], cache=cache,
                              documents=bundle.documents, tag=cfg["tag"]))
    path = resolve(out_dir, cfg["paths.run"])
    formats.write_run(path, records)
    return path


def run_eval(run_path: str, qrels_path: str, p_ks, ndcg_ks) -> list[str]:
    run = formats.read_run(run_path)
    qrels = formats.read_qrels(qrels_path)
    report = metric_report(run, qrels, p_ks=tuple(p_ks), ndcg_ks=tuple(ndcg_ks))
    lines = [f"queries\t{report.query_count}"]
    for label, mean in report.means.items():
        lines.append(f"{label}\t{mean:.4f}")
    return lines


def run_count_params(cfg: ExperimentConfig, convention: str = "retained") -> str:
    spec = lft_spec(cfg)
    if cfg["encoder.vocab_size"] == 0 and isinstance(spec, FullFT):
        raise ConfigError("full fine-tuning counts need an explicit encoder.vocab_size")
    enc_cfg = encoder_config(cfg, vocab_size=1)
    binding = tower_binding(cfg)
    n = count_trainable(spec, enc_cfg, convention=convention, binding=binding)
    return f"{n} ({approx_param_count(n)})"


def run_gradcheck(cfg: ExperimentConfig, tol: float = 1e-4) -> tuple[float, bool]:
    """Finite-difference check of the full model's triplet loss at 64-bit."""
    cc = corpus_config(cfg)
    small = SyntheticCorpusConfig(n_topics=min(cc.n_topics, 3), n_docs=12,
                                  n_queries=6, candidates_per_query=4,
                                  query_regime=cc.query_regime, doc_length_mean=12.0,
                                  doc_length_spread=3.0, vocab_size=cc.vocab_size,
                                  seed=cc.seed)
    bundle = generate_corpus(small)
    vocab = bundle_vocab(cfg, bundle)
    model = build_model(cfg, vocab, precision="f64")
    triplet = bundle.triplets[0]
    query, pos, neg = triplet.query, bundle.documents[triplet.pos], \
        bundle.documents[triplet.neg]

    def objective(store):
        s_pos, s_neg = model.triplet_scores(query, pos, neg, train=False)
        return triplet_loss(s_pos, s_neg)

    report = grad_check(objective, model.store, h=1e-5, tol=tol,
                        max_coords_per_param=3, seed=cfg["seed"])
    return report.max_rel_err, report.passed


def run_merge_lora(cfg: ExperimentConfig, out_dir: str) -> str:
    bundle = read_bundle(corpus_paths(cfg, out_dir))
    vocab = bundle_vocab(cfg, bundle)
    model = build_model(cfg, vocab)
    model.load_arrays(resolve(out_dir, cfg["paths.model"]))
    if not model.lora_modules:
        raise ConfigError("no low-rank adapters to merge in this configuration")
    if model.lora_variant != "shared":
        raise ConfigError("merging tower-specific adapters into one encoder is "
                          "ambiguous; merge applies to shared adapters only")
    merge_lora_into_encoder(model.store, model.lora_modules["shared"])
    path = resolve(out_dir, cfg["paths.model"])
    merged = path + ".merged"
    model.save(merged)
    return merged


def run_stats(a_path: str, b_path: str) -> list[str]:
    a = _read_scores(a_path)
    b = _read_scores(b_path)
    result = t_test_one_tailed(a, b)
    mean_a = sum(a) / len(a)
    mean_b = sum(b) / len(b)
    lines = [f"mean_a\t{mean_a:.6f}", f"mean_b\t{mean_b:.6f}",
             f"t\t{result.t:.6f}", f"df\t{result.df}", f"p\t{result.p:.6f}"]
    if mean_b > 0:
        lines.append(f"improvement_pct\t{improvement_pct(mean_a, mean_b):.2f}")
    return lines


def _read_scores(path: str) -> list[float]:
    scores = []
    with open(path, "r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                scores.append(float(line))
            except ValueError:
                raise DataError(f"{path}:{number}: not a number: {line!r}") from None
    if not scores:
        raise DataError(f"{path}: no scores found")
    return scores
