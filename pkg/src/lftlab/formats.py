"""Readers/writers for every external file format.

All writers are atomic (temp file + rename) and canonical: scores carry
exactly six decimals, so write-then-read and read-then-write are
identities on canonical files.  Parsers reject malformed lines with the
line number and offending content.
"""

from __future__ import annotations

import os

from .errors import FormatError
from .metrics import Qrels, RunRecord, Triplet


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp~"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _lines(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if line:
                yield number, line


def _fail(path: str, number: int, line: str, why: str):
    raise FormatError(f"{path}:{number}: {why}: {line!r}")


# -- run files ---------------------------------------------------------------

def write_run(path: str, records) -> None:
    _atomic_write(path, "".join(
        f"{r.qid} Q0 {r.docid} {r.rank} {r.score:.6f} {r.tag}\n" for r in records))


def read_run(path: str) -> list[RunRecord]:
    out = []
    for number, line in _lines(path):
        fields = line.split(" ")
        if len(fields) != 6:
            _fail(path, number, line, f"expected 6 space-separated fields, got {len(fields)}")
        qid, literal, docid, rank, score, tag = fields
        if literal != "Q0":
            _fail(path, number, line, "second field must be 'Q0'")
        try:
            out.append(RunRecord(qid=qid, docid=docid, rank=int(rank),
                                 score=float(score), tag=tag))
        except ValueError:
            _fail(path, number, line, "rank must be an integer and score a float")
    return out


# -- qrels -------------------------------------------------------------------

def write_qrels(path: str, qrels: Qrels) -> None:
    _atomic_write(path, "".join(
        f"{qid} 0 {docid} {rel}\n" for qid, docid, rel in qrels.items()))


def read_qrels(path: str) -> Qrels:
    qrels = Qrels()
    for number, line in _lines(path):
        fields = line.split(" ")
        if len(fields) != 4:
            _fail(path, number, line, f"expected 4 space-separated fields, got {len(fields)}")
        qid, _zero, docid, rel = fields
        try:
            qrels.set(qid, docid, int(rel))
        except ValueError:
            _fail(path, number, line, "relevance must be an integer")
    return qrels


# -- triplets ----------------------------------------------------------------

def write_triplets(path: str, triplets) -> None:
    _atomic_write(path, "".join(
        f"{t.query}\t{t.pos}\t{t.neg}\n" for t in triplets))


def read_triplets(path: str) -> list[Triplet]:
    out = []
    for number, line in _lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            _fail(path, number, line, f"expected 3 tab-separated fields, got {len(fields)}")
        query, pos, neg = fields
        if pos == neg:
            _fail(path, number, line, "positive and negative documents are identical")
        out.append(Triplet(query=query, pos=pos, neg=neg))
    return out


# -- id -> text tables (documents, queries) ----------------------------------

def write_texts(path: str, table: dict[str, str]) -> None:
    _atomic_write(path, "".join(f"{k}\t{v}\n" for k, v in table.items()))


def read_texts(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for number, line in _lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            _fail(path, number, line, f"expected 2 tab-separated fields, got {len(fields)}")
        key, text = fields
        if key in out:
            _fail(path, number, line, f"duplicate id {key!r}")
        out[key] = text
    return out


# -- candidate lists ---------------------------------------------------------

def write_candidates(path: str, candidates: dict[str, list[str]]) -> None:
    _atomic_write(path, "".join(
        f"{qid}\t{','.join(docids)}\n" for qid, docids in candidates.items()))


def read_candidates(path: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for number, line in _lines(path):
        fields = line.split("\t")
        if len(fields) != 2 or not fields[1]:
            _fail(path, number, line, "expected '<qid>\\t<docid>[,<docid>...]'")
        qid, docs = fields
        if qid in out:
            _fail(path, number, line, f"duplicate query id {qid!r}")
        out[qid] = docs.split(",")
    return out


# -- per-epoch training log ---------------------------------------------------

def format_epoch_line(epoch: int, train_loss: float, val_metric: float, stage) -> str:
    return f"{epoch}\t{train_loss:.6f}\t{val_metric:.6f}\t{stage}\n"


def write_epoch_log(path: str, lines) -> None:
    _atomic_write(path, "".join(lines))
