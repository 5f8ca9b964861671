import pytest

from lftlab.errors import FormatError
from lftlab.formats import (format_epoch_line, read_candidates, read_qrels,
                            read_run, read_texts, read_triplets, write_candidates,
                            write_qrels, write_run, write_texts, write_triplets)
from lftlab.metrics import Qrels, RunRecord, Triplet


class TestRunFiles:
    RECORDS = [RunRecord(qid="q1", docid="d2", rank=1, score=0.9, tag="sys"),
               RunRecord(qid="q1", docid="d1", rank=2, score=0.3, tag="sys")]

    def test_round_trip_byte_identical(self, tmp_path):
        path = tmp_path / "a.run"
        write_run(str(path), self.RECORDS)
        first = path.read_bytes()
        write_run(str(path), read_run(str(path)))
        assert path.read_bytes() == first

    def test_line_format(self, tmp_path):
        path = tmp_path / "a.run"
        write_run(str(path), self.RECORDS[:1])
        assert path.read_text() == "q1 Q0 d2 1 0.900000 sys\n"

    def test_five_fields_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "bad.run"
        path.write_text("q1 Q0 d2 1 0.900000 sys\nq1 Q0 d1 2 0.300000\n")
        with pytest.raises(FormatError, match="bad.run:2"):
            read_run(str(path))

    def test_score_canonicalized_to_six_decimals(self, tmp_path):
        path = tmp_path / "c.run"
        path.write_text("q1 Q0 d1 1 0.1234567 sys\n")
        records = read_run(str(path))
        out = tmp_path / "d.run"
        write_run(str(out), records)
        assert out.read_text() == "q1 Q0 d1 1 0.123457 sys\n"

    def test_rank_must_be_integer(self, tmp_path):
        path = tmp_path / "bad.run"
        path.write_text("q1 Q0 d1 first 0.5 sys\n")
        with pytest.raises(FormatError):
            read_run(str(path))


class TestQrelsFiles:
    def test_round_trip(self, tmp_path):
        qrels = Qrels()
        qrels.set("q1", "d1", 2)
        qrels.set("q1", "d2", 0)
        qrels.set("q2", "d3", 1)
        path = tmp_path / "q.qrels"
        write_qrels(str(path), qrels)
        assert read_qrels(str(path)) == qrels
        first = path.read_bytes()
        write_qrels(str(path), read_qrels(str(path)))
        assert path.read_bytes() == first

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.qrels"
        path.write_text("q1 0 d1\n")
        with pytest.raises(FormatError, match="bad.qrels:1"):
            read_qrels(str(path))


class TestTripletFiles:
    def test_round_trip_with_spaces_in_query(self, tmp_path):
        triplets = [Triplet(query="new fuel sources", pos="d1", neg="d2")]
        path = tmp_path / "t.tsv"
        write_triplets(str(path), triplets)
        back = read_triplets(str(path))
        assert back[0].query == "new fuel sources"
        assert (back[0].pos, back[0].neg) == ("d1", "d2")

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("query only\td1\n")
        with pytest.raises(FormatError, match="bad.tsv:1"):
            read_triplets(str(path))


class TestTextAndCandidateFiles:
    def test_texts_round_trip(self, tmp_path):
        table = {"D1": "red green blue", "D2": "cyan magenta"}
        path = tmp_path / "docs.tsv"
        write_texts(str(path), table)
        assert read_texts(str(path)) == table

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "docs.tsv"
        path.write_text("D1\ta\nD1\tb\n")
        with pytest.raises(FormatError, match="docs.tsv:2"):
            read_texts(str(path))

    def test_candidates_round_trip(self, tmp_path):
        table = {"q1": ["d1", "d2"], "q2": ["d3"]}
        path = tmp_path / "cand.tsv"
        write_candidates(str(path), table)
        assert read_candidates(str(path)) == table

    def test_empty_candidate_list_rejected(self, tmp_path):
        path = tmp_path / "cand.tsv"
        path.write_text("q1\t\n")
        with pytest.raises(FormatError):
            read_candidates(str(path))


class TestEpochLog:
    def test_line_format(self):
        line = format_epoch_line(3, 0.51234567, 0.25, 2)
        assert line == "3\t0.512346\t0.250000\t2\n"
