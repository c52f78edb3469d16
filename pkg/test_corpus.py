import pytest

from conftest import text_session
from corpus import (EOQ_ID, UNK_ID, RawLogRecord, Session, SessionETL, Vocabulary, build_vocabulary,
                    encode_session, normalize_query, read_sessions, read_splits, read_vocabulary,
                    segment_sessions, session_records, split_by_time, validate_session, write_splits,
                    write_vocabulary)
from errors import ContractViolation, DataError


class TestNormalization:

    def test_lowercases_and_strips_punctuation(self):
        assert normalize_query("  Cheap-Flights,  BOSTON!! ") == "cheap flights boston"

    def test_only_punctuation_becomes_empty(self):
        assert normalize_query("?!...") == ""


class TestSegmentation:

    def test_gap_over_thirty_minutes_starts_new_session(self, toy_records):
        sessions = segment_sessions(toy_records)
        by_user = [(s.user_id, s.queries) for s in sessions]
        assert by_user == [
            ("a", ["Cheap Flights", "cheap flights boston"]),
            ("b", ["weather", "weather boston"]),
            ("a", ["boston hotels", "boston hotels downtown"]),
        ]

    def test_gap_of_exactly_thirty_minutes_stays_in_session(self):
        records = [RawLogRecord(user_id="u", query_text="a", timestamp=0),
                   RawLogRecord(user_id="u", query_text="b", timestamp=1800)]
        assert len(segment_sessions(records)) == 1

    def test_same_second_queries_keep_log_order(self):
        records = [RawLogRecord(user_id="u", query_text=q, timestamp=10) for q in ("x", "y", "z")]
        assert segment_sessions(records)[0].queries == ["x", "y", "z"]

    def test_resegmenting_is_idempotent(self, toy_records):
        sessions = segment_sessions(toy_records)
        records = [r for s in sessions for r in session_records(s)]
        again = segment_sessions(records)
        assert [s.queries for s in again] == [s.queries for s in sessions]


class TestVocabulary:

    def test_reserved_ids(self):
        vocab = Vocabulary(["boston"])
        assert vocab.id_to_word[UNK_ID] == "<unk>"
        assert vocab.id_to_word[EOQ_ID] == "</q>"
        assert vocab.encode_query("boston paris") == [2, UNK_ID]

    def test_cap_keeps_most_frequent_with_alphabetical_ties(self):
        sessions = [text_session("b a", "c a", "b d")]
        vocab = build_vocabulary(sessions, max_size=2)
        assert vocab.content_words == ["a", "b"]

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            build_vocabulary([], max_size=10)

    def test_round_trip_and_digest(self, tmp_path):
        vocab = build_vocabulary([text_session("cheap flights", "cheap hotels")], max_size=10)
        path = tmp_path / "vocab.txt"
        write_vocabulary(path, vocab)
        loaded = read_vocabulary(path)
        assert loaded.id_to_word == vocab.id_to_word
        assert loaded.digest() == vocab.digest()

    def test_encode_session_drops_empty_queries(self):
        vocab = Vocabulary(["a"])
        session = encode_session(text_session("a", "a a"), vocab)
        assert session.queries == [[2], [2, 2]]


class TestSplits:

    def test_cutoff_boundary_goes_to_later_split(self):
        sessions = [text_session("x", "y", start=t) for t in (5, 10, 20, 30)]
        splits = split_by_time(sessions, [10, 20, 30])
        assert [len(getattr(splits, n)) for n in ("background", "training", "validation", "test")] == [1, 1, 1, 1]
        assert splits.training[0].start_time == 10

    def test_single_query_sessions_only_kept_in_background(self):
        sessions = [text_session("x", start=1), text_session("x", start=15)]
        splits = split_by_time(sessions, [10, 20, 30])
        assert len(splits.background) == 1
        assert splits.training == []

    def test_cutoffs_must_increase(self):
        with pytest.raises(ContractViolation):
            split_by_time([], [10, 10, 30])

    def test_empty_split_is_logged(self, caplog):
        split_by_time([text_session("x", "y", start=1)], [10, 20, 30])
        assert "Split 'test' is empty" in caplog.text

    def test_write_and_read_splits(self, tmp_path):
        sessions = [text_session("a b", "c", start=1), text_session("d", "e f", start=12)]
        write_splits(tmp_path, split_by_time(sessions, [10, 20, 30]))
        loaded = read_splits(tmp_path)
        assert loaded.background[0].queries == ["a b", "c"]
        assert loaded.training[0].queries == ["d", "e f"]
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "background.sessions", "test.sessions", "training.sessions", "validation.sessions"]

    def test_missing_session_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            read_sessions(tmp_path / "nope.sessions")


class TestValidation:

    def test_out_of_range_token(self):
        with pytest.raises(ContractViolation, match="outside vocabulary"):
            validate_session(Session(queries=[[2, 9]], start_time=0, end_time=0), vocab_size=5)

    def test_reversed_times(self):
        with pytest.raises(ContractViolation):
            validate_session(Session(queries=[[2]], start_time=10, end_time=0), vocab_size=5)


class TestSessionETL:

    def test_malformed_lines_are_counted_and_skipped(self, tmp_path, caplog):
        log = tmp_path / "log.tsv"
        log.write_text("u1\tcheap flights\t100\n"
                       "broken line\n"
                       "u1\tflights boston\tnot-a-time\n"
                       "u1\tboston hotels\t160\n", encoding="utf-8")
        records, malformed = SessionETL({}).read_log(log)
        assert malformed == 2
        assert [r.query_text for r in records] == ["cheap flights", "boston hotels"]
        assert "Skipped 2 malformed" in caplog.text

    def test_preprocess_normalizes_and_drops_empty_queries(self, toy_records):
        records = toy_records + [RawLogRecord(user_id="b", query_text="???", timestamp=130)]
        splits = SessionETL({}).preprocess(records, [150, 1000, 5000])
        assert splits.background[0].queries == ["cheap flights", "cheap flights boston"]
        assert splits.background[1].queries == ["weather", "weather boston"]
        assert splits.validation[0].queries == ["boston hotels", "boston hotels downtown"]
