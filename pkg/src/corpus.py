import hashlib
import logging
import re
from collections import Counter, defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, Field

from errors import ContractViolation, DataError

logger = logging.getLogger(__name__)

UNK_ID = 0
EOQ_ID = 1
UNK_TOKEN = "<unk>"
EOQ_TOKEN = "</q>"
SESSION_GAP_SECONDS = 1800
SPLIT_NAMES = ("background", "training", "validation", "test")

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


class RawLogRecord(BaseModel):
    user_id: str
    query_text: str
    timestamp: int = Field(ge=0)


class TextSession(BaseModel):
    queries: List[str]
    start_time: int
    end_time: int
    user_id: str = ""
    timestamps: Optional[List[int]] = None


class Session(BaseModel):
    # End-of-query ids are never stored here; model code appends them.
    queries: List[List[int]]
    start_time: int
    end_time: int
    user_id: str = ""

    def token_count(self) -> int:
        return sum(len(query) + 1 for query in self.queries)


class DatasetSplits(BaseModel):
    background: List[Union[Session, TextSession]] = []
    training: List[Union[Session, TextSession]] = []
    validation: List[Union[Session, TextSession]] = []
    test: List[Union[Session, TextSession]] = []
    cutoffs: List[int]

    def counts(self) -> Dict[str, int]:
        return {name: len(getattr(self, name)) for name in SPLIT_NAMES}


class Vocabulary:

    def __init__(self, words: Sequence[str]):
        self.id_to_word: List[str] = [UNK_TOKEN, EOQ_TOKEN] + list(words)
        self.word_to_id: Dict[str, int] = {}
        for index, word in enumerate(self.id_to_word):
            if word in self.word_to_id:
                raise DataError(f"Duplicate vocabulary entry '{word}'")
            self.word_to_id[word] = index

    def __len__(self) -> int:
        return len(self.id_to_word)

    @property
    def content_words(self) -> List[str]:
        return self.id_to_word[2:]

    def encode_query(self, text: str) -> List[int]:
        return [self.word_to_id.get(word, UNK_ID) for word in text.split()]

    def decode_query(self, token_ids: Iterable[int]) -> str:
        return " ".join(self.id_to_word[token_id] for token_id in token_ids if token_id != EOQ_ID)

    def to_bytes(self) -> bytes:
        return "".join(f"{word}\n" for word in self.content_words).encode("utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def normalize_query(text: str) -> str:
    return " ".join(_NON_ALNUM.sub(" ", text.lower()).split())


def segment_sessions(records: Iterable[RawLogRecord], gap_seconds: int = SESSION_GAP_SECONDS) -> List[TextSession]:
    by_user: Dict[str, List[RawLogRecord]] = defaultdict(list)
    for record in records:
        by_user[record.user_id].append(record)

    sessions: List[TextSession] = []
    for user_id, user_records in by_user.items():
        # sorted() is stable, so same-second queries keep their log order
        ordered = sorted(user_records, key=lambda r: r.timestamp)
        current: List[RawLogRecord] = [ordered[0]]
        for record in ordered[1:]:
            if record.timestamp - current[-1].timestamp > gap_seconds:
                sessions.append(_make_text_session(user_id, current))
                current = []
            current.append(record)
        sessions.append(_make_text_session(user_id, current))

    sessions.sort(key=lambda s: (s.start_time, s.user_id))
    return sessions


def _make_text_session(user_id: str, records: List[RawLogRecord]) -> TextSession:
    return TextSession(
        queries=[r.query_text for r in records],
        start_time=records[0].timestamp,
        end_time=records[-1].timestamp,
        user_id=user_id,
        timestamps=[r.timestamp for r in records],
    )


def session_records(session: TextSession) -> List[RawLogRecord]:
    timestamps = session.timestamps or [session.start_time] * len(session.queries)
    return [
        RawLogRecord(user_id=session.user_id, query_text=query, timestamp=timestamp)
        for query, timestamp in zip(session.queries, timestamps)
    ]


def build_vocabulary(sessions: Iterable[TextSession], max_size: int) -> Vocabulary:
    if max_size < 1:
        raise ContractViolation(f"Vocabulary max_size must be >= 1, got {max_size}")

    counts: Counter = Counter()
    for session in sessions:
        for query in session.queries:
            counts.update(query.split())

    if not counts:
        raise DataError("Cannot build a vocabulary from an empty corpus")

    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    vocab = Vocabulary([word for word, _ in ranked[:max_size]])
    logger.info("Vocabulary: %d content words kept out of %d distinct", len(vocab) - 2, len(counts))
    return vocab


def encode_session(session: TextSession, vocab: Vocabulary) -> Session:
    queries = [vocab.encode_query(query) for query in session.queries]
    return Session(
        queries=[query for query in queries if query],
        start_time=session.start_time,
        end_time=session.end_time,
        user_id=session.user_id,
    )


def split_by_time(sessions: Iterable[Union[Session, TextSession]], cutoffs: Sequence[int]) -> DatasetSplits:
    cutoffs = list(cutoffs)
    if len(cutoffs) != 3 or not all(a < b for a, b in zip(cutoffs, cutoffs[1:])):
        raise ContractViolation(f"Expected 3 strictly increasing cutoffs, got {cutoffs}")

    buckets: Dict[str, list] = {name: [] for name in SPLIT_NAMES}
    dropped = 0
    for session in sessions:
        # A start time equal to a cutoff belongs to the later split.
        index = sum(1 for cutoff in cutoffs if session.start_time >= cutoff)
        name = SPLIT_NAMES[index]
        if name != "background" and len(session.queries) < 2:
            dropped += 1
            continue
        buckets[name].append(session)

    splits = DatasetSplits(cutoffs=cutoffs, **buckets)
    for name, count in splits.counts().items():
        if count == 0:
            logger.warning("Split '%s' is empty", name)
    logger.info("Split sizes %s (%d single-query sessions left out of non-background splits)",
                splits.counts(), dropped)
    return splits


def encode_splits(splits: DatasetSplits, vocab: Vocabulary) -> DatasetSplits:
    encoded: Dict[str, List[Session]] = {}
    for name in SPLIT_NAMES:
        sessions = [encode_session(s, vocab) for s in getattr(splits, name)]
        minimum = 1 if name == "background" else 2
        encoded[name] = [s for s in sessions if len(s.queries) >= minimum]
    return DatasetSplits(cutoffs=splits.cutoffs, **encoded)


def training_sessions(sessions: Iterable[Session]) -> List[Session]:
    return [s for s in sessions if len(s.queries) >= 2]


def validate_session(session: Session, vocab_size: int) -> None:
    if not session.queries:
        raise ContractViolation("Session has no queries")
    if session.end_time < session.start_time:
        raise ContractViolation(f"Session ends ({session.end_time}) before it starts ({session.start_time})")
    for query in session.queries:
        if not query:
            raise ContractViolation("Session contains an empty query")
        for token_id in query:
            if not 0 <= token_id < vocab_size:
                raise ContractViolation(f"Token id {token_id} outside vocabulary of size {vocab_size}")


def validate_text_session(session: TextSession, gap_seconds: int = SESSION_GAP_SECONDS) -> None:
    if not session.queries or any(not query for query in session.queries):
        raise ContractViolation("Session has an empty query or no queries")
    if session.timestamps is None:
        return
    for earlier, later in zip(session.timestamps, session.timestamps[1:]):
        if later < earlier:
            raise ContractViolation("Session queries are not in chronological order")
        if later - earlier > gap_seconds:
            raise ContractViolation(f"Gap of {later - earlier}s exceeds the {gap_seconds}s session window")


class SessionETL:

    def __init__(self, config: Dict[str, Any]):
        self.config = config
        self.gap_seconds = config.get('session_gap_seconds', SESSION_GAP_SECONDS)

    def read_log(self, path: Union[str, Path]) -> Tuple[List[RawLogRecord], int]:
        records = []
        malformed = 0
        with open(path, 'r', encoding='utf-8') as f:
            for line in f:
                record = self._parse_line(line.rstrip('\n'))
                if record is None:
                    malformed += 1
                else:
                    records.append(record)

        if malformed:
            logger.warning("Skipped %d malformed log lines in %s", malformed, path)
        logger.info("Read %d log records from %s", len(records), path)
        return records, malformed

    def _parse_line(self, line: str) -> Optional[RawLogRecord]:
        fields = line.split('\t')
        if len(fields) != 3:
            return None
        user_id, query_text, timestamp = fields
        try:
            value = int(timestamp)
        except ValueError:
            return None
        if value < 0 or not user_id:
            return None
        return RawLogRecord(user_id=user_id, query_text=query_text, timestamp=value)

    def preprocess(self, records: Iterable[RawLogRecord], cutoffs: Sequence[int]) -> DatasetSplits:
        normalized = []
        dropped = 0
        for record in records:
            text = normalize_query(record.query_text)
            if not text:
                dropped += 1
                continue
            normalized.append(record.model_copy(update={'query_text': text}))

        if dropped:
            logger.info("Dropped %d queries that were empty after normalization", dropped)

        sessions = segment_sessions(normalized, self.gap_seconds)
        for session in sessions:
            validate_text_session(session, self.gap_seconds)
        return split_by_time(sessions, cutoffs)

    def process_log(self, path: Union[str, Path], cutoffs: Sequence[int]) -> DatasetSplits:
        records, _ = self.read_log(path)
        return self.preprocess(records, cutoffs)


def write_sessions(path: Union[str, Path], sessions: Iterable[TextSession]) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        for session in sessions:
            f.write("\t".join([str(session.start_time)] + list(session.queries)) + "\n")


def read_sessions(path: Union[str, Path]) -> List[TextSession]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Session file not found: {path}")

    sessions = []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            fields = line.rstrip('\n').split('\t')
            if len(fields) < 2:
                raise DataError(f"{path}:{number}: expected a start time and at least one query")
            try:
                start_time = int(fields[0])
            except ValueError:
                raise DataError(f"{path}:{number}: bad start time '{fields[0]}'")
            sessions.append(TextSession(queries=fields[1:], start_time=start_time, end_time=start_time))
    return sessions


def write_splits(directory: Union[str, Path], splits: DatasetSplits) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in SPLIT_NAMES:
        paths[name] = directory / f"{name}.sessions"
        write_sessions(paths[name], getattr(splits, name))
    return paths


def read_splits(directory: Union[str, Path]) -> DatasetSplits:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"Session directory not found: {directory}")
    loaded = {name: read_sessions(directory / f"{name}.sessions") for name in SPLIT_NAMES}
    return DatasetSplits(cutoffs=[], **loaded)


def write_vocabulary(path: Union[str, Path], vocab: Vocabulary) -> None:
    with open(path, 'wb') as f:
        f.write(vocab.to_bytes())


def read_vocabulary(path: Union[str, Path]) -> Vocabulary:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Vocabulary file not found: {path}")
    words = path.read_bytes().decode('utf-8').split('\n')
    if words and words[-1] == '':
        words.pop()
    return Vocabulary(words)
