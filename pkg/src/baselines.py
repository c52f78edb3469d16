"""Count-based suggestion models built from background sessions.

ADJ counts how often a query directly follows another inside a session. QVMM
keeps successor counts for every context of up to `order` previous queries in a
suffix tree keyed on the reversed context, and backs off to shorter contexts.
"""
import hashlib
import json
import logging
import math
import struct
from collections import Counter, defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

from corpus import TextSession
from errors import CheckpointError, ContractViolation, DataError

logger = logging.getLogger(__name__)

INDEX_VERSION = 2
_PREAMBLE = struct.Struct("<8sII32s")
ADJ_MAGIC = b"HREDADJ\x00"
QVMM_MAGIC = b"HREDQVMM"

Queries = Sequence[str]


def _queries(session: Union[TextSession, Queries]) -> Queries:
    return session.queries if isinstance(session, TextSession) else session


class AdjIndex:

    def __init__(self):
        self.successors: Dict[str, Counter] = defaultdict(Counter)
        self.frequencies: Counter = Counter()

    def add_session(self, queries: Queries) -> None:
        self.frequencies.update(queries)
        for anchor, follower in zip(queries, queries[1:]):
            self.successors[anchor][follower] += 1

    def follows(self, anchor: str, candidate: str) -> int:
        return self.successors.get(anchor, {}).get(candidate, 0)

    def frequency(self, query: str) -> int:
        return self.frequencies.get(query, 0)

    def __contains__(self, query: str) -> bool:
        return self.frequencies.get(query, 0) > 0

    def top_queries(self, n: int) -> List[Tuple[str, int]]:
        return sorted(self.frequencies.items(), key=lambda item: (-item[1], item[0]))[:n]

    def get_stats(self) -> Dict[str, Any]:
        return {
            'anchors': len(self.successors),
            'pairs': sum(sum(c.values()) for c in self.successors.values()),
            'distinct_queries': len(self.frequencies),
            'query_occurrences': sum(self.frequencies.values()),
        }

    def to_payload(self) -> Dict[str, Any]:
        return {
            'successors': {anchor: dict(sorted(c.items())) for anchor, c in sorted(self.successors.items())},
            'frequencies': dict(sorted(self.frequencies.items())),
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> "AdjIndex":
        index = cls()
        for anchor, followers in payload['successors'].items():
            index.successors[anchor] = Counter(followers)
        index.frequencies = Counter(payload['frequencies'])
        return index

    def save(self, path: Union[str, Path]) -> None:
        _write_index(path, ADJ_MAGIC, self.to_payload(), self.get_stats())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AdjIndex":
        return cls.from_payload(_read_index(path, ADJ_MAGIC))


def build_adj(background: Iterable[Union[TextSession, Queries]]) -> AdjIndex:
    index = AdjIndex()
    for session in background:
        index.add_session(list(_queries(session)))
    if not index.frequencies:
        raise DataError("Cannot build an ADJ index from an empty background set")
    logger.info("ADJ index: %s", index.get_stats())
    return index


def adj_candidates(index: AdjIndex, anchor: str, n: int = 20) -> List[Tuple[str, int]]:
    followers = index.successors.get(anchor)
    if not followers:
        return []
    return sorted(followers.items(), key=lambda item: (-item[1], item[0]))[:n]


class QvmmNode:
    __slots__ = ("children", "successors", "count")

    def __init__(self):
        self.children: Dict[str, "QvmmNode"] = {}
        self.successors: Counter = Counter()
        self.count = 0

    def add(self, query: str) -> None:
        self.successors[query] += 1
        self.count += 1

    def child(self, query: str) -> "QvmmNode":
        node = self.children.get(query)
        if node is None:
            node = self.children[query] = QvmmNode()
        return node

    def to_payload(self) -> Dict[str, Any]:
        return {
            's': dict(sorted(self.successors.items())),
            'c': {query: node.to_payload() for query, node in sorted(self.children.items())},
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> "QvmmNode":
        node = cls()
        node.successors = Counter(payload['s'])
        node.count = sum(node.successors.values())
        node.children = {query: cls.from_payload(child) for query, child in payload['c'].items()}
        return node


class QvmmTree:
    """Variable-memory Markov model over queries.

    The root holds the unigram counts of every background query occurrence; the
    node reached by following Q_{i-1}, Q_{i-2}, ... from the root holds the
    counts of queries observed right after that context.
    """

    def __init__(self, order: int = 3):
        if order < 1:
            raise ContractViolation(f"QVMM order must be >= 1, got {order}")
        self.order = order
        self.root = QvmmNode()

    def add_session(self, queries: Queries) -> None:
        for i, target in enumerate(queries):
            node = self.root
            node.add(target)
            for j in range(1, self.order + 1):
                if i - j < 0:
                    break
                node = node.child(queries[i - j])
                node.add(target)

    @property
    def distinct_queries(self) -> int:
        return len(self.root.successors)

    def context_path(self, context: Queries) -> List[QvmmNode]:
        path = [self.root]
        node = self.root
        for query in list(reversed(context))[:self.order]:
            node = node.children.get(query)
            if node is None or node.count == 0:
                break
            path.append(node)
        return path

    def log_prob(self, context: Queries, candidate: str) -> float:
        if self.root.count == 0:
            raise ContractViolation("QVMM tree is empty")
        # Deepest matching context first; back off while the candidate is unseen.
        for node in reversed(self.context_path(context)):
            count = node.successors.get(candidate, 0)
            if count > 0:
                return math.log(count / node.count)
        return -math.log(self.distinct_queries)

    def get_stats(self) -> Dict[str, Any]:
        nodes = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            nodes += 1
            stack.extend(node.children.values())
        return {'order': self.order, 'nodes': nodes, 'distinct_queries': self.distinct_queries}

    def save(self, path: Union[str, Path]) -> None:
        _write_index(path, QVMM_MAGIC, {'order': self.order, 'root': self.root.to_payload()}, self.get_stats())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "QvmmTree":
        payload = _read_index(path, QVMM_MAGIC)
        tree = cls(payload['order'])
        tree.root = QvmmNode.from_payload(payload['root'])
        return tree


def build_qvmm(background: Iterable[Union[TextSession, Queries]], order: int = 3) -> QvmmTree:
    tree = QvmmTree(order)
    for session in background:
        tree.add_session(list(_queries(session)))
    logger.info("QVMM tree: %s", tree.get_stats())
    return tree


def qvmm_log_prob(tree: QvmmTree, context: Queries, candidate: str) -> float:
    return tree.log_prob(context, candidate)


def _write_index(path: Union[str, Path], magic: bytes, payload: Dict[str, Any], stats: Dict[str, Any]) -> None:
    body = json.dumps(payload, sort_keys=True, separators=(',', ':')).encode('utf-8')
    digest = hashlib.sha256(body).hexdigest()
    with open(path, 'wb') as f:
        f.write(_PREAMBLE.pack(magic, INDEX_VERSION, len(body), bytes.fromhex(digest)))
        f.write(body)

    lines = [f"format_version: {INDEX_VERSION}", f"kind: {magic.rstrip(bytes(1)).decode('ascii')}",
             f"payload_sha256: {digest}"]
    lines += [f"{key}: {value}" for key, value in stats.items()]
    Path(f"{path}.manifest").write_text("\n".join(lines) + "\n", encoding='utf-8')


def _read_index(path: Union[str, Path], magic: bytes) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Index file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"{path}: file too short to be an index")
    found, version, length, digest = _PREAMBLE.unpack_from(raw)
    if found != magic:
        raise CheckpointError(f"{path}: unexpected magic bytes {found!r}")
    if version != INDEX_VERSION:
        raise CheckpointError(f"{path}: index version {version} is not supported")
    body = raw[_PREAMBLE.size:]
    if len(body) != length:
        raise CheckpointError(f"{path}: truncated index ({len(body)} of {length} bytes)")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: payload digest mismatch, index is corrupt")
    try:
        return json.loads(body.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: malformed index body: {e}")
