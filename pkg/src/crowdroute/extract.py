"""Rule-based extraction of (PoI, relation, PoI) triplets from free text.

Pipeline per document: sentence segmentation, tokenization, gazetteer
longest-match entity spotting, then a gap-content rule between adjacent
entities that mimics the pattern ``PLACE - verb - preposition - PLACE``.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

logger = logging.getLogger(__name__)

MAX_NGRAM = 6
MAX_GAP = 8
ABBREVIATIONS = frozenset({"mr", "mrs", "ms", "st", "dr", "mt"})
FILLER_WORDS = frozenset({"the", "a", "an", "just", "right", "very", "quite"})
ARTICLES = frozenset({"the", "a", "an"})

_TOKEN_RE = re.compile(r"\w+(?:['’]\w+)*|[^\w\s]")
_WS_RE = re.compile(r"\s+")


class GazetteerError(ValueError):
    """Malformed gazetteer row."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CoordinateError(GazetteerError):
    pass


class CorpusError(RuntimeError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    text: str


@dataclass(frozen=True)
class GazetteerEntry:
    name: str
    latitude: float
    longitude: float
    population: int = 0


@dataclass(frozen=True)
class Poi:
    id: int
    canonical_name: str
    latitude: float
    longitude: float

    @property
    def coords(self) -> tuple[float, float]:
        return (self.latitude, self.longitude)


class Token(NamedTuple):
    text: str
    start: int
    end: int


class Entity(NamedTuple):
    start: int  # token index, inclusive
    end: int  # token index, exclusive
    poi: Poi


@dataclass(frozen=True, order=True)
class RelationTriplet:
    doc_id: str
    sentence_index: int
    poi_a: int
    relation_index: int
    poi_b: int

    def __post_init__(self):
        if self.poi_a == self.poi_b:
            raise ValueError("a triplet needs two distinct PoIs")


def fold(text: str) -> str:
    """Lowercase and strip diacritics."""
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch)).lower()


def normalize_name(name: str) -> str:
    """Canonical lookup key: folded tokens joined by single spaces."""
    return " ".join(m.group(0) for m in _TOKEN_RE.finditer(fold(_WS_RE.sub(" ", name).strip())))


# --- gazetteer -------------------------------------------------------------

@dataclass
class Gazetteer:
    """Normalized-name index over gazetteer rows.

    Ambiguous names resolve to the most populous row, earliest row on ties.
    The PoI id is the 0-based position of the winning data row in the file.
    """

    entries: list[GazetteerEntry] = field(default_factory=list)
    index: dict[str, Poi] = field(default_factory=dict)
    max_ngram: int = 0

    @classmethod
    def from_entries(cls, entries: Iterable[GazetteerEntry]) -> "Gazetteer":
        gaz = cls(entries=list(entries))
        best: dict[str, int] = {}
        for row, entry in enumerate(gaz.entries):
            key = normalize_name(entry.name)
            if not key:
                raise GazetteerError(f"empty name {entry.name!r}", row)
            prev = best.get(key)
            if prev is None or entry.population > gaz.entries[prev].population:
                best[key] = row
        for key, row in best.items():
            e = gaz.entries[row]
            gaz.index[key] = Poi(row, e.name, e.latitude, e.longitude)
            gaz.max_ngram = max(gaz.max_ngram, len(key.split(" ")))
        gaz.max_ngram = min(gaz.max_ngram, MAX_NGRAM)
        return gaz

    def __len__(self):
        return len(self.index)

    def lookup(self, name: str) -> Poi | None:
        return self.index.get(normalize_name(name))

    def pois(self) -> list[Poi]:
        return sorted(self.index.values(), key=lambda p: p.id)


def load_gazetteer(path, check_bounds: bool = True) -> Gazetteer:
    """Read a ``name, lat, lon, population`` TSV.

    ``check_bounds=False`` accepts planar coordinates in meters.
    """
    entries = []
    first = True
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            is_header = first and cols[0].strip().lower() == "name" and len(cols) > 1 \
                and cols[1].strip().lower() in ("lat", "latitude")
            first = False
            if is_header:
                continue
            if len(cols) not in (3, 4):
                raise GazetteerError(f"expected 3 or 4 columns, got {len(cols)}", lineno)
            name = cols[0].strip()
            try:
                lat, lon = float(cols[1]), float(cols[2])
                pop = int(cols[3]) if len(cols) == 4 and cols[3].strip() else 0
            except ValueError as exc:
                raise GazetteerError(str(exc), lineno) from None
            if pop < 0:
                raise GazetteerError("negative population", lineno)
            if check_bounds and not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise CoordinateError(f"coordinates out of bounds: ({lat}, {lon})", lineno)
            if not normalize_name(name):
                raise GazetteerError("empty name", lineno)
            entries.append(GazetteerEntry(name, lat, lon, pop))
    return Gazetteer.from_entries(entries)


# --- lexicon ---------------------------------------------------------------

@dataclass(frozen=True)
class RelationLexicon:
    relations: tuple[str, ...]
    verbs: frozenset[str] = frozenset()
    fillers: frozenset[str] = FILLER_WORDS
    max_gap: int = MAX_GAP

    def __post_init__(self):
        rels = tuple(normalize_name(r) for r in self.relations)
        if not rels or any(not r for r in rels):
            raise ValueError("relation lexicon must hold at least one non-empty form")
        if len(set(rels)) != len(rels):
            raise ValueError("duplicate relation forms in lexicon")
        object.__setattr__(self, "relations", rels)
        object.__setattr__(self, "verbs", frozenset(fold(v) for v in self.verbs))

    def __len__(self):
        return len(self.relations)

    def index(self, relation: str) -> int:
        return self.relations.index(normalize_name(relation))

    def find_relation(self, gap: Sequence[str]) -> int | None:
        """Relation index licensed by the tokens between two entities, if any.

        Tokens before the relation phrase must be verbs or fillers; tokens
        after it may only be articles.  The longest form wins at a position.
        """
        if len(gap) > self.max_gap:
            return None
        allowed = self.verbs | self.fillers
        for pos in range(len(gap)):
            for k in self._by_length:
                form = self._forms[k]
                if tuple(gap[pos:pos + len(form)]) == form \
                        and all(t in ARTICLES for t in gap[pos + len(form):]):
                    return k
            if gap[pos] not in allowed:
                return None
        return None

    @cached_property
    def _forms(self) -> list[tuple[str, ...]]:
        return [tuple(r.split(" ")) for r in self.relations]

    @cached_property
    def _by_length(self) -> list[int]:
        return sorted(range(len(self.relations)), key=lambda k: (-len(self._forms[k]), k))


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]


def load_lexicon(relations_path, verbs_path=None) -> RelationLexicon:
    verbs = _read_lines(verbs_path) if verbs_path else _read_lines(_data_file("verbs.txt"))
    return RelationLexicon(tuple(_read_lines(relations_path)), frozenset(verbs))


def default_lexicon() -> RelationLexicon:
    return load_lexicon(_data_file("relations.txt"), _data_file("verbs.txt"))


def _data_file(name: str):
    return resources.files("crowdroute") / "data" / name


# --- text processing -------------------------------------------------------

def segment_sentences(doc) -> list[str]:
    """Split on ``.``, ``!`` or ``?`` followed by whitespace and an uppercase
    letter (or the end of the text).  Known abbreviations never end a sentence.
    """
    text = doc.text if isinstance(doc, Document) else doc
    sentences, start = [], 0
    for m in re.finditer(r"[.!?]+", text):
        end = m.end()
        rest = text[end:]
        stripped = rest.lstrip()
        if stripped:
            if len(stripped) == len(rest) or not stripped[0].isupper():
                continue
        if m.group(0) == ".":
            word = re.search(r"(\w+)$", text[start:m.start()])
            if word and word.group(1).lower() in ABBREVIATIONS:
                continue
        chunk = text[start:end].strip()
        if chunk:
            sentences.append(chunk)
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def tokenize(sentence: str) -> list[Token]:
    return [Token(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(sentence)]


def _words(tokens) -> list[str]:
    return [fold(t.text if isinstance(t, Token) else t) for t in tokens]


def spot_entities(tokens, gazetteer: Gazetteer) -> list[Entity]:
    """Greedy left-to-right longest match of token n-grams against the gazetteer."""
    words = _words(tokens)
    found, i = [], 0
    while i < len(words):
        for n in range(min(gazetteer.max_ngram, len(words) - i), 0, -1):
            poi = gazetteer.index.get(" ".join(words[i:i + n]))
            if poi is not None:
                found.append(Entity(i, i + n, poi))
                i += n
                break
        else:
            i += 1
    return found


def match_relations(tokens, entities: Sequence[Entity], lexicon: RelationLexicon,
                    doc_id: str = "", sentence_index: int = 0) -> list[RelationTriplet]:
    if len(entities) < 2:
        return []
    words = _words(tokens)
    out = []
    for left, right in zip(entities, entities[1:]):
        if left.poi.id == right.poi.id:
            continue
        k = lexicon.find_relation(words[left.end:right.start])
        if k is not None:
            out.append(RelationTriplet(doc_id, sentence_index, left.poi.id, k, right.poi.id))
    return out


def extract_document(doc: Document, gazetteer: Gazetteer,
                     lexicon: RelationLexicon) -> list[RelationTriplet]:
    triplets, seen = [], set()
    for s_idx, sentence in enumerate(segment_sentences(doc)):
        tokens = tokenize(sentence)
        for t in match_relations(tokens, spot_entities(tokens, gazetteer), lexicon,
                                 doc.id, s_idx):
            if t not in seen:
                seen.add(t)
                triplets.append(t)
    return triplets


# --- corpus I/O ------------------------------------------------------------

def read_corpus(path) -> list[Document]:
    """Documents from a JSONL file or a directory of ``.txt`` files.

    Unreadable documents are logged and skipped; raises ``CorpusError`` when
    nothing could be read.
    """
    path = Path(path)
    docs: list[Document] = []
    if path.is_dir():
        for f in sorted(path.glob("*.txt")):
            try:
                text = f.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                logger.warning("skipping %s: %s", f, exc)
                continue
            docs.append(Document(f.name, text))
    else:
        with open(path, encoding="utf-8", errors="replace") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    doc = Document(str(obj["id"]), str(obj["text"]))
                except (ValueError, KeyError, TypeError) as exc:
                    logger.warning("skipping corpus line %d: %s", lineno, exc)
                    continue
                docs.append(doc)
    empty = [d.id for d in docs if not d.text.strip()]
    if empty:
        logger.warning("skipping %d empty document(s)", len(empty))
    docs = [d for d in docs if d.text.strip()]
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate document ids in corpus")
    if not docs:
        raise CorpusError(f"no readable documents in {path}")
    return docs


def extract_corpus(corpus, gazetteer: Gazetteer, lexicon: RelationLexicon,
                   threads: int = 1) -> list[RelationTriplet]:
    """Triplets from every document, ordered by document id then position."""
    docs = read_corpus(corpus) if isinstance(corpus, (str, Path)) else list(corpus)
    docs.sort(key=lambda d: d.id)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda d: extract_document(d, gazetteer, lexicon), docs))
    else:
        chunks = [extract_document(d, gazetteer, lexicon) for d in docs]
    return [t for chunk in chunks for t in chunk]


def write_triplets(path, triplets: Iterable[RelationTriplet], lexicon: RelationLexicon):
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps({"poi_a": t.poi_a, "relation": lexicon.relations[t.relation_index],
                                 "poi_b": t.poi_b, "doc_id": t.doc_id,
                                 "sentence_index": t.sentence_index}) + "\n")


def read_triplets(path, lexicon: RelationLexicon) -> list[RelationTriplet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(RelationTriplet(obj["doc_id"], int(obj["sentence_index"]),
                                           int(obj["poi_a"]), lexicon.index(obj["relation"]),
                                           int(obj["poi_b"])))
    return out


def used_pois(triplets: Iterable[RelationTriplet], gazetteer: Gazetteer) -> list[Poi]:
    by_id = {p.id: p for p in gazetteer.index.values()}
    ids = sorted({i for t in triplets for i in (t.poi_a, t.poi_b)})
    return [by_id[i] for i in ids]


def write_pois(path, pois: Iterable[Poi]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "name", "lat", "lon"])
        for p in pois:
            w.writerow([p.id, p.canonical_name, repr(p.latitude), repr(p.longitude)])


def read_pois(path) -> list[Poi]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [Poi(int(r["id"]), r["name"], float(r["lat"]), float(r["lon"]))
                for r in csv.DictReader(fh, delimiter="\t")]
