"""Session-partitioned retrieval streams with distribution drift.

The synthetic generator builds a collection from several domains, each with
its own topic vocabulary, and partitions it into an initial session plus
upcoming sessions in which one "booming" domain surges.  Training queries
exist only for session 0; their positives get paraphrased copies that land
in later sessions as unlabeled relevant documents.

On-disk layout of a stream directory::

    generator.cfg                       key=value generator settings (optional)
    sessions/s{t}/corpus.tsv            doc_id <TAB> domain <TAB> text
    sessions/s{t}/queries/{split}.tsv   query_id <TAB> text
    sessions/s{t}/qrels/{split}.txt     query_id 0 doc_id 1
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lexical import tokenize

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class StreamFormatError(ValueError):
    pass


@dataclass
class Session:
    index: int
    docs: dict = field(default_factory=dict)  # doc_id -> token list
    domains: dict = field(default_factory=dict)  # doc_id -> domain tag
    queries: dict = field(default_factory=dict)  # split -> {qid: tokens}
    qrels: dict = field(default_factory=dict)  # split -> {qid: set(doc_id)}

    def split_queries(self, split):
        return self.queries.get(split, {})

    def split_qrels(self, split):
        return self.qrels.get(split, {})


@dataclass
class SessionStream:
    sessions: list
    config: object = None

    @property
    def T(self):
        return len(self.sessions) - 1

    def __getitem__(self, t):
        return self.sessions[t]

    def __len__(self):
        return len(self.sessions)

    def docs_until(self, t):
        out = {}
        for s in self.sessions[: t + 1]:
            out.update(s.docs)
        return out

    def all_docs(self):
        return self.docs_until(self.T)

    def train_pairs(self):
        """(query_id, query tokens, positive doc id) for every labeled pair."""
        s0 = self.sessions[0]
        qs = s0.split_queries("train")
        return [(q, qs[q], d) for q in sorted(qs) for d in sorted(s0.split_qrels("train").get(q, ()))]

    def session_sizes(self):
        return [len(s.docs) for s in self.sessions]

    def __eq__(self, other):
        if not isinstance(other, SessionStream) or len(self) != len(other):
            return False
        for a, b in zip(self.sessions, other.sessions):
            if (a.index, a.docs, a.domains) != (b.index, b.docs, b.domains):
                return False
            for split in SPLITS:
                if a.split_queries(split) != b.split_queries(split):
                    return False
                if a.split_qrels(split) != b.split_qrels(split):
                    return False
        return True


@dataclass
class GeneratorConfig:
    common_domains: int = 2
    booming_domains: int = 3
    docs_per_domain: int = 6000
    topics_per_domain: int = 30
    terms_per_topic: int = 12
    subtopics_per_topic: int = 40
    subtopic_terms: int = 3
    domain_terms: int = 40
    background_terms: int = 150
    doc_len: int = 40
    subtopic_weight: float = 0.25
    topic_weight: float = 0.25
    domain_weight: float = 0.25
    synonym_rate: float = 0.3
    query_len: int = 5
    train_queries: int = 500
    dev_queries: int = 50
    test_queries: int = 200
    seen_test_fraction: float = 0.5
    unlabeled_positive_rate: float = 1.0
    paraphrases_per_query: int = 5
    paraphrase_dropout: float = 0.3
    initial_common: float = 0.7
    initial_booming: float = 0.4
    upcoming_common: float = 0.1
    upcoming_boom: float = 0.5
    upcoming_other: float = 0.05

    def __post_init__(self):
        if self.common_domains + self.booming_domains < 3:
            raise ValueError("need at least 3 domains")
        if self.booming_domains < 1:
            raise ValueError("need at least one booming domain")
        if self.subtopic_terms < 1:
            raise ValueError("subtopic_terms must be positive")
        if self.subtopic_weight + self.topic_weight + self.domain_weight > 1.0 + 1e-12:
            raise ValueError("token kind weights exceed 1")

    @property
    def num_domains(self):
        return self.common_domains + self.booming_domains

    @property
    def T(self):
        return self.booming_domains

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text):
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise StreamFormatError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise StreamFormatError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = (int if types[key] in (int, "int") else float)(value)
        return cls(**kwargs)

    def session_fractions(self, domain):
        """Fraction of ``domain`` placed in each session 0..T."""
        T = self.T
        if domain < self.common_domains:
            return [self.initial_common] + [self.upcoming_common] * T
        boom_session = domain - self.common_domains + 1
        return [self.initial_booming] + [
            self.upcoming_boom if t == boom_session else self.upcoming_other for t in range(1, T + 1)
        ]


class _Vocabulary:
    """Topic words, subtopic words (each with one synonym), domain words
    and background words."""

    def __init__(self, cfg):
        self.cfg = cfg
        D, K, V = cfg.num_domains, cfg.topics_per_domain, cfg.terms_per_topic
        S, U = cfg.subtopics_per_topic, cfg.subtopic_terms
        self.topic_terms = [[[f"d{d}t{k}w{v}" for v in range(V)] for k in range(K)] for d in range(D)]
        self.subtopic_terms = {
            (d, k, st): [f"d{d}t{k}u{st}w{u}" for u in range(U)]
            for d in range(D) for k in range(K) for st in range(S)
        }
        words = [w for dom in self.topic_terms for top in dom for w in top]
        words += [w for ws in self.subtopic_terms.values() for w in ws]
        self.synonyms = {w: w[: w.rindex("w")] + "s" + w[w.rindex("w") + 1:] for w in words}
        self.synonyms.update({s: c for c, s in list(self.synonyms.items())})
        self.domain_terms = [[f"d{d}g{g}" for g in range(cfg.domain_terms)] for d in range(D)]
        self.background = [f"bg{b}" for b in range(cfg.background_terms)]
        self.domain_p = _zipf(cfg.domain_terms)
        self.background_p = _zipf(cfg.background_terms)


def _zipf(n, s=1.0):
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def _make_doc(rng, voc, key):
    cfg = voc.cfg
    domain, topic, _ = key
    length = max(4, int(rng.integers(cfg.doc_len // 2, cfg.doc_len * 3 // 2 + 1)))
    rest = 1.0 - cfg.subtopic_weight - cfg.topic_weight - cfg.domain_weight
    kinds = rng.choice(4, size=length, p=[cfg.subtopic_weight, cfg.topic_weight, cfg.domain_weight, rest])
    sub_idx = rng.integers(cfg.subtopic_terms, size=length)
    term_idx = rng.integers(cfg.terms_per_topic, size=length)
    swap = rng.random(length) < cfg.synonym_rate
    dom_idx = rng.choice(cfg.domain_terms, size=length, p=voc.domain_p)
    bg_idx = rng.choice(cfg.background_terms, size=length, p=voc.background_p)
    sub_words = voc.subtopic_terms[key]
    topic_words = voc.topic_terms[domain][topic]
    tokens = []
    for i, kind in enumerate(kinds):
        if kind <= 1:
            w = sub_words[sub_idx[i]] if kind == 0 else topic_words[term_idx[i]]
            tokens.append(voc.synonyms[w] if swap[i] else w)
        elif kind == 2:
            tokens.append(voc.domain_terms[domain][dom_idx[i]])
        else:
            tokens.append(voc.background[bg_idx[i]])
    return tokens


def _make_query(rng, voc, key):
    """Subtopic words plus a few topic words; each word surfaces as its
    synonym with probability ``synonym_rate``."""
    cfg = voc.cfg
    domain, topic, _ = key
    words = list(voc.subtopic_terms[key])
    extra = min(max(cfg.query_len - len(words), 0), cfg.terms_per_topic)
    words += [voc.topic_terms[domain][topic][v] for v in rng.choice(cfg.terms_per_topic, size=extra, replace=False)]
    out = [voc.synonyms[w] if rng.random() < cfg.synonym_rate else w for w in words]
    rng.shuffle(out)
    return out


def _paraphrase(rng, voc, tokens):
    """Token dropout plus synonym swaps."""
    out = []
    for t in tokens:
        if rng.random() < voc.cfg.paraphrase_dropout:
            continue
        out.append(voc.synonyms[t] if t in voc.synonyms and rng.random() < 0.5 else t)
    return out or list(tokens[:1])


def _partition_counts(cfg, n):
    """Per-session counts for each domain: floor for upcoming sessions,
    session 0 takes the remainder."""
    counts = []
    deficits = {}
    for d in range(cfg.num_domains):
        fr = cfg.session_fractions(d)
        total = sum(fr)
        if total > 1.0 + 1e-9:
            deficits[d] = int(np.ceil((total - 1.0) * n))
        up = [int(np.floor(f * n + 1e-9)) for f in fr[1:]]
        counts.append([n - sum(up)] + up)
    if deficits:
        detail = ", ".join(f"domain {d}: short by {k} docs" for d, k in sorted(deficits.items()))
        raise ValueError(f"session ratios exceed available documents ({detail})")
    return counts


def generate_synthetic_stream(cfg, seed=0):
    """Build a drifting session stream; relevance means sharing a subtopic."""
    rng = np.random.default_rng(seed)
    voc = _Vocabulary(cfg)
    T = cfg.T
    counts = _partition_counts(cfg, cfg.docs_per_domain)
    sessions = [Session(t) for t in range(T + 1)]
    members = {}  # subtopic key -> [(session, doc_id)]
    serial = 0
    K, S = cfg.topics_per_domain, cfg.subtopics_per_topic
    for d in range(cfg.num_domains):
        assignment = np.repeat(np.arange(T + 1), counts[d])
        rng.shuffle(assignment)
        for t in assignment:
            key = (d, int(rng.integers(K)), int(rng.integers(S)))
            doc_id = f"doc{serial:07d}"
            serial += 1
            sessions[t].docs[doc_id] = _make_doc(rng, voc, key)
            sessions[t].domains[doc_id] = f"dom{d}"
            members.setdefault(key, []).append((int(t), doc_id))

    s0 = sessions[0]
    for split in SPLITS:
        s0.queries[split], s0.qrels[split] = {}, {}
    in_s0 = sorted(k for k, m in members.items() if any(t == 0 for t, _ in m))
    order = rng.permutation(len(in_s0))
    n_train = min(cfg.train_queries, len(in_s0))
    train_keys = [in_s0[i] for i in order[:n_train]]
    eval_keys = [in_s0[i] for i in order[n_train:]]
    train_q = {}
    for i, key in enumerate(train_keys):
        qid = f"q{i:05d}"
        train_q[qid] = key
        s0.queries["train"][qid] = _make_query(rng, voc, key)
        s0.qrels["train"][qid] = {doc for t, doc in members[key] if t == 0}
    # session-0 test mixes fresh phrasings of trained subtopics with unseen ones
    n_seen0 = min(int(round(cfg.seen_test_fraction * cfg.test_queries)), len(train_keys))
    seen0 = [train_keys[i] for i in sorted(rng.choice(len(train_keys), size=n_seen0, replace=False))] if n_seen0 else []
    unseen0 = eval_keys[cfg.dev_queries: cfg.dev_queries + cfg.test_queries - n_seen0]
    for split, keys in (("dev", eval_keys[: cfg.dev_queries]), ("test", seen0 + unseen0)):
        for i, key in enumerate(keys):
            qid = f"{split[0]}0x{i:05d}"
            s0.queries[split][qid] = _make_query(rng, voc, key)
            s0.qrels[split][qid] = {doc for t, doc in members[key] if t == 0}

    # paraphrases of labeled positives arrive later as unlabeled positives
    if T >= 1:
        n_para = int(np.floor(cfg.unlabeled_positive_rate * len(train_q) + 1e-9))
        for qid in sorted(train_q)[:n_para]:
            key = train_q[qid]
            source = sorted(s0.qrels["train"][qid])[0]
            w = np.array(cfg.session_fractions(key[0])[1:])
            for _ in range(cfg.paraphrases_per_query):
                t = int(rng.choice(np.arange(1, T + 1), p=w / w.sum()))
                doc_id = f"doc{serial:07d}"
                serial += 1
                sessions[t].docs[doc_id] = _paraphrase(rng, voc, s0.docs[source])
                sessions[t].domains[doc_id] = f"dom{key[0]}"
                members[key].append((t, doc_id))

    train_keys_set = set(train_keys)
    for t in range(1, T + 1):
        s = sessions[t]
        for split in ("dev", "test"):
            s.queries[split], s.qrels[split] = {}, {}
        arrived = sorted(k for k, m in members.items() if any(st == t for st, _ in m))
        seen_pool = sorted(q for q, k in train_q.items() if k in set(arrived))
        fresh = [k for k in arrived if k not in train_keys_set]
        fresh = [fresh[i] for i in rng.permutation(len(fresh))]
        taken = 0
        for split, total in (("dev", cfg.dev_queries), ("test", cfg.test_queries)):
            n_seen = 0
            if split == "test":
                # previously seen training queries are evaluated on test only
                n_seen = min(int(round(cfg.seen_test_fraction * total)), len(seen_pool))
                for i in sorted(rng.choice(len(seen_pool), size=n_seen, replace=False)) if n_seen else []:
                    qid = seen_pool[i]
                    s.queries[split][qid] = s0.queries["train"][qid]
                    s.qrels[split][qid] = {doc for st, doc in members[train_q[qid]] if st == t}
            keys = fresh[taken: taken + total - n_seen]
            taken += len(keys)
            for i, key in enumerate(keys):
                qid = f"{split[0]}{t}x{i:05d}"
                s.queries[split][qid] = _make_query(rng, voc, key)
                s.qrels[split][qid] = {doc for st, doc in members[key] if st == t}
    return SessionStream(sessions, cfg)


def write_stream(stream, root):
    root = Path(root)
    if stream.config is not None:
        root.mkdir(parents=True, exist_ok=True)
        (root / "generator.cfg").write_text(stream.config.to_text())
    for s in stream.sessions:
        sdir = root / "sessions" / f"s{s.index}"
        (sdir / "queries").mkdir(parents=True, exist_ok=True)
        (sdir / "qrels").mkdir(parents=True, exist_ok=True)
        with open(sdir / "corpus.tsv", "w", encoding="utf-8") as fh:
            for d in sorted(s.docs):
                fh.write(f"{d}\t{s.domains.get(d, '')}\t{' '.join(s.docs[d])}\n")
        for split in SPLITS:
            if split not in s.queries:
                continue
            with open(sdir / "queries" / f"{split}.tsv", "w", encoding="utf-8") as fh:
                for q in sorted(s.queries[split]):
                    fh.write(f"{q}\t{' '.join(s.queries[split][q])}\n")
            with open(sdir / "qrels" / f"{split}.txt", "w", encoding="utf-8") as fh:
                for q in sorted(s.qrels[split]):
                    for d in sorted(s.qrels[split][q]):
                        fh.write(f"{q} 0 {d} 1\n")
    return root


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line.strip():
                yield lineno, line


def load_external_stream(path):
    """Read and validate a stream directory (see module docstring)."""
    root = Path(path)
    sdirs = sorted((root / "sessions").glob("s*"), key=lambda p: int(p.name[1:]))
    if not sdirs:
        raise StreamFormatError(f"{root}: no sessions/s<t> directories")
    if [int(p.name[1:]) for p in sdirs] != list(range(len(sdirs))):
        raise StreamFormatError(f"{root}: session directories must be s0..s{len(sdirs) - 1}")
    cfg = None
    if (root / "generator.cfg").exists():
        cfg = GeneratorConfig.from_text((root / "generator.cfg").read_text())
    sessions = []
    cumulative = set()
    for t, sdir in enumerate(sdirs):
        s = Session(t)
        corpus = sdir / "corpus.tsv"
        for lineno, line in _read_lines(corpus):
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0]:
                raise StreamFormatError(f"{corpus}:{lineno}: expected doc_id<TAB>domain<TAB>text")
            doc_id, domain, text = parts
            if doc_id in cumulative or doc_id in s.docs:
                raise StreamFormatError(f"{corpus}:{lineno}: duplicate doc_id {doc_id!r}")
            tokens = tokenize(text)
            if not tokens:
                raise StreamFormatError(f"{corpus}:{lineno}: empty document {doc_id!r}")
            s.docs[doc_id] = tokens
            s.domains[doc_id] = domain
        if not s.docs:
            log.warning("session %d of %s has no documents", t, root)
        cumulative.update(s.docs)
        for split in SPLITS:
            qpath = sdir / "queries" / f"{split}.tsv"
            rpath = sdir / "qrels" / f"{split}.txt"
            if not qpath.exists():
                continue
            s.queries[split] = {}
            for lineno, line in _read_lines(qpath):
                parts = line.split("\t")
                if len(parts) != 2:
                    raise StreamFormatError(f"{qpath}:{lineno}: expected query_id<TAB>text")
                s.queries[split][parts[0]] = tokenize(parts[1])
            s.qrels[split] = {}
            dangling = []
            if rpath.exists():
                for lineno, line in _read_lines(rpath):
                    parts = line.split()
                    if len(parts) != 4:
                        raise StreamFormatError(f"{rpath}:{lineno}: expected 'query_id 0 doc_id rel'")
                    qid, _, doc_id, rel = parts
                    if int(rel) <= 0:
                        continue
                    if doc_id not in cumulative:
                        dangling.append(doc_id)
                        continue
                    s.qrels[split].setdefault(qid, set()).add(doc_id)
            if dangling:
                raise StreamFormatError(f"{rpath}: qrels reference unknown or future documents: {sorted(set(dangling))}")
        if t > 0 and s.split_queries("train"):
            raise StreamFormatError(f"{sdir}: training queries are only allowed in session 0")
        sessions.append(s)
    return SessionStream(sessions, cfg)


def data_root(default="."):
    """Data directory from the L2R_DATA environment variable."""
    return Path(os.environ.get("L2R_DATA", default))
