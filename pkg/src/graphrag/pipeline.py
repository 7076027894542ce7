"""Orchestration for the four pipeline stages: index, cluster, retrieve, eval.

An index directory is self-contained:

    manifest.json       build record: config hash, counts, artifact digests
    graph.jsonl         nodes and edges
    chunks.jsonl        chunk texts with provenance offsets
    embeddings.jsonl    one vector per chunk
    communities.jsonl   community memberships (written by cluster)
    reports.jsonl       community reports with embeddings (written by cluster)
    eval_report.json    benchmark metrics (written by eval, plus a .txt table)

Every artifact is byte-deterministic for a fixed config and corpus; the only
run-dependent field is the manifest's ``created_at`` timestamp. A failed
build raises before anything is written.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .community import (
    Community,
    CommunityReport,
    attribute_cluster,
    communities_from_partition,
    complete_community,
    generate_report,
    louvain_cluster,
    multihop_subgraph,
)
from .config import ClientConfig, PipelineConfig
from .embedding import (
    EmbeddingClient,
    HashingEmbedder,
    HttpEmbeddingClient,
    HttpRerankClient,
    RerankClient,
    TokenOverlapReranker,
    VectorStore,
)
from .errors import BenchmarkError, ConfigError, GraphFormatError, IndexingError
from .evaluation import MetricsReport, aggregate, load_benchmark, score_retrieval
from .extraction import ChatClient, HttpChatClient, StubChatClient, index_corpus
from .graph_store import (
    KnowledgeGraph,
    load_chunks,
    load_graph,
    save_chunks,
    save_graph,
)
from .ontology import OntologySchema, load_schema
from .retrieval import IndexBundle, RetrievalResponse, retrieve

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
GRAPH_NAME = "graph.jsonl"
CHUNKS_NAME = "chunks.jsonl"
EMBEDDINGS_NAME = "embeddings.jsonl"
COMMUNITIES_NAME = "communities.jsonl"
REPORTS_NAME = "reports.jsonl"

_FORMAT_VERSION = 1


# -- corpus ---------------------------------------------------------------------------


def read_corpus(path: Path) -> list[tuple[str, str]]:
    """Load (document_id, text) pairs from a directory of .txt/.md files or a
    JSON/JSONL file whose records carry an id (doc_id/id/title) and a text
    (text/body/passage) field."""
    path = Path(path)
    documents: list[tuple[str, str]] = []
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".txt", ".md"))
        for p in files:
            documents.append((p.stem, p.read_text("utf-8")))
    elif path.is_file():
        raw = path.read_text("utf-8").strip()
        try:
            records = json.loads(raw)
            if not isinstance(records, list):
                raise IndexingError(f"{path}: expected a JSON array of documents")
        except json.JSONDecodeError:
            records = []
            for lineno, line in enumerate(raw.splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise IndexingError(f"{path}:{lineno}: unparseable record") from exc
        for i, record in enumerate(records):
            if not isinstance(record, dict):
                raise IndexingError(f"{path}: document {i} is not an object")
            doc_id = record.get("doc_id") or record.get("id") or record.get("title")
            text = record.get("text") or record.get("body") or record.get("passage")
            if not doc_id or not isinstance(text, str) or not text.strip():
                raise IndexingError(f"{path}: document {i} lacks an id or text field")
            documents.append((str(doc_id), text))
    else:
        raise ConfigError(f"corpus not found: {path}")
    if not documents:
        raise IndexingError(f"corpus at {path} contains no documents")
    return documents


# -- clients --------------------------------------------------------------------------


@dataclass
class Clients:
    chat: ChatClient
    embed: EmbeddingClient
    rerank: RerankClient
    mode: str

    def identities(self) -> dict:
        embed_name = type(self.embed).__name__
        if isinstance(self.embed, HashingEmbedder):
            embed_name = f"hashing-{self.embed.dim}"
        return {
            "mode": self.mode,
            "chat": self.chat.identity(),
            "embed": embed_name,
            "rerank": type(self.rerank).__name__,
        }


def make_clients(cfg: ClientConfig) -> Clients:
    if cfg.mode == "http":
        chat: ChatClient = HttpChatClient(
            endpoint=cfg.chat_endpoint, model=cfg.chat_model, timeout=cfg.timeout
        )
        embed: EmbeddingClient = HttpEmbeddingClient(
            endpoint=cfg.embed_endpoint, model=cfg.embed_model,
            dim=cfg.embed_dim, timeout=cfg.timeout,
        )
        rerank: RerankClient = HttpRerankClient(
            endpoint=cfg.rerank_endpoint, timeout=cfg.timeout
        )
    else:
        chat = StubChatClient(cfg.stub_rules)
        embed = HashingEmbedder(cfg.embed_dim)
        rerank = TokenOverlapReranker()
    return Clients(chat=chat, embed=embed, rerank=rerank, mode=cfg.mode)


# -- index stage ----------------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _dump_json(payload: dict) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _dump_jsonl(records: list[dict]) -> bytes:
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":"), ensure_ascii=False) for r in records]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _embeddings_bytes(graph: KnowledgeGraph, embed: EmbeddingClient, dim: int) -> bytes:
    chunk_ids = graph.chunk_ids()
    texts = [graph.chunk(cid).text for cid in chunk_ids]
    vectors = embed.embed(texts) if texts else []
    records = [{"kind": "meta", "format_version": _FORMAT_VERSION, "dimension": dim, "count": len(chunk_ids)}]
    for cid, vec in zip(chunk_ids, vectors):
        records.append({"kind": "embedding", "ref": cid, "vector": [float(x) for x in vec]})
    return _dump_jsonl(records)


def build_index(
    cfg: PipelineConfig,
    *,
    force: bool = False,
    index_dir: Path | None = None,
) -> dict:
    """Run extraction over the corpus and write the index directory.

    Refuses to overwrite an existing index unless ``force``. All artifact
    bytes are produced (and the graph audited) before the first write, so a
    failure leaves no partial index behind.
    """
    out = Path(index_dir) if index_dir is not None else cfg.index_dir
    if (out / MANIFEST_NAME).exists() and not force:
        raise ConfigError(f"index already exists at {out}; pass --force to rebuild")
    if not cfg.schema_path.is_file():
        raise ConfigError(f"schema file not found: {cfg.schema_path}")

    schema = load_schema(cfg.schema_path.read_bytes())
    documents = read_corpus(cfg.corpus_path)
    clients = make_clients(cfg.clients)
    indexing = cfg.indexing
    if "schema" in cfg.ablate:
        indexing = dataclasses.replace(indexing, enforce_schema=False)

    graph = index_corpus(documents, schema, clients.chat, indexing)
    problems = graph.audit()
    if problems:
        raise IndexingError("graph audit failed: " + "; ".join(problems))
    if graph.node_count == 0:
        raise IndexingError("extraction produced no entities; check the schema and extraction rules")

    graph_bytes = save_graph(graph, include_chunks=False)
    chunk_bytes = save_chunks(graph)
    embedding_bytes = _embeddings_bytes(graph, clients.embed, cfg.clients.embed_dim)

    manifest = {
        "format_version": _FORMAT_VERSION,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config_hash": cfg.hash(),
        "schema_version": schema.version,
        "ablate": sorted(cfg.ablate),
        "clients": clients.identities(),
        "counts": {
            "documents": len(documents),
            "chunks": graph.chunk_count,
            "nodes": graph.node_count,
            "edges": graph.edge_count,
        },
        "artifacts": {
            GRAPH_NAME: _sha256(graph_bytes),
            CHUNKS_NAME: _sha256(chunk_bytes),
            EMBEDDINGS_NAME: _sha256(embedding_bytes),
        },
    }

    out.mkdir(parents=True, exist_ok=True)
    if force:
        # stale derived artifacts describe the index being replaced
        for name in (COMMUNITIES_NAME, REPORTS_NAME, "eval_report.json", "eval_report.txt"):
            stale = out / name
            if stale.exists():
                stale.unlink()
    (out / GRAPH_NAME).write_bytes(graph_bytes)
    (out / CHUNKS_NAME).write_bytes(chunk_bytes)
    (out / EMBEDDINGS_NAME).write_bytes(embedding_bytes)
    (out / MANIFEST_NAME).write_bytes(_dump_json(manifest))
    log.info(
        "indexed %d documents into %s: %d chunks, %d nodes, %d edges",
        len(documents), out, graph.chunk_count, graph.node_count, graph.edge_count,
    )
    return manifest


# -- index loading --------------------------------------------------------------------


def read_manifest(index_dir: Path) -> dict:
    path = Path(index_dir) / MANIFEST_NAME
    if not path.is_file():
        raise ConfigError(f"no index at {index_dir}; run `graphrag index` first")
    try:
        manifest = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: corrupt manifest ({exc.msg})") from exc
    if not isinstance(manifest, dict) or manifest.get("format_version") != _FORMAT_VERSION:
        raise GraphFormatError(f"{path}: unsupported manifest format")
    return manifest


def _verified_bytes(index_dir: Path, name: str, manifest: dict) -> bytes:
    path = Path(index_dir) / name
    if not path.is_file():
        raise ConfigError(f"index at {index_dir} is missing {name}; rebuild with --force")
    data = path.read_bytes()
    expected = manifest.get("artifacts", {}).get(name)
    if expected and _sha256(data) != expected:
        raise GraphFormatError(f"{path}: content does not match the manifest digest")
    return data


def load_index_graph(index_dir: Path) -> tuple[KnowledgeGraph, dict]:
    manifest = read_manifest(index_dir)
    graph = load_graph(_verified_bytes(index_dir, GRAPH_NAME, manifest))
    load_chunks(_verified_bytes(index_dir, CHUNKS_NAME, manifest), into=graph)
    return graph, manifest


def _load_embeddings(index_dir: Path, manifest: dict) -> VectorStore:
    data = _verified_bytes(index_dir, EMBEDDINGS_NAME, manifest)
    dim = None
    store = None
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"{EMBEDDINGS_NAME}:{lineno}: unparseable line ({exc.msg})") from exc
        kind = record.get("kind")
        if kind == "meta":
            dim = int(record["dimension"])
            store = VectorStore(dim)
        elif kind == "embedding":
            if store is None:
                raise GraphFormatError(f"{EMBEDDINGS_NAME}:{lineno}: embedding before meta record")
            store.add(record["ref"], record["vector"])
        else:
            raise GraphFormatError(f"{EMBEDDINGS_NAME}:{lineno}: unknown record kind {kind!r}")
    if store is None:
        raise GraphFormatError(f"{EMBEDDINGS_NAME}: missing meta record")
    return store


# -- cluster stage --------------------------------------------------------------------


def _resolve_root(graph: KnowledgeGraph, name: str) -> list[int]:
    ids = graph.find_nodes(name)
    if not ids:
        raise ConfigError(f"multihop root {name!r} does not name a graph node")
    return list(ids)


def build_communities(cfg: PipelineConfig, graph: KnowledgeGraph) -> list[Community]:
    """All community dimensions over one graph, with dense global ids:
    completed topology clusters first, then one batch per attribute key, then
    the configured multi-hop neighborhoods."""
    params = cfg.clustering.params
    partition = louvain_cluster(graph, params)
    communities = [
        complete_community(graph, community, params.tau)
        for community in communities_from_partition(graph, partition)
    ]
    for key in cfg.clustering.attribute_keys:
        communities.extend(attribute_cluster(graph, key, min_size=params.min_community_size))
    for spec in cfg.clustering.multihop:
        for root_id in _resolve_root(graph, spec.root):
            communities.append(
                multihop_subgraph(graph, root_id, spec.hops, spec.patterns)
            )
    return [dataclasses.replace(c, id=i) for i, c in enumerate(communities)]


def run_clustering(
    cfg: PipelineConfig,
    *,
    force: bool = False,
    index_dir: Path | None = None,
) -> dict:
    """Cluster an existing index and write communities + reports."""
    out = Path(index_dir) if index_dir is not None else cfg.index_dir
    if (out / COMMUNITIES_NAME).exists() and not force:
        raise ConfigError(f"communities already exist at {out}; pass --force to recluster")
    graph, _ = load_index_graph(out)
    clients = make_clients(cfg.clients)
    communities = build_communities(cfg, graph)

    chat = clients.chat if cfg.clients.mode == "http" else None
    reports = [generate_report(c, graph, chat, clients.embed) for c in communities]

    params = cfg.clustering.params
    community_records = [{
        "kind": "meta",
        "format_version": _FORMAT_VERSION,
        "count": len(communities),
        "params": {
            "alpha": params.alpha,
            "tau": params.tau,
            "max_passes": params.max_passes,
            "min_community_size": params.min_community_size,
            "attribute_scope": params.attribute_scope,
        },
    }]
    for c in communities:
        community_records.append({
            "kind": "community",
            "id": c.id,
            "dimension": c.dimension,
            "label": c.label,
            "members": sorted(c.members),
            "completed_members": sorted(c.completed_members),
            "internal_edges": [list(key) for key in c.internal_edges],
        })
    report_records = [{
        "kind": "meta",
        "format_version": _FORMAT_VERSION,
        "count": len(reports),
        "dimension": cfg.clients.embed_dim,
    }]
    for r in reports:
        report_records.append({
            "kind": "report",
            "community_id": r.community_id,
            "title": r.title,
            "summary": r.summary,
            "dimension": r.dimension,
            "entities": list(r.entities),
            "relations": list(r.relations),
            "embedding": [float(x) for x in r.embedding],
            "source_chunks": list(r.source_chunks),
        })

    (out / COMMUNITIES_NAME).write_bytes(_dump_jsonl(community_records))
    (out / REPORTS_NAME).write_bytes(_dump_jsonl(report_records))

    by_dimension: dict[str, int] = {}
    for c in communities:
        family = c.dimension.split(":", 1)[0]
        by_dimension[family] = by_dimension.get(family, 0) + 1
    summary = {"communities": len(communities), "by_dimension": by_dimension}
    log.info("wrote %d communities to %s (%s)", len(communities), out, by_dimension)
    return summary


def load_communities(index_dir: Path) -> tuple[list[Community], dict[int, CommunityReport]]:
    """Read communities.jsonl and reports.jsonl back into their dataclasses."""
    out = Path(index_dir)
    for name in (COMMUNITIES_NAME, REPORTS_NAME):
        if not (out / name).is_file():
            raise ConfigError(f"no communities at {out}; run `graphrag cluster` first")

    def _records(name: str) -> list[dict]:
        records = []
        for lineno, line in enumerate((out / name).read_text("utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"{name}:{lineno}: unparseable line ({exc.msg})") from exc
        if not records or records[0].get("kind") != "meta":
            raise GraphFormatError(f"{name}: missing meta record")
        if records[0].get("format_version") != _FORMAT_VERSION:
            raise GraphFormatError(f"{name}: unsupported format version")
        return records[1:]

    communities = []
    for record in _records(COMMUNITIES_NAME):
        if record.get("kind") != "community":
            raise GraphFormatError(f"{COMMUNITIES_NAME}: unexpected record kind {record.get('kind')!r}")
        communities.append(
            Community(
                id=int(record["id"]),
                dimension=str(record["dimension"]),
                members=frozenset(int(n) for n in record["members"]),
                completed_members=frozenset(int(n) for n in record["completed_members"]),
                internal_edges=tuple(
                    (int(h), int(t), str(rel)) for h, t, rel in record["internal_edges"]
                ),
                label=str(record.get("label") or ""),
            )
        )
    reports: dict[int, CommunityReport] = {}
    for record in _records(REPORTS_NAME):
        if record.get("kind") != "report":
            raise GraphFormatError(f"{REPORTS_NAME}: unexpected record kind {record.get('kind')!r}")
        report = CommunityReport(
            community_id=int(record["community_id"]),
            title=str(record["title"]),
            summary=str(record["summary"]),
            dimension=str(record["dimension"]),
            entities=tuple(record["entities"]),
            relations=tuple(record["relations"]),
            embedding=tuple(float(x) for x in record["embedding"]),
            source_chunks=tuple(record["source_chunks"]),
        )
        reports[report.community_id] = report
    known = {c.id for c in communities}
    if set(reports) != known:
        raise GraphFormatError("reports.jsonl does not cover communities.jsonl exactly")
    return communities, reports


# -- query stages ---------------------------------------------------------------------


def load_bundle(cfg: PipelineConfig, index_dir: Path | None = None) -> IndexBundle:
    out = Path(index_dir) if index_dir is not None else cfg.index_dir
    graph, manifest = load_index_graph(out)
    chunk_store = _load_embeddings(out, manifest)
    communities, reports = load_communities(out)
    report_store = VectorStore(cfg.clients.embed_dim)
    for community in communities:
        report = reports[community.id]
        report_store.add(str(community.id), report.embedding)
    return IndexBundle.assemble(graph, communities, reports, chunk_store, report_store)


def run_retrieve(
    cfg: PipelineConfig,
    query: str,
    *,
    k: int | None = None,
    index_dir: Path | None = None,
    extra_ablate: tuple[str, ...] = (),
) -> RetrievalResponse:
    ablate = set(cfg.ablate) | set(extra_ablate)
    bundle = load_bundle(cfg, index_dir)
    clients = make_clients(cfg.clients)
    return retrieve(
        query,
        bundle,
        clients.embed,
        clients.rerank,
        cfg.fusion,
        final_k=k,
        ablate_graph="graph" in ablate,
        ablate_community="community" in ablate,
    )


def run_eval(
    cfg: PipelineConfig,
    benchmark_path: str | Path,
    *,
    index_dir: Path | None = None,
    extra_ablate: tuple[str, ...] = (),
) -> MetricsReport:
    """Score every benchmark query against the index and write the report.

    Internal consistency (each F1 cell equal to the harmonic mean of its row)
    is re-verified before anything is written.
    """
    ablate = tuple(sorted(set(cfg.ablate) | set(extra_ablate)))
    out = Path(index_dir) if index_dir is not None else cfg.index_dir
    bundle = load_bundle(cfg, out)
    clients = make_clients(cfg.clients)
    _, queries, diagnostics = load_benchmark(str(benchmark_path))

    scores = []
    for query in queries:
        response = retrieve(
            query.question,
            bundle,
            clients.embed,
            clients.rerank,
            cfg.fusion,
            ablate_graph="graph" in ablate,
            ablate_community="community" in ablate,
        )
        relevancy, recall = score_retrieval(response.results, query)
        scores.append((query.query_type, relevancy, recall))

    metadata = {
        "config_hash": cfg.hash(),
        "benchmark": Path(benchmark_path).name,
        "queries": len(queries),
        "ablate": list(ablate),
        "clients": clients.identities(),
        "scorer": "evidence-containment",
    }
    report = aggregate(scores, metadata)
    report.diagnostics.extend(diagnostics)
    problems = report.verify()
    if problems:
        raise BenchmarkError("metrics failed self-check: " + "; ".join(problems))

    (out / "eval_report.json").write_bytes(_dump_json(report.to_dict()))
    table = report.render_table()
    if report.diagnostics:
        table += "\n\n" + "\n".join(f"note: {d}" for d in report.diagnostics)
    (out / "eval_report.txt").write_text(table + "\n", "utf-8")
    return report
