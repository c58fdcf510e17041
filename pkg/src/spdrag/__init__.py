"""Per-document sub-agent retrieval with recursive, similarity-ordered synthesis."""

from .config import Config, build_counter, build_providers, load_config
from .corpus import Chunk, Document, load_documents, split_document
from .errors import SpdRagError
from .pipeline import IndexedCorpus, RunResult, arun_query, index_corpus, run_query

__version__ = "0.1.0"

__all__ = ["Config", "build_counter", "build_providers", "load_config", "Chunk", "Document", "load_documents",
           "split_document", "SpdRagError", "IndexedCorpus", "RunResult", "arun_query", "index_corpus", "run_query",
           "__version__"]
