"""Retrieval-augmented chat engine for technical document collections.

Subsystems: document ingestion and chunking (ingest), embedding providers
and cache (embedding), vector search (index, hnsw, store_server), tool and
agent routing (router, llm, sessions), auxiliary data agents (agents,
mock_agents), retrieval quality evaluation (evaluation), the HTTP service
(service, config, engine), and the command line (cli).
"""

__version__ = "0.1.0"
