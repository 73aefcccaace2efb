"""casebook: retrieval-backed ticket triage.

Ingests issue-tracker and pull-request exports, indexes them in dense
(flat/IVF/HNSW) and sparse (BM25) indices, retrieves similar past cases
for new tickets, and synthesizes evidence-grounded resolution suggestions
with a human feedback loop.
"""

__version__ = "0.1.0"
