"""Fused sequential + graph-convolutional next-item recommender.

Submodules (import them directly; this package root stays import-light so
the CLI can cap math threads before numpy loads):

- ``mrgsrec.data``: ingestion, min-count filtering, leave-one-out splits
- ``mrgsrec.autodiff``: reverse-mode gradients over float64 numpy arrays
- ``mrgsrec.embeddings``: user/item/positional tables and window assembly
- ``mrgsrec.seqenc``: transformer encoder over the user-prefixed window
- ``mrgsrec.graph``: normalized bipartite adjacency and propagation
- ``mrgsrec.fusion``: local/global fusion block and the scoring head
- ``mrgsrec.losses``: the four objectives and their weighted total
- ``mrgsrec.model`` / ``mrgsrec.training``: parameters, Adam, fit loop
- ``mrgsrec.evaluation``: full-catalog HR@n / NDCG@n
- ``mrgsrec.synthetic``: clustered-Markov data generator
- ``mrgsrec.verification``: gradient / graph / metric self-checks
- ``mrgsrec.cli``: prepare, train, eval, ablate, verify subcommands
"""

__version__ = "0.1.0"
