"""Raw-byte binary function similarity: curation, REFuSe model, triplet training, retrieval."""

__version__ = "0.1.0"
