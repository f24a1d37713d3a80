"""Offline embedding extraction for topic-post-comment thread files.

Turns every node of a thread corpus (topic, posts, comments) into one
fixed-dimension vector with a frozen pretrained encoder, written in the
embedding formats the graph models ingest. Extraction happens once,
up front; nothing here trains or serves models.
"""

__version__ = "0.1.0"
