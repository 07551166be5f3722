"""gapwatch: streaming detection of coverage-loss gaps in endoscopy-like video.

Phase I partitions the timeline into good-visibility segments and
poor-visibility gaps; Phase II decides per gap whether the scene changed
across it, using self-supervised scene descriptors. A procedural
synthetic world supplies ground truth for every stage.
"""

__version__ = "0.1.0"
