"""Open-world semantic segmentation post-processing at desk scale.

Discovers unknown object classes in exported segmentation outputs,
pseudo-labels them without human annotation and extends a small trainable
head by the novel class.
"""

__version__ = "0.1.0"
