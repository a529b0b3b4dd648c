"""EHOI Detection Toolkit"""

__version__ = "0.1.0"
__author__ = "Vision Team"
__description__ = "Evaluation, matching, augmentation and dataset tooling for egocentric hand-object interaction detection"
