"""Federated coarse-to-fine segmentation of synthetic brain MRI slices.

A DQN agent picks intensity thresholds for a coarse white-matter mask, a
pyramid-pooling network refines it, and FedAvg combines both across sites.
"""
__version__ = "0.1.0"
