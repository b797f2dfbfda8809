"""Multimodal IMU + skeleton action recognition with a dual-ViT ensemble."""
__version__ = "0.1.0"
