"""Built-in example models for the CLI and tests."""
from __future__ import annotations

import importlib

from torch import nn


class ToyCNN(nn.Module):
    """Three conv-bn-relu blocks; traces to nine call nodes."""

    def __init__(self, channels: int = 4):
        super().__init__()
        c = channels
        self.conv1 = nn.Conv2d(3, c, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(c)
        self.relu1 = nn.ReLU()
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(c)
        self.relu2 = nn.ReLU()
        self.conv3 = nn.Conv2d(c, c, 3, padding=1)
        self.bn3 = nn.BatchNorm2d(c)
        self.relu3 = nn.ReLU()

    def forward(self, x):
        x = self.relu1(self.bn1(self.conv1(x)))
        x = self.relu2(self.bn2(self.conv2(x)))
        x = self.relu3(self.bn3(self.conv3(x)))
        return x


def _linear():
    return nn.Linear(4, 3)


def _mlp():
    return nn.Sequential(nn.Linear(8, 16), nn.ReLU(), nn.Linear(16, 4))


REGISTRY = {
    "toycnn": ToyCNN,
    "linear": _linear,
    "mlp": _mlp,
}


def resolve(name: str):
    """Look up a registry entry or import `module.path:attr`."""
    if name in REGISTRY:
        return REGISTRY[name]()
    if ":" in name:
        mod, attr = name.split(":", 1)
        obj = getattr(importlib.import_module(mod), attr)
        return obj() if isinstance(obj, type) or callable(obj) else obj
    raise ValueError(f"unknown model {name!r}; registry: "
                     f"{sorted(REGISTRY)} or module.path:attr")
