"""Named desk-scale experiment setups.

Each preset fixes the task, the victim/clone/generator architectures, victim
training, and the attack settings that differ from the built-in defaults.
The default clone learning rate (0.1) and batch size (256) assume tens of
thousands of clone steps; at desk budgets a smaller batch and a lower clone
rate are used so the same budget buys more, gentler steps.
"""

from __future__ import annotations

import copy

PRESETS: dict[str, dict] = {
    "blobs-4": {
        "task": {"family": "gaussian_blobs", "num_classes": 4, "input_dim": 2,
                 "samples_per_class": 500, "test_samples_per_class": 200, "separation": 4.0},
        "victim": {"capacity": "medium", "family": "mlp"},
        "clone": {"capacity": "small", "family": "mlp"},
        "generator": {"latent_dim": 64, "num_conv_blocks": 2, "base_channels": 64},
        "victim_training": {"epochs": 30, "batch_size": 64, "lr": 0.05},
        "attack": {"budget": 200_000, "batch_size": 64, "clone_lr": 0.01, "generator_lr": 1e-3, "eval_every": 100},
    },
    "blobs-4-unbalanced": {
        "task": {"family": "gaussian_blobs", "num_classes": 4, "input_dim": 2,
                 "samples_per_class": 700, "test_samples_per_class": 200, "separation": 4.0},
        "unbalanced_counts": [320, 440, 560, 680],
        "victim": {"capacity": "medium", "family": "mlp"},
        "clone": {"capacity": "small", "family": "mlp"},
        "generator": {"latent_dim": 64, "num_conv_blocks": 2, "base_channels": 64},
        "victim_training": {"epochs": 30, "batch_size": 64, "lr": 0.05},
        "attack": {"budget": 200_000, "batch_size": 64, "clone_lr": 0.01, "generator_lr": 1e-3, "eval_every": 100},
    },
    "rings-3": {
        "task": {"family": "concentric_rings", "num_classes": 3, "input_dim": 2,
                 "samples_per_class": 500, "test_samples_per_class": 200, "separation": 4.0},
        "victim": {"capacity": "medium", "family": "mlp"},
        "clone": {"capacity": "small", "family": "mlp"},
        "generator": {"latent_dim": 64, "num_conv_blocks": 2, "base_channels": 64},
        "victim_training": {"epochs": 40, "batch_size": 64, "lr": 0.05},
        "attack": {"budget": 200_000, "batch_size": 64, "clone_lr": 0.01, "generator_lr": 1e-3, "eval_every": 100},
    },
    "digits-8x8": {
        "task": {"family": "grid_digits_8x8", "num_classes": 10,
                 "samples_per_class": 300, "test_samples_per_class": 100, "separation": 2.0},
        "victim": {"capacity": "small", "family": "conv"},
        "clone": {"capacity": "tiny", "family": "conv"},
        "generator": {"latent_dim": 64, "num_conv_blocks": 3, "base_channels": 32},
        "victim_training": {"epochs": 10, "batch_size": 64, "lr": 0.05},
        "attack": {"budget": 500_000, "batch_size": 64, "clone_lr": 0.01, "generator_lr": 1e-4, "eval_every": 500},
    },
}


def get_preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown task preset {name!r}; choose from {sorted(PRESETS)}") from None
