"""
Synthetic Data Package

This package contains the seeded phantom and model-output generator.
"""

from .phantoms import (
    OrganSpec,
    SynthConfig,
    default_synth_config,
    load_synth_config,
    generate_ground_truth,
    generate_model_outputs,
    rater_stream
)

__all__ = [
    'OrganSpec',
    'SynthConfig',
    'default_synth_config',
    'load_synth_config',
    'generate_ground_truth',
    'generate_model_outputs',
    'rater_stream'
]
