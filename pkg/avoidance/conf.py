"""
Settings access for the avoidance app.

Lookup order: environment variable, then settings.NEGFEED, then the
defaults below. Works without configured Django settings so the numeric
modules can be imported on their own.
"""
import os
from typing import Any, Dict

DEFAULTS: Dict[str, Any] = {
    'K_POSITIVE': 6,
    'K_AVOID': 4,
    'EM_TOL': 1e-7,
    'EM_MAX_ITER': 300,
    'CONTINUITY': 2,
    'DEAD_END_RESTARTS': 10,
    'DEMO_POOL_SIZE': 10,
    'DEMO_SAMPLES': 50,
    'DEMO_NOISE_FRACTION': 0.02,
    'MASK_THRESHOLD': 0.5,
    'CENTRAL_FRACTION': 1 / 6,
    'NEG_WEIGHT': -1.0,
    'MOE_MIX': None,
    'AVOID_MIN_STD_CELLS': 1.5,
    'SEED': 0,
    'WORKERS': 1,
    # Relative to the working directory; the Django project pins it under BASE_DIR.
    'OUTPUT_DIR': 'results',
}

ENV_OVERRIDES = {
    'OUTPUT_DIR': ('NEGFEED_OUTPUT_DIR', str),
    'WORKERS': ('NEGFEED_WORKERS', int),
    'SEED': ('NEGFEED_SEED', int),
}


def _django_settings() -> Dict[str, Any]:
    try:
        from django.conf import settings
        if settings.configured:
            return getattr(settings, 'NEGFEED', {})
    except ImportError:
        pass
    return {}


def get_setting(name: str) -> Any:
    """Resolve one NEGFEED setting by name"""
    if name in ENV_OVERRIDES:
        env_name, cast = ENV_OVERRIDES[name]
        value = os.environ.get(env_name)
        if value:
            return cast(value)

    configured = _django_settings()
    if name in configured:
        return configured[name]

    if name not in DEFAULTS:
        raise KeyError(f"Unknown NEGFEED setting: {name}")
    return DEFAULTS[name]
