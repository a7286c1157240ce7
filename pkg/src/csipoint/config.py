"""Experiment configuration files.

INI syntax (``configparser``), one section per concern::

    [synth]
    scenes = 275
    seed = 0

    [model]
    latent_dim = 128

    [train]
    epochs = 300

Every key is checked against ``SCHEMA``; unknown sections or keys are
errors.  Command-line flags override file values.  When no ``--config`` is
given, the path in ``$CSIPOINT_CONFIG`` is used if set.
"""

from __future__ import annotations

import configparser
import os

from .errors import ContractError

ENV_VAR = "CSIPOINT_CONFIG"


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


SCHEMA = {
    "synth": {
        "scenes": int, "seed": int, "points": int, "frames": int, "scatterers": int,
        "subcarriers": int, "links": int, "noise_std": float, "center_hz": float, "spacing_hz": float,
        "frame_jitter": float, "split": _floats,
    },
    "model": {
        "latent_dim": int, "encoder_widths": _ints, "decoder_hidden": _ints, "csi_head": str,
        "sanitize_phase": _bool,
    },
    "train": {
        "epochs": int, "batch_size": int, "lr": float, "weight_decay": float, "seed": int,
        "patience": int, "clip_norm": float, "log_interval": int, "freeze_decoder": _bool,
    },
    "benchmark": {
        "profile": str, "seed": int, "stage1_extra_scenes": int, "with_emd": _bool,
    },
}


def parse_config_text(text: str, path=None) -> dict:
    """Parse and type-check config text into ``{section: {key: value}}``."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path) if path else "<config>")
    except configparser.Error as exc:
        raise ContractError(f"{path or '<config>'}: {exc}") from exc
    out: dict = {name: {} for name in SCHEMA}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ContractError(f"{path or '<config>'}: unknown section [{section}]")
        for key, raw in parser.items(section):
            kind = SCHEMA[section].get(key)
            if kind is None:
                raise ContractError(f"{path or '<config>'}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = kind(raw)
            except ValueError as exc:
                raise ContractError(f"{path or '<config>'}: [{section}] {key}: {exc}") from exc
    return out


def load_config(path=None) -> dict:
    """Read ``path`` (or ``$CSIPOINT_CONFIG``); an empty config when neither is given."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return {name: {} for name in SCHEMA}
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), os.path.abspath(path))


def merged(config: dict, section: str, overrides: dict) -> dict:
    """File values for ``section`` with non-None flag values on top."""
    out = dict(config.get(section, {}))
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out
