"""Run manifests: the provenance record written next to every CLI artifact.

A manifest pins down everything that determined a run's outputs: the
resolved configuration snapshot (values, not a file path), the
subcommand with its argument strings, the seed handed to any stochastic
oracle, the tool version, and the names of the files written.  All
commands are deterministic functions of these fields -- nothing time-
or host-dependent is recorded -- so re-running a manifest reproduces
the outputs byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DataError, UsageError


@dataclass(frozen=True)
class RunManifest:
    """Provenance for one command invocation.

    arguments maps option strings to the values as typed ("--pump-ratio"
    -> "8.0"); outputs are file names relative to the manifest's own
    directory, so a run can be replayed into a fresh directory and
    compared file by file.
    """

    command: str
    arguments: dict
    config: dict
    seed: int
    version: str
    outputs: tuple

    def replay_argv(self) -> list:
        """Argument vector that reproduces this run (same outputs, new dir)."""
        argv = [self.command]
        for option in sorted(self.arguments):
            argv.extend([option, self.arguments[option]])
        return argv

    def to_json(self) -> str:
        payload = {
            "command": self.command,
            "arguments": dict(self.arguments),
            "config": dict(self.config),
            "seed": self.seed,
            "version": self.version,
            "outputs": list(self.outputs),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except FileNotFoundError as exc:
            raise UsageError(f"manifest not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
        try:
            return cls(
                command=payload["command"],
                arguments=dict(payload["arguments"]),
                config=dict(payload["config"]),
                seed=int(payload["seed"]),
                version=payload["version"],
                outputs=tuple(payload["outputs"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"manifest {path} is missing or mistypes a field: {exc}") from exc
