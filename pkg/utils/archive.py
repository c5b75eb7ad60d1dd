"""
Run archive management for ICV Shrink.
Organizes each run's outputs, writes the reproducibility manifest and
optionally packages the run as a ZIP file.
"""

import hashlib
import json
import logging
import platform
import zipfile
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Dict, Optional

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas")


class RunArchive:
    """Manages run output organization and archiving."""

    @staticmethod
    def config_hash(config: dict) -> str:
        """SHA-256 of the canonical JSON form of a configuration."""
        canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @staticmethod
    def package_versions() -> Dict[str, str]:
        versions = {"python": platform.python_version()}
        for name in TRACKED_PACKAGES:
            try:
                versions[name] = metadata.version(name)
            except metadata.PackageNotFoundError:
                versions[name] = "missing"
        return versions

    @staticmethod
    def create_run_directory(base_path: str, command: str,
                             subdirs: tuple = ()) -> Path:
        """
        Create the output directory of a run.

        Args:
            base_path: Output root given on the command line
            command: Subcommand name, used only for logging
            subdirs: Sub-directories to create below the root

        Returns:
            Path to the run directory
        """
        run_dir = Path(base_path)
        run_dir.mkdir(parents=True, exist_ok=True)
        for sub in subdirs:
            (run_dir / sub).mkdir(exist_ok=True)
        logger.debug("%s writing to %s", command, run_dir)
        return run_dir

    @staticmethod
    def write_manifest(run_dir: Path, command: str, config: dict, seed: Optional[int],
                       metadata_extra: Optional[dict] = None) -> Path:
        """
        Write manifest.json with the config, its hash, the seed and the
        package versions. Output files never contain the creation time, so
        a rerun with the same config reproduces them byte for byte.
        """
        manifest = {
            "command": command,
            "config": config,
            "config_sha256": RunArchive.config_hash(config),
            "seed": seed,
            "versions": RunArchive.package_versions(),
            "created": datetime.now(timezone.utc).isoformat(),
        }
        if metadata_extra:
            manifest.update(metadata_extra)
        path = Path(run_dir) / MANIFEST_NAME
        with open(path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        return path

    @staticmethod
    def read_manifest(run_dir: Path) -> dict:
        with open(Path(run_dir) / MANIFEST_NAME) as f:
            return json.load(f)

    @staticmethod
    def create_zip_archive(source_dir: str, output_path: str) -> bool:
        """
        Create a ZIP archive of a run directory.

        Returns:
            True if successful
        """
        try:
            source = Path(source_dir)
            with zipfile.ZipFile(output_path, "w", zipfile.ZIP_DEFLATED) as zipf:
                for file in sorted(source.rglob("*")):
                    if file.is_file():
                        zipf.write(file, file.relative_to(source.parent))
            return True
        except OSError as e:
            logger.error("Error creating ZIP archive: %s", e)
            return False
