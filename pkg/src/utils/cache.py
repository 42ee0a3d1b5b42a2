"""On-disk store for evolution-operator families.

One directory per (Hamiltonian hash, grid fingerprint) pair, named
``{spec_hash}_{digest}``, holding ``manifest.txt`` and one ``U_{m:06}.fett``
file per forward time. The manifest is written last, so a family without one
is treated as absent. A writer lock older than ``LOCK_STALE_SECONDS`` is
taken to be left over from a crashed writer and is removed.
"""

import hashlib
import os
import shutil
import time

from .constants import LOCK_NAME, LOCK_STALE_SECONDS, MANIFEST_NAME
from .errors import CacheError, CorruptCache, HashMismatch
from .log import get_logger

logger = get_logger(__name__)


def operator_file_name(m):
    return f"U_{m:06d}.fett"


def _checksum(spec_hash, fingerprint):
    return hashlib.sha256(f"{spec_hash}|{fingerprint}".encode()).hexdigest()[:16]


def fingerprint_digest(fingerprint):
    return hashlib.sha256(fingerprint.encode()).hexdigest()[:8]


def _read_manifest_file(path):
    if not os.path.exists(path):
        return None
    entries, errors = {}, {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            if line.startswith("U_"):
                try:
                    name, error = line.split(None, 1)
                    errors[name] = float(error.split("=", 1)[1])
                except (ValueError, IndexError):
                    raise CorruptCache(f"unreadable manifest line {line!r} in {path}")
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries, errors


class CacheHandle:
    """Directory of cached operator families; one writer at a time per family."""

    def __init__(self, root, lock_stale_seconds=LOCK_STALE_SECONDS):
        self.root = os.fspath(root)
        self.lock_stale_seconds = lock_stale_seconds

    def family_dir(self, spec_hash, fingerprint):
        return os.path.join(self.root, f"{spec_hash}_{fingerprint_digest(fingerprint)}")

    def read_manifest(self, spec_hash, fingerprint):
        """Manifest entries as a dict plus the per-file truncation errors, or None if absent."""
        return _read_manifest_file(os.path.join(self.family_dir(spec_hash, fingerprint), MANIFEST_NAME))

    def _validate(self, spec_hash, fingerprint, count, entries):
        if entries.get("spec_hash") != spec_hash:
            raise HashMismatch(f"manifest spec hash {entries.get('spec_hash')} != {spec_hash}")
        stored = entries.get("fingerprint", "")
        if stored != fingerprint:
            raise HashMismatch(f"manifest fingerprint {stored!r} != {fingerprint!r}")
        if f"dt={entries.get('dt')}|" not in stored:
            raise HashMismatch(f"manifest dt {entries.get('dt')} disagrees with its fingerprint")
        if entries.get("checksum") != _checksum(spec_hash, stored):
            raise HashMismatch("manifest checksum does not match its contents")
        if int(entries.get("count", -1)) != count:
            raise HashMismatch(f"manifest holds {entries.get('count')} operators, need {count}")

    def load_family(self, spec_hash, fingerprint, count):
        """
        Load a cached family.

        Returns:
            tuple | None: (operators, truncation errors), or None on a miss or a
            stale manifest (which is logged and then rebuilt by the caller).

        Raises:
            CorruptCache: A listed file is missing or unreadable.
        """
        from ..models.tensor_train import loads_train

        directory = self.family_dir(spec_hash, fingerprint)
        manifest = self.read_manifest(spec_hash, fingerprint)
        if manifest is None:
            logger.info("cache miss for %s", os.path.basename(directory))
            return None
        entries, errors = manifest
        try:
            self._validate(spec_hash, fingerprint, count, entries)
        except HashMismatch as error:
            logger.warning("cache for %s is stale (%s); rebuilding", os.path.basename(directory), error)
            return None
        operators, errs = [], []
        for m in range(count):
            name = operator_file_name(m)
            path = os.path.join(directory, name)
            if name not in errors or not os.path.exists(path):
                raise CorruptCache(f"missing cached operator {path}")
            with open(path, "rb") as handle:
                operators.append(loads_train(handle.read(), name=path))
            errs.append(errors[name])
        logger.info("cache hit for %s: %d operators", os.path.basename(directory), count)
        return operators, errs

    def _acquire_lock(self, lock):
        """File descriptor of a freshly created lock, or None while another writer holds it."""
        try:
            return os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            pass
        try:
            age = time.time() - os.path.getmtime(lock)
        except FileNotFoundError:
            age = None
        if age is not None and age <= self.lock_stale_seconds:
            return None
        if age is not None:
            logger.warning("removing stale cache lock %s (%.0f s old)", lock, age)
            try:
                os.remove(lock)
            except FileNotFoundError:
                pass
        try:
            return os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            return None

    def store_family(self, spec_hash, fingerprint, operators, errors, cfg):
        """Persist a family; skipped with a warning when another writer holds a fresh lock."""
        from ..models.tensor_train import dumps_train

        directory = self.family_dir(spec_hash, fingerprint)
        os.makedirs(directory, exist_ok=True)
        lock = os.path.join(directory, LOCK_NAME)
        fd = self._acquire_lock(lock)
        if fd is None:
            logger.warning("cache for %s is being written by another process; not storing", spec_hash)
            return False
        try:
            manifest = os.path.join(directory, MANIFEST_NAME)
            if os.path.exists(manifest):
                os.remove(manifest)
            for m, op in enumerate(operators):
                path = os.path.join(directory, operator_file_name(m))
                with open(path + ".tmp", "wb") as handle:
                    handle.write(dumps_train(op))
                os.replace(path + ".tmp", path)
            first_extra = operator_file_name(len(operators))
            for name in os.listdir(directory):
                if name.startswith("U_") and name >= first_extra:
                    os.remove(os.path.join(directory, name))
            lines = [
                f"spec_hash = {spec_hash}",
                f"fingerprint = {fingerprint}",
                f"dt = {cfg.dt!r}",
                f"policy = max_bond={cfg.policy.max_bond}, sv_cutoff={cfg.policy.sv_cutoff!r}",
                f"count = {len(operators)}",
                f"checksum = {_checksum(spec_hash, fingerprint)}",
            ]
            lines += [f"{operator_file_name(m)} error={e!r}" for m, e in enumerate(errors)]
            with open(manifest + ".tmp", "w", encoding="utf-8") as handle:
                handle.write("\n".join(lines) + "\n")
            os.replace(manifest + ".tmp", manifest)
        except OSError as error:
            raise CacheError(f"could not write cache for {spec_hash}: {error}") from error
        finally:
            os.close(fd)
            os.remove(lock)
        logger.info("cached %d operators for %s", len(operators), os.path.basename(directory))
        return True

    def _family_names(self):
        if not os.path.isdir(self.root):
            return []
        return sorted(n for n in os.listdir(self.root) if os.path.isdir(os.path.join(self.root, n)))

    def entries(self):
        """Summary of every cached family: directory, hash, operator count, size on disk, dt."""
        listing = []
        for name in self._family_names():
            directory = os.path.join(self.root, name)
            manifest = _read_manifest_file(os.path.join(directory, MANIFEST_NAME))
            if manifest is None:
                continue
            entries, _ = manifest
            size = sum(os.path.getsize(os.path.join(directory, f)) for f in os.listdir(directory))
            listing.append(
                {
                    "family": name,
                    "spec_hash": entries.get("spec_hash", name.split("_")[0]),
                    "count": int(entries.get("count", 0)),
                    "bytes": size,
                    "dt": entries.get("dt", ""),
                    "policy": entries.get("policy", ""),
                }
            )
        return listing

    def remove(self, spec_hash=None):
        """Delete every family of one Hamiltonian, or all families when ``spec_hash`` is None.

        Returns the number of family directories removed.
        """
        removed = 0
        for name in self._family_names():
            if spec_hash and not name.startswith(f"{spec_hash}_"):
                continue
            shutil.rmtree(os.path.join(self.root, name))
            removed += 1
        return removed
