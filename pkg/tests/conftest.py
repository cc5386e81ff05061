"""Shared fixtures: paths into tests/fixtures and common loaders."""

from __future__ import annotations

from pathlib import Path

import pytest

from avlabel import Manifest, parse_manifest

FIXTURES = Path(__file__).resolve().parent / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"


def read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


def load_manifest(path: Path, provenance: str = "") -> Manifest:
    return parse_manifest(read_lines(path), provenance=provenance or path.stem)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture(scope="session")
def pool_manifest() -> Manifest:
    return load_manifest(FIXTURES / "pool.jsonl")


@pytest.fixture(scope="session")
def hours_human() -> Manifest:
    return load_manifest(FIXTURES / "hours_human.jsonl", provenance="mtedx")


@pytest.fixture(scope="session")
def hours_auto() -> Manifest:
    return load_manifest(FIXTURES / "hours_auto.jsonl", provenance="crawl")
