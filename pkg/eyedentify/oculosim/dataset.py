import glob
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

from eyedentify.oculosim.identity import IdentityParams, sample_identity
from eyedentify.oculosim.scanpath import simulate_binocular, simulate_scanpath
from eyedentify.preprocessing.recording import GazeRecording, load_recording, write_recordings
from eyedentify.pydantic_models.models import GazeCsvFormat, PopulationSpec, SimConfig
from eyedentify.utils.save_results import load_json, save_json
from eyedentify.utils.seeding import seed_key, substream

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass
class DatasetEntry:
    subject_id: str
    session_id: str
    path: str
    recordings: List[GazeRecording] = field(default_factory=list)

    @property
    def eyes(self) -> List[str]:
        return sorted({rec.eye for rec in self.recordings})


def subject_name(i: int) -> str:
    return f"s{i:03d}"


def session_name(j: int) -> str:
    return f"sess{j}"


def make_dataset(cfg: SimConfig, spec: PopulationSpec, out_dir: Optional[str] = None) -> List[DatasetEntry]:
    """
    Generate `identity_count x sessions_per_identity` labelled sessions. Identity i
    draws its parameters from rng substream (seed, i); session j of identity i
    uses substream (seed, i, j + 1). With `out_dir` set, every session is written
    as a gaze CSV and a manifest lists labels, seeds and parameter vectors.
    """
    if out_dir is not None:
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as e:
            raise OSError(f"Cannot create dataset directory `{out_dir}`: {e}") from e

    entries = []
    identities = []
    sessions = []
    for i in range(cfg.identity_count):
        params = sample_identity(substream(cfg.seed, i), spec)
        subject_id = subject_name(i)
        identities.append({"subject_id": subject_id, "seed_key": seed_key(cfg.seed, [i]), "params": params.model_dump()})
        for j in range(cfg.sessions_per_identity):
            session_id = session_name(j)
            rng = substream(cfg.seed, i, j + 1)
            if cfg.binocular:
                recordings = list(simulate_binocular(params, cfg, rng, subject_id, session_id, spec.saccade_amplitude_deg))
            else:
                recordings = [simulate_scanpath(params, cfg, rng, subject_id, session_id, spec.saccade_amplitude_deg)]
            file_name = f"{subject_id}_{session_id}.csv"
            path = os.path.join(out_dir, file_name) if out_dir is not None else ""
            if out_dir is not None:
                write_recordings(path, recordings, precision=cfg.csv_precision)
            sessions.append(
                {"subject_id": subject_id, "session_id": session_id, "file": file_name, "seed_key": seed_key(cfg.seed, [i, j + 1])}
            )
            entries.append(DatasetEntry(subject_id, session_id, path, recordings))
        logger.info(f"Simulated identity {subject_id}: {cfg.sessions_per_identity} session(s)")

    if out_dir is not None:
        save_json(
            os.path.join(out_dir, MANIFEST),
            {"config": cfg.model_dump(), "population": spec.model_dump(), "identities": identities, "sessions": sessions},
        )
        logger.info(f"Wrote {len(sessions)} session file(s) and {MANIFEST} to {out_dir}")
    return entries


def load_identities(data_dir: str) -> dict:
    manifest = load_json(os.path.join(data_dir, MANIFEST))
    return {item["subject_id"]: IdentityParams(**item["params"]) for item in manifest["identities"]}


def load_dataset(data_dir: str, rate: float = 1000.0, max_gap_ms: float = 50.0, sessions: Optional[List[str]] = None) -> List[DatasetEntry]:
    """
    Read a dataset directory. Labels come from the manifest when present,
    otherwise from file names of the form `<subject>_<session>.csv`.
    """
    manifest_path = os.path.join(data_dir, MANIFEST)
    if os.path.exists(manifest_path):
        manifest = load_json(manifest_path)
        rate = manifest.get("config", {}).get("rate", rate)
        listing = [(s["subject_id"], s["session_id"], s["file"]) for s in manifest["sessions"]]
    else:
        listing = []
        for path in sorted(glob.glob(os.path.join(data_dir, "*.csv"))):
            stem = os.path.splitext(os.path.basename(path))[0]
            subject_id, _, session_id = stem.partition("_")
            listing.append((subject_id, session_id or "0", os.path.basename(path)))
    if not listing:
        raise ValueError(f"No gaze recordings found in `{data_dir}`")

    entries = []
    for subject_id, session_id, file_name in listing:
        if sessions is not None and session_id not in sessions:
            continue
        path = os.path.join(data_dir, file_name)
        fmt = GazeCsvFormat(rate=rate, max_gap_ms=max_gap_ms, subject_id=subject_id, session_id=session_id)
        entries.append(DatasetEntry(subject_id, session_id, path, load_recording(path, fmt)))
    logger.info(f"Loaded {len(entries)} session(s) from {data_dir}")
    return entries
