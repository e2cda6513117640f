"""Run directory layout.

::

    <out>/config.json        config snapshot (enough to replay a scripted run)
    <out>/candidates.jsonl   C_global
    <out>/assets.jsonl       Ã_global with provenance
    <out>/evidence.jsonl     executed queries and visited domains
    <out>/tree.jsonl         one node per line
    <out>/tree.txt           indented tree
    <out>/epochs.jsonl       one EpochReport per line
    <out>/metrics.*          written by evalkit when ground truth is known
    <out>/transcripts/       chat backend request/response per call
    <out>/COMPLETE           marker; the directory is read-only afterwards
"""
from pathlib import Path

from scout.exceptions import RunDirectoryComplete
from scout.orchestrator import RunConfig
from utils.jsonl import read_json, read_lines, write_json, write_lines

COMPLETE_MARKER = 'COMPLETE'


class RunDirectory:

    def __init__(self, path):
        self.path = Path(path)

    def __str__(self):
        return str(self.path)

    def __truediv__(self, name):
        return self.path / name

    @property
    def is_complete(self):
        return (self.path / COMPLETE_MARKER).exists()

    @property
    def transcripts(self):
        return self.path / 'transcripts'

    @classmethod
    def create(cls, path):
        rundir = cls(path)
        if rundir.is_complete:
            raise RunDirectoryComplete(f'{rundir.path} holds a completed run; choose another --out')
        rundir.path.mkdir(parents=True, exist_ok=True)
        return rundir

    def ensure_writable(self):
        if self.is_complete:
            raise RunDirectoryComplete(f'{self.path} holds a completed run and is read-only')

    def write_config(self, config, extra=None):
        self.ensure_writable()
        record = config.to_record()
        record.update(extra or {})
        return write_json(self.path / 'config.json', record)

    def read_config(self):
        # 예전 버전이 남긴 알 수 없는 키는 무시
        record = read_json(self.path / 'config.json')
        return RunConfig.from_record({key: value for key, value in record.items() if key in RunConfig.__dataclass_fields__})

    def write_result(self, result):
        self.ensure_writable()
        result.candidates.snapshot(self.path / 'candidates.jsonl')
        result.assets.snapshot(self.path / 'assets.jsonl')
        result.evidence.snapshot(self.path / 'evidence.jsonl')
        write_lines(self.path / 'tree.jsonl', 'node', result.tree.snapshot_records())
        (self.path / 'tree.txt').write_text(result.tree.render(), encoding='utf-8')
        write_lines(self.path / 'epochs.jsonl', 'epoch', (report.to_record() for report in result.reports))

    def read_assets(self):
        return read_lines(self.path / 'assets.jsonl', 'asset')

    def read_epochs(self):
        return read_lines(self.path / 'epochs.jsonl', 'epoch')

    def mark_complete(self):
        (self.path / COMPLETE_MARKER).write_text('', encoding='utf-8')
